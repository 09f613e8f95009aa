"""RBF kernels and an SMO solver for the two SVM duals used by the toolkit.

Both the one-class SVM dual and the epsilon-SVR dual are instances of

    min_x  0.5 x'Qx + p'x   s.t.  sum_i y_i x_i = delta,  0 <= x_i <= U_i

with ``y_i`` in {-1, +1} and ``Q_ij = y_i y_j K[r_i, r_j]`` where ``r_i``
maps a dual variable to its kernel row.  The solver works directly on the
kernel matrix through that map, so the 2n-variable SVR problem never
materialises a 2n x 2n matrix.

The pair update and the bias recovery follow the LIBSVM solver (Fan, Chen &
Lin, JMLR 2005): the first index is the maximal violator, the second is
chosen by second-order gain among the violators on the other side.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dsysv
from scipy.spatial.distance import cdist

from ._accel import USE_NUMBA, maybe_njit

TAU = 1e-12
DEFAULT_TOL = 1e-6
ITERATIONS_PER_VARIABLE = 100_000
POLISH_START = 1e-2  # first SMO stage tolerance before an active-set polish
POLISH_FACTOR = 0.1
POLISH_MAX_FREE = 2000
POLISH_ROUNDS = 10


class QPError(RuntimeError):
    """Raised when a dual problem is infeasible, malformed or does not converge."""


@dataclass
class QPSolution:
    """Result of an SMO solve.

    ``coef`` holds the one-class coefficients (alpha) or the SVR differences
    (beta = alpha - alpha*).  ``bias`` is the offset subtracted in the
    decision function, i.e. the prediction is ``K @ coef - bias``.
    """

    coef: np.ndarray
    objective: float
    iterations: int
    kkt_violation: float
    bias: float
    bias_from_free: bool
    n_free: int
    dual: np.ndarray
    objective_trace: np.ndarray | None = None


# --------------------------------------------------------------------------
# kernels


def rbf_kernel(x, y, gamma: float) -> float:
    """exp(-gamma * ||x - y||^2) for two feature vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def sq_distances(X, Y=None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if Y is None:
        D = cdist(X, X, "sqeuclidean")
        np.fill_diagonal(D, 0.0)
        return 0.5 * (D + D.T)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return cdist(X, Y, "sqeuclidean")


def gram_matrix(X, gamma: float, Y=None) -> np.ndarray:
    """RBF kernel matrix between the rows of ``X`` (and ``Y`` if given)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return np.exp(-gamma * sq_distances(X, Y))


def check_gram(K: np.ndarray, psd_tol: float | None = None) -> None:
    """Validate symmetry, unit diagonal, range and positive semidefiniteness."""
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if K.ndim != 2 or K.shape[1] != n:
        raise ValueError("Gram matrix must be square")
    if not np.allclose(K, K.T, rtol=0.0, atol=1e-12):
        raise ValueError("Gram matrix is not symmetric")
    if not np.allclose(np.diag(K), 1.0, rtol=0.0, atol=1e-12):
        raise ValueError("Gram matrix diagonal is not 1")
    # exact zeros are exp() underflow of far pairs, not a sign error
    if np.any(K < 0.0) or np.any(K > 1.0 + 1e-12):
        raise ValueError("Gram matrix entries outside [0, 1]")
    if psd_tol is None:
        psd_tol = 1e-8 * n
    lam_min = np.linalg.eigvalsh(0.5 * (K + K.T))[0]
    if lam_min < -psd_tol:
        raise ValueError(f"Gram matrix not PSD (smallest eigenvalue {lam_min:.3e})")


# --------------------------------------------------------------------------
# SMO kernels: one compiled scalar loop, one vectorised numpy loop.


@maybe_njit
def _reconstruct_grad(K, rows, y, p, x, grad):
    """grad = y * (K w)[rows] + p with w the row-summed signed coefficients."""
    n = K.shape[0]
    m = x.shape[0]
    w = np.zeros(n)
    for t in range(m):
        w[rows[t]] += y[t] * x[t]
    f = np.zeros(n)
    for r in range(n):
        acc = 0.0
        for c in range(n):
            if w[c] != 0.0:
                acc += K[r, c] * w[c]
        f[r] = acc
    for t in range(m):
        grad[t] = y[t] * f[rows[t]] + p[t]


@maybe_njit
def _shrink(active, n_act, y, x, grad, upper):
    """Drop bounded variables that cannot enter a violating pair."""
    gmax = -np.inf
    gmin = np.inf
    for k in range(n_act):
        t = active[k]
        s = -y[t] * grad[t]
        up = x[t] < upper[t] if y[t] > 0 else x[t] > 0.0
        low = x[t] > 0.0 if y[t] > 0 else x[t] < upper[t]
        if up and s > gmax:
            gmax = s
        if low and s < gmin:
            gmin = s
    keep = 0
    for k in range(n_act):
        t = active[k]
        s = -y[t] * grad[t]
        up = x[t] < upper[t] if y[t] > 0 else x[t] > 0.0
        low = x[t] > 0.0 if y[t] > 0 else x[t] < upper[t]
        if up and low:
            drop = False
        elif up:
            drop = s < gmin
        elif low:
            drop = s > gmax
        else:
            drop = True
        if not drop:
            active[keep] = t
            keep += 1
    return keep


@maybe_njit
def _smo_loop(K, rows, y, p, upper, x, grad, tol, max_iter, trace):
    """Scalar SMO loop with shrinking; updates ``x`` and ``grad`` in place.

    Shrinking is disabled while an objective trace is recorded, since the
    trace needs the full gradient at every step.  Convergence is always
    confirmed on the full variable set.

    Returns (iterations, final violation, converged flag).
    """
    m = x.shape[0]
    n_trace = trace.shape[0]
    shrinking = n_trace == 0
    period = min(m, 1000)
    counter = period
    active = np.arange(m)
    n_act = m
    it = 0
    gap = np.inf
    while it < max_iter:
        if shrinking:
            counter -= 1
            if counter == 0:
                counter = period
                n_act = _shrink(active, n_act, y, x, grad, upper)
        # most violating index on the "up" side
        gmax = -np.inf
        i = -1
        for k in range(n_act):
            t = active[k]
            if y[t] > 0:
                if x[t] < upper[t]:
                    v = -grad[t]
                    if v >= gmax:
                        gmax = v
                        i = t
            else:
                if x[t] > 0.0:
                    v = grad[t]
                    if v >= gmax:
                        gmax = v
                        i = t
        gmin = np.inf
        j = -1
        best = np.inf
        ri = 0
        kii = 0.0
        if i >= 0:
            ri = rows[i]
            kii = K[ri, ri]
        for k in range(n_act):
            t = active[k]
            if y[t] > 0:
                if x[t] > 0.0:
                    v = -grad[t]
                else:
                    continue
            else:
                if x[t] < upper[t]:
                    v = grad[t]
                else:
                    continue
            if v < gmin:
                gmin = v
            if i >= 0:
                b = gmax - v
                if b > 0.0:
                    rt = rows[t]
                    a = kii + K[rt, rt] - 2.0 * K[ri, rt]
                    if a <= 0.0:
                        a = TAU
                    gain = -(b * b) / a
                    if gain <= best:
                        best = gain
                        j = t
        gap = gmax - gmin
        if gap < tol or i < 0 or j < 0:
            if n_act == m:
                return it, gap, True
            # active set looks optimal: restore the full gradient and re-check
            _reconstruct_grad(K, rows, y, p, x, grad)
            for k in range(m):
                active[k] = k
            n_act = m
            # one full-set pass before the next shrink, else m = 1 never ends
            counter = period + 1
            continue

        ri = rows[i]
        rj = rows[j]
        kij = K[ri, rj]
        qii = K[ri, ri]
        qjj = K[rj, rj]
        ci = upper[i]
        cj = upper[j]
        old_i = x[i]
        old_j = x[j]
        quad = qii + qjj - 2.0 * kij
        if quad <= 0.0:
            quad = TAU
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = x[i] - x[j]
            xi = x[i] + delta
            xj = x[j] + delta
            if diff > 0.0:
                if xj < 0.0:
                    xj = 0.0
                    xi = diff
            else:
                if xi < 0.0:
                    xi = 0.0
                    xj = -diff
            if diff > ci - cj:
                if xi > ci:
                    xi = ci
                    xj = ci - diff
            else:
                if xj > cj:
                    xj = cj
                    xi = cj + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            s = x[i] + x[j]
            xi = x[i] - delta
            xj = x[j] + delta
            if s > ci:
                if xi > ci:
                    xi = ci
                    xj = s - ci
            else:
                if xj < 0.0:
                    xj = 0.0
                    xi = s
            if s > cj:
                if xj > cj:
                    xj = cj
                    xi = s - cj
            else:
                if xi < 0.0:
                    xi = 0.0
                    xj = s
        x[i] = xi
        x[j] = xj
        di = (xi - old_i) * y[i]
        dj = (xj - old_j) * y[j]
        for k in range(n_act):
            t = active[k]
            rt = rows[t]
            grad[t] += y[t] * (K[ri, rt] * di + K[rj, rt] * dj)
        if it < n_trace:
            f = 0.0
            for t in range(m):
                f += x[t] * (grad[t] + p[t])
            trace[it] = 0.5 * f
        it += 1
    if n_act < m:
        _reconstruct_grad(K, rows, y, p, x, grad)
    return it, gap, False


def _smo_numpy(K, rows, y, p, upper, x, grad, tol, max_iter, trace):
    """Vectorised numpy version of ``_smo_loop`` without shrinking.

    Iterates agree with the scalar loop until its first shrinking step; the
    two converge to the same optimum within the tolerance.
    """
    m = x.shape[0]
    n_trace = trace.shape[0]
    ypos = y > 0
    diag = K[rows, rows]
    it = 0
    gap = np.inf
    while it < max_iter:
        up = np.where(ypos, x < upper, x > 0.0)
        low = np.where(ypos, x > 0.0, x < upper)
        score = -y * grad
        if not up.any() or not low.any():
            return it, 0.0, True
        cand_up = np.where(up, score, -np.inf)
        # ties resolve to the last index, as in the scalar loop
        i = m - 1 - int(np.argmax(cand_up[::-1]))
        gmax = cand_up[i]
        gmin = score[low].min()
        gap = gmax - gmin
        b = gmax - score
        viol = low & (b > 0.0)
        if gap < tol or not viol.any():
            return it, gap, True
        ri = rows[i]
        a = diag[i] + diag - 2.0 * K[ri, rows]
        a = np.where(a <= 0.0, TAU, a)
        gain = np.where(viol, -(b * b) / a, np.inf)
        j = m - 1 - int(np.argmin(gain[::-1]))

        rj = rows[j]
        kij = K[ri, rj]
        qii = diag[i]
        qjj = diag[j]
        ci = upper[i]
        cj = upper[j]
        old_i = x[i]
        old_j = x[j]
        if y[i] != y[j]:
            quad = qii + qjj - 2.0 * kij
            if quad <= 0.0:
                quad = TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = x[i] - x[j]
            xi = x[i] + delta
            xj = x[j] + delta
            if diff > 0.0:
                if xj < 0.0:
                    xj, xi = 0.0, diff
            else:
                if xi < 0.0:
                    xi, xj = 0.0, -diff
            if diff > ci - cj:
                if xi > ci:
                    xi, xj = ci, ci - diff
            else:
                if xj > cj:
                    xj, xi = cj, cj + diff
        else:
            quad = qii + qjj - 2.0 * kij
            if quad <= 0.0:
                quad = TAU
            delta = (grad[i] - grad[j]) / quad
            s = x[i] + x[j]
            xi = x[i] - delta
            xj = x[j] + delta
            if s > ci:
                if xi > ci:
                    xi, xj = ci, s - ci
            else:
                if xj < 0.0:
                    xj, xi = 0.0, s
            if s > cj:
                if xj > cj:
                    xj, xi = cj, s - cj
            else:
                if xi < 0.0:
                    xi, xj = 0.0, s
        x[i] = xi
        x[j] = xj
        di = (xi - old_i) * y[i]
        dj = (xj - old_j) * y[j]
        grad += y * (K[ri, rows] * di + K[rj, rows] * dj)
        if it < n_trace:
            trace[it] = 0.5 * np.dot(x, grad + p)
        it += 1
    return it, gap, False


_smo = _smo_loop if USE_NUMBA else _smo_numpy


def _bias(x, grad, y, upper):
    """LIBSVM rho: mean of y*grad over free variables, else midpoint of bounds."""
    yg = y * grad
    at_upper = x >= upper
    at_lower = x <= 0.0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yg[free].mean()), True, int(free.sum())
    # at upper: y=-1 bounds from above, y=+1 from below; reversed at lower
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isfinite(ub) and np.isfinite(lb):
        return float(0.5 * (ub + lb)), False, 0
    return float(ub if np.isfinite(ub) else lb), False, 0


def _violation(x, grad, y, upper) -> float:
    """Maximal KKT violation max_up(-y G) - min_low(-y G)."""
    score = -y * grad
    pos = y > 0
    up = np.where(pos, x < upper, x > 0.0)
    low = np.where(pos, x > 0.0, x < upper)
    if not up.any() or not low.any():
        return 0.0
    return float(score[up].max() - score[low].min())


@maybe_njit
def _kkt_matrix(K, rF, yF):
    """Bordered matrix [[Q_FF, -y_F], [-y_F', 0]] of the free-set system."""
    nf = rF.shape[0]
    A = np.empty((nf + 1, nf + 1))
    for a in range(nf):
        ra = rF[a]
        ya = yF[a]
        for b in range(nf):
            A[a, b] = ya * yF[b] * K[ra, rF[b]]
        A[a, nf] = -ya
        A[nf, a] = -ya
    A[nf, nf] = 0.0
    return A


def _polish(K, rows, y, p, upper, x, tol):
    """Exact optimum near ``x`` by active-set refinement, or None.

    Variables strictly inside their box start out free and the others stay
    frozen at their bound; the equality-constrained stationarity system on
    the free set is solved directly.  Free variables that land outside the
    box are moved to the violated bound, and frozen variables whose
    multiplier has the wrong sign are released; the system is then solved
    again (a few rounds at most).  The candidate is accepted only if its
    full KKT violation is below ``tol``.
    """
    n_rows = K.shape[0]
    cand = x.copy()
    free = (x > 0.0) & (x < upper)
    delta = float(y @ x)
    for _ in range(POLISH_ROUNDS):
        F = np.flatnonzero(free)
        if F.size == 0 or F.size > POLISH_MAX_FREE:
            return None
        yF = y[F]
        rF = rows[F]
        bound = ~free
        w_B = np.bincount(rows[bound], weights=(y * cand)[bound], minlength=n_rows)
        nf = F.size
        A = _kkt_matrix(K, rF, yF)
        rhs = np.empty(nf + 1)
        rhs[:nf] = -(p[F] + yF * (K[rF] @ w_B))
        rhs[nf] = -(delta - float(y[bound] @ cand[bound]))
        _, _, sol, info = dsysv(A, rhs, lower=1, overwrite_a=1, overwrite_b=1)
        if info != 0 or not np.all(np.isfinite(sol)):
            return None
        xF = sol[:nf]
        cand[F] = np.clip(xF, 0.0, upper[F])
        slack = 1e-12 * (1.0 + upper[F])
        out = (xF < -slack) | (xF > upper[F] + slack)
        if out.any():
            free[F[out]] = False
            continue
        # restore the equality exactly after clipping round-off
        drift = float(y @ cand) - delta
        if drift != 0.0:
            t = F[np.argmax(np.minimum(cand[F], upper[F] - cand[F]))]
            cand[t] = min(max(cand[t] - y[t] * drift, 0.0), upper[t])
        w = np.bincount(rows, weights=y * cand, minlength=n_rows)
        grad = y * (K @ w)[rows] + p
        gap = _violation(cand, grad, y, upper)
        if gap < tol:
            return cand, grad, gap
        # release frozen variables with wrong-signed multipliers
        r = grad - sol[nf] * y
        wrong = bound & (((cand <= 0.0) & (r < -0.5 * tol)) | ((cand >= upper) & (r > 0.5 * tol)))
        if not wrong.any():
            return None
        free |= wrong
    return None


def solve_qp(K, rows, y, p, upper, x0, tol=DEFAULT_TOL, max_iter=None, trace_len=0, polish=True):
    """Solve the generic box/equality QP described in the module docstring.

    ``x0`` must be feasible; the equality constraint is whatever ``x0``
    satisfies and is preserved exactly by every pair update.  With
    ``polish`` (default) SMO runs in stages of decreasing tolerance and
    each stage ends with an attempt to finish exactly on the current active
    set; without it, plain SMO runs to ``tol``.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    upper = np.ascontiguousarray(upper, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    if np.any(x < 0.0) or np.any(x > upper):
        raise QPError("initial point violates the box constraints")
    m = x.shape[0]
    if max_iter is None:
        max_iter = ITERATIONS_PER_VARIABLE * max(m, 1)
    if np.any(x):
        w = np.bincount(rows, weights=y * x, minlength=K.shape[0])
        grad = y * (K @ w)[rows] + p
    else:
        grad = p.copy()
    trace = np.empty(trace_len, dtype=np.float64)
    # staged tolerances with an active-set polish between stages; the trace
    # records plain SMO steps only
    polish = polish and not trace_len
    stage = max(float(tol), POLISH_START) if polish else float(tol)
    it = 0
    while True:
        k, gap, ok = _smo(K, rows, y, p, upper, x, grad, stage, int(max_iter - it), trace)
        it += k
        if not ok:
            raise QPError(f"SMO did not converge in {max_iter} iterations (violation {gap:.3e})")
        if not polish:
            break
        polished = _polish(K, rows, y, p, upper, x, tol)
        if polished is not None:
            x, grad, gap = polished
            break
        if stage <= tol:
            break
        stage = max(stage * POLISH_FACTOR, float(tol))
    x = np.clip(x, 0.0, upper)
    objective = 0.5 * float(np.dot(x, grad + p))
    bias, from_free, n_free = _bias(x, grad, y, upper)
    return x, grad, int(it), float(gap), objective, bias, from_free, n_free, trace[: min(it, trace_len)]


def qp_objective(K, rows, y, p, x) -> float:
    """Direct evaluation of 0.5 x'Qx + p'x (for checks, O(m^2))."""
    Q = (y[:, None] * y[None, :]) * K[np.ix_(rows, rows)]
    return float(0.5 * x @ Q @ x + p @ x)


def solve_ocsvm_dual(K, nu: float, tol=DEFAULT_TOL, check_psd=True, trace_len=0, polish=False) -> QPSolution:
    """One-class SVM dual: min 0.5 a'Ka, 0 <= a_i <= 1/(nu l), sum a = 1.

    Polishing is off by default: an exact solution puts every margin support
    vector on the boundary at once, and since a zero score counts as an
    outlier that would break the nu-property.  Plain SMO leaves the margin
    expansions spread by round-off, so only the minimal one ties.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if not 0.0 < nu <= 1.0:
        raise QPError(f"nu must lie in (0, 1], got {nu}")
    if nu * n < 1.0 - 1e-12:
        raise QPError(f"infeasible box: nu*l = {nu * n:.3g} < 1")
    if check_psd:
        try:
            check_gram(K)
        except ValueError as exc:
            raise QPError(str(exc)) from exc
    ub = 1.0 / (nu * n)
    # LIBSVM start: fill the first floor(nu l) coefficients at the bound
    x0 = np.zeros(n)
    n_full = int(nu * n)
    x0[:n_full] = ub
    if n_full < n:
        x0[n_full] = max(0.0, 1.0 - ub * n_full)
    x0 = np.minimum(x0, ub)
    rows = np.arange(n)
    ones = np.ones(n)
    x, grad, it, gap, obj, rho, from_free, n_free, trace = solve_qp(
        K, rows, ones, np.zeros(n), np.full(n, ub), x0, tol=tol, trace_len=trace_len, polish=polish
    )
    # rho from a single free SV (the one with the smallest expansion), so
    # every other free SV scores >= 0 and only that one sits on the tie
    free = (x > 0.0) & (x < ub)
    if free.any():
        rho = float(grad[free].min())
    return QPSolution(
        coef=x,
        objective=obj,
        iterations=it,
        kkt_violation=gap,
        bias=rho,
        bias_from_free=from_free,
        n_free=n_free,
        dual=x,
        objective_trace=trace if trace_len else None,
    )


def solve_svr_dual(K, target, epsilon: float, C: float, tol=DEFAULT_TOL, x0=None, trace_len=0,
                   polish=True) -> QPSolution:
    """Epsilon-SVR dual over (alpha, alpha*) with Q = [[K, -K], [-K, K]].

    ``x0`` may warm-start from the 2n dual vector of a previous solve whose
    box was no larger than ``C``.
    """
    K = np.asarray(K, dtype=float)
    z = np.asarray(target, dtype=float)
    n = K.shape[0]
    if z.shape != (n,):
        raise QPError("target length does not match the Gram matrix")
    if epsilon < 0:
        raise QPError("epsilon must be >= 0")
    if C <= 0:
        raise QPError("C must be > 0")
    rows = np.concatenate([np.arange(n), np.arange(n)])
    y = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - z, epsilon + z])
    upper = np.full(2 * n, float(C))
    if x0 is None:
        x0 = np.zeros(2 * n)
    else:
        x0 = np.minimum(np.asarray(x0, dtype=float), C)
        # keep sum(alpha) == sum(alpha*) after clipping
        if abs(x0[:n].sum() - x0[n:].sum()) > 1e-12:
            x0 = np.zeros(2 * n)
    x, grad, it, gap, obj, rho, from_free, n_free, trace = solve_qp(
        K, rows, y, p, upper, x0, tol=tol, trace_len=trace_len, polish=polish
    )
    beta = x[:n] - x[n:]
    return QPSolution(
        coef=beta,
        objective=obj,
        iterations=it,
        kkt_violation=gap,
        bias=rho,
        bias_from_free=from_free,
        n_free=n_free,
        dual=x,
        objective_trace=trace if trace_len else None,
    )
