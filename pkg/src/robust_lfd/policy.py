"""Policy learning: one epsilon-SVR per action dimension over consistent demonstrations.

Each scalar policy predicts, in standardized target units,

    z(s) = sum_i alpha_i exp(-gamma ||s_i - s||^2) - b

and maps ``z`` back to physical units with the training mean and scale of
its action dimension.  Hyperparameters (C, gamma) are picked per dimension
by k-fold cross-validation of the literal epsilon-insensitive loss, which
charges the full absolute error outside the tube.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .consistency import DEFAULT_NU_D, DEFAULT_NU_S, filter_consistent
from .kernels import gram_matrix, solve_svr_dual, sq_distances
from .model import (
    ACTION_DIM, ACTION_FIELDS, STATE_DIM, ActionVector, DemonstrationSet, Standardization,
    StateVector, ValidationError,
)
from .novelty import default_gamma_grid, kfold_ids

POLICY_FORMAT = "robust_lfd.policy/1"
DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
EPSILON_FRACTION = 0.05


class PolicyError(RuntimeError):
    """Raised with the failing pipeline stage in the message."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# --------------------------------------------------------------------------
# loss


def scalar_loss(a, a_star, eps):
    """Elementwise 0 inside the tube, |a - a*| outside (no epsilon offset)."""
    err = np.abs(np.asarray(a, dtype=float) - np.asarray(a_star, dtype=float))
    return np.where(err <= eps, 0.0, err)


def loss_vector(a, a_star, eps) -> float:
    """Summed per-dimension epsilon-insensitive loss between two actions."""
    a = a.as_array() if isinstance(a, ActionVector) else np.asarray(a, dtype=float)
    a_star = a_star.as_array() if isinstance(a_star, ActionVector) else np.asarray(a_star, dtype=float)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), a.shape)
    if a.shape != a_star.shape:
        raise ValueError("action dimensions differ")
    if np.any(eps < 0):
        raise ValueError("tube widths must be non-negative")
    return float(scalar_loss(a, a_star, eps).sum())


# --------------------------------------------------------------------------
# scalar policies


@dataclass
class ScalarPolicy:
    alpha: np.ndarray
    b: float
    support_vectors: np.ndarray
    gamma: float
    epsilon: float
    C: float
    k: int
    state_std: Standardization
    target_mean: float = 0.0
    target_scale: float = 1.0
    n_train: int = 0
    bias_from_free: bool = True

    def decision(self, S_std) -> np.ndarray:
        """Standardized-unit expansion for already standardized states."""
        S_std = np.atleast_2d(S_std)
        if len(self.alpha) == 0:
            return np.full(len(S_std), -self.b)
        return gram_matrix(S_std, self.gamma, self.support_vectors) @ self.alpha - self.b

    def predict(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        return self.decision(self.state_std.apply(S)) * self.target_scale + self.target_mean

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "name": ACTION_FIELDS[self.k],
            "epsilon": self.epsilon,
            "C": self.C,
            "gamma": self.gamma,
            "alpha": self.alpha.tolist(),
            "b": self.b,
            "support_vectors": self.support_vectors.tolist(),
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
            "n_train": self.n_train,
            "bias_from_free": self.bias_from_free,
        }

    @classmethod
    def from_dict(cls, d, state_std: Standardization) -> "ScalarPolicy":
        sv = np.asarray(d["support_vectors"], dtype=float).reshape(-1, STATE_DIM)
        alpha = np.asarray(d["alpha"], dtype=float).reshape(-1)
        if len(sv) != len(alpha):
            raise ValidationError(f"dimension {d.get('k')}: support vector / coefficient count mismatch")
        return cls(
            alpha=alpha, b=float(d["b"]), support_vectors=sv, gamma=float(d["gamma"]),
            epsilon=float(d["epsilon"]), C=float(d["C"]), k=int(d["k"]), state_std=state_std,
            target_mean=float(d["target_mean"]), target_scale=float(d["target_scale"]),
            n_train=int(d.get("n_train", 0)), bias_from_free=bool(d.get("bias_from_free", True)),
        )


def predict_scalar(policy: ScalarPolicy, s) -> float:
    """Scalar action for one state (StateVector or 12 raw values)."""
    if isinstance(s, StateVector):
        s = s.as_array()
    return float(policy.predict(np.asarray(s, dtype=float).reshape(1, -1))[0])


def _target_std(a):
    a = np.asarray(a, dtype=float)
    mean = float(a.mean())
    sd = float(a.std())
    scale = sd if sd > 1e-12 * max(1.0, abs(mean)) else 1.0
    return mean, scale


def train_scalar(S, a_k, epsilon: float, C: float, gamma: float, k: int = 0,
                 state_std: Standardization | None = None) -> ScalarPolicy:
    """Fit one SVR on physical states ``S`` and physical targets ``a_k``.

    ``epsilon`` is the tube half-width in the target's physical units.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    a_k = np.asarray(a_k, dtype=float).reshape(-1)
    if len(S) < 2 or len(S) != len(a_k):
        raise ValueError("need at least 2 states with one target each")
    if epsilon < 0 or C <= 0 or gamma <= 0:
        raise ValueError("need epsilon >= 0, C > 0, gamma > 0")
    state_std = state_std or Standardization.fit(S)
    S_z = state_std.apply(S)
    mean, scale = _target_std(a_k)
    sol = solve_svr_dual(gram_matrix(S_z, gamma), (a_k - mean) / scale, epsilon / scale, C)
    sv = sol.coef != 0.0
    return ScalarPolicy(
        alpha=sol.coef[sv].copy(), b=sol.bias, support_vectors=S_z[sv].copy(), gamma=float(gamma),
        epsilon=float(epsilon), C=float(C), k=k, state_std=state_std, target_mean=mean,
        target_scale=scale, n_train=len(S), bias_from_free=sol.bias_from_free,
    )


# --------------------------------------------------------------------------
# hyperparameter search


@dataclass
class HyperGrid:
    C: tuple = DEFAULT_C_GRID
    gamma: tuple | None = None  # None: median-heuristic grid on the standardized states
    epsilon: tuple | None = None  # None: EPSILON_FRACTION x training std per dimension
    folds: int = 5
    seed: int = 0
    n_gamma: int = 15
    tol: float = 1e-6  # KKT tolerance of every SVR solve in the search

    def __post_init__(self):
        if not self.C or any(c <= 0 for c in self.C):
            raise ValueError("C candidates must be positive")
        if self.gamma is not None and (len(self.gamma) == 0 or any(g <= 0 for g in self.gamma)):
            raise ValueError("gamma candidates must be positive")
        if self.epsilon is not None and any(e < 0 for e in self.epsilon):
            raise ValueError("epsilon values must be non-negative")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


def default_epsilons(A) -> np.ndarray:
    return EPSILON_FRACTION * np.asarray(A, dtype=float).std(axis=0)


@dataclass
class GridResult:
    C: np.ndarray
    gamma: np.ndarray
    losses: np.ndarray  # (dims, len(C grid), len(gamma grid)) mean CV loss
    C_grid: np.ndarray
    gamma_grid: np.ndarray
    epsilon: np.ndarray = field(default_factory=lambda: np.zeros(0))


def grid_search(S, A, grid: HyperGrid | None = None, state_std: Standardization | None = None) -> GridResult:
    """Cross-validated (C, gamma) per action dimension.

    The loss table holds the mean literal epsilon-insensitive loss over all
    held-out points.  Ties go to the smaller C, then the smaller gamma.
    Kernel matrices are shared across dimensions and C values; C is swept in
    increasing order with each solve warm-started from the previous one.
    """
    grid = grid or HyperGrid()
    S = np.atleast_2d(np.asarray(S, dtype=float))
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    n, d = A.shape
    if n < grid.folds:
        raise ValueError("fewer demonstrations than folds")
    state_std = state_std or Standardization.fit(S)
    S_z = state_std.apply(S)
    eps = default_epsilons(A) if grid.epsilon is None else np.broadcast_to(np.asarray(grid.epsilon, float), (d,))
    gammas = np.sort(np.asarray(grid.gamma if grid.gamma is not None else default_gamma_grid(S_z, grid.n_gamma), float))
    Cs = np.sort(np.asarray(grid.C, dtype=float))
    D2 = sq_distances(S_z)
    fold = kfold_ids(n, grid.folds, grid.seed)
    loss_sum = np.zeros((d, len(Cs), len(gammas)))
    for f in range(grid.folds):
        tr = fold != f
        te = ~tr
        stats = [_target_std(A[tr, k]) for k in range(d)]
        for gi, g in enumerate(gammas):
            K_all = np.exp(-g * D2[:, tr])
            K = K_all[tr]
            K_te = K_all[te]
            for k in range(d):
                mean, scale = stats[k]
                z = (A[tr, k] - mean) / scale
                x0 = None
                for ci, C in enumerate(Cs):
                    sol = solve_svr_dual(K, z, eps[k] / scale, C, tol=grid.tol, x0=x0)
                    x0 = sol.dual
                    pred = (K_te @ sol.coef - sol.bias) * scale + mean
                    loss_sum[k, ci, gi] += scalar_loss(pred, A[te, k], eps[k]).sum()
    losses = loss_sum / n
    best_C = np.empty(d)
    best_g = np.empty(d)
    for k in range(d):
        # argmin over the flattened (C, gamma) table in C-major order gives the tie rule
        flat = int(np.argmin(losses[k].reshape(-1)))
        ci, gi = divmod(flat, len(gammas))
        best_C[k] = Cs[ci]
        best_g[k] = gammas[gi]
    return GridResult(C=best_C, gamma=best_g, losses=losses, C_grid=Cs, gamma_grid=gammas, epsilon=np.array(eps))


# --------------------------------------------------------------------------
# post-processing


@dataclass(frozen=True)
class GripperLimits:
    f: tuple = (0.0, 3.5)
    pre: tuple = (0.0, 1.6)


def postprocess_action(raw, limits: GripperLimits = GripperLimits()) -> ActionVector:
    """Turn a regressed action into an executable one.

    d1 is normalised, d2 is Gram-Schmidt orthogonalised against d1, and d3
    is replaced by d1 x d2.  Pressures are clamped at zero and the finger
    settings to the gripper limits; the position is untouched.
    """
    a = raw if isinstance(raw, ActionVector) else ActionVector.from_array(raw)
    n1 = np.linalg.norm(a.d1)
    if n1 < 1e-6:
        raise ValidationError("degenerate orientation: |d1| ~ 0")
    d1 = a.d1 / n1
    d2 = a.d2 - np.dot(a.d2, d1) * d1
    n2 = np.linalg.norm(d2)
    if n2 < 1e-6 * max(1.0, np.linalg.norm(a.d2)):
        raise ValidationError("degenerate orientation: d2 parallel to d1")
    d2 = d2 / n2
    d3 = np.cross(d1, d2)
    return ActionVector(
        p=a.p.copy(), d1=d1, d2=d2, d3=d3,
        f=float(np.clip(a.f, *limits.f)), pre=float(np.clip(a.pre, *limits.pre)),
        spt=np.maximum(a.spt, 0.0), executable=True,
    )


# --------------------------------------------------------------------------
# vector policy and the full pipeline


@dataclass
class VectorPolicy:
    scalars: list
    state_std: Standardization
    limits: GripperLimits = GripperLimits()
    consistency: dict | None = None
    grid: dict | None = None

    def __post_init__(self):
        ks = sorted(p.k for p in self.scalars)
        if ks != list(range(ACTION_DIM)):
            raise ValidationError(f"policy must cover action dimensions 0..{ACTION_DIM - 1} exactly once")
        self.scalars = sorted(self.scalars, key=lambda p: p.k)

    def predict(self, S) -> np.ndarray:
        """Raw (regressed) actions, one row per state."""
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if S.shape[1] != STATE_DIM:
            raise ValidationError(f"states must have {STATE_DIM} columns")
        return np.column_stack([p.predict(S) for p in self.scalars])

    def raw_action(self, s) -> ActionVector:
        if isinstance(s, StateVector):
            s = s.as_array()
        return ActionVector.from_array(self.predict(s)[0])

    def act(self, s) -> ActionVector:
        return postprocess_action(self.raw_action(s), self.limits)

    def to_dict(self) -> dict:
        return {
            "format": POLICY_FORMAT,
            "state_standardization": self.state_std.to_dict(),
            "gripper_limits": {"f": list(self.limits.f), "pre": list(self.limits.pre)},
            "consistency": self.consistency,
            "grid": self.grid,
            "dimensions": [p.to_dict() for p in self.scalars],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_dict(cls, d) -> "VectorPolicy":
        if d.get("format") != POLICY_FORMAT:
            raise ValidationError(f"unsupported policy format {d.get('format')!r}")
        std = Standardization.from_dict(d["state_standardization"])
        if len(std.mean) != STATE_DIM:
            raise ValidationError("state standardization has the wrong dimension")
        dims = d.get("dimensions") or []
        if len(dims) != ACTION_DIM:
            raise ValidationError(f"policy file has {len(dims)} dimensions, expected {ACTION_DIM}")
        lim = d.get("gripper_limits") or {}
        limits = GripperLimits(tuple(lim.get("f", GripperLimits.f)), tuple(lim.get("pre", GripperLimits.pre)))
        return cls([ScalarPolicy.from_dict(x, std) for x in dims], std, limits, d.get("consistency"), d.get("grid"))

    @classmethod
    def load(cls, path) -> "VectorPolicy":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read policy file {path}: {exc}") from exc
        try:
            return cls.from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"corrupt policy file {path}: {exc}") from exc


def fit_policy(D: DemonstrationSet, grid: HyperGrid | None = None,
               max_support_vectors: int | None = None,
               state_std: Standardization | None = None) -> tuple[VectorPolicy, GridResult]:
    """Grid search and final SVR fit for every action dimension of ``D``."""
    grid = grid or HyperGrid()
    S, A = D.states, D.actions
    state_std = state_std or Standardization.fit(S)
    res = grid_search(S, A, grid, state_std)
    scalars = []
    for k in range(ACTION_DIM):
        eps = float(res.epsilon[k])
        pol = train_scalar(S, A[:, k], eps, res.C[k], res.gamma[k], k, state_std)
        if max_support_vectors is not None:
            for _ in range(3):
                if len(pol.alpha) <= max_support_vectors:
                    break
                eps = 1.25 * eps if eps > 0 else 0.01 * pol.target_scale
                pol = train_scalar(S, A[:, k], eps, res.C[k], res.gamma[k], k, state_std)
        scalars.append(pol)
    info = {
        "C_grid": res.C_grid.tolist(),
        "gamma_grid": res.gamma_grid.tolist(),
        "folds": grid.folds,
        "seed": grid.seed,
    }
    return VectorPolicy(scalars, state_std, grid=info), res


def learn_intended_policy(D: DemonstrationSet, nu_D: float = DEFAULT_NU_D, nu_S: float = DEFAULT_NU_S,
                          grid: HyperGrid | None = None, filter_demos: bool = True,
                          max_support_vectors: int | None = None, novelty_grid=None):
    """Filter inconsistent demonstrations, then fit the per-dimension SVR policy.

    Returns (policy, consistency report or None when ``filter_demos`` is off).
    The state standardization is fitted on ``D`` and shared by both stages.
    """
    grid = grid or HyperGrid()
    if len(D) < max(2 * grid.folds, 10):
        raise PolicyError("precondition", f"need at least {max(2 * grid.folds, 10)} demonstrations, got {len(D)}")
    full_std = D.standardization or Standardization.fit(D.matrix())
    report = None
    D_star = D
    if filter_demos:
        try:
            D_star, report = filter_consistent(D, nu_D, nu_S, novelty_grid, grid.folds, grid.seed, full_std)
        except Exception as exc:
            raise PolicyError("consistency", str(exc)) from exc
        if len(D_star) < grid.folds:
            raise PolicyError("consistency", f"only {len(D_star)} demonstrations left after filtering")
    try:
        policy, _ = fit_policy(D_star, grid, max_support_vectors, full_std.subset(slice(0, STATE_DIM)))
    except Exception as exc:
        raise PolicyError("regression", str(exc)) from exc
    if report is not None:
        policy.consistency = {**report.summary(), "removed_ids": report.removed_ids}
    return policy, report
