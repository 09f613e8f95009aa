"""Time the SMO solver under the numba and numpy backends.

Each backend runs in its own interpreter because ROBUST_LFD_BACKEND is read
at import.  Compilation is excluded by a warm-up solve.  The one-class PSD
check (an eigendecomposition) is switched off so the loop itself is timed.

    python3 benchmarks/bench_smo.py [--sizes 100 200 400] [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from robust_lfd import BACKEND
from robust_lfd.kernels import gram_matrix, solve_ocsvm_dual, solve_svr_dual

sizes, repeat = json.loads(sys.argv[1]), int(sys.argv[2])
rng = np.random.default_rng(0)

def problem(n):
    X = rng.normal(size=(n, 12))
    K = gram_matrix(X, 1.0 / 12)
    t = np.sin(X[:, 0]) + 0.1 * rng.normal(size=n)
    return K, t

K, t = problem(20)
solve_svr_dual(K, t, 0.05, 10.0)
solve_ocsvm_dual(K, 0.1, check_psd=False)

out = {"backend": BACKEND, "rows": []}
for n in sizes:
    K, t = problem(n)
    row = {"n": n}
    for name, fn in (("svr", lambda: solve_svr_dual(K, t, 0.05, 10.0)),
                     ("ocsvm", lambda: solve_ocsvm_dual(K, 0.1, check_psd=False))):
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            sol = fn()
            best = min(best, time.perf_counter() - t0)
        row[name] = best
        row[name + "_obj"] = sol.objective
    out["rows"].append(row)
print(json.dumps(out))
"""


def run(backend, sizes, repeat):
    env = dict(os.environ, ROBUST_LFD_BACKEND=backend)
    res = subprocess.run([sys.executable, "-c", WORKER, json.dumps(sizes), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 200, 400])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    fast = run("numba", args.sizes, args.repeat)
    slow = run("numpy", args.sizes, args.repeat)
    print(f"{'n':>5} {'problem':>7} {'numba_s':>10} {'numpy_s':>10} {'speedup':>8} {'obj_diff':>10}")
    for a, b in zip(fast["rows"], slow["rows"]):
        for name in ("svr", "ocsvm"):
            diff = abs(a[name + "_obj"] - b[name + "_obj"])
            print(f"{a['n']:>5} {name:>7} {a[name]:>10.4f} {b[name]:>10.4f} "
                  f"{b[name] / a[name]:>8.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
