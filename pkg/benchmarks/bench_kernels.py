"""Compiled vs numpy kernels: best-of-k wall time and max output difference.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from hycnn import _kernels_py as pure

try:
    from hycnn import _kernels as compiled
except ImportError:
    compiled = None


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(rng):
    a1, a2 = rng.normal(size=(2, 256, 48))
    yield "lse_gate 256x48", lambda k: k.lse_gate(a1, a2, 0.5)
    a1, a2 = rng.normal(size=(2, 5000, 48))
    yield "lse_gate 5000x48", lambda k: k.lse_gate(a1, a2, 0.5)
    for n, d in ((500, 2), (1000, 10)):
        X, Y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        h = rng.normal(size=n)
        yield f"softmin_rows {n}x{n} d={d}", lambda k, X=X, Y=Y, h=h: k.softmin_rows(X, Y, h, 0.1)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, call in cases(rng):
        tp, op = best_time(lambda: call(pure), args.repeat)
        if compiled is None:
            print(f"{name:28s} {1e3 * tp:10.3f} {'n/a':>10s}")
            continue
        tc, oc = best_time(lambda: call(compiled), args.repeat)
        op = op if isinstance(op, tuple) else (op,)
        oc = oc if isinstance(oc, tuple) else (oc,)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(op, oc))
        print(f"{name:28s} {1e3 * tp:10.3f} {1e3 * tc:10.3f} {tp / tc:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
