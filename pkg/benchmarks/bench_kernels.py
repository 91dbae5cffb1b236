"""Compiled vs numpy kernels on a realistic stencil workload.

    python3 benchmarks/bench_kernels.py [--n 64] [--repeat 5]

Prints the best-of-N wall time for each kernel and backend, and checks the
two backends agree.
"""
from __future__ import annotations

import argparse
import math
import timeit

import numpy as np

from fluxcascade import _kernels_py as pure

try:
    from fluxcascade import _kernels as compiled
except ImportError:
    compiled = None


def workload(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    h = 2 * math.pi / n
    ax = (np.arange(n) - n // 2) * h
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    R = math.pi / 6
    fields = [rng.standard_normal(n ** 3) for _ in range(7)]
    sel = np.sqrt(x * x + y * y + z * z).ravel() < 2 * R
    idx = np.nonzero(sel)[0].astype(np.int64)
    xs, ys, zs = x.ravel()[idx], y.ravel()[idx], z.ravel()[idx]
    return xs, ys, zs, R, idx, fields


def bench(n: int, repeat: int) -> list:
    xs, ys, zs, R, idx, f = workload(n)
    rows = []
    backends = [("python", pure)] + ([("cython", compiled)] if compiled is not None else [])
    ref = {}
    for name, mod in backends:
        cut = lambda: mod.radial_cutoff_eval(xs, ys, zs, 0.0, 0.0, R, 2 * R)  # noqa: E731
        v, gx, gy, gz, lap = cut()
        red = lambda: mod.stencil_reduce(idx, v ** 1.5, v, gx, gy, gz, lap, *f[:7])  # noqa: E731
        for kname, fn in (("radial_cutoff_eval", cut), ("stencil_reduce", red)):
            t = min(timeit.repeat(fn, number=3, repeat=repeat)) / 3
            rows.append((kname, name, t))
        out = np.array(red())
        if "python" in ref:
            err = np.max(np.abs(out - ref["python"]) / np.maximum(np.abs(ref["python"]), 1e-300))
            rows.append(("stencil_reduce max rel diff", name, float(err)))
        ref[name] = out
    pts = np.random.default_rng(1).uniform(-1, 1, (200_000, 3))
    centers = np.random.default_rng(2).uniform(-1, 1, (500, 3))
    for name, mod in backends:
        t = min(timeit.repeat(lambda: mod.count_within(pts, centers, 0.0, 0.2), number=1, repeat=repeat))
        rows.append(("count_within", name, t))
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; python backend only")
    rows = bench(a.n, a.repeat)
    times = {(k, b): t for k, b, t in rows}
    for k, b, t in rows:
        if "diff" in k:
            print(f"{k:32s} {b:7s} {t:.2e}")
            continue
        extra = ""
        if b == "cython" and (k, "python") in times:
            extra = f"  speedup x{times[(k, 'python')] / t:.1f}"
        print(f"{k:32s} {b:7s} {t * 1e3:9.3f} ms{extra}")


if __name__ == "__main__":
    main()
