"""Time the compiled kernels against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--scale S]

Every kernel runs on identical inputs in both implementations; the table
reports the best wall time of ``repeat`` runs, the speedup and the
largest difference between the two outputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from heisenberg_transport import _backend
from heisenberg_transport.geodesy import lattice_moves
from heisenberg_transport.grid import Grid, GridField, HorizontalGridField
from heisenberg_transport.moser import face_fluxes, sample_density


def workloads(scale: float):
    rng = np.random.default_rng(0)
    n = max(int(200_000 * scale), 10)
    rho, height = rng.uniform(0, 1, n), rng.normal(size=n)
    yield "cc_reduced", (rho, height, 1e-8)

    da, db, cost = lattice_moves(2)
    R = max(int(12 * scale ** 0.5), 4)
    yield "lattice_dijkstra", (R, int(R * R / (2 * np.pi)) + 8, da, db, cost, float(R))

    g = Grid.from_spacing((-0.5,) * 3, (0.5,) * 3, 1 / 16)
    x = g.coords
    w = np.stack([0.2 * np.cos(np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1]),
                  0.1 * np.sin(np.pi * x[..., 2] + 0.3)], axis=-1)
    mu = 1.0 + 0.3 * np.cos(np.pi * x[..., 0])
    nu = 1.0 + 0.2 * np.sin(np.pi * x[..., 1])
    m = max(int(2000 * scale), 10)
    starts = np.ascontiguousarray(rng.uniform(-0.4, 0.4, size=(m, 3)))
    low = np.array(g.low)
    yield "rk4_flow", (starts, w, mu, nu, low, g.spacing, 50)

    fl = face_fluxes(HorizontalGridField(g, w))
    cells = np.ascontiguousarray(sample_density(GridField(g, mu), m))
    yield "flux_trace", (cells, *fl, mu, nu, low, g.spacing, 50, 200_000)

    k = max(int(100_000 * scale), 10)
    pts = np.ascontiguousarray(rng.uniform(-0.5, 0.5, size=(k, 3)))
    yield "deposit_linear", (g.shape, low, g.spacing, pts, rng.normal(size=(k, 3)))


def _flat(out):
    parts = out if isinstance(out, tuple) else (out,)
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def _best(fn, args, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies every problem size")
    args = ap.parse_args(argv)
    impl = _backend.implementations()
    if impl["compiled"] is None:
        raise SystemExit("the compiled core is not built; run pip install -e . first")
    print(f"{'kernel':<18}{'compiled [s]':>14}{'python [s]':>14}{'speedup':>10}{'max diff':>12}")
    for name, call_args in workloads(args.scale):
        tc, oc = _best(getattr(impl["compiled"], name), call_args, args.repeat)
        tp, op = _best(getattr(impl["python"], name), call_args, max(1, args.repeat // 3))
        a, b = _flat(oc), _flat(op)
        fin = np.isfinite(a) & np.isfinite(b)
        diff = float(np.abs(a[fin] - b[fin]).max()) if a.shape == b.shape else float("nan")
        print(f"{name:<18}{tc:>14.4f}{tp:>14.4f}{tp / tc:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
