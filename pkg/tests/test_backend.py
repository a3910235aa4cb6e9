import os
import subprocess
import sys

import numpy as np
import pytest

from heisenberg_transport import _backend
from heisenberg_transport.geodesy import lattice_moves

IMPL = _backend.implementations()
needs_core = pytest.mark.skipif(IMPL["compiled"] is None, reason="compiled core not built")
core, fallback = IMPL["compiled"], IMPL["python"]


def test_compiled_core_is_selected_when_built():
    assert _backend.BACKEND == ("compiled" if core is not None else "python")


def test_environment_forces_fallback():
    env = dict(os.environ, HEISENBERG_TRANSPORT_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from heisenberg_transport import BACKEND; print(BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_core
def test_cc_reduced_agrees():
    rng = np.random.default_rng(0)
    rho = np.concatenate([rng.uniform(0, 2, 500), [0.0, 1e-9, 1.0]])
    h = np.concatenate([rng.normal(size=500), [0.3, 0.2, 0.0]])
    da, ta = core.cc_reduced(rho, h, 1e-8)
    db, tb = fallback.cc_reduced(rho, h, 1e-8)
    assert np.allclose(da, db, rtol=1e-13, atol=1e-15)
    assert np.allclose(ta, tb, rtol=1e-12, atol=1e-14)


@needs_core
def test_lattice_dijkstra_agrees():
    da, db, cost = lattice_moves(2)
    a = np.asarray(core.lattice_dijkstra(8, 20, da, db, cost, 8.0))
    b = np.asarray(fallback.lattice_dijkstra(8, 20, da, db, cost, 8.0))
    assert np.array_equal(np.isfinite(a), np.isfinite(b))
    fin = np.isfinite(a)
    assert np.allclose(a[fin], b[fin], rtol=1e-13)


@needs_core
def test_rk4_flow_agrees():
    rng = np.random.default_rng(1)
    shape = (6, 7, 8)
    w = rng.normal(size=shape + (2,)) * 0.1
    mu = 1.0 + rng.uniform(size=shape)
    nu = 1.0 + rng.uniform(size=shape)
    low, step = np.array([-0.5, -0.5, -0.5]), np.array([0.2, 1 / 6, 1 / 7])
    starts = rng.uniform(-0.3, 0.3, size=(20, 3))
    a = np.asarray(core.rk4_flow(starts, w, mu, nu, low, step, 16))
    b = np.asarray(fallback.rk4_flow(starts, w, mu, nu, low, step, 16))
    assert np.abs(a - b).max() <= 1e-12


@needs_core
def test_deposit_linear_agrees():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-0.5, 0.5, size=(300, 3))
    vals = rng.normal(size=(300, 3))
    low, step = np.array([-0.5] * 3), np.array([0.125] * 3)
    a = np.asarray(core.deposit_linear((9, 9, 9), low, step, pts, vals))
    b = np.asarray(fallback.deposit_linear((9, 9, 9), low, step, pts, vals))
    assert np.allclose(a, b, atol=1e-12)
    assert np.allclose(a.sum(axis=(0, 1, 2)), vals.sum(axis=0))
