import numpy as np
import pytest

from heisenberg_transport.beckmann import (CostSpec, cost_value, dual_objective, duality_report, legendre_transform,
                                           linear_oracle, mollified_source, q_laplace_solve, recover_primal,
                                           solve_dual, weak_form_residual)
from heisenberg_transport.errors import InfeasibleError, InputError
from heisenberg_transport.grid import Grid, GridField, HorizontalGridField, horizontal_divergence
from heisenberg_transport.kantorovich import DiscreteMeasure


@pytest.fixture(scope="module")
def small():
    g = Grid.from_spacing((-0.5,) * 3, (0.5,) * 3, 1 / 12)
    f = mollified_source(DiscreteMeasure.dirac([-0.2, 0.0, 0.0]), DiscreteMeasure.dirac([0.2, 0.05, 0.0]), 0.3, g)
    return g, f


def test_cost_spec_validation():
    with pytest.raises(InputError):
        CostSpec(1.0)
    with pytest.raises(InputError):
        CostSpec(2.0, scale=0.0)
    with pytest.raises(InputError):
        CostSpec(2.0, linear=-1.0)
    assert CostSpec(3.0).q == pytest.approx(1.5)


@pytest.mark.parametrize("p", [2.0, 3.0, 1.5])
def test_power_conjugate(p):
    spec = CostSpec(p)
    z = np.array([[0.3, -0.4], [0.0, 0.0], [2.0, 1.0]])
    val, grad = legendre_transform(spec, z)
    r = np.linalg.norm(z, axis=-1)
    assert np.allclose(val, r ** spec.q / spec.q)
    # Fenchel-Young holds with equality at w = DG*(z)
    assert np.allclose(spec.g(np.linalg.norm(grad, axis=-1)) + val, np.sum(z * grad, axis=-1))


def test_linear_part_creates_a_dead_zone():
    spec = CostSpec(2.0, linear=0.5)
    val, grad = legendre_transform(spec, np.array([[0.3, 0.0], [1.5, 0.0]]))
    assert val[0] == 0.0 and np.all(grad[0] == 0.0)
    assert grad[1, 0] == pytest.approx(1.0)


def test_numeric_conjugate_matches_closed_form():
    closed = CostSpec(2.0)
    general = CostSpec(2.0, profile=lambda s: 0.5 * s * s)
    z = np.array([[0.7, 0.2]])
    assert legendre_transform(general, z)[0] == pytest.approx(legendre_transform(closed, z)[0], rel=1e-9)


def test_dual_gradient_matches_finite_differences(small):
    g, f = small
    rng = np.random.default_rng(0)
    phi = rng.normal(size=g.shape) * 0.1
    spec = CostSpec(3.0)
    J, grad = dual_objective(phi, f.values, spec, g, delta=0.1)
    d = rng.normal(size=g.shape)
    t = 1e-6
    fd = (dual_objective(phi + t * d, f.values, spec, g, 0.1)[0] - dual_objective(phi - t * d, f.values, spec, g, 0.1)[0]) / (2 * t)
    assert fd == pytest.approx(np.sum(grad * d), rel=1e-6)


def test_q2_matches_linear_oracle(small):
    g, f = small
    res = solve_dual(f, CostSpec(2.0))
    ref = linear_oracle(f)
    assert np.sqrt(np.sum((res.phi.values - ref.values) ** 2) * g.cellvol) <= 1e-6
    assert res.converged


@pytest.mark.parametrize("p", [2.0, 3.0, 1.5])
def test_duality_gap_and_divergence(small, p):
    g, f = small
    spec = CostSpec(p)
    res = solve_dual(f, spec)
    w = recover_primal(res.phi, spec)
    rep = duality_report(f, res.phi, spec, w)
    assert abs(rep.gap) <= 1e-6
    assert rep.fenchel_young <= 1e-8
    assert rep.divergence_residual_l2 <= 1e-6 * np.sqrt(np.sum(f.values ** 2) * g.cellvol)
    assert rep.primal == pytest.approx(cost_value(w, spec), rel=1e-12)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_weak_duality_along_the_ascent(small, p):
    g, f = small
    spec = CostSpec(p)
    res = solve_dual(f, spec)
    primal = duality_report(f, res.phi, spec).primal
    assert max(row[1] for row in res.log) <= primal + 1e-9 * abs(primal)


def test_lbfgs_reaches_the_same_value(small):
    g, f = small
    a = solve_dual(f, CostSpec(2.0))
    b = solve_dual(f, CostSpec(2.0), method="lbfgs", strict=False)
    assert b.value == pytest.approx(a.value, rel=1e-5)


def test_zero_source_gives_zero_solution(small):
    g, _ = small
    res = solve_dual(GridField(g, np.zeros(g.shape)), CostSpec(2.0))
    assert res.value == 0.0 and not np.any(res.phi.values)


def test_nonzero_mean_source_is_infeasible(small):
    g, _ = small
    with pytest.raises(InfeasibleError):
        solve_dual(GridField(g, np.ones(g.shape)), CostSpec(2.0))


def test_unknown_method(small):
    _, f = small
    with pytest.raises(InputError):
        solve_dual(f, CostSpec(2.0), method="simplex")


def test_q_laplace_weak_form(small):
    g, f = small
    phi = q_laplace_solve(f, 3.0)
    x = g.coords
    psis = [x[..., 0], x[..., 0] * x[..., 1], np.cos(np.pi * x[..., 2])]
    assert weak_form_residual(phi, f, 3.0, psis) <= 1e-8
    with pytest.raises(InputError):
        q_laplace_solve(f, 1.5)


def test_recovered_field_is_balanced_by_source(small):
    g, f = small
    spec = CostSpec(2.0)
    w = recover_primal(solve_dual(f, spec).phi, spec)
    assert isinstance(w, HorizontalGridField)
    assert np.abs(horizontal_divergence(w).values - f.values).max() <= 1e-6 * np.abs(f.values).max()


def test_mollified_source_has_zero_mean(small):
    _, f = small
    assert abs(f.integral()) <= 1e-12
    assert f.values.max() > 0 > f.values.min()
