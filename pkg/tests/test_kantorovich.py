import numpy as np
import pytest

from heisenberg_transport.errors import InputError
from heisenberg_transport.geodesy import cc_distance
from heisenberg_transport.grid import Grid
from heisenberg_transport.kantorovich import (DiscreteMeasure, TransportPlan, check_divergence_identity,
                                              check_pansu_gradient, default_test_functions, dual_value, is_transport_ray, lagrangian_value,
                                              mk_system_check, recover_potential, solve_mk, transport_density)

UNIT = ((-0.5,) * 3, (0.5,) * 3)


def test_single_pair_cost_is_the_distance():
    x, y = [-0.3, 0.0, 0.0], [0.2, 0.1, 0.05]
    plan, cost, _ = solve_mk(DiscreteMeasure.dirac(x), DiscreteMeasure.dirac(y))
    assert cost == pytest.approx(cc_distance(x, y), abs=1e-14)
    assert plan.pairs.shape == (1, 3)


def test_identical_marginals_cost_nothing():
    m = DiscreteMeasure.uniform([[0.0, 0.0, 0.0], [0.1, 0.2, 0.3]])
    plan, cost, duals = solve_mk(m, m)
    assert cost == pytest.approx(0.0, abs=1e-14)
    u = recover_potential(plan, duals)
    assert dual_value(u, m, m) == pytest.approx(0.0, abs=1e-14)


def test_measure_validation():
    with pytest.raises(InputError):
        DiscreteMeasure([[0, 0, 0]], [0.5])
    with pytest.raises(InputError):
        DiscreteMeasure([[0, 0, 0], [1, 0, 0]], [1.5, -0.5])
    with pytest.raises(InputError):
        DiscreteMeasure([[np.nan, 0, 0]], [1.0])
    with pytest.raises(InputError):
        DiscreteMeasure([[2.0, 0, 0]], [1.0], box=UNIT)


def test_plan_validation():
    mu = DiscreteMeasure.uniform([[0, 0, 0], [1, 0, 0]])
    nu = DiscreteMeasure.dirac([0, 1, 0])
    with pytest.raises(InputError):
        TransportPlan([[0, 0, 1.0]], mu, nu)
    with pytest.raises(InputError):
        TransportPlan([[0, 3, 0.5], [1, 0, 0.5]], mu, nu)


@pytest.fixture(scope="module")
def random_instance():
    rng = np.random.default_rng(7)
    mu = DiscreteMeasure(rng.uniform(-0.5, 0.5, (12, 3)), rng.dirichlet(np.ones(12)))
    nu = DiscreteMeasure(rng.uniform(-0.5, 0.5, (9, 3)), rng.dirichlet(np.ones(9)))
    plan, cost, duals = solve_mk(mu, nu)
    return mu, nu, plan, cost, recover_potential(plan, duals)


def test_strong_duality(random_instance):
    mu, nu, _, cost, u = random_instance
    assert dual_value(u, mu, nu) == pytest.approx(cost, abs=1e-10)


def test_potential_is_one_lipschitz(random_instance):
    *_, u = random_instance
    assert u.lipschitz_violation() <= 1e-12
    rng = np.random.default_rng(8)
    a, b = rng.uniform(-0.5, 0.5, (2, 50, 3))
    assert np.all(np.abs(u(a) - u(b)) <= cc_distance(a, b) + 1e-12)


def test_mass_pairs_are_transport_rays(random_instance):
    *_, plan, _, u = random_instance
    for x, y, _ in plan.carrying():
        if not np.array_equal(x, y):
            assert is_transport_ray(u, x, y)


def test_lagrangian_value_matches_cost(random_instance):
    _, _, plan, cost, _ = random_instance
    assert lagrangian_value(plan) == pytest.approx(cost, rel=1e-10)


def test_merging_targets_moves_cost_by_at_most_the_merge_distance():
    rng = np.random.default_rng(12)
    for _ in range(5):
        mu = DiscreteMeasure(rng.uniform(-0.5, 0.5, (6, 3)), rng.dirichlet(np.ones(6)))
        pts, wts = rng.uniform(-0.5, 0.5, (5, 3)), rng.dirichlet(np.ones(5))
        _, full, _ = solve_mk(mu, DiscreteMeasure(pts, wts))
        # send the mass of pts[0] onto pts[1]
        _, merged, _ = solve_mk(mu, DiscreteMeasure(pts[1:], np.concatenate([[wts[0] + wts[1]], wts[2:]])))
        assert abs(merged - full) <= wts[0] * cc_distance(pts[0], pts[1]) + 1e-12


def test_density_bounds(random_instance):
    mu, nu, plan, cost, _ = random_instance
    g = Grid.from_spacing((-1.0,) * 3, (1.0,) * 3, 1 / 16)
    fld = transport_density(plan, g)
    cv = g.cellvol
    assert np.all(np.linalg.norm(fld.vector, axis=-1) <= fld.scalar + 1e-9)
    assert np.linalg.norm(fld.vector, axis=-1).sum() * cv <= cost + 1e-6
    support = np.vstack([mu.points, nu.points])
    lo, hi = support.min(axis=0) - cost, support.max(axis=0) + cost
    carried = g.coords[fld.scalar > 0]
    assert np.all(carried >= lo - g.spacing) and np.all(carried <= hi + g.spacing)


def test_horizontal_segment_density():
    x, y = [-0.25, 0.0, 0.0], [0.25, 0.0, 0.0]
    mu, nu = DiscreteMeasure.dirac(x), DiscreteMeasure.dirac(y)
    plan, cost, _ = solve_mk(mu, nu)
    fld = transport_density(plan, Grid.from_spacing(*UNIT, 1 / 16), 64)
    assert fld.total_mass() == pytest.approx(0.5, abs=1e-12)
    assert fld.vector_mass() == pytest.approx(0.5, abs=1e-12)
    assert fld.vector[..., 1].sum() == pytest.approx(0.0, abs=1e-12)
    affine = [tf for tf in default_test_functions() if tf.name == "x1"]
    assert check_divergence_identity(fld, mu, nu, affine) <= 1e-12
    assert check_divergence_identity(fld, mu, nu) <= 1e-2


def test_density_requires_geodesics_inside_grid():
    plan, _, _ = solve_mk(DiscreteMeasure.dirac([-0.45, 0, 0]), DiscreteMeasure.dirac([0.45, 0, 0.2]))
    with pytest.raises(InputError):
        transport_density(plan, Grid.from_spacing((-0.5, -0.1, -0.5), (0.5, 0.1, 0.5), 1 / 16))


def test_density_of_empty_plan_is_zero():
    m = DiscreteMeasure.dirac([0.1, 0.1, 0.1])
    plan, _, _ = solve_mk(m, m)
    fld = transport_density(plan, Grid.from_spacing(*UNIT, 1 / 8))
    assert fld.total_mass() == 0.0


@pytest.fixture(scope="module")
def pansu_pair():
    x, y = (-0.8, -0.1, -0.05), (0.8, 0.1, 0.05)
    mu, nu = DiscreteMeasure.dirac(x), DiscreteMeasure.dirac(y)
    plan, _, duals = solve_mk(mu, nu)
    u = recover_potential(plan, duals)
    out = {}
    for h in (1 / 32, 1 / 64):
        g = Grid.from_spacing((-1.0, -0.5, -0.5), (1.0, 0.5, 0.5), h)
        out[h] = (u.rasterize(g), transport_density(plan, g))
    return mu, nu, plan, out


def test_pansu_gradient_is_close_to_unit_direction(pansu_pair):
    _, _, plan, fields = pansu_pair
    rep = check_pansu_gradient(fields[1 / 32][0], plan)
    assert rep.checked == 3 and rep.skipped_center == 0
    assert rep.max_deviation < 0.2
    assert rep.max_speed_error <= 1e-12


def test_mk_system_improves_under_refinement(pansu_pair):
    mu, nu, _, fields = pansu_pair
    coarse, fine = (mk_system_check(*fields[h], mu, nu) for h in (1 / 32, 1 / 64))
    assert fine.divergence_residual < coarse.divergence_residual
    assert fine.unit_gradient_fraction > coarse.unit_gradient_fraction


@pytest.mark.xfail(strict=True, reason="at desk resolution the discrete system misses all three tolerances; "
                                       "the gradient of d(., y) blows up near the vertical line through y")
def test_mk_system_passes_at_desk_resolution(pansu_pair):
    mu, nu, _, fields = pansu_pair
    assert mk_system_check(*fields[1 / 64], mu, nu).passed
