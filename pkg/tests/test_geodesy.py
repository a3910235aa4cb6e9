import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from heisenberg_transport.geodesy import (LatticeOracle, Polyline, TrivialGeodesicError, cc_distance,
                                          cc_distance_matrix, geodesic_point, geodesic_velocity, in_uniqueness_set,
                                          polyline_length_sr, sample_geodesic, select_geodesic)
from heisenberg_transport.group import dilate, group_mul, vertical_defect

coords = arrays(np.float64, 3, elements=st.floats(-2, 2))


def test_horizontal_distance_is_euclidean():
    assert cc_distance(np.zeros(3), [1.0, 0.0, 0.0]) == pytest.approx(1.0, abs=1e-12)
    assert cc_distance(np.zeros(3), [0.3, 0.4, 0.0]) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("h", [1e-6, 1 / 64, 1.0, -2.5])
def test_vertical_distance(h):
    assert cc_distance(np.zeros(3), [0.0, 0.0, h]) == pytest.approx(math.sqrt(4 * math.pi * abs(h)), abs=1e-12)


def test_distance_on_identical_points_is_zero():
    assert cc_distance([0.1, 0.2, 0.3], [0.1, 0.2, 0.3]) == 0.0


@settings(max_examples=60)
@given(coords, coords)
def test_symmetry_and_invariance(x, y):
    # translation rounding enters d through sqrt(4 pi |h|), so nearly equal points are excluded
    assume(np.abs(x - y).max() > 1e-3)
    d = cc_distance(x, y)
    assert cc_distance(y, x) == pytest.approx(d, rel=1e-10, abs=1e-12)
    z = np.array([0.4, -1.1, 0.7])
    assert cc_distance(group_mul(z, x), group_mul(z, y)) == pytest.approx(d, rel=1e-9, abs=1e-9)


@settings(max_examples=60)
@given(coords, st.floats(0.2, 5.0))
def test_homogeneity(x, t):
    assert cc_distance(np.zeros(3), dilate(x, t)) == pytest.approx(t * cc_distance(np.zeros(3), x), rel=1e-9, abs=1e-12)


@settings(max_examples=60)
@given(coords, coords, coords)
def test_triangle_inequality(x, y, z):
    assert cc_distance(x, z) <= cc_distance(x, y) + cc_distance(y, z) + 1e-9


def test_distance_dominates_euclidean_horizontal_part():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(2, 200, 3))
    d = cc_distance(x, y)
    assert np.all(d >= np.linalg.norm((y - x)[:, :2], axis=1) - 1e-12)


def test_distance_matrix_matches_pairs():
    rng = np.random.default_rng(1)
    xs, ys = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    m = cc_distance_matrix(xs, ys)
    assert m.shape == (4, 5)
    assert m[2, 3] == pytest.approx(cc_distance(xs[2], ys[3]), rel=1e-13)


@settings(max_examples=60)
@given(coords, coords)
def test_geodesic_round_trip(x, y):
    if np.allclose(x, y):
        return
    g = select_geodesic(x, y)
    assert np.allclose(geodesic_point(g, 0.0), x, atol=1e-12)
    assert np.allclose(geodesic_point(g, 1.0), y, atol=1e-9)
    assert g.speed == pytest.approx(cc_distance(x, y), rel=1e-9, abs=1e-12)


def test_center_pair_selection():
    x = np.array([0.2, -0.1, 0.05])
    y = group_mul(x, [0.0, 0.0, 0.3])
    assert not in_uniqueness_set(x, y)
    g = select_geodesic(x, y)
    assert g.selection_dependent
    assert g.theta == pytest.approx(2 * math.pi)
    assert np.allclose(geodesic_point(g, 1.0), y, atol=1e-12)


def test_trivial_geodesic_is_rejected():
    with pytest.raises(TrivialGeodesicError):
        select_geodesic(np.ones(3), np.ones(3))


def test_geodesic_is_horizontal():
    g = select_geodesic([0.0, 0.0, 0.0], [0.5, 0.2, 0.3])
    t = np.linspace(0, 1, 17)
    v = geodesic_velocity(g, t)
    assert np.abs(vertical_defect(v, geodesic_point(g, t))).max() <= 1e-12
    assert np.allclose(np.linalg.norm(v[:, :2], axis=1), g.speed)


@pytest.mark.parametrize("k", [2, 8, 64])
def test_sampled_length_equals_distance(k):
    x, y = np.zeros(3), np.array([0.4, -0.3, 0.2])
    assert polyline_length_sr(sample_geodesic(select_geodesic(x, y), k)) == pytest.approx(cc_distance(x, y), abs=1e-12)


def test_polyline_needs_two_vertices():
    with pytest.raises(ValueError):
        Polyline(np.zeros((1, 3)))


@pytest.fixture(scope="module")
def small_oracle():
    return LatticeOracle(radius=30)


def test_lattice_oracle_bounds_distance_from_above(small_oracle):
    rng = np.random.default_rng(5)
    for x, y in rng.uniform(-0.5, 0.5, size=(8, 2, 3)):
        assert small_oracle.distance(x, y) >= cc_distance(x, y) * (1 - 1e-3)
        assert small_oracle.distance(x, y) <= cc_distance(x, y) * 1.06


def test_lattice_oracle_rejects_higher_dimensions(small_oracle):
    with pytest.raises(ValueError):
        small_oracle.distance(np.zeros(5), np.ones(5))


@pytest.mark.parametrize("y", [[0.5, 0.2, 0.3], [-0.1, 0.4, -0.6], [0.0, 0.0, 0.2]])
def test_finite_difference_speed_is_constant(y):
    g = select_geodesic(np.zeros(3), y)
    dt = 1e-4
    t = np.linspace(dt, 1 - dt, 41)
    v = (geodesic_point(g, t + dt) - geodesic_point(g, t - dt)) / (2 * dt)
    assert np.abs(np.linalg.norm(v[:, :2], axis=1) - g.speed).max() <= 1e-6
    assert np.abs(vertical_defect(v, geodesic_point(g, t))).max() <= 1e-6


def test_geodesic_beats_random_competitors():
    rng = np.random.default_rng(9)
    x, y = np.array([-0.2, 0.1, 0.0]), np.array([0.3, -0.2, 0.15])
    best = polyline_length_sr(sample_geodesic(select_geodesic(x, y), 32))
    for _ in range(100):
        mid = rng.uniform(-0.5, 0.5, size=(rng.integers(1, 6), 3))
        assert best <= polyline_length_sr(Polyline(np.vstack([x, mid, y]))) + 1e-12
