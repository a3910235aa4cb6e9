import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from heisenberg_transport.grid import Grid
from heisenberg_transport.group import (GroupPoint, MollifierSpec, dilate, frame_vector, group_inv, group_mul,
                                        horizontal_to_ambient, koranyi_gauge, left_difference, vertical_defect)
from heisenberg_transport.mollify import mollify_points

coords = arrays(np.float64, 3, elements=st.floats(-10, 10))
factors = st.floats(0.1, 10)


@given(coords, coords, coords)
def test_product_is_associative(a, b, c):
    lhs = group_mul(group_mul(a, b), c)
    rhs = group_mul(a, group_mul(b, c))
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


@given(coords)
def test_inverse_and_identity(a):
    assert np.allclose(group_mul(a, group_inv(a)), 0.0, atol=1e-12)
    assert np.array_equal(group_mul(a, np.zeros(3)), a)


@given(coords, coords, factors)
def test_dilation_is_an_automorphism(a, b, t):
    lhs = dilate(group_mul(a, b), t)
    rhs = group_mul(dilate(a, t), dilate(b, t))
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-8)


@given(coords, coords, coords)
def test_left_difference_is_translation_invariant(x, y, z):
    lhs = left_difference(group_mul(z, x), group_mul(z, y))
    assert np.allclose(lhs, left_difference(x, y), rtol=1e-12, atol=1e-8)


@given(coords, factors)
def test_koranyi_gauge_is_homogeneous(a, t):
    assert np.isclose(koranyi_gauge(dilate(a, t)), t * koranyi_gauge(a), rtol=1e-12, atol=1e-12)


def test_product_example():
    # (1,0,0).(0,1,0) = (1,1,1/2)
    assert np.allclose(group_mul([1, 0, 0], [0, 1, 0]), [1, 1, 0.5])


def test_frame_vectors():
    x = np.array([0.3, -0.7, 2.0])
    assert np.allclose(frame_vector(1, x), [1, 0, 0.35])
    assert np.allclose(frame_vector(2, x), [0, 1, 0.15])
    with pytest.raises(IndexError):
        frame_vector(3, x)


@settings(max_examples=50)
@given(coords, arrays(np.float64, 2, elements=st.floats(-5, 5)))
def test_frame_image_is_horizontal(x, c):
    v = horizontal_to_ambient(c, x)
    assert abs(vertical_defect(v, x)) <= 1e-12 * (1 + np.abs(v).max() * (1 + np.abs(x).max()))


def test_vertical_defect_of_vertical_vector():
    assert vertical_defect(np.array([0.0, 0.0, 2.5]), np.array([1.0, 1.0, 0.0])) == 2.5


def test_group_point_validation():
    assert GroupPoint.identity().n == 1
    with pytest.raises(ValueError):
        dilate([1.0, 0.0, 0.0], 0.0)


def test_mollifier_support_radii():
    m = MollifierSpec(0.2)
    assert m.horizontal_radius == pytest.approx(0.2 / m.kappa)
    assert m.vertical_radius == pytest.approx(0.04 / (4 * m.kappa ** 2))
    with pytest.raises(ValueError):
        MollifierSpec(0.0)


def test_mollifier_has_unit_mass():
    g = Grid.from_spacing((-0.5,) * 3, (0.5,) * 3, 1 / 32)
    vals = mollify_points([[0.0, 0.0, 0.0]], [1.0], MollifierSpec(0.3), g, renormalize=False)
    assert vals.sum() * g.cellvol == pytest.approx(1.0, rel=1e-2)


def test_mollifier_vanishes_outside_support():
    m = MollifierSpec(0.25)
    far = np.array([[0.3, 0.0, 0.0], [0.0, 0.0, 0.05]])
    assert np.all(m(far) == 0.0)
    assert m(np.zeros(3)) > 0


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2])
def test_mollifier_mass_is_exact(eps):
    from scipy import integrate

    m = MollifierSpec(eps)
    z = 2 * m.vertical_radius
    mass, _ = integrate.quad(lambda r: 2 * np.pi * r * m.vertical_profile_integral(r, -z, z), 0, m.horizontal_radius,
                             epsabs=1e-13, epsrel=1e-12, limit=200)
    assert mass == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=50)
@given(coords, st.integers(1, 2))
def test_frame_is_left_invariant(a, j):
    # the differential of s -> a . (s e_j) is exact because the law is affine in s
    e = np.zeros(3)
    e[j - 1] = 1.0
    push = group_mul(a, e) - a
    assert np.allclose(push, frame_vector(j, a), atol=1e-12 * (1 + np.abs(a).max()))
