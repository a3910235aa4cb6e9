"""Closed-form geodesics, the Carnot-Caratheodory distance and its lattice oracle.

A geodesic from the identity is ``sigma_{chi, theta}``; pairing the
coordinates ``(x_j, x_{n+j})`` into complex numbers it reads

    x_c(t)      = chi_c * t * S(theta t) * exp(i theta t / 2)
    x_{2n+1}(t) = |chi|^2 t^2 V(theta t) / 2

with ``S(p) = 2 sin(p/2) / p`` and ``V(p) = (p - sin p) / p^2``, both smooth
through ``p = 0`` where the curve degenerates to a straight segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import InputError
from .group import _as_points, group_index, group_mul, horizontal_to_ambient, left_difference

TWO_PI = 2.0 * np.pi


def _sinc_half(p):
    return np.sinc(np.asarray(p, dtype=float) / TWO_PI)


def _vertical_shape(p):
    p = np.asarray(p, dtype=float)
    p2 = p * p
    series = p * (1.0 / 6.0 - p2 * (1.0 / 120.0 - p2 * (1.0 / 5040.0
             - p2 * (1.0 / 362880.0 - p2 * (1.0 / 39916800.0 - p2 / 6227020800.0)))))
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (p - np.sin(p)) / p2
    return np.where(np.abs(p) < 0.5, series, direct)


def _to_complex(v):
    n = v.shape[-1] // 2
    return v[..., :n] + 1j * v[..., n:2 * n]


def _from_complex(c):
    return np.concatenate([c.real, c.imag], axis=-1)


@dataclass(frozen=True)
class GeodesicParams:
    """Geodesic ``base . sigma_{chi, theta}`` on ``[0, 1]``.

    ``selection_dependent`` marks a tie-break choice among the infinitely
    many geodesics joining points on a common vertical line.
    """

    base: np.ndarray
    chi: np.ndarray
    theta: float
    selection_dependent: bool = False

    def __post_init__(self):
        base = _as_points(self.base).reshape(-1)
        chi = np.asarray(self.chi, dtype=float).reshape(-1)
        if chi.size != base.size - 1:
            raise ValueError("chi must have 2n entries")
        if not -TWO_PI - 1e-12 <= self.theta <= TWO_PI + 1e-12:
            raise ValueError(f"theta must lie in [-2pi, 2pi], got {self.theta}")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "theta", float(self.theta))

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.chi))

    @property
    def n(self) -> int:
        return group_index(self.base.size)


def _sigma(chi, theta, t):
    t = np.asarray(t, dtype=float)[..., None]
    p = theta * t
    horiz = _to_complex(chi) * t * _sinc_half(p) * np.exp(0.5j * p)
    vert = 0.5 * np.dot(chi, chi) * t * t * _vertical_shape(p)
    return np.concatenate([_from_complex(horiz), vert], axis=-1)


def geodesic_point(g: GeodesicParams, t):
    """Point ``base . sigma(t)``; ``t`` may be a scalar or an array."""
    scalar = np.ndim(t) == 0
    out = group_mul(g.base, _sigma(g.chi, g.theta, np.atleast_1d(t)))
    return out[0] if scalar else out


def geodesic_velocity(g: GeodesicParams, t):
    """Ambient velocity of ``base . sigma`` at ``t``.

    The horizontal velocity is ``chi`` rotated by ``theta t``, so its frame
    coefficients have constant norm ``|chi|``.
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    coeffs = _from_complex(_to_complex(g.chi) * np.exp(1j * g.theta * t[..., None]))
    pts = geodesic_point(g, t)
    out = horizontal_to_ambient(coeffs, pts)
    return out[0] if scalar else out


def geodesic_frame_velocity(g: GeodesicParams, t):
    """Frame coefficients of the velocity (a rotation of ``chi``)."""
    t = np.asarray(t, dtype=float)
    return _from_complex(_to_complex(g.chi) * np.exp(1j * g.theta * t[..., None]))


def _reduce(z):
    rho = np.linalg.norm(z[..., :-1], axis=-1)
    return rho, z[..., -1]


def cc_distance(x, y, center_tol: float = 1e-8):
    """Sub-Riemannian distance, broadcasting over leading axes."""
    z = left_difference(x, y)
    rho, h = _reduce(z)
    shape = rho.shape
    d, _ = _backend.cc_reduced(np.ascontiguousarray(rho.reshape(-1)), np.ascontiguousarray(h.reshape(-1)), center_tol)
    d = d.reshape(shape)
    return float(d) if d.ndim == 0 else d


def cc_distance_matrix(xs, ys) -> np.ndarray:
    """Pairwise distances between two point clouds, shape ``(len(xs), len(ys))``."""
    xs = _as_points(xs)
    ys = _as_points(ys)
    return np.asarray(cc_distance(xs[:, None, :], ys[None, :, :])).reshape(len(xs), len(ys))


def in_uniqueness_set(x, y, tol: float = 1e-12):
    """True when ``x^{-1} y`` is off the center, i.e. the geodesic is unique."""
    rho, _ = _reduce(left_difference(x, y))
    out = rho > tol
    return bool(out) if np.ndim(out) == 0 else out


class TrivialGeodesicError(InputError):
    pass


def select_geodesic(x, y, tol: float = 1e-12) -> GeodesicParams:
    """The geodesic from ``x`` to ``y``.

    Off the center it is unique.  For ``x^{-1} y = (0, ..., 0, h)`` the
    deterministic choice is ``chi = (sqrt(4 pi |h|), 0, ..., 0)`` with
    ``theta = 2 pi sign(h)``.
    """
    x = _as_points(x).reshape(-1)
    y = _as_points(y).reshape(-1)
    z = left_difference(x, y)
    rho, h = _reduce(z)
    if rho <= tol and h == 0.0:
        raise TrivialGeodesicError("trivial geodesic: x == y")
    if rho <= tol:
        chi = np.zeros(z.size - 1)
        chi[0] = math.sqrt(4.0 * math.pi * abs(h))
        return GeodesicParams(x, chi, math.copysign(TWO_PI, h), selection_dependent=True)
    _, theta = _backend.cc_reduced(np.array([rho]), np.array([h]), 0.0)
    theta = float(theta[0])
    chi_c = _to_complex(z[:-1]) * np.exp(-0.5j * theta) / _sinc_half(theta)
    return GeodesicParams(x, _from_complex(chi_c), theta)


@dataclass(frozen=True)
class Polyline:
    """Curve given by its vertices, shape ``(k, 2n+1)``."""

    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _as_points(self.vertices)
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValueError("a polyline needs at least two vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("polyline vertices must be finite")
        object.__setattr__(self, "vertices", v)

    @property
    def chords(self) -> np.ndarray:
        return np.diff(self.vertices, axis=0)


def polyline_length_sr(p: Polyline) -> float:
    """Sum of sub-Riemannian distances between consecutive vertices."""
    v = p.vertices
    return float(np.sum(cc_distance(v[:-1], v[1:])))


def sample_geodesic(g: GeodesicParams, k: int) -> Polyline:
    return Polyline(geodesic_point(g, np.linspace(0.0, 1.0, k)))


# ---------------------------------------------------------------------------
# Graph oracle on the discrete Heisenberg lattice


def lattice_moves(radius: int = 3):
    """Primitive planar steps ``(a, b)`` with ``max(|a|, |b|) <= radius``."""
    moves = [(a, b) for a in range(-radius, radius + 1) for b in range(-radius, radius + 1)
             if (a or b) and math.gcd(a, b) == 1]
    da = np.array([m[0] for m in moves], dtype=np.int64)
    db = np.array([m[1] for m in moves], dtype=np.int64)
    return da, db, np.hypot(da, db).astype(float)


class LatticeOracle:
    """Shortest horizontal paths on the lattice ``{(i, j, k / 2)}`` (n = 1).

    A step ``(a, b)`` from ``(i, j, k)`` is the straight horizontal segment
    to ``(i + a, j + b, k + i b - j a)``; every graph path is therefore an
    admissible horizontal curve and graph distances bound ``d_SR`` from
    above at lattice nodes.  Distances are computed once from the identity
    and reused for any pair by left translation; a pair is rescaled by a
    dilation so that its Koranyi gauge equals ``fill * radius`` before the
    lattice value is read off by trilinear interpolation.
    """

    def __init__(self, radius: int = 60, stencil: int = 3, fill: float = 0.45):
        self.radius = int(radius)
        self.stencil = int(stencil)
        self.fill = float(fill)
        self.K = int(self.radius ** 2 / (2.0 * math.pi)) + 8
        da, db, cost = lattice_moves(self.stencil)
        self.table = _backend.lattice_dijkstra(self.radius, self.K, da, db, cost, float(self.radius))

    def lattice_distance(self, i: int, j: int, k: int) -> float:
        return float(self.table[i + self.radius, j + self.radius, k + self.K])

    def scaled_target(self, z):
        """Dilation factor and fractional lattice coordinates for target ``z``."""
        z = np.asarray(z, dtype=float)
        gauge = (np.dot(z[:2], z[:2]) ** 2 + 16.0 * z[2] ** 2) ** 0.25
        tau = self.fill * self.radius / gauge
        return tau, np.array([tau * z[0], tau * z[1], 2.0 * tau * tau * z[2]])

    def distance(self, x, y) -> float:
        z = left_difference(x, y)
        if group_index(z.size) != 1:
            raise ValueError("the lattice oracle is built for n = 1")
        if not np.any(z):
            return 0.0
        tau, u = self.scaled_target(z)
        base = np.floor(u).astype(int)
        f = u - base
        total = 0.0
        for corner in np.ndindex(2, 2, 2):
            c = np.array(corner)
            wgt = float(np.prod(np.where(c == 1, f, 1.0 - f)))
            if wgt == 0.0:
                continue
            i, j, k = base + c
            val = self.lattice_distance(int(i), int(j), int(k))
            if not np.isfinite(val):
                raise RuntimeError("target outside the settled lattice region")
            total += wgt * val
        return total / tau
