"""Heisenberg group H^n in exponential coordinates.

Points are arrays whose last axis has length ``2n + 1``; every function
broadcasts over leading axes.  The horizontal frame is

    X_j     = d_j     - (x_{n+j} / 2) d_{2n+1}
    X_{n+j} = d_{n+j} + (x_j / 2)     d_{2n+1}

and is declared orthonormal, so the horizontal norm of a vector given by
its frame coefficients is their Euclidean norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special


def group_index(dim: int) -> int:
    """Return ``n`` for an ambient dimension ``2n + 1``."""
    if dim < 3 or dim % 2 == 0:
        raise ValueError(f"ambient dimension must be 2n+1 >= 3, got {dim}")
    return (dim - 1) // 2


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    group_index(a.shape[-1])
    return a


@dataclass(frozen=True)
class GroupPoint:
    """A single point of H^n, mostly useful at API boundaries."""

    coords: tuple[float, ...]

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim != 1:
            raise ValueError("GroupPoint takes a flat coordinate sequence")
        group_index(c.size)
        if not np.all(np.isfinite(c)):
            raise ValueError("GroupPoint coordinates must be finite")
        object.__setattr__(self, "coords", tuple(float(v) for v in c))

    @property
    def n(self) -> int:
        return group_index(len(self.coords))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)

    def __mul__(self, other: GroupPoint) -> GroupPoint:
        return GroupPoint(tuple(group_mul(self, other)))

    @classmethod
    def identity(cls, n: int = 1) -> GroupPoint:
        return cls((0.0,) * (2 * n + 1))


def symplectic(a, b) -> np.ndarray:
    """``sum_j (a_j b_{n+j} - a_{n+j} b_j)`` over the horizontal parts."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = group_index(a.shape[-1])
    return np.sum(a[..., :n] * b[..., n:2 * n] - a[..., n:2 * n] * b[..., :n], axis=-1)


def group_mul(a, b) -> np.ndarray:
    """Group product ``a . b`` (BCH law for step two)."""
    a = _as_points(a)
    b = _as_points(b)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    out = a + b
    out[..., -1] += 0.5 * symplectic(a, b)
    return out


def group_inv(a) -> np.ndarray:
    return -_as_points(a)


def left_difference(x, y) -> np.ndarray:
    """``x^{-1} . y``, the displacement seen from ``x``."""
    return group_mul(group_inv(x), y)


def dilate(a, tau: float) -> np.ndarray:
    """Anisotropic dilation: horizontal coordinates by tau, vertical by tau^2."""
    if not tau > 0:
        raise ValueError(f"dilation factor must be positive, got {tau}")
    a = _as_points(a).copy()
    a[..., :-1] *= tau
    a[..., -1] *= tau * tau
    return a


def frame_vector(j: int, at) -> np.ndarray:
    """Ambient components of ``X_j`` at ``at`` (``j`` is 1-based, 1..2n)."""
    at = _as_points(at)
    n = group_index(at.shape[-1])
    if not 1 <= j <= 2 * n:
        raise IndexError(f"frame index must be in 1..{2 * n}, got {j}")
    out = np.zeros(at.shape)
    out[..., j - 1] = 1.0
    if j <= n:
        out[..., -1] = -0.5 * at[..., n + j - 1]
    else:
        out[..., -1] = 0.5 * at[..., j - n - 1]
    return out


def frame_matrix(at) -> np.ndarray:
    """Stack of all frame vectors, shape ``(..., 2n, 2n+1)``."""
    at = _as_points(at)
    n = group_index(at.shape[-1])
    return np.stack([frame_vector(j, at) for j in range(1, 2 * n + 1)], axis=-2)


def horizontal_to_ambient(coeffs, at) -> np.ndarray:
    """Ambient vector ``sum_j c_j X_j(at)``."""
    coeffs = np.asarray(coeffs, dtype=float)
    at = _as_points(at)
    n = group_index(at.shape[-1])
    out = np.zeros(np.broadcast_shapes(coeffs.shape[:-1], at.shape[:-1]) + (2 * n + 1,))
    out[..., :2 * n] = coeffs
    out[..., -1] = 0.5 * symplectic(at, np.concatenate([coeffs, np.zeros(coeffs.shape[:-1] + (1,))], axis=-1))
    return out


def vertical_defect(v, at) -> np.ndarray:
    """Distance of an ambient vector from the horizontal plane at ``at``.

    Frame coefficients of a horizontal vector are its first 2n ambient
    components; what remains after subtracting their frame image is the
    vertical defect.
    """
    v = np.asarray(v, dtype=float)
    return v[..., -1] - horizontal_to_ambient(v[..., :-1], at)[..., -1]


def norm_h(coeffs) -> np.ndarray:
    return np.linalg.norm(np.asarray(coeffs, dtype=float), axis=-1)


def inner_h(a, b) -> np.ndarray:
    return np.sum(np.asarray(a, dtype=float) * np.asarray(b, dtype=float), axis=-1)


def koranyi_gauge(a) -> np.ndarray:
    """``(|horizontal|^4 + 16 x_{2n+1}^2)^{1/4}``; homogeneous of degree one."""
    a = _as_points(a)
    r2 = np.sum(a[..., :-1] ** 2, axis=-1)
    return (r2 * r2 + 16.0 * a[..., -1] ** 2) ** 0.25


@dataclass(frozen=True)
class MollifierSpec:
    """Group mollifier ``rho_eps(x) = eps^{-N} rho(delta_{1/eps} x)``.

    The profile is ``c (1 - g(x)^2)^degree`` with ``g = kappa * koranyi``;
    ``kappa`` is the largest ratio ``d_SR / koranyi`` so that the support
    ``{g < 1}`` sits inside the unit sub-Riemannian ball.
    """

    epsilon: float
    n: int = 1
    degree: int = 4

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.degree < 1:
            raise ValueError("degree must be a positive integer")

    @property
    def N(self) -> int:
        return 2 * self.n + 2

    @cached_property
    def kappa(self) -> float:
        return gauge_ratio(self.n)

    @cached_property
    def normalization(self) -> float:
        # Integral of (1 - kappa^2 K^2)^m over R^{2n+1} in the coordinates
        # a = |zeta|^2, b = 4 x_{2n+1}, which turn K^2 into a plane radius.
        n, m, k = self.n, self.degree, self.kappa
        sphere = 2.0 * np.pi ** n / special.gamma(n)
        mass = (sphere / 8.0) * special.beta(0.5, n / 2.0) * k ** (-2.0 * (n + 1)) * special.beta(n + 1, m + 1)
        return 1.0 / mass

    @property
    def horizontal_radius(self) -> float:
        return self.epsilon / self.kappa

    @property
    def vertical_radius(self) -> float:
        return self.epsilon ** 2 / (4.0 * self.kappa ** 2)

    def profile(self, x) -> np.ndarray:
        """Unscaled profile ``rho`` at points ``x``."""
        g2 = (self.kappa * koranyi_gauge(x)) ** 2
        return np.where(g2 < 1.0, self.normalization * np.clip(1.0 - g2, 0.0, None) ** self.degree, 0.0)

    def __call__(self, x) -> np.ndarray:
        """``rho_eps(x)``."""
        e = self.epsilon
        return e ** (-self.N) * self.profile(dilate(x, 1.0 / e))

    def vertical_profile_integral(self, r, lo, hi) -> np.ndarray:
        """Integrate ``rho_eps`` over the vertical segment ``[lo, hi]``.

        ``r`` is the horizontal distance to the center and ``lo, hi`` are
        vertical offsets from it, all broadcast together.  Exact: for the
        degree-4 profile the integrand expands into polynomials and powers
        of ``sqrt(a^2 + u^2)`` with ``a = r^2``, ``u = 4 x_{2n+1}``.
        """
        if self.degree != 4:
            raise NotImplementedError("closed-form vertical integral is for degree 4")
        e, k = self.epsilon, self.kappa
        a = (np.asarray(r, dtype=float) / e) ** 2
        ulo = 4.0 * np.asarray(lo, dtype=float) / (e * e)
        uhi = 4.0 * np.asarray(hi, dtype=float) / (e * e)
        inside = 1.0 / k ** 4 - a * a
        half = np.sqrt(np.clip(inside, 0.0, None))
        ua = np.clip(ulo, -half, half)
        ub = np.clip(uhi, -half, half)
        val = (self._antiderivative(a, ub) - self._antiderivative(a, ua)) / 4.0
        val = np.where((inside > 0) & (ub > ua), val, 0.0)
        # dx_{2n+1} = eps^2 ds, rho_eps carries eps^{-N}
        return self.normalization * val * e ** (2 - self.N)

    def _antiderivative(self, a, u):
        k2 = self.kappa ** 2
        q = np.sqrt(a * a + u * u)
        with np.errstate(divide="ignore", invalid="ignore"):
            ash = np.where(a > 0, np.arcsinh(u / np.where(a > 0, a, 1.0)), 0.0)
        p1 = 0.5 * (u * q + a * a * ash)
        p3 = (u / 8.0) * (2.0 * u * u + 5.0 * a * a) * q + (3.0 * a ** 4 / 8.0) * ash
        return (u - 4.0 * k2 * p1 + 6.0 * k2 ** 2 * (a * a * u + u ** 3 / 3.0)
                - 4.0 * k2 ** 3 * p3 + k2 ** 4 * (a ** 4 * u + 2.0 * a * a * u ** 3 / 3.0 + u ** 5 / 5.0))


_GAUGE_RATIO: dict[int, float] = {}


def gauge_ratio(n: int = 1) -> float:
    """``max d_SR(0, x)`` over the unit Koranyi sphere (attained on the center)."""
    if n not in _GAUGE_RATIO:
        from .geodesy import cc_distance

        z = np.linspace(0.0, 0.25, 4001)
        pts = np.zeros((z.size, 2 * n + 1))
        pts[:, 0] = (1.0 - 16.0 * z ** 2).clip(0.0) ** 0.25
        pts[:, -1] = z
        _GAUGE_RATIO[n] = float(np.max(cc_distance(np.zeros(2 * n + 1), pts))) * (1.0 + 1e-9)
    return _GAUGE_RATIO[n]
