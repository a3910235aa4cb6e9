"""Discrete Monge-Kantorovich transport for the sub-Riemannian distance.

The finite LP is solved by HiGHS; its duals are turned into a 1-Lipschitz
Kantorovich potential by a c-transform anchored on the target support,
which also gives the potential everywhere else.  Transport densities are
rasterized from the selected geodesics of the plan.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, sparse

from .errors import InfeasibleError, InputError, NumericalError
from .geodesy import (cc_distance, cc_distance_matrix, geodesic_frame_velocity, geodesic_point,
                      in_uniqueness_set, polyline_length_sr, sample_geodesic, select_geodesic)
from .grid import Grid, GridField, frame_gradient, gradient_array, horizontal_gradient_at
from .group import _as_points

MASS_TOL = 1e-12


@dataclass
class DiscreteMeasure:
    """Probability measure ``sum_i weights_i delta_{points_i}``."""

    points: np.ndarray
    weights: np.ndarray
    box: tuple | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(_as_points(self.points))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.points.shape[0] != self.weights.size:
            raise InputError("points and weights differ in length")
        if not np.all(np.isfinite(self.points)) or not np.all(np.isfinite(self.weights)):
            raise InputError("measure data must be finite")
        if np.any(self.weights <= 0):
            raise InputError("weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise InputError(f"weights sum to {self.weights.sum():.15g}, expected 1")
        if self.box is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.box)
            if np.any(self.points < lo) or np.any(self.points > hi):
                raise InputError("measure support leaves the declared box")

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def dirac(cls, x) -> DiscreteMeasure:
        return cls(np.atleast_2d(np.asarray(x, dtype=float)), [1.0])

    @classmethod
    def uniform(cls, points) -> DiscreteMeasure:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))


@dataclass
class TransportPlan:
    """Sparse coupling: rows ``(i, j, mass)`` between ``mu`` and ``nu``."""

    pairs: np.ndarray
    mu: DiscreteMeasure = field(repr=False)
    nu: DiscreteMeasure = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=float).reshape(-1, 3)
        if np.any(p[:, 2] < 0):
            raise InputError("plan masses must be nonnegative")
        i = p[:, 0].astype(np.int64)
        j = p[:, 1].astype(np.int64)
        if np.any(i < 0) or np.any(i >= self.mu.size) or np.any(j < 0) or np.any(j >= self.nu.size):
            raise InputError("plan indices out of range")
        rows = np.bincount(i, weights=p[:, 2], minlength=self.mu.size)
        cols = np.bincount(j, weights=p[:, 2], minlength=self.nu.size)
        err = max(np.abs(rows - self.mu.weights).max(), np.abs(cols - self.nu.weights).max())
        if err > 1e-10:
            raise InputError(f"plan marginals are off by {err:.3g}")
        self.pairs = p

    @property
    def sources(self) -> np.ndarray:
        return self.pairs[:, 0].astype(np.int64)

    @property
    def targets(self) -> np.ndarray:
        return self.pairs[:, 1].astype(np.int64)

    @property
    def masses(self) -> np.ndarray:
        return self.pairs[:, 2]

    def carrying(self, tol: float = MASS_TOL):
        """Iterate ``(x, y, mass)`` over pairs with mass above ``tol``."""
        for i, j, m in zip(self.sources, self.targets, self.masses):
            if m > tol:
                yield self.mu.points[i], self.nu.points[j], m

    def cost(self) -> float:
        d = cc_distance(self.mu.points[self.sources], self.nu.points[self.targets])
        return float(np.dot(np.atleast_1d(d), self.masses))


@dataclass
class PotentialSample:
    """Kantorovich potential ``u(z) = min_j d(z, anchors_j) + anchor_values_j``.

    Values at the support points of both marginals are stored; any other
    point is reached by the same formula, which is 1-Lipschitz for
    ``d_SR`` by construction.
    """

    anchors: np.ndarray
    anchor_values: np.ndarray
    points: np.ndarray
    values: np.ndarray

    def __call__(self, z) -> np.ndarray:
        z = _as_points(z)
        flat = z.reshape(-1, z.shape[-1])
        out = np.empty(flat.shape[0])
        for s in range(0, flat.shape[0], 4096):
            d = cc_distance_matrix(flat[s:s + 4096], self.anchors)
            out[s:s + 4096] = np.min(d + self.anchor_values[None, :], axis=1)
        out = out.reshape(z.shape[:-1])
        return float(out) if out.ndim == 0 else out

    def lookup(self, x, tol: float = 1e-14) -> float:
        """Stored value at a support point; ``KeyError`` elsewhere."""
        x = np.asarray(x, dtype=float)
        hit = np.flatnonzero(np.all(np.abs(self.points - x) <= tol, axis=1))
        if hit.size == 0:
            raise KeyError(f"potential undefined at {x.tolist()}")
        return float(self.values[hit[0]])

    def rasterize(self, grid: Grid) -> GridField:
        return GridField(grid, self(grid.coords))

    def lipschitz_violation(self) -> float:
        """``max (|u(a) - u(b)| - d(a, b))`` over stored points."""
        d = cc_distance_matrix(self.points, self.points)
        return float(np.max(np.abs(self.values[:, None] - self.values[None, :]) - d))


def _polish_plan(gamma, a, b, tol=1e-14):
    """Project a near-vertex LP solution back onto the marginal constraints.

    The positive entries of a vertex form a forest, so the equality system
    restricted to them is solvable exactly.
    """
    m, n = gamma.shape
    ii, jj = np.nonzero(gamma > tol)
    A = sparse.lil_matrix((m + n, ii.size))
    A[ii, np.arange(ii.size)] = 1.0
    A[m + jj, np.arange(ii.size)] = 1.0
    rhs = np.concatenate([a, b])
    x, *_ = np.linalg.lstsq(A.toarray(), rhs, rcond=None)
    if np.any(x < -1e-9):
        return np.stack([ii, jj, gamma[ii, jj]], axis=1)
    return np.stack([ii, jj, np.clip(x, 0.0, None)], axis=1)


def solve_mk(mu: DiscreteMeasure, nu: DiscreteMeasure):
    """Optimal coupling for the cost ``d_SR``; returns ``(plan, cost, duals)``.

    ``duals`` holds ``(f, g)`` with ``f_i + g_j <= c_ij``.
    """
    if mu.dim != nu.dim:
        raise InputError("marginals live in different dimensions")
    if abs(mu.weights.sum() - nu.weights.sum()) > 1e-12:
        raise InfeasibleError("marginals carry different total mass")
    C = cc_distance_matrix(mu.points, nu.points)
    m, n = C.shape
    rows = sparse.kron(sparse.eye(m), np.ones((1, n)))
    cols = sparse.kron(np.ones((1, m)), sparse.eye(n))
    A = sparse.vstack([rows, cols]).tocsr()
    res = optimize.linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([mu.weights, nu.weights]),
                           bounds=(0, None), method="highs-ds",
                           options={"primal_feasibility_tolerance": 1e-10,
                                    "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        raise InfeasibleError(res.message)
    if res.status != 0:
        raise NumericalError(f"LP solver failed: {res.message}")
    gamma = res.x.reshape(m, n)
    pairs = _polish_plan(gamma, mu.weights, nu.weights)
    plan = TransportPlan(pairs, mu, nu)
    duals = res.eqlin.marginals
    return plan, plan.cost(), (duals[:m], duals[m:])


def recover_potential(plan: TransportPlan, duals=None, gap_tol: float = 1e-6) -> PotentialSample:
    """1-Lipschitz potential whose ``mu - nu`` integral equals the plan cost.

    Starts from LP duals ``g`` (recomputed when absent) and sets
    ``u = min_j d(., y_j) - g_j``.
    """
    mu, nu = plan.mu, plan.nu
    if duals is None:
        _, _, duals = solve_mk(mu, nu)
    v = -np.asarray(duals[1], dtype=float)
    C = cc_distance_matrix(mu.points, nu.points)
    # tighten v on the plan support so that mass pairs are exactly active
    ux = np.min(C + v[None, :], axis=1)
    v_t = v.copy()
    for i, j, m in plan.pairs:
        if m > MASS_TOL:
            v_t[int(j)] = min(v_t[int(j)], ux[int(i)] - C[int(i), int(j)])
    pts = np.concatenate([mu.points, nu.points])
    u = PotentialSample(nu.points.copy(), v_t, pts, np.zeros(len(pts)))
    u.values = np.atleast_1d(u(pts))
    dual = dual_value(u, mu, nu)
    cost = plan.cost()
    if abs(cost - dual) > gap_tol:
        raise NumericalError(f"duality gap {abs(cost - dual):.3g} exceeds {gap_tol:g}")
    return u


def dual_value(u: PotentialSample, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """``int u d(mu - nu)``."""
    return float(np.dot(np.atleast_1d(u(mu.points)), mu.weights) - np.dot(np.atleast_1d(u(nu.points)), nu.weights))


def is_transport_ray(u: PotentialSample | None, x, y, tol: float = 1e-8) -> bool:
    """True when ``x != y`` and ``u`` drops by exactly ``d(x, y)`` from x to y."""
    if u is None:
        raise InputError("potential is undefined")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.array_equal(x, y):
        return False
    d = cc_distance(x, y)
    return bool(abs(u.lookup(x) - u.lookup(y) - d) <= tol)


@dataclass
class PansuReport:
    max_deviation: float
    checked: int
    skipped_center: int
    max_speed_error: float
    deviations: list = field(default_factory=list)


def check_pansu_gradient(u_grid: GridField, plan: TransportPlan, ts: Sequence[float] = (0.25, 0.5, 0.75),
                         tol: float = MASS_TOL) -> PansuReport:
    """Compare the discrete ``grad_H u`` with ``-sigma'/|sigma'|_H`` on the plan's geodesics.

    Pairs joined along the center are skipped: their geodesic is not unique.
    """
    devs, skipped, speed_err = [], 0, 0.0
    for x, y, _ in plan.carrying(tol):
        if np.array_equal(x, y):
            continue
        if not in_uniqueness_set(x, y):
            skipped += 1
            continue
        g = select_geodesic(x, y)
        speed_err = max(speed_err, abs(g.speed - cc_distance(x, y)))
        t = np.asarray(ts, dtype=float)
        vel = geodesic_frame_velocity(g, t)
        target = -vel / np.linalg.norm(vel, axis=-1, keepdims=True)
        got = horizontal_gradient_at(u_grid, geodesic_point(g, t))
        devs.extend(np.linalg.norm(got - target, axis=-1).tolist())
    return PansuReport(max(devs, default=0.0), len(devs), skipped, speed_err, devs)


@dataclass
class TransportDensityField:
    """Rasterized scalar density ``a`` and frame-vector density ``w`` (per unit volume)."""

    grid: Grid
    scalar: np.ndarray
    vector: np.ndarray
    selection_dependent: bool = False

    def total_mass(self) -> float:
        return float(self.scalar.sum() * self.grid.cellvol)

    def vector_mass(self) -> float:
        return float(np.linalg.norm(self.vector, axis=-1).sum() * self.grid.cellvol)

    def lebesgue_norm(self, s: float) -> float:
        return float((np.sum(self.scalar ** s) * self.grid.cellvol) ** (1.0 / s))

    def norms_report(self, exponents=(1.0, 1.02)) -> dict:
        return {f"L^{s:g}": self.lebesgue_norm(s) for s in exponents}


def geodesic_chords(x, y, per_unit: int = 256):
    """Vertices of the selected geodesic, ``ceil(per_unit * d) + 1`` of them.

    Returns ``(vertices, speed, selection_dependent)``.
    """
    g = select_geodesic(x, y)
    k = max(int(np.ceil(per_unit * g.speed)), 1)
    return geodesic_point(g, np.linspace(0.0, 1.0, k + 1)), g.speed, g.selection_dependent


def transport_density(plan: TransportPlan, grid: Grid, quadrature_k: int = 256,
                      scheme: str = "nearest") -> TransportDensityField:
    """Deposit every mass-carrying geodesic of ``plan`` into the grid.

    Each of the ``k`` sub-arcs of a geodesic contributes ``mass * |chi| / k``
    to the scalar density and ``mass`` times its horizontal chord to the
    vector density, both at the sub-arc midpoint.  Chords telescope, so
    ``sum w`` is exact for affine test functions.
    """
    pts, sc, vec = [], [], []
    flagged = False
    for x, y, m in plan.carrying():
        if np.array_equal(x, y):
            continue
        v, speed, dep = geodesic_chords(x, y, quadrature_k)
        flagged |= dep
        if not np.all(grid.contains(v, slack=1e-12)):
            raise InputError("a selected geodesic leaves the grid; enlarge the box")
        k = len(v) - 1
        pts.append(0.5 * (v[1:] + v[:-1]))
        sc.append(np.full(k, m * speed / k))
        vec.append(m * np.diff(v[:, :2], axis=0))
    if not pts:
        return TransportDensityField(grid, np.zeros(grid.shape), np.zeros(grid.shape + (2,)))
    vals = np.concatenate([np.concatenate(sc)[:, None], np.concatenate(vec)], axis=1)
    dep = grid.deposit(np.concatenate(pts), vals, scheme) / grid.cellvol
    return TransportDensityField(grid, dep[..., 0], dep[..., 1:], flagged)


@dataclass
class TestFunction:
    """Smooth scalar test function with its ambient gradient."""

    __test__ = False
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]


def default_test_functions() -> list[TestFunction]:
    def g(*cols):
        return lambda p: np.stack([c(p) for c in cols], axis=-1)

    zero = lambda p: np.zeros(p.shape[:-1])  # noqa: E731
    return [
        TestFunction("x1", lambda p: p[..., 0], g(lambda p: np.ones(p.shape[:-1]), zero, zero)),
        TestFunction("x1*x2", lambda p: p[..., 0] * p[..., 1], g(lambda p: p[..., 1], lambda p: p[..., 0], zero)),
        TestFunction("x3+x1^2", lambda p: p[..., 2] + p[..., 0] ** 2,
                     g(lambda p: 2 * p[..., 0], zero, lambda p: np.ones(p.shape[:-1]))),
        TestFunction("sin(2x1)cos(x2)", lambda p: np.sin(2 * p[..., 0]) * np.cos(p[..., 1]),
                     g(lambda p: 2 * np.cos(2 * p[..., 0]) * np.cos(p[..., 1]),
                       lambda p: -np.sin(2 * p[..., 0]) * np.sin(p[..., 1]), zero)),
        TestFunction("cos(x1+3x3)", lambda p: np.cos(p[..., 0] + 3 * p[..., 2]),
                     g(lambda p: -np.sin(p[..., 0] + 3 * p[..., 2]), zero,
                       lambda p: -3 * np.sin(p[..., 0] + 3 * p[..., 2]))),
    ]


def _divergence_residuals(grid, w, mu, nu, test_functions):
    out = {}
    for tf in test_functions:
        gh = frame_gradient(grid, tf.gradient)
        lhs = float(np.sum(gh * w) * grid.cellvol)
        rhs = float(np.dot(tf.value(mu.points), mu.weights) - np.dot(tf.value(nu.points), nu.weights))
        out[tf.name] = abs(lhs + rhs)
    return out


def check_divergence_identity(fld: TransportDensityField, mu: DiscreteMeasure, nu: DiscreteMeasure,
                              test_functions=None) -> float:
    """``max_phi |int grad_H phi . dw + int phi d(mu - nu)|``."""
    tfs = default_test_functions() if test_functions is None else test_functions
    res = _divergence_residuals(fld.grid, fld.vector, mu, nu, tfs)
    return max(res.values(), default=0.0)


@dataclass
class MKSystemReport:
    divergence_residual: float
    unit_gradient_fraction: float
    max_gradient: float
    tol: float

    @property
    def divergence_ok(self) -> bool:
        return self.divergence_residual <= 1e-2

    @property
    def unit_gradient_ok(self) -> bool:
        return self.unit_gradient_fraction >= 1.0 - self.tol

    @property
    def lipschitz_ok(self) -> bool:
        return self.max_gradient <= 1.0 + self.tol

    @property
    def passed(self) -> bool:
        return self.divergence_ok and self.unit_gradient_ok and self.lipschitz_ok


def mk_system_check(u_grid: GridField, fld: TransportDensityField, mu: DiscreteMeasure, nu: DiscreteMeasure,
                    test_functions=None, tol: float = 0.05) -> MKSystemReport:
    """Check ``w = -grad_H u * a`` against the divergence identity and ``|grad_H u| = 1`` on ``{a > 0}``.

    The unit-gradient fraction is taken over cells carrying density, with
    the gradient read at the deposited mass (cells are weighted by ``a``).
    """
    grid = u_grid.grid
    grad = gradient_array(grid, u_grid.values)
    w = -grad * fld.scalar[..., None]
    tfs = default_test_functions() if test_functions is None else test_functions
    res = _divergence_residuals(grid, w, mu, nu, tfs)
    norm = np.linalg.norm(grad, axis=-1)
    carry = fld.scalar > 0
    if carry.any():
        good = np.abs(norm[carry] - 1.0) <= tol
        frac = float(np.sum(fld.scalar[carry] * good) / np.sum(fld.scalar[carry]))
    else:
        frac = 1.0
    return MKSystemReport(max(res.values(), default=0.0), frac, float(norm.max()), tol)


def lagrangian_value(plan: TransportPlan, k: int = 64) -> float:
    """``sum mass * length(selected geodesic)`` measured on ``k``-vertex polylines."""
    total = 0.0
    for x, y, m in plan.carrying(0.0):
        if np.array_equal(x, y):
            continue
        total += m * polyline_length_sr(sample_geodesic(select_geodesic(x, y), k))
    return total
