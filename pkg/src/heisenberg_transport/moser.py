"""Traffic plans from horizontal vector fields by the Dacorogna-Moser flow.

Given ``w`` with ``div_H w = mu_eps - nu_eps`` on a box, the densities
``mubar(t) = (1 - t) mu_eps + t nu_eps`` solve the continuity equation
for the velocity ``w / mubar(t)``.  Pushing ``mu_eps`` along that flow
gives a plan whose traffic intensity is ``|w|_H``.

Here ``mu_eps = rho_eps * mu + eps`` on the grid, so the plan carries
mass ``1 + eps |box|``; it is stored with weights summing to one and the
mass kept separately.

Two integrators are provided.  ``MoserVelocity`` runs classical RK4 on
the trilinear interpolant of the nodal field.  ``build_traffic_plan``
instead traces the face-flux form of the field through node-centred
cells, which conserves mass exactly for the discrete divergence (see
``face_fluxes``) and is exact in time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import _backend
from .errors import InputError, NumericalError
from .geodesy import Polyline
from .grid import Grid, GridField, HorizontalGridField
from .group import GroupPoint, MollifierSpec, vertical_defect
from .kantorovich import DiscreteMeasure
from .mollify import mollify_field, mollify_scalar

MAX_CELL_EVENTS = 200_000


class FlowExitError(NumericalError):
    pass


@dataclass
class TrafficPlan:
    """Weighted polylines stored flat.

    Curve ``p`` is ``vertices[offsets[p]:offsets[p + 1]]``; ``weights``
    sum to one and ``mass`` is the total mass of the unnormalized plan.
    """

    vertices: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    mass: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        o = np.asarray(self.offsets, dtype=np.int64).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if o.size < 1 or o[0] != 0 or o[-1] != v.shape[0] or np.any(np.diff(o) < 2):
            raise InputError("offsets must start at 0, end at the vertex count and give >= 2 vertices per curve")
        if w.shape[0] != o.size - 1:
            raise InputError(f"{w.shape[0]} weights for {o.size - 1} curves")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise InputError("traffic plan entries must be finite")
        if np.any(w <= 0):
            raise InputError("curve weights must be positive")
        if w.size and abs(w.sum() - 1.0) > 1e-9:
            raise InputError(f"curve weights sum to {w.sum():.12g}, not 1")
        if not self.mass > 0:
            raise InputError("plan mass must be positive")
        self.vertices, self.offsets, self.weights, self.mass = v, o, w, float(self.mass)

    @classmethod
    def from_curves(cls, curves, weights, mass: float = 1.0) -> TrafficPlan:
        arrs = [Polyline(c).vertices for c in curves]
        if any(a.shape[1] != 3 for a in arrs):
            raise InputError("traffic plans live in H^1")
        offsets = np.concatenate([[0], np.cumsum([a.shape[0] for a in arrs])]).astype(np.int64)
        verts = np.concatenate(arrs) if arrs else np.zeros((0, 3))
        return cls(verts, offsets, weights, mass)

    @classmethod
    def empty(cls) -> TrafficPlan:
        return cls(np.zeros((0, 3)), np.zeros(1, dtype=np.int64), np.zeros(0))

    @property
    def size(self) -> int:
        return self.offsets.size - 1

    @property
    def curves(self) -> list[Polyline]:
        return [Polyline(self.vertices[a:b]) for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    @property
    def starts(self) -> np.ndarray:
        return self.vertices[self.offsets[:-1]]

    @property
    def ends(self) -> np.ndarray:
        return self.vertices[self.offsets[1:] - 1]

    def segments(self):
        """``(chords, midpoints, curve_index)`` over all consecutive vertex pairs."""
        keep = np.ones(max(self.vertices.shape[0] - 1, 0), dtype=bool)
        keep[self.offsets[1:-1] - 1] = False
        d = np.diff(self.vertices, axis=0)[keep]
        mid = 0.5 * (self.vertices[1:] + self.vertices[:-1])[keep]
        cid = np.repeat(np.arange(self.size), np.diff(self.offsets) - 1)
        return d, mid, cid

    def chord_defect(self) -> float:
        """Largest vertical part of a chord seen from its start vertex."""
        if self.size == 0:
            return 0.0
        keep = np.ones(self.vertices.shape[0] - 1, dtype=bool)
        keep[self.offsets[1:-1] - 1] = False
        d = np.diff(self.vertices, axis=0)[keep]
        return float(np.abs(vertical_defect(d, self.vertices[:-1][keep])).max())


@dataclass
class IntensityEstimate:
    """Scalar intensity ``i_Q`` and vector intensity ``w_Q`` as nodal densities."""

    grid: Grid
    scalar: np.ndarray
    vector: np.ndarray

    def __post_init__(self):
        self.scalar = np.asarray(self.scalar, dtype=float)
        self.vector = np.asarray(self.vector, dtype=float)
        if self.scalar.shape != self.grid.shape or self.vector.shape != self.grid.shape + (2,):
            raise InputError("intensity arrays do not match the grid")

    @classmethod
    def from_field(cls, w: HorizontalGridField) -> IntensityEstimate:
        """The intensity pair ``(|w|_H, w)`` of a vector field."""
        return cls(w.grid, w.norm(), w.components)

    def total(self) -> float:
        return float(self.scalar.sum() * self.grid.cellvol)

    def domination_violation(self) -> float:
        """``max(|w_Q|_H - i_Q)``; nonpositive up to rounding."""
        return float((np.linalg.norm(self.vector, axis=-1) - self.scalar).max())


def interpolate_density(mu_eps: GridField, nu_eps: GridField, t: float) -> GridField:
    """``(1 - t) mu_eps + t nu_eps``."""
    if not 0.0 <= t <= 1.0:
        raise InputError(f"t must lie in [0, 1], got {t}")
    if mu_eps.grid != nu_eps.grid:
        raise InputError("densities live on different grids")
    if np.any(mu_eps.values <= 0) or np.any(nu_eps.values <= 0):
        raise InputError("interpolated densities must be strictly positive")
    return GridField(mu_eps.grid, (1.0 - t) * mu_eps.values + t * nu_eps.values)


def moser_velocity(w_eps: HorizontalGridField, mubar: GridField, eps: float | None = None) -> HorizontalGridField:
    """``w_eps / mubar`` nodewise.

    Raises if ``mubar`` is nonpositive or, when ``eps`` is given, dips
    below ``eps / 2``.
    """
    floor = 0.0 if eps is None else 0.5 * eps
    low = float(mubar.values.min())
    if not low > floor:
        raise NumericalError(f"density {low:.3g} below the division guard {floor:.3g}")
    return HorizontalGridField(w_eps.grid, w_eps.components / mubar.values[..., None])


@dataclass
class MoserVelocity:
    """The time-dependent field ``w / ((1 - t) mu + t nu)``, divided on the fly."""

    w: HorizontalGridField
    mu: GridField
    nu: GridField
    eps: float | None = None

    def __post_init__(self):
        if not (self.w.grid == self.mu.grid == self.nu.grid):
            raise InputError("velocity ingredients live on different grids")
        floor = 0.0 if self.eps is None else 0.5 * self.eps
        if min(self.mu.values.min(), self.nu.values.min()) <= floor:
            raise NumericalError("density below the division guard")

    @property
    def grid(self) -> Grid:
        return self.w.grid

    def at(self, t: float) -> HorizontalGridField:
        return moser_velocity(self.w, interpolate_density(self.mu, self.nu, t), self.eps)

    def integrate(self, starts, steps: int) -> np.ndarray:
        """RK4 vertices of shape ``(m, steps + 1, 3)`` on the trilinear field."""
        if steps < 1:
            raise InputError("steps must be positive")
        starts = np.ascontiguousarray(np.asarray(starts, dtype=float).reshape(-1, 3))
        g = self.grid
        outside = ~g.contains(starts)
        if np.any(outside):
            raise InputError(f"start point {int(np.flatnonzero(outside)[0])} lies outside the grid")
        out = _backend.rk4_flow(starts, np.ascontiguousarray(self.w.components),
                                np.ascontiguousarray(self.mu.values), np.ascontiguousarray(self.nu.values),
                                np.array(g.low), g.spacing, int(steps))
        out = np.swapaxes(np.asarray(out), 0, 1)
        # the field vanishes outside the box, yet one RK4 step can still overshoot
        slack = 1e-9 * float(np.max(np.array(g.high) - np.array(g.low)))
        inside = np.all(g.contains(out, slack=slack), axis=1)
        if not np.all(inside):
            raise FlowExitError(f"trajectory {int(np.flatnonzero(~inside)[0])} left the grid")
        return out


def flow_trajectory(start, velocity: MoserVelocity, steps: int) -> Polyline:
    """One RK4 trajectory of ``velocity`` on ``[0, 1]``."""
    x = np.asarray(start.coords if isinstance(start, GroupPoint) else start, dtype=float)
    return Polyline(velocity.integrate(x[None, :], steps)[0])


def face_fluxes(w: HorizontalGridField):
    """Face-flux form of a nodal horizontal field, one array per axis.

    The ambient components ``A = w_1 X_1 + w_2 X_2`` are averaged onto the
    faces between neighbouring nodes; next to the walls the one-sided
    stencil of the gradient dictates ``A_0 + A_1 / 2``, and the walls
    carry nothing.  The cell balance of these fluxes reproduces
    ``horizontal_divergence`` exactly, so the discrete divergence is a
    genuine no-flux finite-volume divergence.  Array ``a`` has
    ``shape[a] + 1`` entries along axis ``a``.
    """
    x = w.grid.coords
    c = w.components
    amb = (c[..., 0], c[..., 1], 0.5 * (x[..., 0] * c[..., 1] - x[..., 1] * c[..., 0]))
    out = []
    for a in range(3):
        v = np.moveaxis(amb[a], a, 0)
        n = v.shape[0]
        F = np.zeros((n + 1,) + v.shape[1:])
        F[2:n - 1] = 0.5 * (v[1:n - 2] + v[2:n - 1])
        F[1] = v[0] + 0.5 * v[1]
        F[n - 1] = v[n - 1] + 0.5 * v[n - 2]
        out.append(np.ascontiguousarray(np.moveaxis(F, 0, a)))
    return tuple(out)


def flux_divergence(fluxes, grid: Grid) -> np.ndarray:
    """Cell balance ``sum_a (F_a^+ - F_a^-) / h_a``."""
    h = grid.spacing
    return sum(np.diff(fluxes[a], axis=a) / h[a] for a in range(3))


def realizable_norm(w: HorizontalGridField, sub: int = 8) -> np.ndarray:
    """Cell averages of ``|A_H|`` for the face-flux reconstruction of ``w``.

    Inside a cell the reconstruction is linear in its own coordinate per
    component, so the average is a ``sub x sub`` midpoint rule over the
    two horizontal coordinates.  This is the intensity a conservative
    flow of ``w`` can carry; it differs from ``|w|_H`` by the part of
    ``w`` that the face averages cannot see.
    """
    F1, F2, _ = face_fluxes(w)
    s = (np.arange(sub) + 0.5) / sub
    a1 = F1[:-1, ..., None] * (1.0 - s) + F1[1:, ..., None] * s
    a2 = F2[:, :-1, :, None] * (1.0 - s) + F2[:, 1:, :, None] * s
    return np.sqrt(a1[..., :, None] ** 2 + a2[..., None, :] ** 2).mean(axis=(-1, -2))


def moser_fields(w: HorizontalGridField, mu: DiscreteMeasure, nu: DiscreteMeasure, eps: float,
                 premollified: bool = True):
    """``(w_eps, mu_eps, nu_eps)`` on the grid of ``w``.

    With ``premollified`` the field already balances ``rho_eps * (mu - nu)``
    and is used as is; otherwise it is mollified at scale ``eps`` too.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    grid = w.grid
    spec = MollifierSpec(eps)
    w_eps = w if premollified else mollify_field(w, spec)
    mu_eps = GridField(grid, mollify_scalar(mu, spec, grid).values + eps)
    nu_eps = GridField(grid, mollify_scalar(nu, spec, grid).values + eps)
    return w_eps, mu_eps, nu_eps


def sample_density(density: GridField, samples: int, seed: int | None = None) -> np.ndarray:
    """Deterministic weighted low-discrepancy points from a nodal density.

    The density is read as constant on node-centred cells.  A Halton
    sequence picks cells through the cumulative cell masses (first
    coordinate) and places the point inside the cell (the other three).
    ``seed`` scrambles the sequence; ``None`` keeps it plain.  Boundary
    cells reach half a spacing beyond the box.
    """
    if samples < 1:
        raise InputError("samples must be positive")
    vals = density.values.reshape(-1)
    if np.any(vals < 0) or not vals.sum() > 0:
        raise InputError("sampling density must be nonnegative with positive mass")
    grid = density.grid
    gen = qmc.Halton(d=4, scramble=seed is not None, seed=seed)
    if seed is None:
        gen.fast_forward(1)
    u = gen.random(samples)
    cdf = np.cumsum(vals)
    cell = np.minimum(np.searchsorted(cdf, u[:, 0] * cdf[-1], side="right"), vals.size - 1)
    return grid.coords.reshape(-1, 3)[cell] + (u[:, 1:] - 0.5) * grid.spacing


def trace_fluxes(fluxes, mu_eps: GridField, nu_eps: GridField, starts, steps: int):
    """Exact conservative trajectories; returns ``(vertices, offsets)``.

    Each curve holds its start, the positions at ``t = k / steps`` and
    every cell-face crossing.
    """
    if steps < 1:
        raise InputError("steps must be positive")
    grid = mu_eps.grid
    starts = np.ascontiguousarray(np.asarray(starts, dtype=float).reshape(-1, 3))
    h = grid.spacing
    lo = np.array(grid.low) - 0.5 * h - 1e-12
    hi = np.array(grid.high) + 0.5 * h + 1e-12
    if np.any((starts < lo) | (starts > hi)):
        raise InputError("start points must lie in the node cells of the grid")
    if min(mu_eps.values.min(), nu_eps.values.min()) <= 0:
        raise NumericalError("densities must be strictly positive along the flow")
    try:
        verts, offsets = _backend.flux_trace(starts, *fluxes, np.ascontiguousarray(mu_eps.values),
                                             np.ascontiguousarray(nu_eps.values), np.array(grid.low), h,
                                             int(steps), MAX_CELL_EVENTS)
    except RuntimeError as exc:
        raise NumericalError(str(exc)) from exc
    return np.asarray(verts), np.asarray(offsets, dtype=np.int64)


def build_traffic_plan(w: HorizontalGridField, mu: DiscreteMeasure, nu: DiscreteMeasure, eps: float,
                       samples: int, steps: int, seed: int | None = None, premollified: bool = True,
                       method: str = "flux") -> TrafficPlan:
    """Sample ``mu_eps`` and carry the samples along the Moser flow of ``w``.

    ``method="flux"`` traces the conservative face-flux field exactly;
    ``method="rk4"`` integrates the trilinear field with fixed steps.
    """
    w_eps, mu_eps, nu_eps = moser_fields(w, mu, nu, eps, premollified)
    starts = sample_density(mu_eps, samples, seed)
    if method == "flux":
        verts, offsets = trace_fluxes(face_fluxes(w_eps), mu_eps, nu_eps, starts, steps)
    elif method == "rk4":
        g = w_eps.grid
        starts = np.clip(starts, g.low, g.high)
        path = MoserVelocity(w_eps, mu_eps, nu_eps, eps).integrate(starts, steps)
        verts = path.reshape(-1, 3)
        offsets = np.arange(samples + 1, dtype=np.int64) * (steps + 1)
    else:
        raise InputError(f"unknown flow method {method!r}")
    return TrafficPlan(verts, offsets, np.full(samples, 1.0 / samples), mass=mu_eps.integral())


def estimate_intensity(q: TrafficPlan, grid: Grid, scheme: str = "nearest",
                       normalized: bool = False) -> IntensityEstimate:
    """Deposit chord lengths ``|dsigma|_H`` and chords at chord midpoints.

    Densities are per unit volume.  Unless ``normalized``, weights are
    scaled by the plan mass.
    """
    if q.size == 0:
        return IntensityEstimate(grid, np.zeros(grid.shape), np.zeros(grid.shape + (2,)))
    d, mid, cid = q.segments()
    scale = (q.weights * (1.0 if normalized else q.mass))[cid]
    hor = d[:, :2] * scale[:, None]
    vals = np.concatenate([np.linalg.norm(hor, axis=-1)[:, None], hor], axis=-1)
    dep = grid.deposit(mid, vals, scheme=scheme) / grid.cellvol
    return IntensityEstimate(grid, dep[..., 0], dep[..., 1:])


def verify_moser_identity(q: TrafficPlan, w_eps: HorizontalGridField, grid: Grid | None = None,
                          scheme: str = "nearest") -> float:
    """``|| i_Q - |w_eps|_H ||_{L^1}`` on the grid."""
    grid = w_eps.grid if grid is None else grid
    if grid != w_eps.grid:
        raise InputError("the field and the comparison grid differ")
    i_q = estimate_intensity(q, grid, scheme=scheme).scalar
    return float(np.abs(i_q - w_eps.norm()).sum() * grid.cellvol)


def congested_cost(intensity: IntensityEstimate, spec) -> float:
    """``sum G(i_Q) cellvol`` for the radial cost of ``spec``."""
    return float(np.sum(spec.g(intensity.scalar)) * intensity.grid.cellvol)


def marginal_w1(cloud, density: GridField, n: int = 400, seed: int | None = None) -> float:
    """Sub-Riemannian W1 between ``n`` evenly spaced cloud points and ``n`` density samples."""
    from .kantorovich import solve_mk

    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    n = min(n, cloud.shape[0])
    pick = cloud[np.linspace(0, cloud.shape[0] - 1, n).astype(int)]
    ref = sample_density(density, n, seed)
    _, cost, _ = solve_mk(DiscreteMeasure.uniform(pick), DiscreteMeasure.uniform(ref))
    return float(cost)
