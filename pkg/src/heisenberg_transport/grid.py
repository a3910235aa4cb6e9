"""Box grids on H^1 and the discrete horizontal calculus.

Fields live on the nodes of a uniform box grid; ``cellvol`` is the volume
of the node-centred cell.  ``horizontal_gradient`` composes ambient
central differences (one-sided on the boundary) with the frame
coefficients, and ``horizontal_divergence`` is *defined* as its negative
adjoint for the ``cellvol``-weighted pairing, so that

    sum <grad_H phi, w> cellvol = - sum phi div_H w cellvol

holds to rounding for every pair of fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from . import _backend, _fallback

MAX_NODES_PER_AXIS = 129


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on the box ``[low, high]`` in R^3 (n = 1)."""

    low: tuple[float, float, float]
    high: tuple[float, float, float]
    shape: tuple[int, int, int]

    def __post_init__(self):
        low = tuple(float(v) for v in self.low)
        high = tuple(float(v) for v in self.high)
        shape = tuple(int(v) for v in self.shape)
        if not (len(low) == len(high) == len(shape) == 3):
            raise ValueError("grids are three dimensional (n = 1)")
        if any(s < 4 for s in shape):
            raise ValueError(f"need at least 4 nodes per axis, got {shape}")
        if any(s > MAX_NODES_PER_AXIS for s in shape):
            raise ValueError(f"resolution {shape} exceeds the memory budget of {MAX_NODES_PER_AXIS} nodes per axis")
        if any(h <= lo for lo, h in zip(low, high)):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_spacing(cls, low, high, h) -> Grid:
        """Grid whose spacing is ``h`` (scalar or per axis); the box is kept."""
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        h = np.broadcast_to(np.asarray(h, dtype=float), (3,))
        shape = np.rint((high - low) / h).astype(int) + 1
        return cls(tuple(low), tuple(low + (shape - 1) * h), tuple(shape))

    @cached_property
    def spacing(self) -> np.ndarray:
        return (np.array(self.high) - np.array(self.low)) / (np.array(self.shape) - 1)

    @property
    def cellvol(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, a: int) -> np.ndarray:
        return np.linspace(self.low[a], self.high[a], self.shape[a])

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (3,)``."""
        return np.stack(np.meshgrid(*(self.axis(a) for a in range(3)), indexing="ij"), axis=-1)

    def contains(self, pts, slack: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        lo = np.array(self.low) - slack
        hi = np.array(self.high) + slack
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def nearest_index(self, pts) -> np.ndarray:
        """Flat index of the node nearest to each point (clamped)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        u = np.rint((pts - np.array(self.low)) / self.spacing).astype(np.int64)
        u = np.clip(u, 0, np.array(self.shape) - 1)
        return np.ravel_multi_index(tuple(u.T), self.shape)

    def interpolate(self, values, pts) -> np.ndarray:
        """Trilinear interpolation of nodal ``values`` (scalar or vector)."""
        values = np.asarray(values, dtype=float)
        vec = values.ndim == 4
        packed = values if vec else values[..., None]
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        out = _fallback.trilinear(packed, np.array(self.low), self.spacing, pts)
        return out if vec else out[:, 0]

    def deposit(self, pts, vals, scheme: str = "nearest") -> np.ndarray:
        """Accumulate point quantities ``vals[m, c]`` into nodes.

        ``nearest`` sends each value to its closest node, ``linear`` spreads
        it with trilinear (cloud-in-cell) weights.  Returns ``shape + (c,)``.
        """
        pts = np.ascontiguousarray(np.asarray(pts, dtype=float).reshape(-1, 3))
        vals = np.ascontiguousarray(np.asarray(vals, dtype=float).reshape(pts.shape[0], -1))
        if scheme == "nearest":
            idx = self.nearest_index(pts)
            out = np.stack([np.bincount(idx, weights=vals[:, c], minlength=self.size)
                            for c in range(vals.shape[1])], axis=-1)
            return out.reshape(self.shape + (vals.shape[1],))
        if scheme == "linear":
            return _backend.deposit_linear(self.shape, np.array(self.low), self.spacing, pts, vals)
        raise ValueError(f"unknown deposition scheme {scheme!r}")


@dataclass
class GridField:
    """Scalar nodal field."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values of shape {self.values.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid field values must be finite")

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cellvol)

    def l1(self) -> float:
        return float(np.abs(self.values).sum() * self.grid.cellvol)


@dataclass
class HorizontalGridField:
    """Horizontal vector field by frame coefficients, shape ``grid.shape + (2,)``."""

    grid: Grid
    components: np.ndarray

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float)
        if self.components.shape != self.grid.shape + (2,):
            raise ValueError(f"components of shape {self.components.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.components)):
            raise ValueError("vector field components must be finite")

    def norm(self) -> np.ndarray:
        return np.linalg.norm(self.components, axis=-1)

    def lp_norm(self, p: float) -> float:
        return float((np.sum(self.norm() ** p) * self.grid.cellvol) ** (1.0 / p))


def _diff(u, axis, h):
    """Central difference along ``axis``, one-sided on the two end nodes."""
    u = np.moveaxis(u, axis, 0)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    out[0] = (u[1] - u[0]) / h
    out[-1] = (u[-1] - u[-2]) / h
    return np.moveaxis(out, 0, axis)


def _diff_adjoint(v, axis, h):
    """Transpose of ``_diff`` for the plain sum pairing."""
    v = np.moveaxis(v, axis, 0)
    out = np.zeros_like(v)
    out[2:] += v[1:-1] / (2.0 * h)
    out[:-2] -= v[1:-1] / (2.0 * h)
    out[1] += v[0] / h
    out[0] -= v[0] / h
    out[-1] += v[-1] / h
    out[-2] -= v[-1] / h
    return np.moveaxis(out, 0, axis)


def ambient_gradient_array(grid: Grid, phi: np.ndarray) -> np.ndarray:
    """Difference-quotient partials ``(d_1, d_2, d_3) phi``, shape ``shape + (3,)``."""
    h = grid.spacing
    return np.stack([_diff(phi, a, h[a]) for a in range(3)], axis=-1)


def gradient_array(grid: Grid, phi: np.ndarray) -> np.ndarray:
    h = grid.spacing
    x = grid.coords
    d3 = _diff(phi, 2, h[2])
    g1 = _diff(phi, 0, h[0]) - 0.5 * x[..., 1] * d3
    g2 = _diff(phi, 1, h[1]) + 0.5 * x[..., 0] * d3
    return np.stack([g1, g2], axis=-1)


def horizontal_gradient_at(phi: GridField, pts) -> np.ndarray:
    """Discrete ``grad_H phi`` at arbitrary points.

    The ambient partials are interpolated and the frame is applied at the
    point itself; interpolating frame coefficients instead would mix the
    large vertical partial with node coordinates.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    g = phi.grid.interpolate(ambient_gradient_array(phi.grid, phi.values), pts)
    return np.stack([g[:, 0] - 0.5 * pts[:, 1] * g[:, 2], g[:, 1] + 0.5 * pts[:, 0] * g[:, 2]], axis=-1)


def divergence_array(grid: Grid, w: np.ndarray) -> np.ndarray:
    h = grid.spacing
    x = grid.coords
    w1, w2 = w[..., 0], w[..., 1]
    adj = (_diff_adjoint(w1, 0, h[0]) + _diff_adjoint(w2, 1, h[1])
           + _diff_adjoint(0.5 * (x[..., 0] * w2 - x[..., 1] * w1), 2, h[2]))
    return -adj


def horizontal_gradient(phi: GridField) -> HorizontalGridField:
    return HorizontalGridField(phi.grid, gradient_array(phi.grid, phi.values))


def horizontal_divergence(w: HorizontalGridField) -> GridField:
    return GridField(w.grid, divergence_array(w.grid, w.components))


def frame_gradient(grid: Grid, fn_grad, pts=None) -> np.ndarray:
    """Exact horizontal gradient from an ambient gradient callable."""
    pts = grid.coords if pts is None else np.asarray(pts, dtype=float)
    g = np.asarray(fn_grad(pts), dtype=float)
    return np.stack([g[..., 0] - 0.5 * pts[..., 1] * g[..., 2],
                     g[..., 1] + 0.5 * pts[..., 0] * g[..., 2]], axis=-1)


def _diff_matrix(m: int, h: float) -> sparse.csr_matrix:
    D = sparse.lil_matrix((m, m))
    D[0, 0], D[0, 1] = -1.0 / h, 1.0 / h
    D[m - 1, m - 2], D[m - 1, m - 1] = -1.0 / h, 1.0 / h
    for i in range(1, m - 1):
        D[i, i - 1], D[i, i + 1] = -0.5 / h, 0.5 / h
    return D.tocsr()


def gradient_matrix(grid: Grid) -> sparse.csr_matrix:
    """Sparse ``(2 size, size)`` matrix of ``gradient_array`` (components stacked)."""
    nx, ny, nz = grid.shape
    h = grid.spacing
    ix, iy, iz = (sparse.identity(k, format="csr") for k in grid.shape)
    D1 = sparse.kron(sparse.kron(_diff_matrix(nx, h[0]), iy), iz)
    D2 = sparse.kron(sparse.kron(ix, _diff_matrix(ny, h[1])), iz)
    D3 = sparse.kron(sparse.kron(ix, iy), _diff_matrix(nz, h[2]))
    x = grid.coords.reshape(-1, 3)
    G1 = D1 - sparse.diags(0.5 * x[:, 1]) @ D3
    G2 = D2 + sparse.diags(0.5 * x[:, 0]) @ D3
    return sparse.vstack([G1, G2]).tocsr()
