"""Group mollification of measures and grid fields onto a box grid.

The value stored at a node is the average of ``rho_eps * lambda`` over the
node's cell.  The kernel is only ``~eps^2`` tall, usually far below the
vertical spacing, so point samples would miss it; the vertical integral
is done in closed form over each cell and the two horizontal directions
by midpoint sub-sampling.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError
from .grid import Grid, GridField, HorizontalGridField
from .group import MollifierSpec


class GridTooSmallError(InputError):
    pass


def _check_support(grid: Grid, pts, spec: MollifierSpec):
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if pts.size == 0:
        return
    rh = spec.horizontal_radius
    lo = np.array(grid.low)
    hi = np.array(grid.high)
    # vertical reach of B(y, eps) = y . B(0, eps) includes the shear term
    reach_v = spec.vertical_radius + 0.5 * rh * np.linalg.norm(pts[:, :2], axis=1)
    need_lo = np.stack([pts[:, 0] - rh, pts[:, 1] - rh, pts[:, 2] - reach_v], axis=1).min(axis=0)
    need_hi = np.stack([pts[:, 0] + rh, pts[:, 1] + rh, pts[:, 2] + reach_v], axis=1).max(axis=0)
    short_lo = np.maximum(lo - need_lo, 0.0)
    short_hi = np.maximum(need_hi - hi, 0.0)
    if np.any(short_lo > 0) or np.any(short_hi > 0):
        raise GridTooSmallError(
            "grid too small for the mollified support: enlarge the box by "
            f"{short_lo.round(6).tolist()} below and {short_hi.round(6).tolist()} above")


def _stamp(grid: Grid, spec: MollifierSpec, y, sub: int):
    """Cell integrals of ``x -> rho_eps(x . y^{-1})`` around one source point.

    Returns ``(flat_indices, integrals)``.
    """
    h = grid.spacing
    low = np.array(grid.low)
    rh = spec.horizontal_radius
    idx = []
    for a in range(2):
        i0 = max(int(math.floor((y[a] - rh - low[a]) / h[a] - 0.5)), 0)
        i1 = min(int(math.ceil((y[a] + rh - low[a]) / h[a] + 0.5)), grid.shape[a] - 1)
        idx.append(np.arange(i0, i1 + 1))
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    sx = (low[0] + idx[0][:, None] * h[0] + offs[None, :] * h[0]).reshape(-1)
    sy = (low[1] + idx[1][:, None] * h[1] + offs[None, :] * h[1]).reshape(-1)
    node_x = np.repeat(idx[0], sub)
    node_y = np.repeat(idx[1], sub)
    SX, SY = np.meshgrid(sx, sy, indexing="ij")
    NX, NY = np.meshgrid(node_x, node_y, indexing="ij")
    r = np.hypot(SX - y[0], SY - y[1])
    keep = r < rh
    if not keep.any():
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    SX, SY, NX, NY, r = SX[keep], SY[keep], NX[keep], NY[keep], r[keep]
    center = y[2] + 0.5 * (SX * y[1] - SY * y[0])
    reach = spec.vertical_radius
    width = int(math.ceil(reach / h[2])) + 1
    kc = np.rint((center - low[2]) / h[2]).astype(np.int64)
    ks = kc[:, None] + np.arange(-width, width + 1)[None, :]
    valid = (ks >= 0) & (ks < grid.shape[2])
    zc = low[2] + ks * h[2]
    vals = spec.vertical_profile_integral(r[:, None], zc - 0.5 * h[2] - center[:, None],
                                          zc + 0.5 * h[2] - center[:, None])
    vals = np.where(valid, vals, 0.0) * (h[0] * h[1] / sub ** 2)
    flat = np.ravel_multi_index((np.broadcast_to(NX[:, None], ks.shape), np.broadcast_to(NY[:, None], ks.shape),
                                 np.clip(ks, 0, grid.shape[2] - 1)), grid.shape)
    return flat.reshape(-1), vals.reshape(-1)


def mollify_points(points, weights, spec: MollifierSpec, grid: Grid, sub: int = 4,
                   renormalize: bool = True, components=None) -> np.ndarray:
    """Nodal values of ``sum_i weights_i rho_eps(x . y_i^{-1})``.

    ``weights`` may be ``(m,)`` or ``(m, c)``.  With ``renormalize`` every
    stamp is rescaled so the deposited mass equals the weight exactly.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    weights = np.asarray(weights, dtype=float)
    vec = weights.ndim == 2
    w2 = weights if vec else weights[:, None]
    _check_support(grid, points, spec)
    out = np.zeros((grid.size, w2.shape[1]))
    for y, wt in zip(points, w2):
        if not np.any(wt):
            continue
        flat, vals = _stamp(grid, spec, y, sub)
        total = vals.sum()
        if total <= 0:
            raise GridTooSmallError("mollifier support falls between nodes; refine the grid")
        if renormalize:
            vals = vals / total
        for c in range(w2.shape[1]):
            out[:, c] += np.bincount(flat, weights=vals * wt[c], minlength=grid.size)
    out = out.reshape(grid.shape + (w2.shape[1],)) / grid.cellvol
    return out if vec else out[..., 0]


def mollify_scalar(m, spec: MollifierSpec, grid: Grid, **kw) -> GridField:
    """Mollify a discrete measure or a nodal field onto ``grid``.

    A ``GridField`` is treated as the point masses ``value * cellvol`` at
    its nodes.
    """
    if isinstance(m, GridField):
        mask = m.values != 0
        pts = m.grid.coords[mask]
        wts = m.values[mask] * m.grid.cellvol
    else:
        pts, wts = m.points, m.weights
    return GridField(grid, mollify_points(pts, wts, spec, grid, **kw))


def mollify_field(w: HorizontalGridField, spec: MollifierSpec, grid: Grid | None = None, **kw) -> HorizontalGridField:
    """Componentwise group mollification of a horizontal field."""
    grid = w.grid if grid is None else grid
    mask = np.any(w.components != 0, axis=-1)
    pts = w.grid.coords[mask]
    wts = w.components[mask] * w.grid.cellvol
    return HorizontalGridField(grid, mollify_points(pts, wts, spec, grid, **kw))
