"""Pure numpy/python versions of the compiled kernels in ``_core``."""

from __future__ import annotations

import heapq

import numpy as np

TWO_PI = 2.0 * np.pi


def _theta_minus_sin(t):
    t = np.asarray(t, dtype=float)
    t2 = t * t
    series = t * t2 * (1.0 / 6.0 - t2 * (1.0 / 120.0 - t2 * (1.0 / 5040.0
             - t2 * (1.0 / 362880.0 - t2 * (1.0 / 39916800.0 - t2 / 6227020800.0)))))
    return np.where(np.abs(t) < 0.5, series, t - np.sin(t))


def _vers(t):
    s = np.sin(0.5 * t)
    return 2.0 * s * s


def _ratio(t):
    return _theta_minus_sin(t) / (4.0 * _vers(t))


def _ratio_prime(t):
    v = _vers(t)
    return (v * v - _theta_minus_sin(t) * np.sin(t)) / (4.0 * v * v)


def solve_theta(r):
    """Vectorized root of ``(t - sin t) / (4 (1 - cos t)) = r`` on (0, 2 pi)."""
    r = np.asarray(r, dtype=float)
    lo = np.full(r.shape, 1e-300)
    hi = np.full(r.shape, TWO_PI - 2e-15)
    t = np.where(r < 1.0 / 12.0, 12.0 * r, np.maximum(TWO_PI - np.sqrt(np.pi / np.maximum(r, 1e-300)), 1.0))
    t = np.where((t <= lo) | (t >= hi), 0.5 * (lo + hi), t)
    fails = np.zeros(r.shape, dtype=int)
    active = np.ones(r.shape, dtype=bool)
    scale = np.maximum(r, 1.0)
    for _ in range(200):
        f = _ratio(t) - r
        active &= np.abs(f) > 1e-14 * scale
        if not active.any():
            break
        hi = np.where(active & (f > 0), t, hi)
        lo = np.where(active & (f <= 0), t, lo)
        fp = _ratio_prime(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = np.where(fp > 0, t - f / fp, -1.0)
        bad = (fails >= 3) | ~((lo < tn) & (tn < hi))
        fails = fails + bad
        tn = np.where(bad, 0.5 * (lo + hi), tn)
        done = np.abs(tn - t) <= 1e-16 * (1.0 + t)
        t = np.where(active, tn, t)
        active &= ~done
    return t


def cc_reduced(rho, height, center_tol=1e-8):
    rho = np.asarray(rho, dtype=float)
    height = np.asarray(height, dtype=float)
    dist = np.empty(rho.shape)
    theta = np.zeros(rho.shape)
    flat = height == 0.0
    center = ~flat & ((rho < center_tol) | (np.abs(height) > 1e28 * rho * rho))
    generic = ~flat & ~center
    dist[flat] = rho[flat]
    dist[center] = np.sqrt(4.0 * np.pi * np.abs(height[center]))
    theta[center] = np.sign(height[center]) * TWO_PI
    if generic.any():
        rg = rho[generic]
        t = solve_theta(np.abs(height[generic]) / (rg * rg))
        theta[generic] = np.sign(height[generic]) * t
        dist[generic] = rg * (0.5 * t) / np.sin(0.5 * t)
    return dist, theta


def lattice_dijkstra(R, K, da, db, cost, radius):
    W, D = 2 * R + 1, 2 * K + 1
    dist = np.full(W * W * D, np.inf)
    src = (R * W + R) * D + K
    dist[src] = 0.0
    heap = [(0.0, src)]
    moves = list(zip(np.asarray(da).tolist(), np.asarray(db).tolist(), np.asarray(cost).tolist()))
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node] or d > radius:
            continue
        k = node % D - K
        j = (node // D) % W - R
        i = node // (D * W) - R
        for a, b, c in moves:
            ni, nj = i + a, j + b
            if ni < -R or ni > R or nj < -R or nj > R:
                continue
            nk = k + i * b - j * a
            if nk < -K or nk > K:
                continue
            nid = ((ni + R) * W + (nj + R)) * D + (nk + K)
            nd = d + c
            if nd < dist[nid]:
                dist[nid] = nd
                heapq.heappush(heap, (nd, nid))
    return dist.reshape((W, W, D))


def trilinear(values, low, step, pts):
    """Trilinear interpolation of ``values[..., comp]`` on a node grid.

    Points are clamped to the grid; ``values`` has shape ``shape + (c,)``.
    """
    shape = np.array(values.shape[:3])
    u = (pts - low) / step
    u = np.clip(u, 0.0, shape - 1.0)
    i0 = np.minimum(np.floor(u).astype(np.int64), shape - 2)
    f = u - i0
    out = 0.0
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                out = out + (wx * wy * wz)[:, None] * values[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out


def rk4_flow(starts, w, mu, nu, low, step, steps):
    """RK4 trajectories of ``dx/dt = sum_j (w_j / mubar(t)) X_j(x)`` for n = 1.

    ``w`` has shape ``shape + (2,)``; ``mu``, ``nu`` have shape ``shape``.
    Returns the vertex array ``(steps + 1, m, 3)``.
    """
    starts = np.asarray(starts, dtype=float)
    low = np.asarray(low, dtype=float)
    step = np.asarray(step, dtype=float)
    packed = np.concatenate([w, mu[..., None], nu[..., None]], axis=-1)
    hi = low + step * (np.array(mu.shape) - 1)

    def velocity(t, x):
        v = trilinear(packed, low, step, x)
        inside = np.all((x >= low) & (x <= hi), axis=1)
        dens = (1.0 - t) * v[:, 2] + t * v[:, 3]
        a = np.where(inside, v[:, 0] / dens, 0.0)
        b = np.where(inside, v[:, 1] / dens, 0.0)
        return np.stack([a, b, 0.5 * (x[:, 0] * b - x[:, 1] * a)], axis=1)

    dt = 1.0 / steps
    out = np.empty((steps + 1,) + starts.shape)
    x = starts.copy()
    out[0] = x
    for s in range(steps):
        t = s * dt
        k1 = velocity(t, x)
        k2 = velocity(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = velocity(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = velocity(t + dt, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[s + 1] = x
    return out


def _phi1(z):
    """``expm1(z) / z`` with the removable singularity filled."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(zs) / zs)


def _log1p_ratio(z):
    """``log1p(z) / z`` with the removable singularity filled."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 - 0.5 * z, np.log1p(zs) / zs)


def flux_trace(starts, F1, F2, F3, mu, nu, low, step, steps, max_events):
    """Exact trajectories of a face-flux field through node-centred cells.

    Cell ``c`` spans ``low + (c -+ 1/2) step``; ``Fa`` holds the fluxes
    through the faces normal to axis ``a`` (``n_a + 1`` of them).  Inside
    a cell each ambient component is linear in its own coordinate and the
    density ``(1 - t) mu_c + t nu_c`` depends on time only, so in the
    clock ``dtau = dt / density`` every coordinate is an exponential in
    ``tau`` and the exit face and time are explicit.

    Returns ``(vertices, offsets)``: for curve ``p`` the rows
    ``offsets[p]:offsets[p + 1]`` hold the start, every sample at
    ``t = k / steps`` and every face crossing, in order.
    """
    starts = np.asarray(starts, dtype=float)
    low = np.asarray(low, dtype=float)
    step = np.asarray(step, dtype=float)
    shape = np.array(mu.shape)
    F = (F1, F2, F3)
    m = starts.shape[0]
    cell = np.clip(np.rint((starts - low) / step).astype(np.int64), 0, shape - 1)
    x = starts.copy()
    t = np.zeros(m)
    nxt = np.ones(m, dtype=np.int64)
    rec_id = [np.arange(m)]
    rec_pt = [starts.copy()]
    active = np.arange(m)
    for _ in range(max_events):
        if active.size == 0:
            break
        c, xa, ta = cell[active], x[active], t[active]
        lo = low + (c - 0.5) * step
        hi = lo + step
        Fm = np.empty_like(xa)
        Fp = np.empty_like(xa)
        for a in range(3):
            ci = [c[:, 0], c[:, 1], c[:, 2]]
            Fm[:, a] = F[a][tuple(ci)]
            ci[a] = ci[a] + 1
            Fp[:, a] = F[a][tuple(ci)]
        g = (Fp - Fm) / step
        A0 = Fm + g * (xa - lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            up = (A0 > 0) & (Fp > 0)
            down = (A0 < 0) & (Fm < 0)
            dist = np.where(up, hi - xa, lo - xa)
            tau_exit = np.where(up | down, dist / A0 * _log1p_ratio(g * dist / A0), np.inf)
        tau_exit = np.where(tau_exit < 0, 0.0, tau_exit)
        mc = mu[c[:, 0], c[:, 1], c[:, 2]]
        dc = nu[c[:, 0], c[:, 1], c[:, 2]] - mc
        mb = mc + ta * dc
        tau_rem = (1.0 - ta) / mb * _log1p_ratio(dc * (1.0 - ta) / mb)
        axis = np.argmin(tau_exit, axis=1)
        tau_x = tau_exit[np.arange(active.size), axis]
        finish = tau_rem <= tau_x
        dtau = np.where(finish, tau_rem, tau_x)
        t_new = np.where(finish, 1.0, ta + mb * dtau * _phi1(dc * dtau))
        t_new = np.minimum(t_new, 1.0)
        # uniform time samples inside this cell
        last = np.minimum(np.floor(t_new * steps + 1e-12).astype(np.int64), steps)
        count = last - nxt[active] + 1
        for j in range(int(count.max(initial=0))):
            sel = np.flatnonzero(count > j)
            tk = (nxt[active[sel]] + j) / steps
            dt_k = np.maximum(tk - ta[sel], 0.0)
            tau_k = dt_k / mb[sel] * _log1p_ratio(dc[sel] * dt_k / mb[sel])
            tau_k = np.minimum(tau_k, dtau[sel])[:, None]
            pk = xa[sel] + A0[sel] * tau_k * _phi1(g[sel] * tau_k)
            rec_id.append(active[sel])
            rec_pt.append(np.clip(pk, lo[sel], hi[sel]))
        nxt[active] += np.maximum(count, 0)
        xn = xa + A0 * dtau[:, None] * _phi1(g * dtau[:, None])
        xn = np.clip(xn, lo, hi)
        cross = np.flatnonzero(~finish)
        if cross.size:
            ax = axis[cross]
            sgn = np.where(A0[cross, ax] > 0, 1, -1)
            xn[cross, ax] = np.where(sgn > 0, hi[cross, ax], lo[cross, ax])
            cn = c.copy()
            cn[cross, ax] += sgn
            cell[active] = cn
            rec_id.append(active[cross])
            rec_pt.append(xn[cross].copy())
        x[active] = xn
        t[active] = t_new
        active = active[(t_new < 1.0) | (nxt[active] <= steps)]
    if active.size:
        raise RuntimeError(f"{active.size} trajectories exceeded {max_events} cell events")
    ids = np.concatenate(rec_id)
    order = np.argsort(ids, kind="stable")
    verts = np.concatenate(rec_pt)[order]
    offsets = np.concatenate([[0], np.cumsum(np.bincount(ids, minlength=m))])
    return verts, offsets


def deposit_linear(shape, low, step, pts, vals):
    """Cloud-in-cell deposition of ``vals[m, c]`` at ``pts[m, 3]``."""
    shape = np.asarray(shape)
    ncomp = vals.shape[1]
    out = np.zeros((int(np.prod(shape)), ncomp))
    u = np.clip((pts - low) / step, 0.0, shape - 1.0)
    i0 = np.minimum(np.floor(u).astype(np.int64), shape - 2)
    f = u - i0
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                flat = ((i0[:, 0] + dx) * shape[1] + (i0[:, 1] + dy)) * shape[2] + (i0[:, 2] + dz)
                wt = wx * wy * wz
                for c in range(ncomp):
                    out[:, c] += np.bincount(flat, weights=wt * vals[:, c], minlength=out.shape[0])
    return out.reshape(tuple(shape) + (ncomp,))
