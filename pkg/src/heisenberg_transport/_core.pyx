# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops.

Every function here has a numpy twin in ``_fallback`` with the same
signature; ``_backend`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs, floor, expm1, log1p, INFINITY, M_PI
from libcpp.vector cimport vector
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI


cdef inline double _theta_minus_sin(double t) noexcept nogil:
    cdef double t2
    if fabs(t) < 0.5:
        t2 = t * t
        return t * t2 * (1.0 / 6.0 - t2 * (1.0 / 120.0 - t2 * (1.0 / 5040.0
               - t2 * (1.0 / 362880.0 - t2 * (1.0 / 39916800.0 - t2 / 6227020800.0)))))
    return t - sin(t)


cdef inline double _vers(double t) noexcept nogil:
    cdef double s = sin(0.5 * t)
    return 2.0 * s * s


cdef inline double _ratio(double t) noexcept nogil:
    # (t - sin t) / (4 (1 - cos t)) on (0, 2 pi)
    return _theta_minus_sin(t) / (4.0 * _vers(t))


cdef inline double _ratio_prime(double t) noexcept nogil:
    cdef double v = _vers(t)
    return (v * v - _theta_minus_sin(t) * sin(t)) / (4.0 * v * v)


cdef double _solve_theta(double r) noexcept nogil:
    """Root of _ratio(theta) = r on (0, 2 pi) for r > 0."""
    cdef double lo = 1e-300, hi = TWO_PI - 2e-15
    cdef double t, f, fp, tn
    cdef int it, fails = 0
    if r < 1.0 / 12.0:
        t = 12.0 * r
    else:
        t = TWO_PI - sqrt(M_PI / r)
        if t < 1.0:
            t = 1.0
    if t <= lo or t >= hi:
        t = 0.5 * (lo + hi)
    for it in range(200):
        f = _ratio(t) - r
        if fabs(f) <= 1e-14 * (1.0 if r < 1.0 else r):
            break
        if f > 0:
            hi = t
        else:
            lo = t
        fp = _ratio_prime(t)
        tn = t - f / fp if fp > 0 else -1.0
        if fails >= 3 or not (lo < tn < hi):
            fails += 1
            tn = 0.5 * (lo + hi)
        if fabs(tn - t) <= 1e-16 * (1.0 + t):
            t = tn
            break
        t = tn
    return t


def cc_reduced(double[::1] rho, double[::1] height, double center_tol=1e-8):
    """Distance and geodesic angle for reduced inputs.

    ``rho`` is the norm of the horizontal part of ``x^{-1} y`` and
    ``height`` its last coordinate.  Returns ``(dist, theta)``.
    """
    cdef Py_ssize_t m = rho.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] theta = np.empty(m)
    cdef double r, h, t, sgn
    with nogil:
        for i in range(m):
            r = rho[i]
            h = height[i]
            sgn = 1.0 if h > 0 else -1.0
            if h == 0.0:
                dist[i] = r
                theta[i] = 0.0
            elif r < center_tol or fabs(h) > 1e28 * r * r:
                dist[i] = sqrt(4.0 * M_PI * fabs(h))
                theta[i] = sgn * TWO_PI
            else:
                t = _solve_theta(fabs(h) / (r * r))
                theta[i] = sgn * t
                dist[i] = r * (0.5 * t) / sin(0.5 * t)
    return dist, theta


ctypedef pair[double, long] entry


def lattice_dijkstra(int R, int K, long[::1] da, long[::1] db, double[::1] cost,
                     double radius):
    """Single-source shortest paths from the identity of the integer lattice.

    Node ``(i, j, k)`` stands for the point ``(i, j, k / 2)``; the move
    ``(a, b)`` sends it to ``(i + a, j + b, k + i b - j a)``, a straight
    horizontal segment of Euclidean length ``cost``.  Nodes with
    ``|i|, |j| <= R`` and ``|k| <= K`` are kept; settling stops past
    ``radius``.  Unreached nodes hold ``inf``.
    """
    cdef long W = 2 * R + 1, D = 2 * K + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] distarr = np.full(W * W * D, np.inf)
    cdef double[::1] dist = distarr
    cdef priority_queue[entry] heap
    cdef entry top
    cdef long node, i, j, k, ni, nj, nk, nid, m, nm = da.shape[0]
    cdef double d, nd
    cdef long src = (R * W + R) * D + K
    with nogil:
        dist[src] = 0.0
        heap.push(entry(-0.0, src))
        while not heap.empty():
            top = heap.top()
            heap.pop()
            d = -top.first
            node = top.second
            if d > dist[node] or d > radius:
                continue
            k = node % D - K
            j = (node // D) % W - R
            i = node // (D * W) - R
            for m in range(nm):
                ni = i + da[m]
                nj = j + db[m]
                if ni < -R or ni > R or nj < -R or nj > R:
                    continue
                nk = k + i * db[m] - j * da[m]
                if nk < -K or nk > K:
                    continue
                nid = ((ni + R) * W + (nj + R)) * D + (nk + K)
                nd = d + cost[m]
                if nd < dist[nid]:
                    dist[nid] = nd
                    heap.push(entry(-nd, nid))
    return distarr.reshape((W, W, D))


cdef inline void _interp(double[:, :, :, ::1] packed, double* low, double* step,
                         long* shape, double* x, double* out) noexcept nogil:
    cdef double u[3]
    cdef double f[3]
    cdef long i0[3]
    cdef int a, c, dx, dy, dz
    cdef double wx, wy, wz, wgt
    for a in range(3):
        u[a] = (x[a] - low[a]) / step[a]
        if u[a] < 0.0:
            u[a] = 0.0
        if u[a] > shape[a] - 1.0:
            u[a] = shape[a] - 1.0
        i0[a] = <long>floor(u[a])
        if i0[a] > shape[a] - 2:
            i0[a] = shape[a] - 2
        f[a] = u[a] - i0[a]
    for c in range(4):
        out[c] = 0.0
    for dx in range(2):
        wx = f[0] if dx else 1.0 - f[0]
        for dy in range(2):
            wy = f[1] if dy else 1.0 - f[1]
            for dz in range(2):
                wz = f[2] if dz else 1.0 - f[2]
                wgt = wx * wy * wz
                for c in range(4):
                    out[c] += wgt * packed[i0[0] + dx, i0[1] + dy, i0[2] + dz, c]


cdef inline void _velocity(double[:, :, :, ::1] packed, double* low, double* step,
                           long* shape, double* hi, double t, double* x, double* v) noexcept nogil:
    cdef double s[4]
    cdef double a, b, dens
    cdef int k
    for k in range(3):
        if x[k] < low[k] or x[k] > hi[k]:
            v[0] = 0.0
            v[1] = 0.0
            v[2] = 0.0
            return
    _interp(packed, low, step, shape, x, s)
    dens = (1.0 - t) * s[2] + t * s[3]
    a = s[0] / dens
    b = s[1] / dens
    v[0] = a
    v[1] = b
    v[2] = 0.5 * (x[0] * b - x[1] * a)


def rk4_flow(double[:, ::1] starts, w, mu, nu, low, step, int steps):
    """Compiled twin of ``_fallback.rk4_flow``."""
    cdef double[:, :, :, ::1] packed = np.ascontiguousarray(
        np.concatenate([np.asarray(w, dtype=float), np.asarray(mu, dtype=float)[..., None],
                        np.asarray(nu, dtype=float)[..., None]], axis=-1))
    cdef double clow[3]
    cdef double cstep[3]
    cdef double chi[3]
    cdef long cshape[3]
    cdef int a
    for a in range(3):
        clow[a] = low[a]
        cstep[a] = step[a]
        cshape[a] = packed.shape[a]
        chi[a] = clow[a] + cstep[a] * (cshape[a] - 1)
    cdef Py_ssize_t m = starts.shape[0], p
    cdef cnp.ndarray[cnp.float64_t, ndim=3] outarr = np.empty((steps + 1, m, 3))
    cdef double[:, :, ::1] out = outarr
    cdef double x[3]
    cdef double y[3]
    cdef double k1[3]
    cdef double k2[3]
    cdef double k3[3]
    cdef double k4[3]
    cdef double dt = 1.0 / steps, t
    cdef int s
    with nogil:
        for p in range(m):
            for a in range(3):
                x[a] = starts[p, a]
                out[0, p, a] = x[a]
            for s in range(steps):
                t = s * dt
                _velocity(packed, clow, cstep, cshape, chi, t, x, k1)
                for a in range(3):
                    y[a] = x[a] + 0.5 * dt * k1[a]
                _velocity(packed, clow, cstep, cshape, chi, t + 0.5 * dt, y, k2)
                for a in range(3):
                    y[a] = x[a] + 0.5 * dt * k2[a]
                _velocity(packed, clow, cstep, cshape, chi, t + 0.5 * dt, y, k3)
                for a in range(3):
                    y[a] = x[a] + dt * k3[a]
                _velocity(packed, clow, cstep, cshape, chi, t + dt, y, k4)
                for a in range(3):
                    x[a] = x[a] + (dt / 6.0) * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
                    out[s + 1, p, a] = x[a]
    return outarr


def deposit_linear(shape, low, step, double[:, ::1] pts, double[:, ::1] vals):
    """Compiled twin of ``_fallback.deposit_linear``."""
    cdef long s0 = shape[0], s1 = shape[1], s2 = shape[2]
    cdef long cshape[3]
    cdef double clow[3]
    cdef double cstep[3]
    cdef int a
    cshape[0] = s0
    cshape[1] = s1
    cshape[2] = s2
    for a in range(3):
        clow[a] = low[a]
        cstep[a] = step[a]
    cdef Py_ssize_t m = pts.shape[0], p
    cdef int nc = vals.shape[1], c, dx, dy, dz
    cdef cnp.ndarray[cnp.float64_t, ndim=4] outarr = np.zeros((s0, s1, s2, nc))
    cdef double[:, :, :, ::1] out = outarr
    cdef double u[3]
    cdef double f[3]
    cdef long i0[3]
    cdef double wx, wy, wz, wgt
    with nogil:
        for p in range(m):
            for a in range(3):
                u[a] = (pts[p, a] - clow[a]) / cstep[a]
                if u[a] < 0.0:
                    u[a] = 0.0
                if u[a] > cshape[a] - 1.0:
                    u[a] = cshape[a] - 1.0
                i0[a] = <long>floor(u[a])
                if i0[a] > cshape[a] - 2:
                    i0[a] = cshape[a] - 2
                f[a] = u[a] - i0[a]
            for dx in range(2):
                wx = f[0] if dx else 1.0 - f[0]
                for dy in range(2):
                    wy = f[1] if dy else 1.0 - f[1]
                    for dz in range(2):
                        wz = f[2] if dz else 1.0 - f[2]
                        wgt = wx * wy * wz
                        for c in range(nc):
                            out[i0[0] + dx, i0[1] + dy, i0[2] + dz, c] += wgt * vals[p, c]
    return outarr


cdef inline double _phi1(double z) noexcept nogil:
    if fabs(z) < 1e-8:
        return 1.0 + 0.5 * z
    return expm1(z) / z


cdef inline double _log1p_ratio(double z) noexcept nogil:
    if fabs(z) < 1e-8:
        return 1.0 - 0.5 * z
    return log1p(z) / z


def flux_trace(double[:, ::1] starts, double[:, :, ::1] F1, double[:, :, ::1] F2, double[:, :, ::1] F3,
               double[:, :, ::1] mu, double[:, :, ::1] nu, low, step, int steps, long max_events):
    """Compiled twin of ``_fallback.flux_trace``."""
    cdef double clow[3]
    cdef double cstep[3]
    cdef long cshape[3]
    cdef int a
    for a in range(3):
        clow[a] = low[a]
        cstep[a] = step[a]
    cshape[0] = mu.shape[0]
    cshape[1] = mu.shape[1]
    cshape[2] = mu.shape[2]
    cdef Py_ssize_t m = starts.shape[0], p
    cdef vector[double] verts
    cdef vector[long] counts
    counts.resize(m)
    cdef long c[3]
    cdef double x[3]
    cdef double lo[3]
    cdef double hi[3]
    cdef double Fm[3]
    cdef double Fp[3]
    cdef double g[3]
    cdef double A0[3]
    cdef double texit[3]
    cdef double t, t_new, mb, mc, dc, tau_rem, tau_x, dtau, dist, tk, dtk, tauk, v
    cdef long nxt, ev, last, k, cnt, failed = 0
    cdef int axis, finish, sgn
    with nogil:
        for p in range(m):
            cnt = 1
            for a in range(3):
                x[a] = starts[p, a]
                c[a] = <long>floor((x[a] - clow[a]) / cstep[a] + 0.5)
                if c[a] < 0:
                    c[a] = 0
                if c[a] > cshape[a] - 1:
                    c[a] = cshape[a] - 1
                verts.push_back(x[a])
            t = 0.0
            nxt = 1
            ev = 0
            while t < 1.0 or nxt <= steps:
                if ev >= max_events:
                    failed += 1
                    break
                ev += 1
                for a in range(3):
                    lo[a] = clow[a] + (c[a] - 0.5) * cstep[a]
                    hi[a] = lo[a] + cstep[a]
                Fm[0] = F1[c[0], c[1], c[2]]
                Fp[0] = F1[c[0] + 1, c[1], c[2]]
                Fm[1] = F2[c[0], c[1], c[2]]
                Fp[1] = F2[c[0], c[1] + 1, c[2]]
                Fm[2] = F3[c[0], c[1], c[2]]
                Fp[2] = F3[c[0], c[1], c[2] + 1]
                axis = 0
                tau_x = INFINITY
                for a in range(3):
                    g[a] = (Fp[a] - Fm[a]) / cstep[a]
                    A0[a] = Fm[a] + g[a] * (x[a] - lo[a])
                    texit[a] = INFINITY
                    if A0[a] > 0 and Fp[a] > 0:
                        dist = hi[a] - x[a]
                        texit[a] = dist / A0[a] * _log1p_ratio(g[a] * dist / A0[a])
                    elif A0[a] < 0 and Fm[a] < 0:
                        dist = lo[a] - x[a]
                        texit[a] = dist / A0[a] * _log1p_ratio(g[a] * dist / A0[a])
                    if texit[a] < 0:
                        texit[a] = 0.0
                    if texit[a] < tau_x:
                        tau_x = texit[a]
                        axis = a
                mc = mu[c[0], c[1], c[2]]
                dc = nu[c[0], c[1], c[2]] - mc
                mb = mc + t * dc
                tau_rem = (1.0 - t) / mb * _log1p_ratio(dc * (1.0 - t) / mb)
                finish = tau_rem <= tau_x
                if finish:
                    dtau = tau_rem
                    t_new = 1.0
                else:
                    dtau = tau_x
                    t_new = t + mb * dtau * _phi1(dc * dtau)
                    if t_new > 1.0:
                        t_new = 1.0
                last = <long>floor(t_new * steps + 1e-12)
                if last > steps:
                    last = steps
                k = nxt
                while k <= last:
                    tk = (<double>k) / steps
                    dtk = tk - t
                    if dtk < 0:
                        dtk = 0.0
                    tauk = dtk / mb * _log1p_ratio(dc * dtk / mb)
                    if tauk > dtau:
                        tauk = dtau
                    for a in range(3):
                        v = x[a] + A0[a] * tauk * _phi1(g[a] * tauk)
                        if v < lo[a]:
                            v = lo[a]
                        if v > hi[a]:
                            v = hi[a]
                        verts.push_back(v)
                    cnt += 1
                    k += 1
                if last + 1 > nxt:
                    nxt = last + 1
                for a in range(3):
                    v = x[a] + A0[a] * dtau * _phi1(g[a] * dtau)
                    if v < lo[a]:
                        v = lo[a]
                    if v > hi[a]:
                        v = hi[a]
                    x[a] = v
                if not finish:
                    sgn = 1 if A0[axis] > 0 else -1
                    x[axis] = hi[axis] if sgn > 0 else lo[axis]
                    c[axis] += sgn
                    for a in range(3):
                        verts.push_back(x[a])
                    cnt += 1
                t = t_new
            counts[p] = cnt
    if failed:
        raise RuntimeError(f"{failed} trajectories exceeded {max_events} cell events")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((verts.size() // 3, 3))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i
    for i in range(<Py_ssize_t>(verts.size() // 3)):
        ov[i, 0] = verts[3 * i]
        ov[i, 1] = verts[3 * i + 1]
        ov[i, 2] = verts[3 * i + 2]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] offsets = np.zeros(m + 1, dtype=np.int64)
    for p in range(m):
        offsets[p + 1] = offsets[p] + counts[p]
    return out, offsets
