"""Grid Beckmann problem, its dual, and the p = 1 cross-check.

For a cost ``G(x, w) = g(|w|_H)`` the discrete dual is

    maximize  J(phi) = - sum f phi cellvol - sum G*(grad_H phi) cellvol

over zero-mean nodal ``phi``; the primal field is recovered as
``w0 = DG*(grad_H phi0)`` and ``div_H w0 = f`` is the optimality
condition.  ``G*`` is radial, so everything is written through the
scalar profile ``g*(r)`` and its first two derivatives.

The default ascent is a smoothed Newton-CG continuation: ``|z|`` is
replaced by ``sqrt(|z|^2 + delta^2)`` and ``delta`` is driven to zero,
with Armijo backtracking on every step.  This copes with ``G*`` being
only ``C^{1, q-1}`` at the origin when ``q < 2`` (and with the degenerate
curvature there when ``q > 2``), where plain quasi-Newton ascent stalls.
``method="lbfgs"`` runs scipy's limited-memory quasi-Newton iteration
instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.sparse import linalg as sla

from .errors import InfeasibleError, InputError, NumericalError
from .grid import Grid, GridField, HorizontalGridField, gradient_array, gradient_matrix
from .group import MollifierSpec
from .kantorovich import DiscreteMeasure, dual_value, recover_potential, solve_mk, transport_density
from .mollify import mollify_points


@dataclass(frozen=True)
class CostSpec:
    """Radial cost ``g(s) = linear * s + scale * s^p / p`` (``s = |w|_H``).

    ``profile`` replaces the closed form by an arbitrary convex,
    nondecreasing ``g`` with ``g(0) = 0``; its conjugate is then computed
    numerically and only ``legendre_transform`` and ``cost_value`` accept it.
    """

    p: float
    linear: float = 0.0
    scale: float = 1.0
    profile: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.p > 1:
            raise InputError(f"p must exceed 1, got {self.p}")
        if not self.scale > 0:
            raise InputError("scale must be positive")
        if self.linear < 0:
            raise InputError("the linear coefficient must be nonnegative (g nondecreasing)")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def form(self) -> str:
        if self.profile is not None:
            return "general"
        return "power" if self.linear == 0 else "power_plus_linear"

    def g(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.profile is not None:
            return np.vectorize(self.profile, otypes=[float])(s)
        return self.linear * s + self.scale * s ** self.p / self.p

    def growth_bounds(self) -> dict:
        """Constants with ``a/p s^p - h0 <= g(s) <= b/p s^p + h1``."""
        if self.profile is not None:
            raise InputError("growth bounds are only tabulated for the closed forms")
        h1 = self.linear ** self.q / self.q if self.linear else 0.0
        return {"a": self.scale, "b": self.scale + (1.0 if self.linear else 0.0), "h0": 0.0, "h1": h1}

    def star_radial(self, r, delta: float = 0.0):
        """``g*`` and its first two derivatives at ``r_delta = sqrt(r^2 + delta^2)``.

        Returns ``(value, d1, d2, r_delta)``; ``value`` is shifted so that
        the smoothed conjugate vanishes at ``r = 0``.
        """
        if self.profile is not None:
            raise InputError("the dual solver needs a closed-form cost")
        q, c, a = self.q, self.scale, self.linear
        r = np.asarray(r, dtype=float)
        rd = np.sqrt(r * r + delta * delta) if delta else r
        k = c ** (1.0 - q)
        if a == 0.0:
            m, m1, m2 = rd, np.ones_like(rd), np.zeros_like(rd)
            m0 = delta
        else:
            u = rd - a
            if delta:
                root = np.sqrt(u * u + delta * delta)
                m = 0.5 * (u + root)
                m1 = 0.5 * (1.0 + u / root)
                m2 = 0.5 * delta * delta / root ** 3
                u0 = delta - a
                m0 = 0.5 * (u0 + np.sqrt(u0 * u0 + delta * delta))
            else:
                m = np.maximum(u, 0.0)
                m1 = (u > 0).astype(float)
                m2 = np.zeros_like(u)
                m0 = 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            val = k * (m ** q - m0 ** q) / q
            d1 = k * m ** (q - 1.0) * m1
            d2 = k * ((q - 1.0) * np.where(m > 0, m ** (q - 2.0), 1.0 if q == 2 else (0.0 if q > 2 else np.inf)) * m1 * m1
                      + m ** (q - 1.0) * m2)
        return val, d1, np.nan_to_num(d2, posinf=0.0), rd


@lru_cache(maxsize=4096)
def _numeric_conjugate(profile: Callable, r: float, points: int = 64, rounds: int = 60):
    """``sup_s (r s - g(s))`` by repeated 64-point zooming on a bracket."""
    hi = 1.0
    while r * hi - profile(hi) > r * (hi / 2) - profile(hi / 2) and hi < 1e12:
        hi *= 2.0
    lo = 0.0
    best_s = 0.0
    for _ in range(rounds):
        s = np.linspace(lo, hi, points)
        vals = r * s - np.array([profile(v) for v in s])
        i = int(np.argmax(vals))
        best_s = s[i]
        step = (hi - lo) / (points - 1)
        lo, hi = max(best_s - step, 0.0), best_s + step
    return r * best_s - profile(best_s), best_s


def legendre_transform(spec: CostSpec, z):
    """``G*(z)`` and ``DG*(z)`` for horizontal covectors ``z[..., 2n]``."""
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z, axis=-1)
    if spec.profile is not None:
        flat = r.reshape(-1)
        out = np.array([_numeric_conjugate(spec.profile, float(v)) for v in flat])
        val, d1 = out[:, 0].reshape(r.shape), out[:, 1].reshape(r.shape)
    else:
        val, d1, _, _ = spec.star_radial(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(r[..., None] > 0, z / r[..., None], 0.0)
    grad = d1[..., None] * unit
    if np.ndim(val) == 0:
        return float(val), grad
    return val, grad


def cost_value(w: HorizontalGridField, spec: CostSpec) -> float:
    """``sum G(x, w) cellvol``."""
    return float(np.sum(spec.g(w.norm())) * w.grid.cellvol)


def _check_zero_mean(f: GridField, tol: float = 1e-9):
    mass = abs(f.values.sum()) * f.grid.cellvol
    scale = max(np.abs(f.values).sum() * f.grid.cellvol, 1.0)
    if mass > tol * scale:
        raise InfeasibleError(f"f must have zero mean (integral {f.values.sum() * f.grid.cellvol:.3g})")


def dual_objective(phi: np.ndarray, f: np.ndarray, spec: CostSpec, grid: Grid, delta: float = 0.0):
    """``J(phi)`` and its gradient (with respect to nodal values)."""
    G = _operator(grid)
    z = (G @ phi.ravel()).reshape(2, -1)
    r = np.sqrt(z[0] ** 2 + z[1] ** 2)
    val, d1, _, rd = spec.star_radial(r, delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(rd > 0, d1 / rd, 0.0)
    w = fac * z
    cv = grid.cellvol
    J = -(f.ravel() @ phi.ravel() + val.sum()) * cv
    grad = -(f.ravel() + G.T @ w.ravel()) * cv
    return J, grad.reshape(grid.shape)


_OPS: dict = {}


def _operator(grid: Grid):
    if grid not in _OPS:
        if len(_OPS) > 8:
            _OPS.clear()
        G = gradient_matrix(grid)
        _OPS[grid] = (G, G.T.tocsr(), G.multiply(G).T.tocsr())
    return _OPS[grid][0]


@dataclass
class DualResult:
    """Outcome of ``solve_dual``; ``log`` rows are ``(iteration, J, |grad J|_inf, delta)``."""

    phi: GridField
    value: float
    iterations: int
    converged: bool
    log: list = field(default_factory=list)
    method: str = "newton"


def _newton_continuation(f, spec, grid, tol, gtol, max_iter, delta0, log):
    _operator(grid)
    G, GT, G2 = _OPS[grid]
    N = grid.size
    cv = grid.cellvol
    fv = f.ravel()
    x = np.zeros(N)
    q = spec.q
    smooth = not (q == 2.0 and spec.linear == 0.0)
    delta = delta0 if smooth else 0.0
    it = 0
    prev_level = None

    def model(x, d):
        z = (G @ x).reshape(2, -1)
        r = np.sqrt(z[0] ** 2 + z[1] ** 2)
        val, d1, d2, rd = spec.star_radial(r, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            tang = np.where(rd > 0, d1 / np.where(rd > 0, rd, 1.0), d2)
        F = (fv @ x + val.sum()) * cv
        g = (fv + GT @ (tang * z).ravel()) * cv
        return F, g - g.mean(), z, rd, tang, d2

    while True:
        for _ in range(60):
            F, g, z, rd, tang, d2 = model(x, delta)
            J_exact, gexact = dual_objective(x, fv, spec, grid)
            log.append((it, J_exact, float(np.abs(gexact).max()), delta))
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite dual gradient")
            if not np.any(g):
                break
            with np.errstate(divide="ignore", invalid="ignore"):
                zh = np.where(rd > 0, z / rd, 0.0)
            radial = d2 - tang

            def hv(v, zh=zh, radial=radial, tang=tang):
                u = (G @ v).reshape(2, -1)
                dot = zh[0] * u[0] + zh[1] * u[1]
                out = tang * u + radial * dot * zh
                y = (GT @ out.ravel()) * cv
                return y - y.mean()

            diag = (G2 @ np.concatenate([np.maximum(np.minimum(tang, d2), 0.0)] * 2)) * cv
            diag = np.maximum(diag, 1e-300 + 1e-12 * diag.max())
            H = sla.LinearOperator((N, N), matvec=hv)
            M = sla.LinearOperator((N, N), matvec=lambda v, diag=diag: v / diag)
            dx, _ = sla.cg(H, -g, rtol=1e-10 if not smooth else 1e-8, maxiter=4000, M=M)
            if not np.all(np.isfinite(dx)):
                raise NumericalError("Newton step is not finite")
            dx -= dx.mean()
            dec = float(-g @ dx)
            it += 1
            if not dec > 0:
                break
            step = 1.0
            while step > 1e-12:
                if model(x + step * dx, delta)[0] <= F - 1e-4 * step * dec:
                    break
                step *= 0.5
            x = x + step * dx
            if it >= max_iter:
                return x, it, False
            if dec < 1e-15 * max(1.0, abs(F)) or float(np.abs(g).max()) < gtol * 1e-3:
                break
        level = dual_objective(x, fv, spec, grid)[0]
        zmax = float(np.max(rd)) if rd.size else 0.0
        done = delta <= 1e-13 * max(zmax, 1e-300) or not smooth
        if done and prev_level is not None and abs(level - prev_level) <= tol * max(1.0, abs(level)):
            return x, it, True
        if done and not smooth:
            return x, it, True
        prev_level = level
        if delta > 1e-13 * max(zmax, 1e-300):
            delta *= 0.1


def _lbfgs(f, spec, grid, tol, gtol, max_iter, log):
    fv = f.ravel()

    def fun(x):
        x = x - x.mean()
        J, g = dual_objective(x, fv, spec, grid)
        g = g.ravel()
        return -J, -(g - g.mean())

    state = {"it": 0}

    def cb(xk):
        state["it"] += 1
        J, g = dual_objective(xk - xk.mean(), fv, spec, grid)
        log.append((state["it"], J, float(np.abs(g).max()), 0.0))

    res = optimize.minimize(fun, np.zeros(grid.size), jac=True, method="L-BFGS-B", callback=cb,
                            options={"maxiter": max_iter, "maxcor": 30, "ftol": tol * 1e-3, "gtol": gtol})
    x = res.x - res.x.mean()
    g = dual_objective(x, fv, spec, grid)[1]
    ok = res.success or float(np.abs(g).max()) < gtol
    return x, res.nit, ok


def solve_dual(f: GridField, spec: CostSpec, tol: float = 1e-9, gtol: float = 1e-8, max_iter: int = 2000,
               method: str = "newton", delta0: float = 1.0, strict: bool = True) -> DualResult:
    """Maximize the discrete dual over zero-mean ``phi``.

    Raises ``NumericalError`` when the iteration budget runs out and
    ``strict`` is set; otherwise the result carries ``converged=False``.
    """
    _check_zero_mean(f)
    grid = f.grid
    fz = f.values - f.values.mean()
    log: list = []
    if not np.any(fz):
        return DualResult(GridField(grid, np.zeros(grid.shape)), 0.0, 0, True, [(0, 0.0, 0.0, 0.0)], method)
    if method == "newton":
        x, it, ok = _newton_continuation(fz, spec, grid, tol, gtol, max_iter, delta0, log)
    elif method == "lbfgs":
        x, it, ok = _lbfgs(fz, spec, grid, tol, gtol, max_iter, log)
    else:
        raise InputError(f"unknown method {method!r}")
    if not ok and strict:
        last = log[-1] if log else None
        raise NumericalError(f"dual ascent did not converge in {it} iterations (last log row {last})")
    phi = x.reshape(grid.shape)
    return DualResult(GridField(grid, phi), dual_objective(x, fz, spec, grid)[0], it, ok, log, method)


def recover_primal(phi0: GridField, spec: CostSpec) -> HorizontalGridField:
    """``w0 = DG*(grad_H phi0)`` nodewise."""
    grad = gradient_array(phi0.grid, phi0.values)
    _, w = legendre_transform(spec, grad)
    return HorizontalGridField(phi0.grid, w)


@dataclass
class DualityReport:
    primal: float
    dual: float
    gap: float
    fenchel_young: float
    divergence_residual_l2: float


def duality_report(f: GridField, phi0: GridField, spec: CostSpec, w0: HorizontalGridField | None = None) -> DualityReport:
    """Primal value at ``w0``, dual value at ``phi0`` and the optimality residuals."""
    from .grid import horizontal_divergence

    grid = f.grid
    w0 = recover_primal(phi0, spec) if w0 is None else w0
    grad = gradient_array(grid, phi0.values)
    gs, _ = legendre_transform(spec, grad)
    gw = spec.g(w0.norm())
    fy = gw + gs - np.sum(grad * w0.components, axis=-1)
    primal = float(gw.sum() * grid.cellvol)
    dual = float(-(np.sum(f.values * phi0.values) + gs.sum()) * grid.cellvol)
    res = f.values - horizontal_divergence(w0).values
    return DualityReport(primal, dual, primal - dual, float(np.abs(fy).max()),
                         float(np.sqrt(np.sum(res ** 2) * grid.cellvol)))


def linear_oracle(f: GridField) -> GridField:
    """Direct sparse solve of ``G^T G phi = -f`` (the ``q = 2`` optimality system), zero mean."""
    _check_zero_mean(f)
    grid = f.grid
    G = _operator(grid)
    L = (G.T @ G).tocsc()
    rhs = -(f.values - f.values.mean()).ravel()
    lu = sla.splu(L[1:, 1:].tocsc(), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
    x = np.zeros(grid.size)
    x[1:] = lu.solve(rhs[1:])
    x -= x.mean()
    return GridField(grid, x.reshape(grid.shape))


def q_laplace_solve(f: GridField, q: float, **kw) -> GridField:
    """Weak solution of ``div_H(|grad_H phi|^{q-2} grad_H phi) = f`` with zero mean."""
    if q < 2:
        raise InputError("the q-Laplace surface expects q >= 2")
    return solve_dual(f, CostSpec(p=q / (q - 1.0)), **kw).phi


def weak_form_residual(phi: GridField, f: GridField, q: float, psis) -> float:
    """``max_psi |sum <|grad phi|^{q-2} grad phi, grad psi> cellvol + sum f psi cellvol|``."""
    grid = phi.grid
    g = gradient_array(grid, phi.values)
    r = np.linalg.norm(g, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        flux = np.where(r > 0, r ** (q - 2.0), 0.0 if q > 2 else 1.0) * g
    out = 0.0
    for psi in psis:
        psi = np.asarray(psi, dtype=float)
        lhs = np.sum(flux * gradient_array(grid, psi)) * grid.cellvol
        out = max(out, abs(lhs + np.sum(f.values * psi) * grid.cellvol))
    return float(out)


def mollified_source(mu: DiscreteMeasure, nu: DiscreteMeasure, eps: float, grid: Grid) -> GridField:
    """``rho_eps * (mu - nu)`` on the grid, projected to exact zero mean."""
    pts = np.concatenate([mu.points, nu.points])
    wts = np.concatenate([mu.weights, -nu.weights])
    f = mollify_points(pts, wts, MollifierSpec(eps, n=(mu.dim - 1) // 2), grid)
    return GridField(grid, f - f.mean())


def beckmann_p1_value(mu: DiscreteMeasure, nu: DiscreteMeasure, grid: Grid, quadrature_k: int = 256):
    """``(value_from_density, mk_value, dp_value)`` for the p = 1 problem."""
    plan, mk, duals = solve_mk(mu, nu)
    u = recover_potential(plan, duals)
    dp = dual_value(u, mu, nu)
    dens = transport_density(plan, grid, quadrature_k)
    return dens.vector_mass(), mk, dp
