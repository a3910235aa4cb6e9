"""Desk-scale acceptance suite: eleven oracle and property checks.

Each ``criterion_k`` returns a ``CriterionResult``; ``run_suite`` runs a
selection and reports one line per criterion.  The two-spike Beckmann
instance is solved once and shared by criteria 7 to 10.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .beckmann import (CostSpec, beckmann_p1_value, dual_objective, duality_report, linear_oracle,
                       mollified_source, recover_primal, solve_dual)
from .geodesy import LatticeOracle, cc_distance, geodesic_point, select_geodesic
from .grid import Grid, divergence_array, gradient_array
from .group import dilate, group_mul, left_difference
from .kantorovich import (DiscreteMeasure, check_divergence_identity, check_pansu_gradient, dual_value,
                          recover_potential, solve_mk, transport_density)
from .moser import build_traffic_plan, congested_cost, estimate_intensity, realizable_norm

UNIT_LOW, UNIT_HIGH = (-0.5,) * 3, (0.5,) * 3

THREE_PAIR_MU = [[-0.3, -0.2, 0.05], [0.1, 0.3, -0.1], [-0.2, 0.25, 0.15]]
THREE_PAIR_NU = [[0.3, 0.1, -0.05], [-0.25, -0.3, 0.1], [0.25, -0.1, 0.2]]
PANSU_PAIR = ((-0.8, -0.1, -0.05), (0.8, 0.1, 0.05))
PANSU_BOX = ((-1.0, -0.5, -0.5), (1.0, 0.5, 0.5))
SPIKES = ((-0.25, 0.0, 0.0), (0.25, 0.0, 0.0))
SPIKE_EPS, SPIKE_H = 0.1, 1.0 / 32


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:>2} {self.title}: {self.summary} ({self.seconds:.1f}s)"


def _random_points(rng, m, low=UNIT_LOW, high=UNIT_HIGH):
    return rng.uniform(low, high, size=(m, 3))


# ---------------------------------------------------------------------------
# shared instances


def three_pair_instance():
    return DiscreteMeasure.uniform(THREE_PAIR_MU), DiscreteMeasure.uniform(THREE_PAIR_NU)


def spike_instance():
    return DiscreteMeasure.dirac(SPIKES[0]), DiscreteMeasure.dirac(SPIKES[1])


@lru_cache(maxsize=None)
def spike_grid(h: float = SPIKE_H) -> Grid:
    return Grid.from_spacing(UNIT_LOW, UNIT_HIGH, h)


@lru_cache(maxsize=None)
def spike_source(eps: float = SPIKE_EPS, h: float = SPIKE_H):
    mu, nu = spike_instance()
    return mollified_source(mu, nu, eps, spike_grid(h))


@lru_cache(maxsize=None)
def spike_solution(p: float, eps: float = SPIKE_EPS, h: float = SPIKE_H):
    """``(DualResult, w0)`` for the two-spike instance."""
    spec = CostSpec(p)
    res = solve_dual(spike_source(eps, h), spec)
    return res, recover_primal(res.phi, spec)


@lru_cache(maxsize=None)
def spike_plan(samples: int, steps: int, eps: float = SPIKE_EPS):
    mu, nu = spike_instance()
    _, w = spike_solution(2.0, eps)
    return build_traffic_plan(w, mu, nu, eps, samples, steps)


# ---------------------------------------------------------------------------
# criteria


def criterion_1(pairs: int = 20, seed: int = 1) -> CriterionResult:
    rng = np.random.default_rng(seed)
    oracle = LatticeOracle()
    xs, ys = _random_points(rng, pairs), _random_points(rng, pairs)
    d = np.atleast_1d(cc_distance(xs, ys))
    ref = np.array([oracle.distance(x, y) for x, y in zip(xs, ys)])
    rel = float(np.max(np.abs(d - ref) / ref))
    h = 1.0 / 64
    e1 = abs(cc_distance(np.zeros(3), [1.0, 0.0, 0.0]) - 1.0)
    e2 = abs(cc_distance(np.zeros(3), [0.0, 0.0, h]) - np.sqrt(4 * np.pi * h))
    ok = rel <= 0.03 and e1 <= 1e-10 and e2 <= 1e-10
    return CriterionResult(1, "distance vs lattice oracle", ok,
                           f"max rel {rel:.2e} <= 3e-2, exact errors {e1:.1e}, {e2:.1e} <= 1e-10",
                           {"max_rel": rel, "exact_horizontal": e1, "exact_vertical": e2})


def criterion_2(pairs: int = 100, centered: int = 10, seed: int = 2) -> CriterionResult:
    rng = np.random.default_rng(seed)
    xs = _random_points(rng, pairs)
    ys = _random_points(rng, pairs)
    ys[:centered] = group_mul(xs[:centered], np.c_[np.zeros((centered, 2)), rng.uniform(-0.5, 0.5, centered)])
    err = max(float(np.max(np.abs(geodesic_point(select_geodesic(x, y), 1.0) - y))) for x, y in zip(xs, ys))
    return CriterionResult(2, "geodesic round trip", err <= 1e-9, f"max error {err:.2e} <= 1e-9",
                           {"max_error": err, "centered_pairs": centered})


def criterion_3(instances: int = 20, seed: int = 3) -> CriterionResult:
    rng = np.random.default_rng(seed)
    gap = ray = 0.0
    for _ in range(instances):
        m, n = rng.integers(2, 51, size=2)
        mu = DiscreteMeasure(_random_points(rng, m), rng.dirichlet(np.ones(m)))
        nu = DiscreteMeasure(_random_points(rng, n), rng.dirichlet(np.ones(n)))
        plan, cost, duals = solve_mk(mu, nu)
        u = recover_potential(plan, duals)
        gap = max(gap, abs(cost - dual_value(u, mu, nu)))
        for x, y, _ in plan.carrying():
            ray = max(ray, abs(u.lookup(x) - u.lookup(y) - cc_distance(x, y)))
    ok = gap <= 1e-8 and ray <= 1e-8
    return CriterionResult(3, "Kantorovich duality", ok, f"gap {gap:.1e}, ray defect {ray:.1e} <= 1e-8",
                           {"max_gap": gap, "max_ray_defect": ray})


def criterion_4() -> CriterionResult:
    mu, nu = three_pair_instance()
    errs, mk, dp = {}, None, None
    for h in (1 / 64, 1 / 128):
        val, mk, dp = beckmann_p1_value(mu, nu, Grid.from_spacing(UNIT_LOW, UNIT_HIGH, h))
        errs[h] = abs(val - mk)
    e64, e128 = errs[1 / 64], errs[1 / 128]
    ok = abs(mk - dp) <= 1e-8 and e64 <= 2e-2 and e128 < e64
    return CriterionResult(4, "triple equality at p = 1", ok,
                           f"|mk-dp| {abs(mk - dp):.1e}, density error {e64:.2e} (1/64) -> {e128:.2e} (1/128)",
                           {"mk": mk, "dp": dp, "density_error_64": e64, "density_error_128": e128})


def criterion_5() -> CriterionResult:
    mu, nu = three_pair_instance()
    plan, _, _ = solve_mk(mu, nu)
    fld = transport_density(plan, Grid.from_spacing(UNIT_LOW, UNIT_HIGH, 1 / 64), 256)
    r = check_divergence_identity(fld, mu, nu)
    return CriterionResult(5, "divergence identity", r <= 1e-2, f"residual {r:.2e} <= 1e-2", {"residual": r})


def criterion_6() -> CriterionResult:
    mu, nu = DiscreteMeasure.dirac(PANSU_PAIR[0]), DiscreteMeasure.dirac(PANSU_PAIR[1])
    plan, _, duals = solve_mk(mu, nu)
    u = recover_potential(plan, duals)
    devs = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        g = Grid.from_spacing(*PANSU_BOX, h)
        devs.append(check_pansu_gradient(u.rasterize(g), plan).max_deviation)
    ok = devs[0] > devs[1] > devs[2] and devs[2] <= 0.1
    return CriterionResult(6, "Pansu gradient", ok, "deviation " + " > ".join(f"{d:.3f}" for d in devs)
                           + " (h = 1/16, 1/32, 1/64), last <= 0.1", {"deviations": devs})


def criterion_7() -> CriterionResult:
    rows, ok = {}, True
    for p in (2.0, 3.0):
        res, w = spike_solution(p)
        rep = duality_report(spike_source(), res.phi, CostSpec(p), w)
        rows[p] = (abs(rep.gap), rep.fenchel_young)
        ok &= abs(rep.gap) <= 1e-6 and rep.fenchel_young <= 1e-8
    summary = ", ".join(f"p={p:g}: gap {g:.1e} FY {fy:.1e}" for p, (g, fy) in rows.items())
    return CriterionResult(7, "Beckmann duality gap", ok, summary + " (<= 1e-6, 1e-8)",
                           {f"p={p:g}": {"gap": g, "fenchel_young": fy} for p, (g, fy) in rows.items()})


def criterion_8() -> CriterionResult:
    res, _ = spike_solution(2.0)
    f = spike_source()
    ref = linear_oracle(f)
    g = f.grid
    obj = abs(dual_objective(ref.values.ravel(), f.values.ravel(), CostSpec(2.0), g)[0] - res.value)
    l2 = float(np.sqrt(np.sum((ref.values - res.phi.values) ** 2) * g.cellvol))
    ok = obj <= 1e-7 and l2 <= 1e-5
    return CriterionResult(8, "q = 2 linear oracle", ok, f"objective {obj:.1e} <= 1e-7, L2 {l2:.1e} <= 1e-5",
                           {"objective_error": obj, "phi_l2": l2})


def _moser_l1(q, w):
    return float(np.abs(estimate_intensity(q, w.grid).scalar - w.norm()).sum() * w.grid.cellvol)


def criterion_9() -> CriterionResult:
    _, w = spike_solution(2.0)
    g = w.grid
    runs = {(s, k): _moser_l1(spike_plan(s, k), w) for s, k in ((5000, 200), (20000, 100), (20000, 200))}
    main = runs[(20000, 200)]
    real = realizable_norm(w)
    sampling = float(np.abs(estimate_intensity(spike_plan(20000, 200), g).scalar - real).sum() * g.cellvol)
    samples_trend = runs[(5000, 200)] >= main
    steps_trend = runs[(20000, 100)] >= main
    ok = main <= 0.05 and samples_trend and steps_trend
    return CriterionResult(9, "Moser identity", ok,
                           f"L1 {main:.4f} <= 0.05; samples 5000 -> 20000: {runs[(5000, 200)]:.4f} -> {main:.4f}; "
                           f"steps 100 -> 200: {runs[(20000, 100)]:.4f} -> {main:.4f}; "
                           f"against the realizable field {sampling:.4f}",
                           {"l1": main, "runs": {f"{s}x{k}": v for (s, k), v in runs.items()},
                            "l1_vs_realizable": sampling})


def criterion_10(eps_sweep=(0.2, 0.1)) -> CriterionResult:
    spec = CostSpec(2.0)
    rel = {}
    for eps in eps_sweep:
        res, _ = spike_solution(2.0, eps)
        for s, k in ((5000, 100), (20000, 200)):
            q = spike_plan(s, k, eps)
            c = congested_cost(estimate_intensity(q, spike_grid()), spec)
            rel[(eps, s, k)] = abs(c - res.value) / abs(res.value)
    main = rel[(SPIKE_EPS, 20000, 200)]
    ok = main <= 0.1 and rel[(SPIKE_EPS, 5000, 100)] >= main
    sweep = "; ".join(f"eps {e:g} {s}x{k}: {r:.3f}" for (e, s, k), r in rel.items())
    return CriterionResult(10, "congested cost vs Beckmann primal", ok, f"rel error {main:.3f} <= 0.1 [{sweep}]",
                           {"rel_error": main, "sweep": {f"{e:g}/{s}/{k}": r for (e, s, k), r in rel.items()}})


def criterion_11(pairs: int = 100, samples: int = 1000, seed: int = 11) -> CriterionResult:
    rng = np.random.default_rng(seed)
    adj = 0.0
    for _ in range(pairs):
        shape = tuple(int(v) for v in rng.integers(4, 13, size=3))
        low = rng.uniform(-1.0, 0.0, 3)
        g = Grid(tuple(low), tuple(low + rng.uniform(0.5, 2.0, 3)), shape)
        phi = rng.normal(size=shape)
        w = rng.normal(size=shape + (2,))
        a = np.sum(gradient_array(g, phi) * w)
        b = np.sum(phi * divergence_array(g, w))
        adj = max(adj, abs(a + b) / (np.linalg.norm(gradient_array(g, phi)) * np.linalg.norm(w)))
    x, y, z = (_random_points(rng, samples) for _ in range(3))
    tau = rng.uniform(0.5, 2.0, size=(samples, 1))
    assoc = np.max(np.abs(group_mul(group_mul(x, y), z) - group_mul(x, group_mul(y, z))))
    inv = np.max(np.abs(left_difference(group_mul(z, x), group_mul(z, y)) - left_difference(x, y)))
    dil = np.max(np.abs(dilate(group_mul(x, y), 1.0) - group_mul(x, y)))
    for t, a_, b_ in zip(tau[:, 0], x, y):
        dil = max(dil, np.max(np.abs(dilate(group_mul(a_, b_), t) - group_mul(dilate(a_, t), dilate(b_, t)))))
    d = np.atleast_1d(cc_distance(x, y))
    d_inv = np.max(np.abs(np.atleast_1d(cc_distance(group_mul(z, x), group_mul(z, y))) - d) / d)
    d_dil = max(abs(cc_distance(dilate(a_, t), dilate(b_, t)) - t * dd) / (t * dd)
                for t, a_, b_, dd in zip(tau[:, 0], x, y, d))
    group = float(max(assoc, inv, dil, d_inv, d_dil))
    ok = adj <= 1e-10 and group <= 1e-12
    return CriterionResult(11, "structural exactness", ok, f"adjointness {adj:.1e} <= 1e-10, group laws {group:.1e} <= 1e-12",
                           {"adjointness": float(adj), "associativity": float(assoc), "translation": float(inv),
                            "dilation": float(dil), "distance_translation": float(d_inv),
                            "distance_dilation": float(d_dil)})


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 12)}


def run_criterion(k: int) -> CriterionResult:
    t = time.perf_counter()
    res = CRITERIA[k]()
    res.seconds = time.perf_counter() - t
    return res


def run_suite(selection=None, echo=print) -> list[CriterionResult]:
    out = []
    for k in (selection or sorted(CRITERIA)):
        res = run_criterion(k)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
