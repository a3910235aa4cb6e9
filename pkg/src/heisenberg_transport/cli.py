"""Command-line interface.

Every command prints a JSON report on stdout; with ``--out DIR`` the
report and its companion files (fields as CSV, plans as JSON) are also
written there.  Reports carry the hash of the resolved configuration and
contain no timestamps, so repeated runs are byte-identical.

Exit codes: 0 ok, 2 input error, 3 infeasible problem, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import InfeasibleError, InputError, NumericalError

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4
DEFAULT_BOX = (-0.5, -0.5, -0.5, 0.5, 0.5, 0.5)


def _grid(args):
    from .grid import Grid

    box = np.asarray(args.box, dtype=float)
    return Grid.from_spacing(box[:3], box[3:], 1.0 / args.grid)


def _config(args) -> dict:
    skip = {"out", "func"}
    return {"command": args.command, **{k: v for k, v in sorted(vars(args).items()) if k not in skip}}


def _tolerances(args) -> dict:
    return {"tol": args.tol} if hasattr(args, "tol") else {}


def _emit(args, report: dict, files: dict | None = None) -> dict:
    cfg = _config(args)
    full = {"config": cfg, "config_hash": io.config_hash(cfg), "tolerances": _tolerances(args), **report}
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, writer in (files or {}).items():
            writer(out / name, full["config_hash"])
        io.write_json(out / "report.json", full)
    sys.stdout.write(io.dumps(full))
    return full


def _source(args, grid):
    """Source ``f`` from a field CSV or from mollified measures."""
    from .beckmann import mollified_source
    from .grid import GridField

    if args.source is not None:
        fld, _ = io.read_field_csv(args.source)
        if not isinstance(fld, GridField):
            raise InputError("the source file must hold a scalar field")
        return fld, None, None
    if args.measures is None:
        raise InputError("give a measures file or --source")
    mu, nu = io.read_measures(args.measures)
    return mollified_source(mu, nu, args.eps, grid), mu, nu


# ---------------------------------------------------------------------------
# commands


def cmd_distance(args):
    from .geodesy import cc_distance, in_uniqueness_set, select_geodesic

    x, y = np.asarray(args.coords[:3]), np.asarray(args.coords[3:])
    d = float(cc_distance(x, y))
    rec = {"x": x, "y": y, "distance": d}
    if np.array_equal(x, y):
        rec.update(geodesic=None, unique=True)
    else:
        g = select_geodesic(x, y)
        rec.update(geodesic={"chi": g.chi, "theta": g.theta, "selection_dependent": g.selection_dependent},
                   unique=bool(in_uniqueness_set(x, y)))
    return _emit(args, rec)


def cmd_geodesic(args):
    from .geodesy import sample_geodesic, select_geodesic

    x, y = np.asarray(args.coords[:3]), np.asarray(args.coords[3:])
    g = select_geodesic(x, y)
    pts = sample_geodesic(g, args.steps + 1).vertices
    return _emit(args, {"x": x, "y": y, "chi": g.chi, "theta": g.theta, "speed": g.speed,
                        "selection_dependent": g.selection_dependent, "points": pts})


def cmd_mk(args):
    from .grid import GridField, HorizontalGridField
    from .kantorovich import dual_value, recover_potential, solve_mk, transport_density

    mu, nu = io.read_measures(args.measures)
    grid = _grid(args)
    plan, mk, duals = solve_mk(mu, nu)
    u = recover_potential(plan, duals)
    dp = dual_value(u, mu, nu)
    if abs(mk - dp) > args.tol:
        raise NumericalError(f"duality gap {abs(mk - dp):.3g} exceeds {args.tol:g}")
    dens = transport_density(plan, grid, args.quadrature)
    bp = dens.vector_mass()
    files = {
        "plan.json": lambda p, h: io.write_json(p, io.plan_to_dict(plan)),
        "potential.json": lambda p, h: io.write_json(p, {"points": u.points, "values": u.values}),
        "density_scalar.csv": lambda p, h: io.write_field_csv(p, GridField(grid, dens.scalar), {"config_hash": h}),
        "density_vector.csv": lambda p, h: io.write_field_csv(p, HorizontalGridField(grid, dens.vector),
                                                              {"config_hash": h}),
    }
    return _emit(args, {"mk_value": mk, "dp_value": dp, "bp_from_density": bp, "gap": abs(mk - dp),
                        "density_error": abs(bp - mk), "pairs": plan.pairs,
                        "selection_dependent": dens.selection_dependent}, files)


def _solve(args, f, p):
    from .beckmann import CostSpec, solve_dual

    spec = CostSpec(p)
    return spec, solve_dual(f, spec, gtol=args.tol, method=args.method)


def cmd_beckmann(args):
    from .beckmann import duality_report, recover_primal

    grid = _grid(args)
    f, _, _ = _source(args, grid)
    spec, res = _solve(args, f, args.p)
    w = recover_primal(res.phi, spec)
    rep = duality_report(f, res.phi, spec, w)
    files = {
        "phi0.csv": lambda p, h: io.write_field_csv(p, res.phi, {"config_hash": h}),
        "w0.csv": lambda p, h: io.write_field_csv(p, w, {"config_hash": h}),
        "convergence.csv": lambda p, h: io.write_log_csv(p, ["iteration", "J", "grad_inf", "delta"], res.log,
                                                         {"config_hash": h}),
    }
    return _emit(args, {"primal": rep.primal, "dual": rep.dual, "gap": rep.gap,
                        "fenchel_young": rep.fenchel_young, "divergence_residual_l2": rep.divergence_residual_l2,
                        "iterations": res.iterations, "converged": res.converged}, files)


def cmd_qlaplace(args):
    from .beckmann import q_laplace_solve, weak_form_residual

    grid = _grid(args)
    f, _, _ = _source(args, grid)
    if not args.q >= 2:
        raise InputError("--q must be at least 2")
    phi = q_laplace_solve(f, args.q, gtol=args.tol, method=args.method)
    coords = grid.coords
    psis = [coords[..., 0], coords[..., 0] * coords[..., 1], np.sin(np.pi * coords[..., 2])]
    res = weak_form_residual(phi, f, args.q, psis)
    files = {"phi.csv": lambda p, h: io.write_field_csv(p, phi, {"config_hash": h})}
    return _emit(args, {"q": args.q, "weak_form_residual": res, "phi_l1": phi.l1()}, files)


def cmd_moser(args):
    from .beckmann import mollified_source, recover_primal
    from .grid import GridField
    from .moser import build_traffic_plan, congested_cost, estimate_intensity, verify_moser_identity

    if args.measures is None:
        raise InputError("moser needs a measures file")
    grid = _grid(args)
    mu, nu = io.read_measures(args.measures)
    f = mollified_source(mu, nu, args.eps, grid)
    spec, res = _solve(args, f, args.p)
    w = recover_primal(res.phi, spec)
    q = build_traffic_plan(w, mu, nu, args.eps, args.samples, args.steps, method=args.flow)
    inten = estimate_intensity(q, grid)
    l1 = verify_moser_identity(q, w)
    cost = congested_cost(inten, spec)
    rel = abs(cost - res.value) / abs(res.value) if res.value else abs(cost)
    files = {
        "traffic_plan.json": lambda p, h: io.write_json(p, io.traffic_plan_to_dict(q)),
        "intensity.csv": lambda p, h: io.write_field_csv(p, GridField(grid, inten.scalar), {"config_hash": h}),
    }
    return _emit(args, {"moser_l1": l1, "moser_l1_threshold": 0.05, "congested_cost": cost,
                        "beckmann_primal": res.value, "relative_cost_error": rel,
                        "curves": q.size, "chord_defect": q.chord_defect(), "plan_mass": q.mass}, files)


def cmd_selftest(args):
    from .acceptance import run_suite

    results = run_suite(args.only or None, echo=lambda line: print(line, file=sys.stderr))
    rep = {"results": [{"criterion": r.number, "title": r.title, "passed": r.passed, "summary": r.summary,
                        "details": r.details} for r in results],
           "passed": sum(r.passed for r in results), "total": len(results)}
    _emit(args, rep)
    return rep


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heisenberg-transport",
                                 description="Optimal and congested transport in the Heisenberg group.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", default=None, help="directory for the report and companion files")
        return p

    def grid_flags(p, tol):
        p.add_argument("--grid", type=int, default=32, help="nodes per unit length (spacing 1/GRID)")
        p.add_argument("--box", type=float, nargs=6, default=list(DEFAULT_BOX),
                       metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
        p.add_argument("--tol", type=float, default=tol)

    def positive(kind):
        def parse(s):
            v = kind(s)
            if not v > 0:
                raise argparse.ArgumentTypeError(f"expected a positive value, got {s}")
            return v
        return parse

    for name, func, help_ in (("distance", cmd_distance, "sub-Riemannian distance between two points"),
                              ("geodesic", cmd_geodesic, "sample the selected geodesic")):
        p = add(name, func, help_)
        p.add_argument("coords", type=float, nargs=6, metavar="X", help="x1 x2 x3 y1 y2 y3")
        if name == "geodesic":
            p.add_argument("--steps", type=positive(int), default=64)

    p = add("mk", cmd_mk, "Kantorovich problem, potential and transport density")
    p.add_argument("measures", help="JSON file with 'mu' and 'nu'")
    grid_flags(p, 1e-8)
    p.add_argument("--quadrature", type=positive(int), default=256)

    for name, func, help_ in (("beckmann", cmd_beckmann, "dual Beckmann solve and primal recovery"),
                              ("qlaplace", cmd_qlaplace, "weak horizontal q-Laplace solve"),
                              ("moser", cmd_moser, "traffic plan from the Beckmann field")):
        p = add(name, func, help_)
        p.add_argument("measures", nargs="?", default=None, help="JSON file with 'mu' and 'nu'")
        if name != "moser":
            p.add_argument("--source", default=None, help="scalar field CSV used as f instead of measures")
        grid_flags(p, 1e-8)
        p.add_argument("--eps", type=positive(float), default=0.1)
        p.add_argument("--method", choices=("newton", "lbfgs"), default="newton")
        if name == "qlaplace":
            p.add_argument("--q", type=float, default=2.0)
        else:
            p.add_argument("--p", type=positive(float), default=2.0)
        if name == "moser":
            p.add_argument("--samples", type=positive(int), default=20000)
            p.add_argument("--steps", type=positive(int), default=200)
            p.add_argument("--flow", choices=("flux", "rk4"), default="flux")

    p = add("selftest", cmd_selftest, "run the acceptance suite")
    p.add_argument("--only", type=int, nargs="*", choices=range(1, 12), metavar="K")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = args.func(args)
    except InfeasibleError as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.command == "selftest" and out["passed"] != out["total"]:
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
