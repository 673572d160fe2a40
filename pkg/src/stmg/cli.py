"""Command line entry point: ``stmg <subcommand> [options]``."""
from __future__ import annotations

import argparse
import ast
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import analysis, experiments as ex
from .multigrid import plan_hierarchy


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


_TYPES = {
    "mesh": str, "refinements": int, "materials": _literal, "sigma": _literal,
    "mu_inv": _literal, "bc": str, "m": int, "tau": float, "lam": float,
    "smoother": str, "omega": float, "mode": str, "lambda_crit": float,
    "solver": str, "cg_iterations": int, "workers": int, "max_iterations": int,
    "underflow": float, "seed": int, "coarsest_m": int, "restriction": str,
}
_CHOICES = {"mesh": ["two_tets", "unit_cube"], "bc": ["neumann", "dirichlet"],
            "mode": ["semi_time", "full", "auto"], "solver": ["direct", "cg"],
            "restriction": ["sum", "average"]}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment config (overrides --config)")
    g.add_argument("--config", type=Path, help="key = value file")
    for f in fields(ex.ExperimentConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=_TYPES[f.name],
                       choices=_CHOICES.get(f.name), default=None)


def _config(args, **defaults) -> ex.ExperimentConfig:
    base = replace(ex.ExperimentConfig(), **defaults)
    overrides = {f.name: getattr(args, f.name) for f in fields(ex.ExperimentConfig)}
    return ex.load_config(args.config, base, **overrides)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        print(f"wrote {out}", file=sys.stderr)


def _progress(row):
    print("  " + ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                           for k, v in row.items()), file=sys.stderr)


def cmd_rates(args) -> int:
    cfg = _config(args)
    rep = ex.power_iteration_rate(cfg)
    rows = [{"iteration": i + 1, "factor": f, "seed": cfg.seed} for i, f in enumerate(rep.factors)]
    if args.out:
        ex.write_csv(rows, ["iteration", "factor", "seed"], args.out)
    print(f"rate {rep.rate:.6f}  iterations {rep.iterations}  total reduction "
          f"{rep.total_reduction:.3e}  diverged {rep.diverged}  seed {rep.seed}  "
          f"time {rep.seconds:.2f}s")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows = ex.lambda_sweep(cfg, args.lambdas, args.modes, progress=_progress)
    _emit(ex.rows_to_csv(rows, ex.SWEEP_COLUMNS), args.out)
    if args.plot:
        ex.plot_sweep(rows, args.plot, f"{cfg.mesh}, {cfg.refinements} refinements, m={cfg.m}")
    return 0


def cmd_lambda_crit(args) -> int:
    est = ex.estimate_lambda_crit(args.csv, args.gap_tol)
    print(est)
    return 0


def cmd_two_lambda(args) -> int:
    cfg = _config(args, refinements=4, max_iterations=100)
    rows = ex.two_lambda_study(cfg, args.mu2, args.lambdas, progress=_progress)
    _emit(ex.rows_to_csv(rows, ex.TWO_LAMBDA_COLUMNS), args.out)
    print(ex.rate_table(rows), file=sys.stderr)
    return 0


def cmd_weak_scaling(args) -> int:
    cfg = _config(args, mesh="unit_cube", refinements=3, m=32, lam=0.512, lambda_crit=0.15)
    rows, timing = ex.weak_scaling(cfg, args.ks, args.tol, args.repeats, progress=_progress)
    _emit(ex.rows_to_csv(rows, ex.WEAK_COLUMNS), args.out)
    text = ex.rows_to_csv(timing, ex.TIMING_COLUMNS)
    if args.timing_out:
        _emit(text, args.timing_out)
    else:
        sys.stderr.write(text)
    return 0


def cmd_testeq(args) -> int:
    template = analysis.TestEquationConfig(m=args.m, tau=args.tau, omega=args.omega,
                                           coarsening=args.coarsening)
    rows = analysis.testeq_rate_sweep(args.lambdas, template, args.sequences, args.method)
    _emit(analysis.sweep_csv(rows), args.out)
    for seq, r in analysis.worst_case(rows).items():
        print(f"worst case {seq}: {r:.6f}", file=sys.stderr)
    return 0


def cmd_plan(args) -> int:
    cfg = _config(args, mode="auto")
    hierarchy = ex.build_mesh_hierarchy(cfg)
    tau = ex.resolve_tau(cfg, hierarchy)
    plan = plan_hierarchy(cfg.rule, cfg.m, tau, hierarchy, cfg.mode, cfg.coarsest_m)
    print(f"mode {plan.mode}, fine tau {tau:.6g}, min lambda "
          f"{cfg.rule.min_lambda(tau, hierarchy.finest):.6g}")
    print(plan.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stmg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rates", help="power-iteration rate of one configuration")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, help="CSV of per-iteration factors")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("sweep", help="rates over a lambda grid for several coarsening modes")
    _add_config_flags(p)
    p.add_argument("--lambdas", type=_floats, required=True, help="comma separated")
    p.add_argument("--modes", type=lambda s: s.split(","), default=["semi_time", "full"])
    p.add_argument("--out", type=Path)
    p.add_argument("--plot", type=Path, help="SVG of rate against lambda")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lambda-crit", help="estimate lambda_crit from a sweep CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--gap-tol", type=float, default=0.02)
    p.set_defaults(func=cmd_lambda_crit)

    p = sub.add_parser("two-lambda", help="two-material rate table, full coarsening")
    _add_config_flags(p)
    p.add_argument("--mu2", type=_floats, default=[1e1, 1e2, 1e3, 1e4, 1e5, 1e6])
    p.add_argument("--lambdas", type=_floats,
                   default=[1, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.01])
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_two_lambda)

    p = sub.add_parser("weak-scaling", help="time steps and workers doubled together")
    _add_config_flags(p)
    p.add_argument("--ks", type=_ints, default=[0, 1, 2, 3])
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", type=Path, help="iteration counts (deterministic)")
    p.add_argument("--timing-out", type=Path, help="wall-clock timings")
    p.set_defaults(func=cmd_weak_scaling)

    p = sub.add_parser("testeq", help="two-grid rates of the scalar test equation")
    p.add_argument("--lambdas", type=_floats, default=[0, 0.01, 0.1, 1, 10, 100])
    p.add_argument("--sequences", type=lambda s: s.split(","), default=["SAS"])
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--coarsening", choices=["semi_time", "none"], default="semi_time")
    p.add_argument("--method", choices=["dense", "lfa"], default="dense")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_testeq)

    p = sub.add_parser("plan", help="print the coarsening plan table")
    _add_config_flags(p)
    p.set_defaults(func=cmd_plan)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
