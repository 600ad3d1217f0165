"""Command-line interface.

Commands:

* ``baseline``     - write one of the three reference grids with its
  objective value,
* ``optimize``     - minimize the bound objective over interior nodes
  and write the optimized grid,
* ``simulate``     - compare schedule files on an analytic-score model
  against reference solutions,
* ``dump-weights`` - emit the solver weight table of a schedule file.

Exit codes: 0 on success, 1 on numeric failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .objective import ConstraintViolationError, ObjectiveSpec, objective_value
from .optimizer import InfeasibleError, OptimizerConfig, optimize_steps
from .schedule_file import ScheduleFile
from .schedules import (
    DomainError,
    NoiseSchedule,
    edm_grid,
    uniform_lambda_grid,
    uniform_t_grid,
)
from .simulator import evaluate_schedules, load_model
from .weights import OrderSchedule, weights_lagrange, weights_taylor

__all__ = ["main", "entry_point"]

_SCHEDULE_NAMES = ("vp-linear", "vp-cosine", "ve-edm")
_DEFAULT_RANGES = {
    "vp-linear": (1.0, 1e-3),
    "vp-cosine": (0.992, 1e-3),
    "ve-edm": (80.0, 0.002),
}
_BASELINE_BUILDERS = {
    "uniform-t": lambda sched, N, T, eps, rho: uniform_t_grid(sched, N, T, eps),
    "uniform-lambda": lambda sched, N, T, eps, rho: uniform_lambda_grid(sched, N, T, eps),
    "edm": edm_grid,
}


class UsageError(ValueError):
    """Bad flag combinations and inconsistent inputs (exit code 2)."""


def _schedule_from_args(args) -> NoiseSchedule:
    try:
        if args.schedule == "vp-linear":
            return NoiseSchedule.vp_linear(args.beta_min, args.beta_max)
        if args.schedule == "vp-cosine":
            return NoiseSchedule.vp_cosine(args.cosine_shift)
        return NoiseSchedule.ve_edm()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _range_from_args(args) -> tuple[float, float]:
    default_T, default_eps = _DEFAULT_RANGES[args.schedule]
    T = args.T if args.T is not None else default_T
    eps = args.eps if args.eps is not None else default_eps
    if not T > eps:
        raise UsageError(f"--T ({T}) must exceed --eps ({eps})")
    return T, eps


def _orders_from_args(args, N: int) -> OrderSchedule:
    text = args.order
    try:
        if "," in text:
            ks = tuple(int(v) for v in text.split(","))
            if len(ks) != N:
                raise ValueError(f"--order lists {len(ks)} entries but --N is {N}")
            return OrderSchedule(ks)
        return OrderSchedule.warmup(N, int(text))
    except ValueError as exc:
        raise UsageError(f"bad --order: {exc}") from None


def _dump_weight_table(schedule_file: ScheduleFile, path) -> None:
    grid = schedule_file.to_grid()
    orders = OrderSchedule(tuple(schedule_file.orders))
    build = weights_lagrange if schedule_file.polynomial_kind == "lagrange" else weights_taylor
    table = build(grid, orders)
    steps = []
    for n in range(1, grid.n_steps + 1):
        pairs = [[j, table.entries[(n, j)]] for j in range(orders.k[n - 1])]
        steps.append({"n": n, "weights": pairs})
    payload = {"anchor": table.scale_anchor, "steps": steps}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _cmd_baseline(args) -> int:
    schedule = _schedule_from_args(args)
    T, eps = _range_from_args(args)
    orders = _orders_from_args(args, args.N)
    grid = _BASELINE_BUILDERS[args.scheme](schedule, args.N, T, eps, args.rho)
    spec = ObjectiveSpec(
        schedule, args.N, T, eps, orders, p=args.p, polynomial_kind=args.kind
    )
    value = objective_value(spec, grid.lam[1:-1])
    out = ScheduleFile.from_grid(
        grid, args.schedule, orders, args.kind, args.p, value, init=args.scheme
    )
    out.write(args.out)
    if args.dump_weights:
        _dump_weight_table(out, args.dump_weights)
    print(f"wrote {args.out}: {args.scheme} N={args.N} objective={value:.12g}")
    return 0


def _cmd_optimize(args) -> int:
    schedule = _schedule_from_args(args)
    T, eps = _range_from_args(args)
    orders = _orders_from_args(args, args.N)
    spec = ObjectiveSpec(
        schedule, args.N, T, eps, orders, p=args.p, polynomial_kind=args.kind
    )
    inits = (
        ("uniform-t", "uniform-lambda", "edm") if args.init == "best-of-3" else (args.init,)
    )
    results = []
    for init in inits:
        try:
            config = OptimizerConfig(
                init=init,
                rho=args.rho,
                margin=args.margin,
                max_iters=args.max_iters,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        results.append((init, optimize_steps(spec, config)))
    init_name, best = min(results, key=lambda pair: pair[1].objective)
    out = ScheduleFile.from_grid(
        best.grid,
        args.schedule,
        orders,
        args.kind,
        args.p,
        best.objective,
        init=init_name,
        converged=best.converged,
    )
    out.write(args.out)
    if args.dump_weights:
        _dump_weight_table(out, args.dump_weights)
    total_time = sum(r.wall_time_seconds for _, r in results)
    print(
        f"wrote {args.out}: init={init_name} "
        f"objective {best.initial_objective:.12g} -> {best.objective:.12g} "
        f"in {best.iterations} iterations, {total_time:.3f} s"
    )
    if not best.converged:
        print("note: stopped before reaching the stationarity tolerance", file=sys.stderr)
    return 0


def _cmd_simulate(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    model = load_model(args.model)
    files = [ScheduleFile.read(p) for p in args.steps]
    first = files[0]
    for f in files[1:]:
        if (f.T, f.eps) != (first.T, first.eps) or f.schedule_family != first.schedule_family:
            raise UsageError("schedule files must share family, T and eps")
        if f.orders != first.orders or f.polynomial_kind != first.polynomial_kind:
            raise UsageError("schedule files must share orders and polynomial kind")
    schedule = NoiseSchedule.from_name(first.schedule_family)
    grids = [f.to_grid() for f in files]
    labels = [Path(p).stem for p in args.steps]
    orders = OrderSchedule(tuple(first.orders))
    reports = evaluate_schedules(
        model,
        schedule,
        grids,
        orders,
        first.polynomial_kind,
        seeds=args.seeds,
        rng_seed=args.rng_seed,
        labels=labels,
    )
    payload = {
        "model": str(args.model),
        "seeds": args.seeds,
        "rng_seed": args.rng_seed,
        "reports": [r.to_dict() for r in reports],
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "N", "mean_l2", "median_l2"])
            for f, r in zip(files, reports):
                writer.writerow(
                    [r.schedule_label, f.N, repr(r.mean_l2_error), repr(r.median_l2_error)]
                )
    for r in reports:
        print(f"{r.schedule_label}: mean_l2={r.mean_l2_error:.6g} median_l2={r.median_l2_error:.6g}")
    return 0


def _cmd_dump_weights(args) -> int:
    _dump_weight_table(ScheduleFile.read(args.steps), args.out)
    print(f"wrote {args.out}")
    return 0


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schedule", choices=_SCHEDULE_NAMES, required=True)
    p.add_argument("--N", type=int, required=True, help="number of steps")
    p.add_argument("--T", type=float, default=None, help="start time (family default)")
    p.add_argument("--eps", type=float, default=None, help="end time (family default)")
    p.add_argument("--order", default="3", help="max order, or comma list k1,k2,...")
    p.add_argument("--p", type=int, default=1, choices=(0, 1, 2, 3),
                   help="error-proxy exponent (1: pixel-space, 2: latent-space)")
    p.add_argument("--kind", choices=("lagrange", "taylor"), default="lagrange")
    p.add_argument("--rho", type=int, default=7, help="exponent of the edm scheme")
    p.add_argument("--beta-min", type=float, default=0.1)
    p.add_argument("--beta-max", type=float, default=20.0)
    p.add_argument("--cosine-shift", type=float, default=0.008)
    p.add_argument("--out", required=True, help="output schedule JSON")
    p.add_argument("--dump-weights", default=None, help="also write the weight table JSON")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepopt",
        description="Time-step schedule construction, optimization and validation "
        "for multistep exponential-integrator diffusion ODE solvers.",
    )
    parser.add_argument("--version", action="version", version=f"stepopt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("baseline", help="write a reference discretization")
    p.add_argument("--scheme", choices=tuple(_BASELINE_BUILDERS), required=True)
    _add_spec_flags(p)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("optimize", help="minimize the bound objective over interior nodes")
    p.add_argument(
        "--init",
        choices=("uniform-t", "uniform-lambda", "edm", "best-of-3"),
        default="best-of-3",
    )
    p.add_argument("--margin", type=float, default=None, help="minimum log-SNR gap")
    p.add_argument("--max-iters", type=int, default=500)
    _add_spec_flags(p)
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("simulate", help="compare schedules on an analytic-score model")
    p.add_argument("--model", required=True, help="mixture model JSON")
    p.add_argument("--steps", action="append", required=True, help="schedule JSON (repeatable)")
    p.add_argument("--seeds", type=int, default=256)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--csv", default=None, help="optional CSV table")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("dump-weights", help="emit the weight table of a schedule file")
    p.add_argument("--steps", required=True, help="schedule JSON")
    p.add_argument("--out", required=True, help="output weight-table JSON")
    p.set_defaults(func=_cmd_dump_weights)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: bad input file: {exc}", file=sys.stderr)
        return 2
    except (
        DomainError,
        ConstraintViolationError,
        InfeasibleError,
        OverflowError,
        FloatingPointError,
        RuntimeError,
        ValueError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry_point() -> None:
    sys.exit(main())
