"""Command-line entry point: ``convoffload <command> --config <file> ...``.

Exit codes: 0 success, 2 validation failure, 3 numeric mismatch,
4 infeasible or timed out without a solution, 5 I/O or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import errors
from .config import (ExperimentConfig, load_config, load_schedule_csv,
                     save_schedule_csv)
from .conv_core import random_operands
from .exec_model import run_and_verify, validate_strategy, write_trace
from .optimizer import best_heuristic, build_model, is_feasible, solve
from .report import plot_sweep, render_strategy_grid, sweep_group_sizes
from .strategies import GENERATORS, compile_schedule, s1_params

log = logging.getLogger("convoffload")

EXIT_OK, EXIT_INVALID, EXIT_MISMATCH, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5


def _solve_from_config(cfg: ExperimentConfig, k=None, budget=None):
    layer, hw = cfg.layer(), cfg.hardware()
    params = s1_params(layer, hw, cfg.nb_patches_max)
    k = k if k is not None else cfg.n_groups
    n_groups = params.k_min if k == "kmin" else int(k)
    model = build_model(layer, hw, n_groups, cfg.nb_data_reload, params.nb_patches_max)
    _, start = best_heuristic(layer, params.nb_patches_max, model)
    if not is_feasible(model, start):
        log.warning("best heuristic violates the model constraints; solving without MIP start")
        start = None
    budget = cfg.budget() if budget is None else budget
    return solve(model, mip_start=start, budget=budget,
                 polish_after=min(cfg.polish_after, budget), seed=cfg.seed)


def schedule_from_config(cfg: ExperimentConfig):
    layer = cfg.layer()
    if cfg.strategy == "csv":
        return load_schedule_csv(cfg.strategy_csv, layer)
    if cfg.strategy == "ilp":
        return _solve_from_config(cfg).schedule
    params = s1_params(layer, cfg.hardware(), cfg.nb_patches_max)
    return GENERATORS[cfg.strategy](layer, cfg.group_size or 1, params.nb_patches_max)


def _print_violations(report, stream=sys.stdout):
    for v in report.violations:
        print(f"  {v}", file=stream)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    layer, hw = cfg.layer(), cfg.hardware()
    schedule = schedule_from_config(cfg)
    strategy = compile_schedule(schedule, layer, hw, source=cfg.strategy)
    report = validate_strategy(strategy, layer, hw, cfg.nb_data_reload)
    metrics = report.metrics
    if args.trace:
        with open(args.trace, "w", encoding="utf-8", newline="\n") as fh:
            write_trace(metrics.traces, fh)
    print(f"strategy {cfg.strategy}: {len(schedule)} steps")
    print(f"{'step':>5}{'loads':>7}{'writes':>7}{'kernels':>8}{'footprint':>10}{'duration':>10}")
    for t in metrics.traces:
        rec = t.to_record()
        tag = "flush" if t.kind == "flush" else str(t.index)
        print(f"{tag:>5}{rec['loads']:>7}{rec['writes']:>7}{rec['kernel_loads']:>8}"
              f"{rec['footprint']:>10}{rec['duration']:>10g}")
    print(f"duration {metrics.duration:g}  peak footprint {metrics.peak_footprint}  "
          f"loads {metrics.load_traffic}  writes {metrics.write_traffic}")
    if not report.ok:
        print("validation failed:")
        _print_violations(report)
        return EXIT_INVALID
    x, kernels = random_operands(layer, np.random.default_rng(cfg.seed))
    run_and_verify(strategy, x, kernels, layer, hw)
    print("functional check: output matches the reference convolution")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    layer, hw = cfg.layer(), cfg.hardware()
    params = s1_params(layer, hw, cfg.nb_patches_max)
    schedule = GENERATORS[args.strategy](layer, args.group_size, params.nb_patches_max)
    save_schedule_csv(schedule, args.out)
    print(f"wrote {len(schedule)} groups to {args.out}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    if args.polish_after is not None:
        cfg.polish_after = args.polish_after
    sol = _solve_from_config(cfg, k=args.k, budget=args.budget)
    save_schedule_csv(sol.schedule, args.out)
    summary = {
        "objective": sol.objective,
        "status": sol.status,
        "wall_time": round(sol.wall_time, 3),
        "steps": len(sol.schedule),
        "mip_start_objective": sol.start_objective,
        "gain_vs_mip_start_percent": None if sol.gain is None else round(sol.gain, 3),
        "lower_bound": sol.lower_bound,
        "nodes": sol.nodes,
    }
    summary_path = Path(args.out).with_suffix(".json")
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    return EXIT_OK


def _parse_sweep(text: str) -> list[int]:
    m = re.fullmatch(r"group-size=(\d+)\.\.(\d+)", text.strip())
    if not m:
        raise errors.ParseError(f"--sweep expects group-size=<a>..<b>, got {text!r}")
    a, b = int(m.group(1)), int(m.group(2))
    if not 1 <= a <= b:
        raise errors.ParseError(f"empty or invalid sweep range {a}..{b}")
    return list(range(a, b + 1))


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    layer, hw = cfg.layer(), cfg.hardware()
    sizes = _parse_sweep(args.sweep)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    options = None
    if args.optimize:
        budget = cfg.budget() if args.budget is None else args.budget
        options = {"budget": budget, "polish_after": min(cfg.polish_after, budget),
                   "seed": cfg.seed}
    sweep, schedules = sweep_group_sizes(layer, hw, sizes, nb_data_reload=cfg.nb_data_reload,
                                         optimize=args.optimize, solver_options=options,
                                         keep_schedules=True)
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        sweep.write_csv(fh)
    plot_sweep(sweep, out / "sweep.svg")
    for (name, m), sched in sorted(schedules.items()):
        svg, text = render_strategy_grid(sched, layer, title=f"{name}, group size {m}")
        (out / f"grid_{name}_g{m}.svg").write_text(svg, encoding="utf-8")
        (out / f"grid_{name}_g{m}.txt").write_text(text, encoding="utf-8")
    for n, m in enumerate(sizes):
        line = "  ".join(f"{s}={sweep.durations[s][n]:g}" for s in sweep.durations)
        print(f"group size {m}: {line}")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    layer, hw = cfg.layer(), cfg.hardware()
    schedule = load_schedule_csv(args.strategy, layer)
    strategy = compile_schedule(schedule, layer, hw, source="csv")
    report = validate_strategy(strategy, layer, hw, cfg.nb_data_reload)
    result = report.to_dict()
    result["duration"] = report.metrics.duration
    result["peak_footprint"] = report.metrics.peak_footprint
    code = EXIT_OK
    if report.ok:
        x, kernels = random_operands(layer, np.random.default_rng(cfg.seed))
        try:
            run_and_verify(strategy, x, kernels, layer, hw)
            result["numeric_match"] = True
        except errors.MismatchError as exc:
            result["numeric_match"] = False
            result["mismatch"] = str(exc)
            code = EXIT_MISMATCH
    else:
        result["numeric_match"] = None
        code = EXIT_INVALID
    print(json.dumps(result, indent=2))
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convoffload",
        description="Simulate, generate and optimise multi-step convolution offloading strategies.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a strategy step by step and check the result")
    p.add_argument("--config", required=True)
    p.add_argument("--trace", help="write one JSON record per step to this file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate", help="write a heuristic strategy as CSV")
    p.add_argument("--strategy", required=True, choices=sorted(GENERATORS))
    p.add_argument("--group-size", type=int, default=1)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("optimize", help="search for a minimum-duration grouping")
    p.add_argument("--config", required=True)
    p.add_argument("--k", default=None, help="number of groups: kmin or an integer")
    p.add_argument("--budget", type=float, default=None, help="seconds (default: config)")
    p.add_argument("--polish-after", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("compare", help="sweep group sizes and compare strategies")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep", required=True, help="group-size=<a>..<b>")
    p.add_argument("--out", required=True)
    p.add_argument("--optimize", action="store_true", help="add the solver to the sweep")
    p.add_argument("--budget", type=float, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="validate a strategy CSV and check it numerically")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", required=True)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "k", None) not in (None, "kmin"):
        try:
            args.k = int(args.k)
        except ValueError:
            print("error: --k expects kmin or an integer", file=sys.stderr)
            return EXIT_IO
    try:
        return args.func(args)
    except (errors.StepError, errors.ScheduleError, errors.AcceleratorTooSmall) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except errors.MismatchError as exc:
        print(f"mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (errors.Infeasible, errors.SolverTimeout) as exc:
        print(f"solver: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (errors.ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
