"""Command-line front end: run experiment scenarios to CSV, validate
configuration files, and dump single-run event traces."""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from cupsim import experiments
from cupsim.experiments import SCENARIOS, desk_config, load_config_file, run_scenario
from cupsim.metrics import summarize
from cupsim.policies import Linear, Logarithmic, PushLevel, SecondChance
from cupsim.simulator import CapacityPlan, Simulation, WorkloadConfig

_SUMMARY_FIELDS = ("total_cost", "miss_cost", "miss_count", "avg_miss_latency",
                   "justified_fraction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cupsim")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment scenario and write CSV")
    _common_flags(run)
    run.add_argument("--scenario", required=True, choices=SCENARIOS)
    run.add_argument("--reps", type=int, default=1, help="seeds per sweep point")
    run.add_argument("--levels", type=_int_list,
                     help="comma-separated push levels for push_level_sweep")
    run.add_argument("--full-scale", action="store_true",
                     help="paper-scale durations and sweep ranges")
    run.add_argument("--out", required=True, help="output directory for CSV files")

    val = sub.add_parser("validate", help="check a configuration file")
    val.add_argument("--config", required=True)

    trace = sub.add_parser("trace", help="single run with an event-trace dump")
    _common_flags(trace)
    trace.add_argument("--policy", default="second_chance",
                       choices=("standard", "linear", "logarithmic",
                                "second_chance", "push_level"))
    trace.add_argument("--alpha", type=float, default=0.25)
    trace.add_argument("--push-level", type=int, default=None)
    trace.add_argument("--out", required=True)
    return parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value workload file (flags win)")
    p.add_argument("--nodes", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--keys-per-node", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--lifetime", type=float)
    p.add_argument("--seed", type=int, default=0)
    if "trace" not in p.prog:
        p.add_argument("--policy", default="second_chance",
                       choices=("standard", "linear", "logarithmic",
                                "second_chance", "push_level"))
        p.add_argument("--alpha", type=float, default=0.25)
        p.add_argument("--push-level", type=int, default=None)
    p.add_argument("--capacity-pattern", choices=("up_and_down", "once_down"))
    p.add_argument("--capacity-fraction", type=float, default=0.0)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip() != "")


def _policy_from_args(args) -> object:
    name = getattr(args, "policy", "second_chance")
    if name == "standard":
        return PushLevel(0)
    if name == "push_level":
        return PushLevel(args.push_level)
    if name == "linear":
        return Linear(args.alpha)
    if name == "logarithmic":
        return Logarithmic(args.alpha)
    return SecondChance()


def _config_from_args(args, full_scale: bool = False) -> WorkloadConfig:
    overrides = {}
    if args.config:
        overrides.update(load_config_file(args.config))
    cfg = desk_config(full_scale=full_scale, **overrides)
    flag_map = {"nodes": "n_nodes", "rate": "query_rate",
                "keys_per_node": "keys_per_node", "replicas": "replicas_per_key",
                "lifetime": "replica_lifetime", "seed": "rng_seed"}
    updates = {field: getattr(args, flag)
               for flag, field in flag_map.items()
               if getattr(args, flag, None) is not None}
    return replace(cfg, **updates)


def _fail_validation(errors: list[str]) -> int:
    for err in errors:
        print(f"error: {err}", file=sys.stderr)
    return 2


def cmd_run(args) -> int:
    try:
        base = _config_from_args(args, full_scale=args.full_scale)
    except (ValueError, OSError) as exc:
        return _fail_validation(str(exc).split("; "))
    errors = base.validate()
    if errors:
        return _fail_validation(errors)
    table = run_scenario(args.scenario, base, reps=args.reps,
                         full_scale=args.full_scale, levels=args.levels)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{args.scenario}.csv")
    table.write(path)
    _print_table(args.scenario, table)
    print(f"wrote {path}")
    return 0


def _print_table(name: str, table) -> None:
    keys = [c for c in table.columns
            if c not in _SUMMARY_FIELDS and not c.startswith("std_")
            and c not in ("freshness_misses", "first_time_misses", "no_misses",
                          "update_overhead_hops", "clearbit_overhead_hops",
                          "miss_cost_ratio", "saved_miss_overhead_ratio",
                          "total_cost_ratio")]
    header = keys + ["total_cost", "miss_cost", "total_cost_ratio"]
    print(name)
    print("  " + "  ".join(f"{h:>18s}" for h in header))
    for row in table.rows:
        cells = []
        for h in header:
            v = row.get(h)
            if isinstance(v, float):
                cells.append(f"{v:>18.4g}")
            else:
                cells.append(f"{str(v):>18s}")
        print("  " + "  ".join(cells))


def cmd_validate(args) -> int:
    try:
        overrides = load_config_file(args.config)
    except OSError as exc:
        return _fail_validation([f"config: {exc}"])
    except ValueError as exc:
        return _fail_validation(str(exc).split("; "))
    cfg = desk_config(**overrides)
    errors = cfg.validate()
    if errors:
        return _fail_validation(errors)
    print("configuration ok")
    return 0


def cmd_trace(args) -> int:
    try:
        cfg = replace(_config_from_args(args), trace=True)
    except (ValueError, OSError) as exc:
        return _fail_validation(str(exc).split("; "))
    errors = cfg.validate()
    if errors:
        return _fail_validation(errors)
    plan = None
    if args.capacity_pattern:
        plan = CapacityPlan(args.capacity_pattern, args.capacity_fraction)
    result = Simulation(cfg, _policy_from_args(args), capacity_plan=plan).run()
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "trace.txt")
    with open(path, "w") as fh:
        for t, node, kind, key in result.trace:
            fh.write(f"{t:.3f}\t{node}\t{kind}\t{key}\n")
    stats = summarize(result.ledger)
    for name in _SUMMARY_FIELDS:
        print(f"{name}: {stats[name]}")
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "validate":
        return cmd_validate(args)
    return cmd_trace(args)


if __name__ == "__main__":
    sys.exit(main())
