"""Scenario runners reproducing the headline cost/latency comparisons.

Every sweep point pairs a protocol run with a standard-caching twin run
(push level 0) on the same seed; ratios are always computed against that
twin.  Desk-scale defaults keep any scenario within a few minutes: a 256
node grid, a query window of 3000 s inside a 4200 s simulation, a small hot
key set, and a client re-fetch affinity that concentrates queries the way
cache workloads do.  Sweep points are independent; set CUP_SIM_THREADS > 1
to run them in parallel processes (rows are assembled in sweep order either
way, so output files are reproducible byte for byte).
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

from cupsim import metrics
from cupsim.metrics import MetricsLedger, saved_miss_overhead_ratio, summarize
from cupsim.policies import (
    CutoffPolicy,
    Linear,
    Logarithmic,
    PushLevel,
    SecondChance,
)
from cupsim.protocol import NAIVE, REPLICA_INDEPENDENT
from cupsim.simulator import CapacityPlan, Simulation, WorkloadConfig

SCENARIOS = ("push_level_sweep", "policy_table", "size_scaling",
             "replica_sweep", "capacity_updown", "capacity_oncedown")

DEFAULT_ALPHAS = (0.25, 0.10, 0.01)
DEFAULT_LOG_ALPHAS = (0.5, 0.25, 0.10)
DEFAULT_LEVELS = (0, 2, 4, 6, 8, 10, 12, 14, 16)
DEFAULT_REPLICA_COUNTS = (1, 2, 5, 10, 50)
DEFAULT_FRACTIONS = (0.0, 0.25, 0.5, 1.0)
FULL_SCALE_KS = tuple(range(3, 13))
DESK_KS = (3, 4, 5, 6, 7, 8, 9)


def desk_config(n_nodes: int = 256, query_rate: float = 1.0, seed: int = 0,
                full_scale: bool = False, **overrides) -> WorkloadConfig:
    """Desk-scale base workload; ``full_scale=True`` restores the long
    22000 s / 3000 s timeline."""
    base = dict(
        n_nodes=n_nodes,
        total_keys=max(4, n_nodes // 32),
        query_rate=query_rate,
        replica_lifetime=200.0,
        repeat_affinity=0.85,
        query_start=300.0,
        query_duration=3000.0,
        sim_duration=4200.0,
        rng_seed=seed,
    )
    if full_scale:
        base.update(sim_duration=22000.0, query_duration=3000.0,
                    replica_lifetime=300.0)
    base.update(overrides)
    return WorkloadConfig(**base)


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[dict] = field(default_factory=list)

    def add(self, row: dict) -> None:
        self.rows.append(row)

    def to_csv(self) -> str:
        def cell(v) -> str:
            if v is None:
                return ""
            if isinstance(v, bool):
                return str(int(v))
            if isinstance(v, float):
                return f"{v:.6g}"
            return str(v)

        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(cell(row.get(c)) for c in self.columns))
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


@dataclass(frozen=True)
class _Job:
    config: WorkloadConfig
    policy: CutoffPolicy
    plan: CapacityPlan | None = None


def _execute(job: _Job) -> MetricsLedger:
    return Simulation(job.config, job.policy, capacity_plan=job.plan).run().ledger


def _run_jobs(jobs: list[_Job]) -> list[MetricsLedger]:
    workers = int(os.environ.get("CUP_SIM_THREADS", "1"))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_execute, jobs))
    return [_execute(j) for j in jobs]


def _twin_jobs(configs: list[WorkloadConfig]) -> dict[int, _Job]:
    return {cfg.rng_seed: _Job(cfg, PushLevel(0)) for cfg in configs}


_SUMMARY_COLUMNS = ["total_cost", "miss_cost", "miss_count", "freshness_misses",
                    "first_time_misses", "update_overhead_hops",
                    "clearbit_overhead_hops", "avg_miss_latency", "no_misses",
                    "justified_fraction"]
_RATIO_COLUMNS = ["total_cost_ratio", "miss_cost_ratio", "std_total_cost",
                  "std_avg_miss_latency", "saved_miss_overhead_ratio"]


def _row(keys: dict, ledger: MetricsLedger, twin: MetricsLedger) -> dict:
    row = dict(keys)
    row.update(summarize(ledger))
    row["total_cost_ratio"] = (ledger.total_cost / twin.total_cost
                               if twin.total_cost else None)
    row["miss_cost_ratio"] = (ledger.miss_cost / twin.miss_cost
                              if twin.miss_cost else None)
    row["std_total_cost"] = twin.total_cost
    row["std_avg_miss_latency"] = summarize(twin)["avg_miss_latency"]
    row["saved_miss_overhead_ratio"] = saved_miss_overhead_ratio(ledger, twin)
    return row


def run_push_level_sweep(base: WorkloadConfig, levels=DEFAULT_LEVELS,
                         reps: int = 1) -> ResultTable:
    """Total and miss cost versus the depth updates are pushed to; level 0
    is the standard-caching twin itself."""
    if 0 not in levels:
        raise ValueError("push-level sweep must include level 0")
    configs = [replace(base, rng_seed=base.rng_seed + r) for r in range(reps)]
    twins = _run_jobs(list(_twin_jobs(configs).values()))
    twin_by_seed = {cfg.rng_seed: led for cfg, led in zip(configs, twins)}
    jobs = [_Job(cfg, PushLevel(lvl)) for cfg in configs for lvl in levels if lvl != 0]
    results = iter(_run_jobs(jobs))
    table = ResultTable(["push_level", "seed"] + _SUMMARY_COLUMNS + _RATIO_COLUMNS)
    for cfg in configs:
        twin = twin_by_seed[cfg.rng_seed]
        for lvl in levels:
            led = twin if lvl == 0 else next(results)
            table.add(_row({"push_level": lvl, "seed": cfg.rng_seed}, led, twin))
    table.rows.sort(key=lambda r: (r["push_level"], r["seed"]))
    return table


def default_policy_grid(alphas=DEFAULT_ALPHAS, log_alphas=DEFAULT_LOG_ALPHAS
                        ) -> list[CutoffPolicy]:
    grid: list[CutoffPolicy] = [PushLevel(0)]
    grid += [Linear(a) for a in alphas]
    grid += [Logarithmic(a) for a in log_alphas]
    grid.append(SecondChance())
    return grid


def run_policy_table(base: WorkloadConfig, policies: list[CutoffPolicy] | None = None,
                     reps: int = 1) -> ResultTable:
    """Total cost per cut-off policy, normalized by the same-seed
    standard-caching twin."""
    if policies is None:
        policies = default_policy_grid()
    configs = [replace(base, rng_seed=base.rng_seed + r) for r in range(reps)]
    twins = _run_jobs(list(_twin_jobs(configs).values()))
    twin_by_seed = {cfg.rng_seed: led for cfg, led in zip(configs, twins)}
    rest = [p for p in policies if p.label() != "push_level_0"]
    jobs = [_Job(cfg, pol) for cfg in configs for pol in rest]
    results = iter(_run_jobs(jobs))
    table = ResultTable(["policy", "seed"] + _SUMMARY_COLUMNS + _RATIO_COLUMNS)
    for cfg in configs:
        twin = twin_by_seed[cfg.rng_seed]
        table.add(_row({"policy": "push_level_0", "seed": cfg.rng_seed}, twin, twin))
        for pol in rest:
            table.add(_row({"policy": pol.label(), "seed": cfg.rng_seed},
                           next(results), twin))
    table.rows.sort(key=lambda r: (r["policy"], r["seed"]))
    return table


def run_size_scaling(base: WorkloadConfig, ks=(3, 5, 7, 9), reps: int = 1
                     ) -> ResultTable:
    """Second-chance vs standard caching across network sizes n = 2^k."""
    table = ResultTable(["k", "n_nodes", "seed"] + _SUMMARY_COLUMNS + _RATIO_COLUMNS)
    jobs = []
    points = []
    for k in ks:
        n = 2 ** k
        for r in range(reps):
            cfg = replace(base, n_nodes=n, total_keys=max(4, n // 32),
                          rng_seed=base.rng_seed + r)
            points.append((k, n, cfg))
            jobs.append(_Job(cfg, SecondChance()))
            jobs.append(_Job(cfg, PushLevel(0)))
    results = _run_jobs(jobs)
    for (k, n, cfg), i in zip(points, range(0, len(results), 2)):
        led, twin = results[i], results[i + 1]
        table.add(_row({"k": k, "n_nodes": n, "seed": cfg.rng_seed}, led, twin))
    table.rows.sort(key=lambda r: (r["k"], r["seed"]))
    return table


def run_replica_sweep(base: WorkloadConfig, replica_counts=DEFAULT_REPLICA_COUNTS,
                      modes=(NAIVE, REPLICA_INDEPENDENT), reps: int = 1
                      ) -> ResultTable:
    """Effect of replica count on the second-chance cut-off, naive trigger
    versus replica-independent trigger."""
    table = ResultTable(["replicas", "trigger_mode", "seed"]
                        + _SUMMARY_COLUMNS + _RATIO_COLUMNS)
    jobs = []
    points = []
    for count in replica_counts:
        for r in range(reps):
            twin_cfg = replace(base, replicas_per_key=count, rng_seed=base.rng_seed + r)
            jobs.append(_Job(twin_cfg, PushLevel(0)))
            points.append((count, "twin", twin_cfg))
            for mode in modes:
                cfg = replace(twin_cfg, trigger_mode=mode)
                jobs.append(_Job(cfg, SecondChance()))
                points.append((count, mode, cfg))
    results = _run_jobs(jobs)
    twin_of: dict[tuple[int, int], MetricsLedger] = {}
    for (count, mode, cfg), led in zip(points, results):
        if mode == "twin":
            twin_of[(count, cfg.rng_seed)] = led
    for (count, mode, cfg), led in zip(points, results):
        if mode == "twin":
            continue
        twin = twin_of[(count, cfg.rng_seed)]
        table.add(_row({"replicas": count, "trigger_mode": mode,
                        "seed": cfg.rng_seed}, led, twin))
    table.rows.sort(key=lambda r: (r["replicas"], r["trigger_mode"], r["seed"]))
    return table


def run_capacity(base: WorkloadConfig, pattern: str,
                 fractions=DEFAULT_FRACTIONS, affected_share: float = 0.20,
                 reps: int = 1) -> ResultTable:
    """Total cost under reduced outgoing update capacity at a random subset
    of nodes, for the up-and-down or once-down-always-down schedule."""
    if pattern not in ("up_and_down", "once_down"):
        raise ValueError(f"unknown capacity pattern {pattern!r}")
    configs = [replace(base, rng_seed=base.rng_seed + r) for r in range(reps)]
    twins = _run_jobs(list(_twin_jobs(configs).values()))
    twin_by_seed = {cfg.rng_seed: led for cfg, led in zip(configs, twins)}
    jobs = []
    points = []
    for frac in fractions:
        plan = CapacityPlan(pattern, frac, affected_share)
        for cfg in configs:
            jobs.append(_Job(cfg, SecondChance(), plan))
            points.append((frac, cfg))
    results = _run_jobs(jobs)
    table = ResultTable(["pattern", "capacity_fraction", "seed"]
                        + _SUMMARY_COLUMNS + _RATIO_COLUMNS)
    for (frac, cfg), led in zip(points, results):
        table.add(_row({"pattern": pattern, "capacity_fraction": frac,
                        "seed": cfg.rng_seed}, led, twin_by_seed[cfg.rng_seed]))
    table.rows.sort(key=lambda r: (r["capacity_fraction"], r["seed"]))
    return table


def run_scenario(name: str, base: WorkloadConfig, reps: int = 1,
                 full_scale: bool = False, levels=None) -> ResultTable:
    if name == "push_level_sweep":
        return run_push_level_sweep(base, levels or DEFAULT_LEVELS, reps)
    if name == "policy_table":
        return run_policy_table(base, reps=reps)
    if name == "size_scaling":
        ks = FULL_SCALE_KS if full_scale else (3, 5, 7, 9)
        return run_size_scaling(base, ks=ks, reps=reps)
    if name == "replica_sweep":
        counts = DEFAULT_REPLICA_COUNTS + (100,) if full_scale else DEFAULT_REPLICA_COUNTS
        return run_replica_sweep(base, replica_counts=counts, reps=reps)
    if name == "capacity_updown":
        return run_capacity(base, "up_and_down", reps=reps)
    if name == "capacity_oncedown":
        return run_capacity(base, "once_down", reps=reps)
    raise ValueError(f"unknown scenario {name!r}")


# Flat key=value config files mirroring WorkloadConfig field names.

_CONFIG_FIELDS = {f.name: f for f in fields(WorkloadConfig)}
_BOOL_STRINGS = {"true": True, "false": False, "1": True, "0": False}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into WorkloadConfig keyword arguments,
    with field-level errors for unknown names or bad values."""
    out: dict = {}
    errors: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'name = value', got {raw.strip()!r}")
            continue
        name, value = (part.strip() for part in line.split("=", 1))
        spec = _CONFIG_FIELDS.get(name)
        if spec is None:
            errors.append(f"{name}: unknown configuration field")
            continue
        try:
            out[name] = _coerce(name, value)
        except ValueError as exc:
            errors.append(str(exc))
    if errors:
        raise ValueError("; ".join(errors))
    return out


def _coerce(name: str, value: str):
    kind = _CONFIG_FIELDS[name].type
    if name == "total_keys":
        return None if value.lower() in ("none", "") else int(value)
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            got = _BOOL_STRINGS.get(value.lower())
            if got is None:
                raise ValueError
            return got
    except ValueError:
        raise ValueError(f"{name}: cannot parse {value!r} as {kind}") from None
    return value


def load_config_file(path: str) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read())
