"""Simulator for controlled update propagation in structured P2P caches."""

from cupsim.metrics import MetricsLedger, prob_justified, saved_miss_overhead_ratio, summarize
from cupsim.overlay import (
    HandoverPolicy,
    Point,
    Topology,
    Zone,
    authority_of,
    build_grid,
    hash_key,
    node_join,
    node_leave,
    query_path,
    route_next_hop,
)
from cupsim.policies import Linear, Logarithmic, PushLevel, SecondChance
from cupsim.simulator import CapacityPlan, Simulation, WorkloadConfig, run_simulation

__all__ = [
    "CapacityPlan",
    "HandoverPolicy",
    "Linear",
    "Logarithmic",
    "MetricsLedger",
    "Point",
    "PushLevel",
    "SecondChance",
    "Simulation",
    "Topology",
    "WorkloadConfig",
    "Zone",
    "authority_of",
    "build_grid",
    "hash_key",
    "node_join",
    "node_leave",
    "prob_justified",
    "query_path",
    "route_next_hop",
    "run_simulation",
    "saved_miss_overhead_ratio",
    "summarize",
]

__version__ = "0.1.0"
