"""Hop accounting and the justified-update cost model.

Every hop traveled by any message lands in exactly one ledger category:
query and first-time (response) hops are miss cost, refresh/delete/append
hops are update overhead, clear-bit hops are clear-bit overhead.  A pushed
update is justified when at least one query for its key is posted, inside
its critical window, anywhere in the virtual subtree hanging below the
receiving node; first-time updates are always justified.  Justification is
classified after the run from the full query log, since subtree membership
needs global knowledge no single node has.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from cupsim import overlay
from cupsim.overlay import KeyName, NodeId, Topology
from cupsim.protocol import RecordPush, UpdateKind


@dataclass
class MetricsLedger:
    """All counters for one simulation run."""

    miss_cost: int = 0
    update_overhead_hops: int = 0
    clearbit_overhead_hops: int = 0
    freshness_misses: int = 0
    first_time_misses: int = 0
    hit_count: int = 0
    query_count: int = 0
    first_time_pushes: int = 0
    justified_updates: int = 0
    unjustified_updates: int = 0
    dropped_messages: int = 0
    samples: dict[int, int] = field(default_factory=dict)
    query_log: list[tuple[float, NodeId, KeyName]] = field(default_factory=list)
    push_log: list[RecordPush] = field(default_factory=list)

    @property
    def miss_count(self) -> int:
        return self.freshness_misses + self.first_time_misses

    @property
    def overhead_cost(self) -> int:
        return self.update_overhead_hops + self.clearbit_overhead_hops

    @property
    def total_cost(self) -> int:
        return self.miss_cost + self.update_overhead_hops + self.clearbit_overhead_hops

    def sample_list(self) -> list[int | None]:
        """Per-query answer hop counts in posting order (None if a query was
        never answered, e.g. its key's replicas all died)."""
        return [self.samples.get(i) for i in range(self.query_count)]


def prob_justified(rate: float, window: float) -> float:
    """Probability that at least one Poisson(rate) query arrives within
    ``window`` seconds: 1 - exp(-rate * window)."""
    if rate < 0 or window < 0:
        raise ValueError("rate and window must be non-negative")
    return 1.0 - math.exp(-rate * window)


def saved_miss_overhead_ratio(cup: MetricsLedger, std: MetricsLedger) -> float | None:
    """Saved miss hops per overhead hop spent, CUP vs its same-seed
    standard-caching twin; None when the run spent no overhead."""
    overhead = cup.overhead_cost
    if overhead == 0:
        return None
    return (std.miss_cost - cup.miss_cost) / overhead


def summarize(ledger: MetricsLedger) -> dict:
    misses = ledger.miss_count
    denom = ledger.justified_updates + ledger.unjustified_updates
    return {
        "total_cost": ledger.total_cost,
        "miss_cost": ledger.miss_cost,
        "miss_count": misses,
        "freshness_misses": ledger.freshness_misses,
        "first_time_misses": ledger.first_time_misses,
        "update_overhead_hops": ledger.update_overhead_hops,
        "clearbit_overhead_hops": ledger.clearbit_overhead_hops,
        "avg_miss_latency": ledger.miss_cost / misses if misses else 0.0,
        "no_misses": misses == 0,
        "justified_fraction": ledger.justified_updates / denom if denom else 1.0,
    }


class SubtreeIndex:
    """Virtual-subtree membership for one topology: node M is in the subtree
    below N for key K iff N lies on M's query path to K's authority."""

    def __init__(self, topology: Topology):
        self.topology = topology
        self._parents: dict[KeyName, dict[NodeId, NodeId]] = {}
        self._members: dict[tuple[KeyName, NodeId], set[NodeId]] = {}

    def _parent_map(self, key: KeyName) -> dict[NodeId, NodeId]:
        parents = self._parents.get(key)
        if parents is None:
            target = overlay.hash_key(key)
            parents = {}
            for nid in self.topology.nodes:
                if not self.topology.zone_of(nid).contains(target):
                    parents[nid] = overlay.route_next_hop(self.topology, nid, target)
            self._parents[key] = parents
        return parents

    def subtree(self, key: KeyName, root: NodeId) -> set[NodeId]:
        cached = self._members.get((key, root))
        if cached is None:
            parents = self._parent_map(key)
            children: dict[NodeId, list[NodeId]] = {}
            for child, parent in parents.items():
                children.setdefault(parent, []).append(child)
            cached = set()
            stack = [root]
            while stack:
                cur = stack.pop()
                cached.add(cur)
                stack.extend(children.get(cur, ()))
            self._members[(key, root)] = cached
        return cached


def classify_justified(record: RecordPush, queries: list[tuple[float, NodeId]],
                       subtree: set[NodeId]) -> bool:
    """True iff some query in ``queries`` (time, node) falls inside the
    record's window at a node of the virtual subtree."""
    if record.kind is UpdateKind.FIRST_TIME:
        return True
    for t, node in queries:
        if t > record.window_end:
            break
        if t >= record.window_start and node in subtree:
            return True
    return False


def classify_all(ledger: MetricsLedger, topology: Topology) -> None:
    """Fill the ledger's justified/unjustified counters from its push and
    query logs.  First-time pushes were counted justified as they were sent."""
    index = SubtreeIndex(topology)
    queries_by_key: dict[KeyName, list[tuple[float, NodeId]]] = {}
    for t, node, key in ledger.query_log:
        queries_by_key.setdefault(key, []).append((t, node))
    for qs in queries_by_key.values():
        qs.sort()
    justified = ledger.first_time_pushes
    unjustified = 0
    for rec in ledger.push_log:
        qs = queries_by_key.get(rec.key, [])
        members = index.subtree(rec.key, rec.receiver) if qs else set()
        if classify_justified(rec, qs, members):
            justified += 1
        else:
            unjustified += 1
    ledger.justified_updates = justified
    ledger.unjustified_updates = unjustified
