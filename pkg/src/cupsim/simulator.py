"""Deterministic seeded discrete-event engine.

Drives a query workload and replica lifecycle over the overlay + protocol
state machines, delivers messages with a fixed per-hop latency, applies
capacity schedules and membership changes, and accounts every hop into a
metrics ledger.  A run is a pure function of (config, policy, scenario,
seed): the master seed is split into independent named streams (query
timing, posting-node choice, key choice, capacity node selection, replica
births) so changing one knob never perturbs the others.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from cupsim import metrics, overlay, protocol
from cupsim.metrics import MetricsLedger
from cupsim.overlay import HandoverPolicy, KeyName, NodeId, Topology
from cupsim.policies import CutoffPolicy
from cupsim.protocol import (
    AnswerLocal,
    ClearBitMsg,
    IndexEntry,
    Node,
    PushUpdate,
    QueryMsg,
    RecordPush,
    SendClearBit,
    SendFirstTime,
    SendQuery,
    Update,
    UpdateKind,
    UpdateMsg,
)
from cupsim.scheduler import NodeChannels

_STREAMS = {"queries": 0, "node-selection": 1, "key-selection": 2,
            "capacity-node-selection": 3, "replica-births": 4}


@dataclass(frozen=True)
class WorkloadConfig:
    n_nodes: int = 1024
    keys_per_node: int = 1
    total_keys: int | None = None  # overrides n_nodes * keys_per_node when set
    query_rate: float = 1.0
    key_distribution: str = "uniform"
    zipf_s: float = 1.0
    repeat_affinity: float = 0.0  # chance a node re-posts its own last key
    burstiness: float = 0.0  # chance a query re-draws one of the recent keys
    burst_window: int = 100  # how many recent queries feed the re-draw pool
    replicas_per_key: int = 1
    replica_lifetime: float = 300.0
    sim_duration: float = 22000.0
    query_duration: float = 3000.0
    query_start: float = 300.0
    per_hop_latency: float = 0.05
    rng_seed: int = 0
    trigger_mode: str = protocol.REPLICA_INDEPENDENT
    trace: bool = False

    def validate(self) -> list[str]:
        errors = []
        n = self.n_nodes
        if n < 8 or n > 4096 or n & (n - 1):
            errors.append(f"n_nodes: must be a power of two in [8, 4096], got {n}")
        if self.keys_per_node < 1:
            errors.append("keys_per_node: must be >= 1")
        if self.total_keys is not None and self.total_keys < 1:
            errors.append("total_keys: must be >= 1 when set")
        if self.query_rate < 0:
            errors.append("query_rate: must be >= 0")
        if self.key_distribution not in ("uniform", "zipf"):
            errors.append(f"key_distribution: unknown value {self.key_distribution!r}")
        if self.zipf_s <= 0:
            errors.append("zipf_s: must be > 0")
        if not 0.0 <= self.repeat_affinity <= 1.0:
            errors.append("repeat_affinity: must be in [0, 1]")
        if not 0.0 <= self.burstiness <= 1.0:
            errors.append("burstiness: must be in [0, 1]")
        if self.burst_window < 1:
            errors.append("burst_window: must be >= 1")
        if self.replicas_per_key < 1:
            errors.append("replicas_per_key: must be >= 1")
        if self.replica_lifetime <= 0:
            errors.append("replica_lifetime: must be > 0")
        if self.sim_duration <= 0:
            errors.append("sim_duration: must be > 0")
        if self.query_duration < 0:
            errors.append("query_duration: must be >= 0")
        if self.query_start < 0:
            errors.append("query_start: must be >= 0")
        if self.query_start + self.query_duration > self.sim_duration:
            errors.append("query_duration: querying must end within sim_duration")
        if self.per_hop_latency < 0:
            errors.append("per_hop_latency: must be >= 0")
        if self.trigger_mode not in (protocol.NAIVE, protocol.REPLICA_INDEPENDENT):
            errors.append(f"trigger_mode: unknown value {self.trigger_mode!r}")
        return errors


@dataclass(frozen=True)
class CapacityPlan:
    """Schedule of outgoing-capacity reductions.

    ``up_and_down``: after a warm-up inside the query window, a random
    ``affected_share`` of nodes runs at ``fraction`` capacity for the reduced
    interval, recovers, and after a stabilization gap a fresh random set is
    drawn; repeats while querying lasts.  ``once_down`` reduces one set after
    the warm-up and never restores it.  ``constant`` throttles from t=0.
    """

    pattern: str
    fraction: float
    affected_share: float = 0.2
    warmup: float = 300.0
    reduced: float = 600.0
    stabilize: float = 300.0

    def validate(self) -> list[str]:
        errors = []
        if self.pattern not in ("constant", "once_down", "up_and_down"):
            errors.append(f"capacity pattern: unknown value {self.pattern!r}")
        if not 0.0 <= self.fraction <= 1.0:
            errors.append("capacity fraction: must be in [0, 1]")
        if not 0.0 < self.affected_share <= 1.0:
            errors.append("affected_share: must be in (0, 1]")
        return errors


# Scenario hooks: extra events injected into a run by tests and experiments.


@dataclass(frozen=True)
class JoinHook:
    at: float
    splitting: NodeId
    new_id: NodeId
    handover: HandoverPolicy = HandoverPolicy.COPY


@dataclass(frozen=True)
class LeaveHook:
    at: float
    node: NodeId
    graceful: bool = True
    handover: HandoverPolicy = HandoverPolicy.COPY


@dataclass(frozen=True)
class DeathHook:
    at: float
    key: KeyName
    replica: str


@dataclass(frozen=True)
class QueryHook:
    at: float
    node: NodeId
    key: KeyName


@dataclass(frozen=True)
class CapacityHook:
    at: float
    node: NodeId
    fraction: float | None


ScenarioHook = JoinHook | LeaveHook | DeathHook | QueryHook | CapacityHook


@dataclass
class SimResult:
    ledger: MetricsLedger
    trace: list[tuple[float, NodeId, str, KeyName]]
    messages: list[tuple[float, NodeId, NodeId, object]]
    topology: Topology


def generate_queries(rng_times, rng_nodes, rng_keys, rate: float, start: float,
                     duration: float, nodes: list[NodeId], keys: list[KeyName],
                     distribution: str = "uniform", zipf_s: float = 1.0,
                     repeat_affinity: float = 0.0, burstiness: float = 0.0,
                     burst_window: int = 100
                     ) -> list[tuple[float, NodeId, KeyName]]:
    """Poisson query stream: exponential inter-arrivals at network rate
    ``rate``, posting node uniform, key per the chosen distribution.

    Two locality knobs, both off by default: ``repeat_affinity`` is client
    re-fetch behavior (a node asks again for the last key it posted);
    ``burstiness`` makes keys run hot in episodes (a query re-draws one of
    the last ``burst_window`` queried keys, so distinct nodes pile onto the
    same keys for a while, flash-crowd style).
    """
    out: list[tuple[float, NodeId, KeyName]] = []
    if rate <= 0 or duration <= 0:
        return out
    pmf = None
    if distribution == "zipf":
        ranks = np.arange(1, len(keys) + 1, dtype=float)
        pmf = ranks ** -zipf_s
        pmf /= pmf.sum()
    t = start
    end = start + duration
    n_nodes, n_keys = len(nodes), len(keys)
    last_key: dict[NodeId, KeyName] = {}
    recent: list[KeyName] = []
    while True:
        t += rng_times.exponential(1.0 / rate)
        if t >= end:
            return out
        node = nodes[int(rng_nodes.integers(0, n_nodes))]
        key = None
        if repeat_affinity and node in last_key and rng_keys.random() < repeat_affinity:
            key = last_key[node]
        elif burstiness and recent and rng_keys.random() < burstiness:
            key = recent[int(rng_keys.integers(0, len(recent)))]
        if key is None:
            if pmf is None:
                key = keys[int(rng_keys.integers(0, n_keys))]
            else:
                key = keys[int(rng_keys.choice(n_keys, p=pmf))]
        last_key[node] = key
        recent.append(key)
        if len(recent) > burst_window:
            recent.pop(0)
        out.append((t, node, key))


def replica_lifecycle(rng, config: WorkloadConfig, keys: list[KeyName]
                      ) -> list[tuple[float, KeyName, str]]:
    """Birth events: every replica is born before querying starts, at a
    uniform random instant of the warm-up window (staggered births stagger
    the refresh cadence too, since refreshes fire at each expiration)."""
    births = []
    for key in keys:
        for j in range(config.replicas_per_key):
            t = float(rng.uniform(0.0, config.query_start)) if config.query_start > 0 else 0.0
            births.append((t, key, f"{key}#r{j}"))
    births.sort()
    return births


class _SimRouting:
    """Topology-backed routing with per-key caches (cleared on churn)."""

    def __init__(self, topology: Topology):
        self.topology = topology
        self._auth: dict[KeyName, NodeId] = {}
        self._next: dict[tuple[NodeId, KeyName], NodeId] = {}
        self._dist: dict[tuple[NodeId, KeyName], int] = {}

    def rebind(self, topology: Topology) -> None:
        self.topology = topology
        self._auth.clear()
        self._next.clear()
        self._dist.clear()

    def authority(self, key: KeyName) -> NodeId:
        nid = self._auth.get(key)
        if nid is None:
            nid = overlay.authority_of(self.topology, key)
            self._auth[key] = nid
        return nid

    def next_hop(self, frm: NodeId, key: KeyName) -> NodeId:
        hop = self._next.get((frm, key))
        if hop is None:
            hop = overlay.route_next_hop(self.topology, frm, overlay.hash_key(key))
            self._next[(frm, key)] = hop
        return hop

    def distance(self, node: NodeId, key: KeyName) -> int:
        d = self._dist.get((node, key))
        if d is None:
            d = len(overlay.query_path(self.topology, node, key)) - 1
            self._dist[(node, key)] = d
        return d


class Simulation:
    """One seeded run of the protocol over a grid overlay."""

    def __init__(self, config: WorkloadConfig, policy: CutoffPolicy,
                 capacity_plan: CapacityPlan | None = None,
                 hooks: Iterable[ScenarioHook] = (),
                 topology: Topology | None = None):
        errors = config.validate()
        if capacity_plan is not None:
            errors += capacity_plan.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self.config = config
        self.policy = policy
        self.capacity_plan = capacity_plan
        self.hooks = list(hooks)
        self.topology = topology if topology is not None else overlay.build_grid(config.n_nodes)
        self.routing = _SimRouting(self.topology)
        self.ledger = MetricsLedger()
        self.trace: list[tuple[float, NodeId, str, KeyName]] = []
        self.messages: list[tuple[float, NodeId, NodeId, object]] = []
        n_keys = (config.total_keys if config.total_keys is not None
                  else config.n_nodes * config.keys_per_node)
        self.keys = [f"k{i}" for i in range(n_keys)]
        self.nodes: dict[NodeId, Node] = {}
        self.channels: dict[NodeId, NodeChannels] = {}
        for nid in self.topology.nodes:
            self._make_node(nid)
        self.replica_alive: dict[tuple[KeyName, str], bool] = {}
        self.throttled: set[NodeId] = set()
        self._heap: list = []
        self._seq = 0
        self._next_qid = 0
        self._tick_pending = False
        self.now = 0.0

    # -- plumbing -------------------------------------------------------------

    def _make_node(self, nid: NodeId) -> Node:
        node = Node(nid, self.topology.neighbors_of(nid), self.routing,
                    self.policy, self.config.trigger_mode)
        self.nodes[nid] = node
        self.channels[nid] = NodeChannels(self.topology.neighbors_of(nid))
        return node

    def _rng(self, stream: str):
        return np.random.default_rng([self.config.rng_seed, _STREAMS[stream]])

    def _schedule(self, at: float, kind: str, data: tuple) -> None:
        heapq.heappush(self._heap, (at, self._seq, kind, data))
        self._seq += 1

    def _trace(self, at: float, node: NodeId, kind: str, key: KeyName) -> None:
        if self.config.trace:
            self.trace.append((at, node, kind, key))

    def _log_msg(self, at: float, frm: NodeId, to: NodeId, msg) -> None:
        if self.config.trace:
            self.messages.append((at, frm, to, msg))

    def _interest_ok(self, nid: NodeId):
        node = self.nodes[nid]
        return lambda nbr, key: node.interest_bit(key, nbr)

    # -- message emission (each send charges exactly one ledger category) ------

    def _send_query(self, frm: NodeId, to: NodeId, key: KeyName, now: float) -> None:
        self.ledger.miss_cost += 1
        self._trace(now, frm, "query_sent", key)
        self._log_msg(now, frm, to, QueryMsg(key))
        self._schedule(now + self.config.per_hop_latency, "arrival", (to, frm, QueryMsg(key)))

    def _send_first_time(self, frm: NodeId, to: NodeId, update: Update, hops: int,
                         now: float) -> None:
        self.ledger.miss_cost += 1
        self.ledger.first_time_pushes += 1  # response legs are always justified
        self._trace(now, frm, "first_time_sent", update.key)
        msg = UpdateMsg(update, hops)
        self._log_msg(now, frm, to, msg)
        self._schedule(now + self.config.per_hop_latency, "arrival", (to, frm, msg))

    def _send_update(self, frm: NodeId, to: NodeId, update: Update, hops: int,
                     now: float) -> None:
        self.ledger.update_overhead_hops += 1
        self._trace(now, frm, "update_sent", update.key)
        msg = UpdateMsg(update, hops)
        self._log_msg(now, frm, to, msg)
        self._schedule(now + self.config.per_hop_latency, "arrival", (to, frm, msg))

    def _send_clear_bit(self, frm: NodeId, to: NodeId, key: KeyName, now: float) -> None:
        self.ledger.clearbit_overhead_hops += 1
        self._trace(now, frm, "clearbit_sent", key)
        self._log_msg(now, frm, to, ClearBitMsg(key))
        self._schedule(now + self.config.per_hop_latency, "arrival", (to, frm, ClearBitMsg(key)))

    def _apply_actions(self, nid: NodeId, actions, now: float) -> None:
        for a in actions:
            if isinstance(a, SendQuery):
                self._send_query(nid, a.to, a.key, now)
            elif isinstance(a, SendFirstTime):
                self._send_first_time(nid, a.to, a.update, a.hops, now)
            elif isinstance(a, SendClearBit):
                self._send_clear_bit(nid, a.to, a.key, now)
            elif isinstance(a, PushUpdate):
                self._push(nid, a, now)
            elif isinstance(a, AnswerLocal):
                self.ledger.samples[a.query_id] = a.hops
                self._trace(now, nid, "answered", "")
            elif isinstance(a, RecordPush):
                self.ledger.push_log.append(a)

    def _push(self, nid: NodeId, action: PushUpdate, now: float) -> None:
        channels = self.channels[nid]
        if channels.unlimited:
            self._send_update(nid, action.to, action.update, action.hops, now)
        else:
            channels.enqueue(action.to, action.update, action.hops, now)
            self._trace(now, nid, "update_enqueued", action.update.key)

    def _emit_dispatched(self, nid: NodeId, sends, now: float) -> None:
        for to, update, hops in sends:
            if update.kind is UpdateKind.FIRST_TIME:
                self._send_first_time(nid, to, update, hops, now)
            else:
                self._send_update(nid, to, update, hops, now)

    # -- event handlers ---------------------------------------------------------

    def _post_query(self, qid: int, nid: NodeId, key: KeyName, now: float) -> None:
        node = self.nodes.get(nid)
        if node is None:
            self.ledger.dropped_messages += 1  # poster departed; query lost
            return
        self.ledger.query_count += 1
        kind = node.classify_query(key, now)
        if kind == "hit":
            self.ledger.hit_count += 1
        elif kind == "freshness":
            self.ledger.freshness_misses += 1
        else:
            self.ledger.first_time_misses += 1
        self.ledger.query_log.append((now, nid, key))
        self._trace(now, nid, "query_posted", key)
        self._apply_actions(nid, node.handle_query(key, None, now, qid), now)

    def _arrival(self, to: NodeId, frm: NodeId, msg, now: float) -> None:
        node = self.nodes.get(to)
        if node is None:
            self.ledger.dropped_messages += 1
            self._trace(now, to, "message_dropped", getattr(msg, "key", ""))
            return
        if isinstance(msg, QueryMsg):
            actions = node.handle_query(msg.key, frm, now)
        elif isinstance(msg, UpdateMsg):
            actions = node.handle_update(msg.update, frm, msg.hops, now)
        else:
            actions = node.handle_clear_bit(msg.key, frm)
        self._apply_actions(to, actions, now)

    def _replica_birth(self, key: KeyName, replica: str, now: float) -> None:
        self.replica_alive[(key, replica)] = True
        auth = self.routing.authority(key)
        self._trace(now, auth, "replica_birth", key)
        self._apply_actions(auth, self.nodes[auth].replica_birth(
            key, replica, self.config.replica_lifetime, now), now)
        nxt = now + self.config.replica_lifetime
        if nxt <= self.config.sim_duration:
            self._schedule(nxt, "refresh", (key, replica))

    def _replica_refresh(self, key: KeyName, replica: str, now: float) -> None:
        if not self.replica_alive.get((key, replica)):
            return
        auth = self.routing.authority(key)
        self._trace(now, auth, "replica_refresh", key)
        self._apply_actions(auth, self.nodes[auth].replica_refresh(
            key, replica, self.config.replica_lifetime, now), now)
        nxt = now + self.config.replica_lifetime
        if nxt <= self.config.sim_duration:
            self._schedule(nxt, "refresh", (key, replica))

    def _replica_death(self, key: KeyName, replica: str, now: float) -> None:
        if not self.replica_alive.get((key, replica)):
            return
        self.replica_alive[(key, replica)] = False
        auth = self.routing.authority(key)
        self._trace(now, auth, "replica_death", key)
        self._apply_actions(auth, self.nodes[auth].replica_death(key, replica, now), now)

    def _ensure_tick(self, now: float) -> None:
        if not self._tick_pending and self.throttled:
            nxt = now + 1.0
            if nxt <= self.config.sim_duration:
                self._schedule(nxt, "captick", ())
                self._tick_pending = True

    def _captick(self, now: float) -> None:
        self._tick_pending = False
        for nid in sorted(self.throttled):
            sends = self.channels[nid].tick(now, self._interest_ok(nid))
            self._emit_dispatched(nid, sends, now)
        self._ensure_tick(now)

    def _capchange(self, nid: NodeId, fraction: float | None, now: float) -> None:
        if nid not in self.channels:
            return
        self._trace(now, nid, "capacity_change", "")
        self.channels[nid].set_capacity(fraction)
        if fraction is None:
            self.throttled.discard(nid)
            self._emit_dispatched(nid, self.channels[nid].flush(now, self._interest_ok(nid)), now)
        else:
            self.throttled.add(nid)
            self._ensure_tick(now)

    # -- membership events --------------------------------------------------------

    def _node_join(self, splitting: NodeId, new_id: NodeId, handover: HandoverPolicy,
                   now: float) -> None:
        topo, patches = overlay.node_join(self.topology, splitting, new_id)
        self.topology = topo
        self.routing.rebind(topo)
        new_node = self._make_node(new_id)
        for patch in patches:
            if patch.node == new_id:
                continue
            self.nodes[patch.node].apply_patch(patch.old_neighbors, patch.new_neighbors)
            self.channels[patch.node].set_neighbors(patch.new_neighbors)
        self._trace(now, new_id, "node_join", "")
        split_node = self.nodes[splitting]
        new_zone = topo.zone_of(new_id)
        moved = [k for k in split_node.directory if new_zone.contains(overlay.hash_key(k))]
        for key in moved:
            entries = split_node.directory.pop(key)
            old_ks = split_node.owned_interest.pop(key, None)
            if handover is HandoverPolicy.NONE:
                continue  # new owner starts cold; replicas restock it at the
                # next refresh and downstream caches expire meanwhile
            new_node.directory[key] = dict(entries)
            if old_ks is None:
                continue
            nks = new_node._owned_state(key)
            leftover: list[NodeId] = []
            for nbr in old_ks.interested(split_node.neighbors):
                if nbr == new_id:
                    continue
                slot = new_node._slot.get(nbr)
                if slot is not None:
                    nks.interest[slot] = True
                else:
                    leftover.append(nbr)
            if leftover:
                # the old owner keeps relaying to subscribers the new owner
                # cannot reach, and subscribes itself upstream
                cks = split_node._new_state()
                cks.entries = dict(entries)
                for nbr in leftover:
                    cks.interest[split_node._slot[nbr]] = True
                split_node.cache[key] = cks
                nks.interest[new_node._slot[splitting]] = True
            if old_ks.owed or old_ks.local_waiters:
                nks.owed = [n for n in old_ks.owed if n in new_node._slot]
                nks.local_waiters = list(old_ks.local_waiters)

    def _node_leave(self, leaving: NodeId, graceful: bool, handover: HandoverPolicy,
                    now: float) -> None:
        try:
            topo, patches, absorber = overlay.node_leave(self.topology, leaving)
        except overlay.TopologyError:
            self._trace(now, leaving, "node_leave_deferred", "")
            return
        left_node = self.nodes.pop(leaving)
        self.channels.pop(leaving)
        self.throttled.discard(leaving)
        self.topology = topo
        self.routing.rebind(topo)
        for patch in patches:
            self.nodes[patch.node].apply_patch(patch.old_neighbors, patch.new_neighbors)
            self.channels[patch.node].set_neighbors(patch.new_neighbors)
        self._trace(now, leaving, "node_leave", "")
        if not (graceful and handover is HandoverPolicy.COPY):
            return  # entries at dependents just expire, as in plain caching
        absorber_node = self.nodes[absorber]
        for key, entries in left_node.directory.items():
            target = absorber_node.directory.setdefault(key, {})
            for replica, entry in entries.items():
                mine = target.get(replica)
                if mine is None or entry.set_at > mine.set_at:
                    target[replica] = entry  # duplicates collapse to the fresher copy
            merged = absorber_node._owned_state(key)
            stale = absorber_node.cache.pop(key, None)  # owned now: keep sets disjoint
            for source in (left_node.owned_interest.get(key), stale):
                if source is None:
                    continue
                for nbr in source.interested(left_node.neighbors if source is not stale
                                             else absorber_node.neighbors):
                    slot = absorber_node._slot.get(nbr)
                    if slot is not None:
                        merged.interest[slot] = True
            if stale is not None:
                for replica, entry in stale.entries.items():
                    mine = target.get(replica)
                    if mine is None or entry.set_at > mine.set_at:
                        target[replica] = entry
        for key, ks in left_node.cache.items():
            if key in absorber_node.directory:
                continue
            mine = absorber_node.cache.get(key)
            if mine is None:
                mine = absorber_node._new_state()
                absorber_node.cache[key] = mine
            for replica, entry in ks.entries.items():
                kept = mine.entries.get(replica)
                if kept is None or entry.set_at > kept.set_at:
                    mine.entries[replica] = entry
            for nbr in ks.interested(left_node.neighbors):
                slot = absorber_node._slot.get(nbr)
                if slot is not None:
                    mine.interest[slot] = True

    # -- run ------------------------------------------------------------------------

    def run(self) -> SimResult:
        cfg = self.config
        for t, key, replica in replica_lifecycle(self._rng("replica-births"), cfg, self.keys):
            self._schedule(t, "birth", (key, replica))
        stream = generate_queries(self._rng("queries"), self._rng("node-selection"),
                                  self._rng("key-selection"), cfg.query_rate,
                                  cfg.query_start, cfg.query_duration,
                                  self.topology.nodes, self.keys,
                                  cfg.key_distribution, cfg.zipf_s,
                                  cfg.repeat_affinity, cfg.burstiness,
                                  cfg.burst_window)
        for t, nid, key in stream:
            self._schedule(t, "query", (self._next_qid, nid, key))
            self._next_qid += 1
        for hook in self.hooks:
            if isinstance(hook, QueryHook):
                self._schedule(hook.at, "query", (self._next_qid, hook.node, hook.key))
                self._next_qid += 1
            elif isinstance(hook, DeathHook):
                self._schedule(hook.at, "death", (hook.key, hook.replica))
            elif isinstance(hook, CapacityHook):
                self._schedule(hook.at, "capchange", (hook.node, hook.fraction))
            elif isinstance(hook, JoinHook):
                self._schedule(hook.at, "join", (hook.splitting, hook.new_id, hook.handover))
            elif isinstance(hook, LeaveHook):
                self._schedule(hook.at, "leave", (hook.node, hook.graceful, hook.handover))
        for at, nid, fraction in self._capacity_events():
            self._schedule(at, "capchange", (nid, fraction))
        self._schedule(cfg.query_start + cfg.query_duration, "end_querying", ())
        self._schedule(cfg.sim_duration, "end_simulation", ())

        while self._heap:
            at, _seq, kind, data = heapq.heappop(self._heap)
            self.now = at
            if kind == "arrival":
                self._arrival(data[0], data[1], data[2], at)
            elif kind == "query":
                self._post_query(data[0], data[1], data[2], at)
            elif kind == "refresh":
                self._replica_refresh(data[0], data[1], at)
            elif kind == "birth":
                self._replica_birth(data[0], data[1], at)
            elif kind == "death":
                self._replica_death(data[0], data[1], at)
            elif kind == "captick":
                self._captick(at)
            elif kind == "capchange":
                self._capchange(data[0], data[1], at)
            elif kind == "join":
                self._node_join(data[0], data[1], data[2], at)
            elif kind == "leave":
                self._node_leave(data[0], data[1], data[2], at)
            else:  # end markers, trace only
                self._trace(at, -1, kind, "")

        metrics.classify_all(self.ledger, self.topology)
        return SimResult(self.ledger, self.trace, self.messages, self.topology)

    def _capacity_events(self) -> list[tuple[float, NodeId, float | None]]:
        plan = self.capacity_plan
        if plan is None:
            return []
        rng = self._rng("capacity-node-selection")
        cfg = self.config
        node_ids = list(self.topology.nodes)
        count = max(1, round(plan.affected_share * len(node_ids)))

        def pick() -> list[NodeId]:
            chosen = rng.choice(len(node_ids), size=count, replace=False)
            return [node_ids[int(i)] for i in sorted(chosen)]

        events: list[tuple[float, NodeId, float | None]] = []
        if plan.pattern == "constant":
            for nid in pick():
                events.append((0.0, nid, plan.fraction))
        elif plan.pattern == "once_down":
            for nid in pick():
                events.append((cfg.query_start + plan.warmup, nid, plan.fraction))
        else:  # up_and_down
            t = cfg.query_start + plan.warmup
            end = cfg.query_start + cfg.query_duration
            while t < end:
                for nid in pick():
                    events.append((t, nid, plan.fraction))
                    events.append((t + plan.reduced, nid, None))
                t += plan.reduced + plan.stabilize
        return events


def run_simulation(config: WorkloadConfig, policy: CutoffPolicy,
                   capacity_plan: CapacityPlan | None = None,
                   hooks: Iterable[ScenarioHook] = ()) -> SimResult:
    """Build and run one simulation; identical arguments always produce an
    identical ledger and trace."""
    return Simulation(config, policy, capacity_plan, hooks).run()
