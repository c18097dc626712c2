"""Independent reference computations used to check the simulator.

The standard-caching oracle replays a query stream against plain
cache-expiration arithmetic: per (node, key) it tracks cached entry
timestamps, a pending flag, and who is owed a response, and it derives the
authority's directory state directly from replica birth times with floor
arithmetic instead of events.  No protocol, policy or scheduler code is
involved.
"""
from __future__ import annotations

import heapq
from collections import defaultdict

import numpy as np

from cupsim import overlay
from cupsim.simulator import WorkloadConfig, generate_queries, replica_lifecycle


def oracle_workload(config: WorkloadConfig):
    """The same deterministic streams the simulator derives from its seed."""
    n_keys = (config.total_keys if config.total_keys is not None
              else config.n_nodes * config.keys_per_node)
    keys = [f"k{i}" for i in range(n_keys)]
    topology = overlay.build_grid(config.n_nodes)
    births = replica_lifecycle(np.random.default_rng([config.rng_seed, 4]),
                               config, keys)
    queries = generate_queries(np.random.default_rng([config.rng_seed, 0]),
                               np.random.default_rng([config.rng_seed, 1]),
                               np.random.default_rng([config.rng_seed, 2]),
                               config.query_rate, config.query_start,
                               config.query_duration, topology.nodes, keys,
                               config.key_distribution, config.zipf_s,
                               config.repeat_affinity, config.burstiness,
                               config.burst_window)
    return topology, keys, births, queries


def standard_caching_oracle(config: WorkloadConfig):
    """Expected (per-query answer hops, total miss cost) under plain
    expiration-based caching: responses cached along the reverse path,
    concurrent queries for a key coalesced at each node."""
    topology, _keys, births, queries = oracle_workload(config)
    lifetime = config.replica_lifetime
    hop = config.per_hop_latency
    born: dict[str, dict[str, float]] = defaultdict(dict)
    for t, key, replica in births:
        born[key][replica] = t

    auth_cache: dict[str, int] = {}
    next_hop_cache: dict[tuple[int, str], int] = {}

    def authority(key: str) -> int:
        nid = auth_cache.get(key)
        if nid is None:
            nid = overlay.authority_of(topology, key)
            auth_cache[key] = nid
        return nid

    def next_hop(nid: int, key: str) -> int:
        got = next_hop_cache.get((nid, key))
        if got is None:
            got = overlay.route_next_hop(topology, nid, overlay.hash_key(key))
            next_hop_cache[(nid, key)] = got
        return got

    def directory_entries(key: str, now: float) -> dict[str, float]:
        # replicas refresh their entry at every expiration while scheduled,
        # i.e. at t0 + k*lifetime up to the simulation horizon
        out = {}
        for replica, t0 in born[key].items():
            if now >= t0:
                set_at = t0 + int((now - t0) // lifetime) * lifetime
                if set_at > config.sim_duration:
                    set_at = t0 + int((config.sim_duration - t0) // lifetime) * lifetime
                out[replica] = set_at
        return out

    entries: dict[tuple[int, str], dict[str, float]] = defaultdict(dict)
    pending: set[tuple[int, str]] = set()
    owed: dict[tuple[int, str], list[int]] = defaultdict(list)
    waiters: dict[tuple[int, str], list[int]] = defaultdict(list)

    samples: dict[int, int] = {}
    miss_cost = 0

    heap: list = []
    seq = 0

    def push(at, kind, data):
        nonlocal seq
        heapq.heappush(heap, (at, seq, kind, data))
        seq += 1

    for qid, (t, node, key) in enumerate(queries):
        push(t, "post", (qid, node, key))

    def fresh_subset(nid: int, key: str, now: float) -> dict[str, float]:
        if nid == authority(key):
            return directory_entries(key, now)
        return {r: sa for r, sa in entries[(nid, key)].items()
                if now - sa <= lifetime}

    def ask(nid, key, now, qid, frm):
        nonlocal miss_cost
        fresh = fresh_subset(nid, key, now)
        if fresh:
            if frm is None:
                samples[qid] = 0
            else:
                miss_cost += 1  # the response leg back to the asker
                push(now + hop, "resp", (frm, key, dict(fresh), 1))
            return
        slot = (nid, key)
        if frm is None:
            waiters[slot].append(qid)
        elif frm not in owed[slot]:
            owed[slot].append(frm)
        if slot not in pending:
            pending.add(slot)
            miss_cost += 1  # the forwarded query leg
            push(now + hop, "ask", (next_hop(nid, key), key, nid))

    while heap:
        now, _s, kind, data = heapq.heappop(heap)
        if kind == "post":
            qid, node, key = data
            ask(node, key, now, qid, None)
        elif kind == "ask":
            nid, key, frm = data
            ask(nid, key, now, None, frm)
        else:  # resp
            nid, key, got, hops = data
            slot = (nid, key)
            for replica, sa in got.items():
                if now - sa <= lifetime:
                    entries[slot][replica] = sa
            pending.discard(slot)
            for qid in waiters.pop(slot, ()):
                samples[qid] = hops
            for nbr in owed.pop(slot, ()):
                miss_cost += 1
                push(now + hop, "resp", (nbr, key, dict(got), hops + 1))

    return samples, miss_cost
