"""Per-node cache-maintenance state machine.

Each node caches index entries for keys it does not own, coalesces
concurrent queries behind a pending-first-update flag, tracks which
neighbors want updates in a per-key interest bit vector, applies and
forwards the four update kinds, and emits clear-bit messages when a key is
no longer worth subscribing to.

Handlers mutate only their own node's state and return a list of action
records (sends, queued pushes, answers) for the caller to carry out, so the
state machine can be driven directly in tests without an event loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Protocol

from cupsim import policies
from cupsim.overlay import KeyName, NodeId
from cupsim.policies import CutoffPolicy, PolicyContext

ReplicaId = str

NAIVE = "naive"
REPLICA_INDEPENDENT = "replica_independent"


class UpdateKind(Enum):
    FIRST_TIME = "first_time"
    DELETE = "delete"
    REFRESH = "refresh"
    APPEND = "append"


@dataclass(frozen=True)
class IndexEntry:
    """A (key, replica address) pair with a lifetime set at ``set_at``."""

    key: KeyName
    replica: ReplicaId
    lifetime: float
    set_at: float

    def __post_init__(self):
        if self.lifetime <= 0:
            raise ValueError("lifetime must be positive")

    @property
    def expires_at(self) -> float:
        return self.set_at + self.lifetime

    def is_fresh(self, now: float) -> bool:
        # expired strictly when the age exceeds the lifetime; equality is fresh
        return now - self.set_at <= self.lifetime


@dataclass(frozen=True)
class Update:
    kind: UpdateKind
    key: KeyName
    entries: tuple[IndexEntry, ...]
    origin_replica: ReplicaId | None
    created_at: float
    delete_replica: ReplicaId | None = None

    def __post_init__(self):
        if self.kind is UpdateKind.DELETE:
            if self.delete_replica is None or self.entries:
                raise ValueError("a delete names exactly one replica and carries no entries")
        elif self.kind is UpdateKind.FIRST_TIME and not self.entries:
            raise ValueError("a first-time update carries at least one entry")

    def is_expired(self, now: float) -> bool:
        if self.kind is UpdateKind.DELETE:
            return False  # removals stay actionable; applying late is a no-op
        return all(not e.is_fresh(now) for e in self.entries)


# Wire messages (in-memory; one query and one update channel per neighbor).


@dataclass(frozen=True)
class QueryMsg:
    key: KeyName


@dataclass(frozen=True)
class UpdateMsg:
    update: Update
    hops: int  # hops traveled once this message arrives


@dataclass(frozen=True)
class ClearBitMsg:
    key: KeyName


Message = QueryMsg | UpdateMsg | ClearBitMsg


# Actions handed back to the event loop.


@dataclass(frozen=True)
class SendQuery:
    to: NodeId
    key: KeyName


@dataclass(frozen=True)
class SendFirstTime:
    to: NodeId
    update: Update
    hops: int


@dataclass(frozen=True)
class SendClearBit:
    to: NodeId
    key: KeyName


@dataclass(frozen=True)
class PushUpdate:
    """A non-response update bound for a neighbor's update channel; subject
    to capacity scheduling."""

    to: NodeId
    update: Update
    hops: int


@dataclass(frozen=True)
class AnswerLocal:
    query_id: int
    hops: int


@dataclass(frozen=True)
class RecordPush:
    """Metrics record for one received pushed update (justification window)."""

    kind: UpdateKind
    key: KeyName
    receiver: NodeId
    window_start: float
    window_end: float


Action = SendQuery | SendFirstTime | SendClearBit | PushUpdate | AnswerLocal | RecordPush


class Routing(Protocol):
    def next_hop(self, frm: NodeId, key: KeyName) -> NodeId: ...

    def distance(self, node: NodeId, key: KeyName) -> int: ...


@dataclass
class KeyState:
    """Per-key bookkeeping at one node."""

    entries: dict[ReplicaId, IndexEntry] = field(default_factory=dict)
    pending_first_update: bool = False
    interest: list[bool] = field(default_factory=list)
    owed: list[NodeId] = field(default_factory=list)
    local_waiters: list[int] = field(default_factory=list)
    popularity: int = 0
    zero_intervals: int = 0
    trigger_replica: ReplicaId | None = None
    per_replica_last_update: dict[ReplicaId, float] = field(default_factory=dict)

    def fresh_entries(self, now: float) -> tuple[IndexEntry, ...]:
        return tuple(e for e in self.entries.values() if e.is_fresh(now))

    def interested(self, neighbors: list[NodeId]) -> list[NodeId]:
        return [neighbors[i] for i, bit in enumerate(self.interest) if bit]


def apply_update(state: KeyState, update: Update, now: float) -> None:
    """Fold a non-expired update into the key's entry set."""
    if update.kind is UpdateKind.DELETE:
        state.entries.pop(update.delete_replica, None)
        if state.trigger_replica == update.delete_replica:
            state.trigger_replica = None  # re-designate on the next update
        if update.origin_replica is not None:
            state.per_replica_last_update[update.origin_replica] = now
        return
    for e in update.entries:
        if e.is_fresh(now):
            state.entries[e.replica] = e
            state.per_replica_last_update[e.replica] = now


def popularity_tick(state: KeyState, update: Update, mode: str) -> bool:
    """Decide whether this update arrival triggers a popularity evaluation.

    Naive mode triggers on every arrival; replica-independent mode only on
    updates from the first replica this node ever saw for the key, so the
    popularity measure is unaffected by how many replicas exist.  First-time
    updates (query responses) trigger in both modes.
    """
    if state.trigger_replica is None:
        first = update.origin_replica
        if first is None and update.entries:
            first = update.entries[0].replica
        state.trigger_replica = first
        return True
    if mode == NAIVE or update.kind is UpdateKind.FIRST_TIME:
        return True
    return update.origin_replica == state.trigger_replica


def _justification_window(state: KeyState | None, update: Update, now: float
                          ) -> tuple[float, float]:
    """Critical interval during which a query must arrive for this pushed
    update to pay for itself: for a refresh, from the old expiration of the
    cached entry to the new one; for appends and deletes, from apply time to
    the affected entry's expiration."""
    if update.kind is UpdateKind.DELETE:
        old = state.entries.get(update.delete_replica) if state else None
        return (now, old.expires_at if old else now)
    new_end = max((e.expires_at for e in update.entries), default=now)
    if update.kind is UpdateKind.REFRESH and state is not None:
        starts = [state.entries[e.replica].expires_at
                  for e in update.entries if e.replica in state.entries]
        if starts:
            return (min(starts), new_end)
    return (now, new_end)


class Node:
    """One overlay node: local index directory for owned keys, cache and
    interest bookkeeping for the rest."""

    def __init__(self, nid: NodeId, neighbors: Iterable[NodeId], routing: Routing,
                 policy: CutoffPolicy, trigger_mode: str = REPLICA_INDEPENDENT):
        self.nid = nid
        self.neighbors: list[NodeId] = list(neighbors)
        self._slot = {n: i for i, n in enumerate(self.neighbors)}
        self.routing = routing
        self.policy = policy
        self.trigger_mode = trigger_mode
        self.directory: dict[KeyName, dict[ReplicaId, IndexEntry]] = {}
        self.cache: dict[KeyName, KeyState] = {}
        self.owned_interest: dict[KeyName, KeyState] = {}

    # -- helpers ------------------------------------------------------------

    def _new_state(self) -> KeyState:
        return KeyState(interest=[False] * len(self.neighbors))

    def _owned_state(self, key: KeyName) -> KeyState:
        ks = self.owned_interest.get(key)
        if ks is None:
            ks = self._new_state()
            self.owned_interest[key] = ks
        return ks

    def _set_interest(self, ks: KeyState, source: NodeId) -> None:
        ks.interest[self._slot[source]] = True

    def _add_waiter(self, ks: KeyState, source: NodeId | None, query_id: int | None) -> None:
        if source is None:
            ks.local_waiters.append(query_id)
        elif source not in ks.owed:
            ks.owed.append(source)

    def _fresh_directory(self, key: KeyName, now: float) -> tuple[IndexEntry, ...]:
        return tuple(e for e in self.directory.get(key, {}).values() if e.is_fresh(now))

    def owns(self, key: KeyName) -> bool:
        return key in self.directory

    def interest_bit(self, key: KeyName, nbr: NodeId) -> bool:
        ks = self.cache.get(key)
        if ks is None:
            ks = self.owned_interest.get(key)
        slot = self._slot.get(nbr)
        if ks is None or slot is None or slot >= len(ks.interest):
            return False
        return ks.interest[slot]

    def classify_query(self, key: KeyName, now: float) -> str:
        """'hit', 'freshness' (entries present but expired) or 'first_time'."""
        if key in self.directory:
            entries = self.directory[key]
        else:
            ks = self.cache.get(key)
            entries = ks.entries if ks else {}
        if not entries:
            return "first_time"
        if any(e.is_fresh(now) for e in entries.values()):
            return "hit"
        return "freshness"

    # -- query handling -----------------------------------------------------

    def handle_query(self, key: KeyName, source: NodeId | None, now: float,
                     query_id: int | None = None) -> list[Action]:
        """Serve, coalesce or forward one query.

        ``source`` is the asking neighbor, or None for a local client (whose
        ``query_id`` is parked until a fresh answer exists).
        """
        if key in self.directory:
            ks = self._owned_state(key)
            policies.on_query(ks)
            if source is not None:
                self._set_interest(ks, source)
            fresh = self._fresh_directory(key, now)
            if fresh:
                return [self._respond(key, source, query_id, fresh, now)]
            # nothing alive to answer with; park the asker until a replica
            # event restocks the directory
            self._add_waiter(ks, source, query_id)
            return []

        ks = self.cache.get(key)
        if ks is None:
            ks = self._new_state()
            self.cache[key] = ks
        policies.on_query(ks)
        if source is not None:
            self._set_interest(ks, source)
        fresh = ks.fresh_entries(now)
        if fresh:
            return [self._respond(key, source, query_id, fresh, now)]
        self._add_waiter(ks, source, query_id)
        if ks.pending_first_update:
            return []  # burst coalesced behind the query already in flight
        ks.pending_first_update = True
        return [SendQuery(self.routing.next_hop(self.nid, key), key)]

    def _respond(self, key: KeyName, source: NodeId | None, query_id: int | None,
                 fresh: tuple[IndexEntry, ...], now: float) -> Action:
        if source is None:
            return AnswerLocal(query_id, 0)
        update = Update(UpdateKind.FIRST_TIME, key, fresh, None, now)
        return SendFirstTime(source, update, 1)

    # -- update handling ----------------------------------------------------

    def handle_update(self, update: Update, frm: NodeId, hops: int, now: float
                      ) -> list[Action]:
        key = update.key
        actions: list[Action] = []
        ks = self.cache.get(key)
        if update.kind is not UpdateKind.FIRST_TIME:
            w0, w1 = _justification_window(ks, update, now)
            actions.append(RecordPush(update.kind, key, self.nid, w0, w1))
        if key in self.directory:
            return actions  # owners take replica events, not neighbor pushes
        if update.is_expired(now):
            return actions  # arrived too late: not applied, not forwarded
        if ks is None:
            # never asked and not waiting: refuse the stream outright
            actions.append(SendClearBit(frm, key))
            return actions

        if ks.pending_first_update and update.kind is not UpdateKind.DELETE:
            # the answer we were waiting for (a racing refresh serves as well)
            apply_update(ks, update, now)
            ks.pending_first_update = False
            if popularity_tick(ks, update, self.trigger_mode):
                policies.on_trigger_update(ks)
            fresh = ks.fresh_entries(now)
            response = Update(UpdateKind.FIRST_TIME, key, fresh, None, now)
            for nbr in ks.owed:
                actions.append(SendFirstTime(nbr, response, hops + 1))
            for qid in ks.local_waiters:
                actions.append(AnswerLocal(qid, hops))
            ks.owed.clear()
            ks.local_waiters.clear()
            return actions

        tick = popularity_tick(ks, update, self.trigger_mode)
        pop_before = ks.popularity
        if tick:
            policies.on_trigger_update(ks)
        interested = ks.interested(self.neighbors)
        if not interested and not ks.pending_first_update:
            if tick:
                ctx = PolicyContext(self.routing.distance(self.nid, key),
                                    pop_before, ks.zero_intervals)
                if not self.policy.should_continue(ctx):
                    actions.append(SendClearBit(frm, key))
                    return actions  # cut off: cached entries stay and expire
            apply_update(ks, update, now)
            return actions

        apply_update(ks, update, now)
        if update.kind is not UpdateKind.FIRST_TIME:
            for nbr in interested:
                if nbr == frm:
                    continue  # a stale bit for the sender must not echo
                if self.policy.allows_push_to(self.routing.distance(nbr, key)):
                    actions.append(PushUpdate(nbr, update, hops + 1))
        return actions

    # -- clear-bit handling ---------------------------------------------------

    def handle_clear_bit(self, key: KeyName, frm: NodeId) -> list[Action]:
        slot = self._slot.get(frm)
        if slot is None:
            return []
        if key in self.directory:
            ks = self.owned_interest.get(key)
            if ks is not None:
                ks.interest[slot] = False
            return []
        ks = self.cache.get(key)
        if ks is None:
            return []
        ks.interest[slot] = False
        if any(ks.interest) or ks.pending_first_update or ks.local_waiters or ks.owed:
            return []
        ctx = PolicyContext(self.routing.distance(self.nid, key),
                            ks.popularity, ks.zero_intervals)
        if self.policy.should_continue(ctx):
            return []
        return [SendClearBit(self.routing.next_hop(self.nid, key), key)]

    # -- authority-side replica events ---------------------------------------

    def replica_birth(self, key: KeyName, replica: ReplicaId, lifetime: float,
                      now: float) -> list[Action]:
        entry = IndexEntry(key, replica, lifetime, now)
        self.directory.setdefault(key, {})[replica] = entry
        return self._authority_propagate(key, UpdateKind.APPEND, entry, now)

    def replica_refresh(self, key: KeyName, replica: ReplicaId, lifetime: float,
                        now: float) -> list[Action]:
        entry = IndexEntry(key, replica, lifetime, now)
        self.directory.setdefault(key, {})[replica] = entry
        return self._authority_propagate(key, UpdateKind.REFRESH, entry, now)

    def replica_death(self, key: KeyName, replica: ReplicaId, now: float) -> list[Action]:
        self.directory.get(key, {}).pop(replica, None)
        update = Update(UpdateKind.DELETE, key, (), replica, now, delete_replica=replica)
        return self._push_to_interested(key, update, now)

    def _authority_propagate(self, key: KeyName, kind: UpdateKind, entry: IndexEntry,
                             now: float) -> list[Action]:
        actions: list[Action] = []
        ks = self.owned_interest.get(key)
        if ks is not None and (ks.owed or ks.local_waiters):
            # askers parked while the directory was empty get answered first
            fresh = self._fresh_directory(key, now)
            response = Update(UpdateKind.FIRST_TIME, key, fresh, None, now)
            for nbr in ks.owed:
                actions.append(SendFirstTime(nbr, response, 1))
            for qid in ks.local_waiters:
                actions.append(AnswerLocal(qid, 0))
            ks.owed.clear()
            ks.local_waiters.clear()
        update = Update(kind, key, (entry,), entry.replica, now)
        actions.extend(self._push_to_interested(key, update, now))
        return actions

    def _push_to_interested(self, key: KeyName, update: Update, now: float) -> list[Action]:
        ks = self.owned_interest.get(key)
        if ks is None:
            return []
        return [PushUpdate(nbr, update, 1) for nbr in ks.interested(self.neighbors)
                if self.policy.allows_push_to(self.routing.distance(nbr, key))]

    # -- membership maintenance -----------------------------------------------

    def apply_patch(self, old_neighbors: tuple[NodeId, ...],
                    new_neighbors: tuple[NodeId, ...]) -> None:
        """Resize and remap every per-key interest vector after a neighbor
        change; bits follow neighbor identity, ex-neighbors are dropped and
        new neighbors start clear."""
        self.neighbors = list(new_neighbors)
        self._slot = {n: i for i, n in enumerate(self.neighbors)}
        for ks in list(self.cache.values()) + list(self.owned_interest.values()):
            old_bits = dict(zip(old_neighbors, ks.interest))
            ks.interest = [old_bits.get(n, False) for n in new_neighbors]
            ks.owed = [n for n in ks.owed if n in self._slot]
