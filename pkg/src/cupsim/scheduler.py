"""Outgoing update-channel queues with capacity-proportional dispatch.

A node at full capacity forwards pushes immediately.  A throttled node
buffers them in per-neighbor queues and drains them at one-second ticks: the
tick budget is the capacity fraction times the number of updates enqueued
since the last tick (fractional allowance carries over as credit), split
across neighbors in proportion to queue length.  Expired updates are pruned
rather than sent, and queued updates whose target neighbor has since cleared
its interest bit are dropped at dispatch time.  First-time updates are query
responses and are never subject to the budget.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

from cupsim.overlay import KeyName, NodeId
from cupsim.protocol import Update, UpdateKind

InterestCheck = Callable[[NodeId, KeyName], bool]


@dataclass(frozen=True)
class Capacity:
    """Dispatch allowance: ``fraction`` of the updates received per tick may
    be pushed on; None means unthrottled."""

    fraction: float | None = None

    def __post_init__(self):
        if self.fraction is not None and self.fraction < 0:
            raise ValueError("capacity fraction must be >= 0")

    @property
    def unlimited(self) -> bool:
        return self.fraction is None


@dataclass(frozen=True)
class PriorityOrder:
    """Within-queue ordering: by update kind, then optionally by how close
    the carried entries are to expiring."""

    kinds: tuple[UpdateKind, ...] = (UpdateKind.FIRST_TIME, UpdateKind.DELETE,
                                     UpdateKind.REFRESH, UpdateKind.APPEND)
    expiry_proximity_first: bool = False

    def __post_init__(self):
        if sorted(k.value for k in self.kinds) != sorted(k.value for k in UpdateKind):
            raise ValueError("priority order must be a permutation of the four update kinds")

    def rank(self, kind: UpdateKind) -> int:
        return self.kinds.index(kind)


DEFAULT_ORDER = PriorityOrder()


@dataclass
class QueuedUpdate:
    update: Update
    hops: int
    enqueued_at: float

    def expiry(self) -> float:
        if self.update.kind is UpdateKind.DELETE:
            return math.inf
        return max((e.expires_at for e in self.update.entries), default=self.enqueued_at)


def allocate(budget: int, lengths: dict[NodeId, int]) -> dict[NodeId, int]:
    """Split ``budget`` dispatches across queues proportionally to their
    lengths, largest-remainder rounding; empty queues get zero."""
    total = sum(lengths.values())
    budget = min(budget, total)
    if budget <= 0 or total == 0:
        return {n: 0 for n in lengths}
    shares = {n: budget * l / total for n, l in lengths.items()}
    out = {n: int(math.floor(s)) for n, s in shares.items()}
    leftover = budget - sum(out.values())
    by_remainder = sorted(lengths, key=lambda n: (-(shares[n] - out[n]), n))
    for n in by_remainder[:leftover]:
        out[n] += 1
    return out


def reorder(queue: list[QueuedUpdate], order: PriorityOrder, now: float
            ) -> list[QueuedUpdate]:
    """Drop expired updates and stably sort by kind rank (and, if enabled,
    by ascending time to expiry within a kind)."""
    alive = [q for q in queue if not q.update.is_expired(now)]
    if order.expiry_proximity_first:
        return sorted(alive, key=lambda q: (order.rank(q.update.kind), q.expiry()))
    return sorted(alive, key=lambda q: order.rank(q.update.kind))


class NodeChannels:
    """All outgoing update queues of one node plus its capacity state."""

    def __init__(self, neighbors: Iterable[NodeId], order: PriorityOrder = DEFAULT_ORDER):
        self.queues: dict[NodeId, list[QueuedUpdate]] = {n: [] for n in neighbors}
        self.order = order
        self.capacity = Capacity(None)
        self.credit = 0.0
        self.enqueued_since_tick = 0

    @property
    def unlimited(self) -> bool:
        return self.capacity.unlimited

    def set_capacity(self, fraction: float | None) -> None:
        self.capacity = Capacity(fraction)
        if self.capacity.unlimited:
            self.credit = 0.0
            self.enqueued_since_tick = 0

    def set_neighbors(self, neighbors: Iterable[NodeId]) -> None:
        old = self.queues
        self.queues = {n: old.get(n, []) for n in neighbors}

    def enqueue(self, to: NodeId, update: Update, hops: int, now: float) -> None:
        self.queues[to].append(QueuedUpdate(update, hops, now))
        self.enqueued_since_tick += 1

    def total_queued(self) -> int:
        return sum(len(q) for q in self.queues.values())

    def _prune(self, now: float) -> None:
        for nbr in self.queues:
            self.queues[nbr] = reorder(self.queues[nbr], self.order, now)

    def dispatch(self, budgets: dict[NodeId, int], now: float,
                 interest_ok: InterestCheck) -> list[tuple[NodeId, Update, int]]:
        """Send up to the budgeted number of updates per neighbor, head of
        queue first.  First-time updates ignore the budget entirely; updates
        whose interest bit was cleared while they waited are dropped and do
        not consume budget."""
        sent: list[tuple[NodeId, Update, int]] = []
        for nbr in list(self.queues):
            queue = self.queues[nbr]
            allowance = budgets.get(nbr, 0)
            kept: list[QueuedUpdate] = []
            for q in queue:
                if q.update.kind is UpdateKind.FIRST_TIME:
                    sent.append((nbr, q.update, q.hops))
                    continue
                if not interest_ok(nbr, q.update.key):
                    continue  # subscriber bowed out while this waited
                if allowance > 0:
                    sent.append((nbr, q.update, q.hops))
                    allowance -= 1
                else:
                    kept.append(q)
            self.queues[nbr] = kept
        return sent

    def tick(self, now: float, interest_ok: InterestCheck
             ) -> list[tuple[NodeId, Update, int]]:
        """One scheduler tick for a throttled node: prune, accrue credit from
        this tick's arrivals, allocate and dispatch."""
        self._prune(now)
        if self.capacity.unlimited:
            return self.flush(now, interest_ok)
        self.credit += self.capacity.fraction * self.enqueued_since_tick
        self.enqueued_since_tick = 0
        budget = int(math.floor(self.credit + 1e-9))
        lengths = {n: len(q) for n, q in self.queues.items()}
        sent = self.dispatch(allocate(budget, lengths), now, interest_ok)
        non_ft = sum(1 for _, u, _ in sent if u.kind is not UpdateKind.FIRST_TIME)
        self.credit -= non_ft
        if self.total_queued() == 0:
            self.credit = min(self.credit, 1.0)  # no banking across idle spells
        return sent

    def flush(self, now: float, interest_ok: InterestCheck
              ) -> list[tuple[NodeId, Update, int]]:
        """Dispatch everything still alive (used when capacity is restored)."""
        self._prune(now)
        budgets = {n: len(q) for n, q in self.queues.items()}
        sent = self.dispatch(budgets, now, interest_ok)
        self.credit = 0.0
        self.enqueued_since_tick = 0
        return sent
