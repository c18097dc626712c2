"""Cut-off policies: per-node rules deciding when to stop receiving updates.

Each node tracks, per key, the number of queries seen since the last
triggering update (``popularity``) and how many consecutive trigger intervals
passed with zero queries.  On a trigger-update arrival the node asks its
policy whether the key is still worth subscribing to; a ``False`` answer
means it sends a clear-bit message upstream and falls back to plain
expiration-based caching for that key.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PolicyContext:
    """Inputs to a cut-off decision at one node for one key."""

    distance_to_authority: int
    popularity: int
    consecutive_zero_updates: int


class CutoffPolicy:
    name = "base"

    def should_continue(self, ctx: PolicyContext) -> bool:
        """True = keep receiving updates; False = cut off (send clear-bit)."""
        raise NotImplementedError

    def allows_push_to(self, receiver_distance: int) -> bool:
        """Sender-side gate: may an update be pushed to a node at this
        distance from the authority?  Only push-level policies restrict it."""
        return True

    def label(self) -> str:
        return self.name


@dataclass(frozen=True)
class PushLevel(CutoffPolicy):
    """Propagate updates only to nodes within ``level`` hops of the
    authority; ``level=0`` is standard expiration-based caching and
    ``level=None`` is an unrestricted all-out push."""

    level: int | None

    name = "push_level"

    def should_continue(self, ctx: PolicyContext) -> bool:
        if self.level is None:
            return True
        return ctx.distance_to_authority <= self.level

    def allows_push_to(self, receiver_distance: int) -> bool:
        if self.level is None:
            return True
        return receiver_distance <= self.level

    def label(self) -> str:
        return f"push_level_{'inf' if self.level is None else self.level}"


@dataclass(frozen=True)
class Linear(CutoffPolicy):
    """Popular iff at least alpha * D queries arrived since the last
    update, D being the node's hop distance from the authority."""

    alpha: float

    name = "linear"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def should_continue(self, ctx: PolicyContext) -> bool:
        return ctx.popularity >= self.alpha * ctx.distance_to_authority

    def label(self) -> str:
        return f"linear_{self.alpha:g}"


@dataclass(frozen=True)
class Logarithmic(CutoffPolicy):
    """Popular iff at least alpha * lg(D) queries arrived since the last
    update.  At D=1 the threshold is clamped to alpha * lg(2); a zero
    threshold would make nodes adjacent to the authority never cut off."""

    alpha: float

    name = "logarithmic"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def should_continue(self, ctx: PolicyContext) -> bool:
        d = max(ctx.distance_to_authority, 2)
        return ctx.popularity >= self.alpha * math.log2(d)

    def label(self) -> str:
        return f"logarithmic_{self.alpha:g}"


@dataclass(frozen=True)
class SecondChance(CutoffPolicy):
    """Cut off only after ``zero_limit`` consecutive update arrivals with no
    interim queries; by default a key gets one grace interval (cut off on the
    second consecutive zero-query interval)."""

    zero_limit: int = 2

    name = "second_chance"

    def should_continue(self, ctx: PolicyContext) -> bool:
        return ctx.consecutive_zero_updates < self.zero_limit

    def label(self) -> str:
        return self.name


def on_query(state) -> None:
    """Bookkeeping when a query for the key arrives: bump popularity and
    clear the zero-interval streak."""
    state.popularity += 1
    state.zero_intervals = 0


def on_trigger_update(state) -> None:
    """Bookkeeping when a triggering update arrives: extend or break the
    zero-query streak, then start a fresh interval."""
    if state.popularity == 0:
        state.zero_intervals += 1
    else:
        state.zero_intervals = 0
    state.popularity = 0


STANDARD_CACHING = PushLevel(0)
