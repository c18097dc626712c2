import pytest

from cupsim.policies import Linear, PushLevel, SecondChance
from cupsim.protocol import (
    NAIVE,
    REPLICA_INDEPENDENT,
    AnswerLocal,
    IndexEntry,
    KeyState,
    Node,
    PushUpdate,
    RecordPush,
    SendClearBit,
    SendFirstTime,
    SendQuery,
    Update,
    UpdateKind,
    apply_update,
    popularity_tick,
)


class StubRouting:
    """Fixed next hops and distances for driving a node in isolation."""

    def __init__(self, next_hops=None, distances=None):
        self.next_hops = next_hops or {}
        self.distances = distances or {}

    def next_hop(self, frm, key):
        return self.next_hops.get((frm, key), 99)

    def distance(self, node, key):
        return self.distances.get((node, key), 1)


def make_node(nid=0, neighbors=(1, 2, 3), policy=None, mode=REPLICA_INDEPENDENT,
              routing=None):
    return Node(nid, neighbors, routing or StubRouting(), policy or SecondChance(), mode)


def entry(key="k", replica="r0", lifetime=300.0, set_at=0.0):
    return IndexEntry(key, replica, lifetime, set_at)


def refresh(key="k", replica="r0", set_at=0.0, lifetime=300.0):
    return Update(UpdateKind.REFRESH, key, (entry(key, replica, lifetime, set_at),),
                  replica, set_at)


def first_time(key="k", replicas=("r0",), set_at=0.0, lifetime=300.0):
    return Update(UpdateKind.FIRST_TIME, key,
                  tuple(entry(key, r, lifetime, set_at) for r in replicas),
                  None, set_at)


def sends_of(actions, kind):
    return [a for a in actions if isinstance(a, kind)]


# --- entry and update basics -------------------------------------------------


def test_entry_freshness_boundary():
    e = entry(lifetime=300, set_at=100)
    assert e.is_fresh(400.0)  # age == lifetime: still fresh
    assert not e.is_fresh(400.0001)


def test_entry_rejects_nonpositive_lifetime():
    with pytest.raises(ValueError):
        entry(lifetime=0)


def test_update_invariants():
    with pytest.raises(ValueError):
        Update(UpdateKind.FIRST_TIME, "k", (), None, 0.0)
    with pytest.raises(ValueError):
        Update(UpdateKind.DELETE, "k", (), None, 0.0)  # needs a replica name
    delete = Update(UpdateKind.DELETE, "k", (), "r0", 0.0, delete_replica="r0")
    assert not delete.is_expired(1e9)


def test_update_expired_iff_all_entries_expired():
    u = Update(UpdateKind.REFRESH, "k",
               (entry(replica="a", set_at=0), entry(replica="b", set_at=500)),
               "a", 0.0)
    assert not u.is_expired(600.0)  # b still fresh
    assert u.is_expired(1000.0)


def test_apply_delete_idempotent():
    state = KeyState(entries={"r0": entry()})
    delete = Update(UpdateKind.DELETE, "k", (), "r0", 10.0, delete_replica="r0")
    apply_update(state, delete, 10.0)
    snapshot = dict(state.entries)
    apply_update(state, delete, 11.0)
    assert state.entries == snapshot == {}


def test_apply_append_then_query_includes_replica():
    node = make_node()
    node.cache["k"] = node._new_state()
    node.cache["k"].entries["r0"] = entry(set_at=0.0)
    append = Update(UpdateKind.APPEND, "k", (entry(replica="r9", set_at=5.0),), "r9", 5.0)
    apply_update(node.cache["k"], append, 5.0)
    actions = node.handle_query("k", 1, 6.0)
    (resp,) = sends_of(actions, SendFirstTime)
    assert {e.replica for e in resp.update.entries} == {"r0", "r9"}


def test_refresh_renews_full_lifetime():
    # entry with 100 s left gets refreshed: fresh for the full new lifetime
    state = KeyState(entries={"r0": entry(set_at=0.0)})
    apply_update(state, refresh(set_at=200.0), 200.0)
    assert state.entries["r0"].is_fresh(500.0)
    assert not state.entries["r0"].is_fresh(500.1)


# --- query handling ------------------------------------------------------------


def test_absent_key_sets_pending_and_forwards_once():
    node = make_node(routing=StubRouting(next_hops={(0, "k"): 2}))
    first = node.handle_query("k", 1, 10.0)
    assert sends_of(first, SendQuery) == [SendQuery(2, "k")]
    again = node.handle_query("k", 3, 10.5)  # burst coalesces
    assert sends_of(again, SendQuery) == []
    ks = node.cache["k"]
    assert ks.pending_first_update
    assert ks.owed == [1, 3]
    assert ks.interest[node._slot[1]] and ks.interest[node._slot[3]]


def test_fresh_cache_answers_without_upstream():
    node = make_node()
    node.cache["k"] = node._new_state()
    node.cache["k"].entries["r0"] = entry(set_at=0.0)
    actions = node.handle_query("k", 1, 100.0)
    assert sends_of(actions, SendQuery) == []
    (resp,) = sends_of(actions, SendFirstTime)
    assert resp.to == 1 and resp.hops == 1


def test_local_query_on_fresh_cache_answers_at_zero_hops():
    node = make_node()
    node.cache["k"] = node._new_state()
    node.cache["k"].entries["r0"] = entry(set_at=0.0)
    actions = node.handle_query("k", None, 10.0, query_id=7)
    assert actions == [AnswerLocal(7, 0)]


def test_expired_cache_requeries_unless_pending():
    node = make_node(routing=StubRouting(next_hops={(0, "k"): 1}))
    node.cache["k"] = node._new_state()
    node.cache["k"].entries["r0"] = entry(set_at=0.0)
    first = node.handle_query("k", 2, 400.0)  # expired at 300
    assert sends_of(first, SendQuery) == [SendQuery(1, "k")]
    second = node.handle_query("k", 3, 401.0)
    assert sends_of(second, SendQuery) == []


def test_authority_answers_from_directory_never_forwards():
    node = make_node()
    node.directory["k"] = {"r0": entry(set_at=0.0)}
    actions = node.handle_query("k", 1, 10.0)
    assert sends_of(actions, SendQuery) == []
    (resp,) = sends_of(actions, SendFirstTime)
    assert resp.to == 1
    # the asking neighbor is now subscribed at the authority
    assert node.interest_bit("k", 1)


def test_authority_with_dead_directory_parks_asker():
    node = make_node()
    node.directory["k"] = {"r0": entry(set_at=0.0)}
    actions = node.handle_query("k", 1, 1000.0)
    assert actions == []
    assert node.owned_interest["k"].owed == [1]
    served = node.replica_refresh("k", "r0", 300.0, 1100.0)
    assert any(isinstance(a, SendFirstTime) and a.to == 1 for a in served)


# --- update handling -------------------------------------------------------------


def test_pending_response_fans_out_to_owed_and_waiters():
    node = make_node()
    ks = node._new_state()
    node.cache["k"] = ks
    ks.pending_first_update = True
    ks.owed = [1, 2]
    ks.local_waiters = [11]
    ks.interest[node._slot[1]] = True
    ks.interest[node._slot[2]] = True
    actions = node.handle_update(first_time(set_at=50.0), 3, 4, 50.0)
    fts = sends_of(actions, SendFirstTime)
    assert {a.to for a in fts} == {1, 2}
    assert all(a.hops == 5 for a in fts)
    assert sends_of(actions, AnswerLocal) == [AnswerLocal(11, 4)]
    assert not ks.pending_first_update and ks.owed == [] and ks.local_waiters == []


def test_racing_refresh_serves_as_first_answer():
    node = make_node()
    ks = node._new_state()
    node.cache["k"] = ks
    ks.pending_first_update = True
    ks.local_waiters = [3]
    actions = node.handle_update(refresh(set_at=20.0), 1, 1, 20.0)
    assert sends_of(actions, AnswerLocal) == [AnswerLocal(3, 1)]
    assert not ks.pending_first_update


def test_delete_while_pending_keeps_flag():
    node = make_node()
    ks = node._new_state()
    node.cache["k"] = ks
    ks.pending_first_update = True
    ks.entries["r0"] = entry(set_at=0.0)
    delete = Update(UpdateKind.DELETE, "k", (), "r0", 10.0, delete_replica="r0")
    node.handle_update(delete, 1, 1, 10.0)
    assert ks.pending_first_update
    assert "r0" not in ks.entries


def test_expired_update_dropped_entirely():
    node = make_node()
    ks = node._new_state()
    node.cache["k"] = ks
    ks.interest[node._slot[2]] = True
    stale = refresh(set_at=0.0)
    actions = node.handle_update(stale, 1, 1, 1000.0)
    assert sends_of(actions, PushUpdate) == []
    assert sends_of(actions, SendClearBit) == []
    assert ks.entries == {}


def test_unknown_key_update_rebuffed_with_clear_bit():
    node = make_node()
    actions = node.handle_update(refresh(set_at=5.0), 1, 1, 5.0)
    assert sends_of(actions, SendClearBit) == [SendClearBit(1, "k")]
    assert "k" not in node.cache


def test_forwarding_respects_interest_bits():
    node = make_node(neighbors=(1, 2, 3, 4))
    ks = node._new_state()
    node.cache["k"] = ks
    ks.interest[node._slot[2]] = True
    ks.interest[node._slot[4]] = True
    actions = node.handle_update(refresh(set_at=10.0), 1, 2, 10.0)
    pushes = sends_of(actions, PushUpdate)
    assert {p.to for p in pushes} == {2, 4}
    assert all(p.hops == 3 for p in pushes)


def test_relay_applies_update_to_cache():
    node = make_node()
    ks = node._new_state()
    node.cache["k"] = ks
    ks.interest[node._slot[2]] = True
    node.handle_update(refresh(set_at=10.0), 1, 1, 10.0)
    assert ks.entries["r0"].set_at == 10.0


def test_first_time_never_relayed_as_push():
    node = make_node()
    ks = node._new_state()
    node.cache["k"] = ks
    ks.interest[node._slot[2]] = True
    actions = node.handle_update(first_time(set_at=10.0), 1, 1, 10.0)
    assert sends_of(actions, PushUpdate) == []


def test_never_pushes_back_to_sender():
    node = make_node()
    ks = node._new_state()
    node.cache["k"] = ks
    ks.interest[node._slot[1]] = True  # stale bit pointing at the sender
    actions = node.handle_update(refresh(set_at=10.0), 1, 1, 10.0)
    assert sends_of(actions, PushUpdate) == []


def test_cutoff_when_unpopular_and_no_interest():
    node = make_node(policy=Linear(0.25),
                     routing=StubRouting(distances={(0, "k"): 8}))
    ks = node._new_state()
    node.cache["k"] = ks
    ks.entries["r0"] = entry(set_at=0.0)
    ks.popularity = 1  # below the 0.25 * 8 = 2 threshold
    actions = node.handle_update(refresh(set_at=500.0), 1, 1, 500.0)
    assert sends_of(actions, SendClearBit) == [SendClearBit(1, "k")]
    # the rejected update is not applied; old entries stay until they expire
    assert ks.entries["r0"].set_at == 0.0


def test_second_chance_cuts_after_two_silent_rounds():
    node = make_node(policy=SecondChance())
    ks = node._new_state()
    node.cache["k"] = ks
    ks.popularity = 1  # a query arrived before the first refresh
    r1 = node.handle_update(refresh(set_at=300.0), 1, 1, 300.0)
    r2 = node.handle_update(refresh(set_at=600.0), 1, 1, 600.0)
    r3 = node.handle_update(refresh(set_at=900.0), 1, 1, 900.0)
    assert sends_of(r1, SendClearBit) == []
    assert sends_of(r2, SendClearBit) == []
    assert sends_of(r3, SendClearBit) == [SendClearBit(1, "k")]


def test_push_level_gates_sender_side():
    routing = StubRouting(distances={(1, "k"): 1, (2, "k"): 1})
    node = make_node(policy=PushLevel(0), routing=routing)
    node.directory["k"] = {}
    node.handle_query("k", 1, 5.0)  # sets the bit, parks the asker
    node.directory["k"] = {"r0": entry(set_at=5.0)}
    actions = node.replica_refresh("k", "r0", 300.0, 300.0)
    assert sends_of(actions, PushUpdate) == []  # squelched at the root


def test_push_level_allows_within_level():
    routing = StubRouting(distances={(1, "k"): 1})
    node = make_node(policy=PushLevel(2), routing=routing)
    node.directory["k"] = {"r0": entry(set_at=0.0)}
    node.handle_query("k", 1, 5.0)
    actions = node.replica_refresh("k", "r0", 300.0, 300.0)
    assert {p.to for p in sends_of(actions, PushUpdate)} == {1}


# --- popularity trigger modes ----------------------------------------------------


def test_single_replica_modes_agree():
    for mode in (NAIVE, REPLICA_INDEPENDENT):
        state = KeyState()
        ticks = [popularity_tick(state, refresh(set_at=float(i) * 300), mode)
                 for i in range(5)]
        assert all(ticks)


def test_naive_mode_triggers_on_every_replica():
    state = KeyState()
    assert popularity_tick(state, refresh(replica="a"), NAIVE)
    assert popularity_tick(state, refresh(replica="b"), NAIVE)
    assert popularity_tick(state, refresh(replica="c"), NAIVE)


def test_replica_independent_mode_triggers_on_first_seen_only():
    state = KeyState()
    assert popularity_tick(state, refresh(replica="a"), REPLICA_INDEPENDENT)
    assert not popularity_tick(state, refresh(replica="b"), REPLICA_INDEPENDENT)
    assert popularity_tick(state, refresh(replica="a"), REPLICA_INDEPENDENT)
    assert state.trigger_replica == "a"


def test_first_time_designates_trigger_from_first_entry():
    state = KeyState()
    ft = first_time(replicas=("x", "y"))
    assert popularity_tick(state, ft, REPLICA_INDEPENDENT)
    assert state.trigger_replica == "x"


def test_trigger_redesignated_after_its_delete():
    state = KeyState(entries={"a": entry(replica="a")})
    state.trigger_replica = "a"
    delete = Update(UpdateKind.DELETE, "k", (), "a", 10.0, delete_replica="a")
    apply_update(state, delete, 10.0)
    assert state.trigger_replica is None
    assert popularity_tick(state, refresh(replica="b", set_at=20.0), REPLICA_INDEPENDENT)
    assert state.trigger_replica == "b"


# --- clear-bit handling ------------------------------------------------------------


def chain_node(policy=Linear(1.0), pop=0):
    routing = StubRouting(next_hops={(0, "k"): 3}, distances={(0, "k"): 2})
    node = make_node(policy=policy, routing=routing)
    ks = node._new_state()
    node.cache["k"] = ks
    ks.popularity = pop
    return node, ks


def test_clear_bit_propagates_when_unpopular():
    node, ks = chain_node()
    ks.interest[node._slot[1]] = True
    actions = node.handle_clear_bit("k", 1)
    assert actions == [SendClearBit(3, "k")]
    assert not any(ks.interest)


def test_clear_bit_stops_at_interested_node():
    node, ks = chain_node()
    ks.interest[node._slot[1]] = True
    ks.interest[node._slot[2]] = True
    assert node.handle_clear_bit("k", 1) == []
    assert ks.interest[node._slot[2]]


def test_clear_bit_stops_at_popular_node():
    node, ks = chain_node(pop=5)
    ks.interest[node._slot[1]] = True
    assert node.handle_clear_bit("k", 1) == []


def test_clear_bit_for_unknown_key_ignored():
    node = make_node()
    assert node.handle_clear_bit("nope", 1) == []


def test_clear_bit_never_propagates_past_pending_node():
    node, ks = chain_node()
    ks.interest[node._slot[1]] = True
    ks.pending_first_update = True
    assert node.handle_clear_bit("k", 1) == []


def test_authority_absorbs_clear_bit():
    node = make_node()
    node.directory["k"] = {"r0": entry()}
    node.handle_query("k", 1, 5.0)
    assert node.interest_bit("k", 1)
    assert node.handle_clear_bit("k", 1) == []
    assert not node.interest_bit("k", 1)


# --- bookkeeping invariants ---------------------------------------------------------


def test_directory_and_cache_stay_disjoint():
    node = make_node()
    node.directory["mine"] = {"r0": entry(key="mine")}
    node.handle_query("mine", 1, 5.0)
    node.handle_query("other", 1, 5.0)
    node.handle_update(first_time(key="other", set_at=6.0), 2, 1, 6.0)
    assert set(node.directory) & set(node.cache) == set()
    assert "mine" not in node.cache


def test_record_push_window_for_refresh():
    node = make_node()
    ks = node._new_state()
    node.cache["k"] = ks
    ks.entries["r0"] = entry(set_at=0.0)  # expires at 300
    actions = node.handle_update(refresh(set_at=450.0), 1, 1, 450.0)
    (record,) = [a for a in actions if isinstance(a, RecordPush)]
    assert record.window_start == 300.0
    assert record.window_end == 750.0


def test_apply_patch_remaps_interest_bits():
    node = make_node(neighbors=(1, 2, 3))
    ks = node._new_state()
    node.cache["k"] = ks
    ks.interest = [True, False, True]  # bits for 1 and 3
    ks.owed = [2, 3]
    node.apply_patch((1, 2, 3), (3, 4, 1))
    assert node.neighbors == [3, 4, 1]
    assert ks.interest == [True, False, True]  # 3 first, 4 clear, 1 kept
    assert ks.owed == [3]  # 2 is no longer a neighbor


def test_patch_then_updates_only_reach_current_neighbors():
    node = make_node(neighbors=(1, 2))
    ks = node._new_state()
    node.cache["k"] = ks
    ks.interest = [True, True]
    node.apply_patch((1, 2), (2,))
    actions = node.handle_update(refresh(set_at=10.0), 5, 1, 10.0)
    # neighbor 5 is not even known; but the forward must target 2 only
    pushes = sends_of(actions, PushUpdate)
    assert {p.to for p in pushes} <= {2}
