import pytest

from cupsim.policies import (
    Linear,
    Logarithmic,
    PolicyContext,
    PushLevel,
    SecondChance,
    on_query,
    on_trigger_update,
)
from cupsim.protocol import KeyState


def ctx(d=1, pop=0, zeros=0):
    return PolicyContext(distance_to_authority=d, popularity=pop,
                         consecutive_zero_updates=zeros)


def test_linear_threshold():
    # alpha=0.25, D=8 -> threshold 2 queries
    pol = Linear(0.25)
    assert not pol.should_continue(ctx(d=8, pop=1))
    assert pol.should_continue(ctx(d=8, pop=2))
    assert pol.should_continue(ctx(d=8, pop=5))


def test_linear_monotone_in_alpha():
    for d in (1, 4, 16):
        for pop in range(6):
            c = ctx(d=d, pop=pop)
            if Linear(0.25).should_continue(c):
                assert Linear(0.1).should_continue(c)


def test_logarithmic_never_stricter_than_linear():
    for d in range(2, 64):
        for pop in range(8):
            c = ctx(d=d, pop=pop)
            if Linear(0.5).should_continue(c):
                assert Logarithmic(0.5).should_continue(c)


def test_logarithmic_clamps_distance_one():
    # threshold at D=1 equals the D=2 threshold instead of zero, so nodes
    # next to the authority can still unsubscribe
    pol = Logarithmic(1.0)
    assert not pol.should_continue(ctx(d=1, pop=0))
    assert pol.should_continue(ctx(d=1, pop=1))


def test_alpha_must_be_positive():
    with pytest.raises(ValueError):
        Linear(0.0)
    with pytest.raises(ValueError):
        Logarithmic(-1.0)


def test_push_level_zero_is_standard_caching():
    pol = PushLevel(0)
    for d in (1, 2, 10):
        assert not pol.should_continue(ctx(d=d))
        assert not pol.allows_push_to(d)


def test_push_level_bounds_receivers():
    pol = PushLevel(3)
    assert pol.allows_push_to(3)
    assert not pol.allows_push_to(4)
    assert pol.should_continue(ctx(d=2))
    assert not pol.should_continue(ctx(d=9))


def test_push_level_unbounded_never_cuts():
    pol = PushLevel(None)
    for d in (1, 50, 1000):
        assert pol.should_continue(ctx(d=d, pop=0, zeros=99))
        assert pol.allows_push_to(d)


def test_second_chance_two_zero_intervals():
    pol = SecondChance()
    assert pol.should_continue(ctx(zeros=0))
    assert pol.should_continue(ctx(zeros=1))  # the grace interval
    assert not pol.should_continue(ctx(zeros=2))


def test_second_chance_independent_of_distance():
    pol = SecondChance()
    for zeros in (0, 1, 2, 3):
        answers = {pol.should_continue(ctx(d=d, zeros=zeros)) for d in (1, 5, 40)}
        assert len(answers) == 1


def test_on_query_resets_zero_streak():
    state = KeyState()
    state.zero_intervals = 1
    on_query(state)
    assert state.popularity == 1
    assert state.zero_intervals == 0
    on_query(state)
    assert state.popularity == 2


def test_on_trigger_update_counts_zero_intervals():
    state = KeyState()
    on_trigger_update(state)
    assert (state.popularity, state.zero_intervals) == (0, 1)
    state.popularity = 3
    state.zero_intervals = 1
    on_trigger_update(state)
    assert (state.popularity, state.zero_intervals) == (0, 0)


def test_second_chance_sequence_cuts_after_second_zero():
    state = KeyState()
    pol = SecondChance()
    state.zero_intervals = 1
    on_trigger_update(state)
    assert state.zero_intervals == 2
    assert not pol.should_continue(ctx(pop=state.popularity, zeros=state.zero_intervals))


def test_query_then_trigger_keeps_second_chance():
    state = KeyState()
    on_query(state)
    assert state.popularity >= 1
    on_trigger_update(state)
    assert SecondChance().should_continue(ctx(zeros=state.zero_intervals))
