from __future__ import annotations

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from confpop.plan import (
    GOAL_ID,
    INIT_ID,
    CycleError,
    InvalidPlan,
    Orderings,
    add_ordering,
    make_minimal_plan,
    transitive_reduction,
    validate_plan,
)
from confpop.refine import refine_plan

EDGES = st.lists(st.tuples(st.integers(1, 6), st.integers(1, 6)), max_size=12)


def _closure(pairs):
    closed = set(pairs)
    while True:
        extra = {(a, d) for (a, b), (c, d) in itertools.product(closed, repeat=2) if b == c} - closed
        if not extra:
            return closed
        closed |= extra


@given(EDGES)
def test_orderings_match_brute_force_closure(edges):
    ords = Orderings()
    accepted = []
    for a, b in edges:
        nxt = ords.try_add(a, b)
        if nxt is None:
            # rejected exactly when it would create a cycle
            assert a == b or (b, a) in _closure(accepted)
            continue
        ords = nxt
        accepted.append((a, b))
    assert set(ords.pairs()) == _closure(accepted)


@given(EDGES)
def test_reduction_matches_brute_force(edges):
    ords = Orderings()
    for a, b in edges:
        ords = ords.try_add(a, b) or ords
    nodes = range(1, 7)
    closed = set(ords.pairs())
    expected = sorted(
        (a, b) for a, b in closed if not any((a, c) in closed and (c, b) in closed for c in nodes)
    )
    reduced = transitive_reduction(ords, nodes)
    assert reduced == expected
    assert _closure(reduced) == closed


def test_cycle_rejected():
    ords = Orderings().add(1, 2).add(2, 3)
    with pytest.raises(CycleError):
        ords.add(3, 1)
    assert not ords.before(3, 1)


def test_minimal_plan(letters):
    plan = make_minimal_plan(letters)
    validate_plan(plan)
    assert plan.before(INIT_ID, GOAL_ID)
    assert [oc.condition for oc in plan.open] == list(letters.goal)
    assert plan.g == 0 and not plan.unsafe


def test_add_ordering_cycle(letters):
    plan = make_minimal_plan(letters)
    with pytest.raises(CycleError):
        add_ordering(plan, GOAL_ID, INIT_ID)


def test_refined_children_validate(bw5):
    frontier = [make_minimal_plan(bw5)]
    for _ in range(3):
        nxt = []
        for plan in frontier:
            validate_plan(plan)
            flaw = plan.flaws[0]
            nxt.extend(refine_plan(plan, flaw))
        frontier = nxt[:20]
    assert frontier


def test_validator_catches_bad_step_count(letters):
    plan = make_minimal_plan(letters)
    bad = plan.derive("corrupt", g=3)
    with pytest.raises(InvalidPlan):
        validate_plan(bad)


def test_signature_ignores_history(letters):
    plan = make_minimal_plan(letters)
    assert plan.derive("noop").signature() == plan.signature()
