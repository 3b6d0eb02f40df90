from __future__ import annotations

import math

import pytest
from conftest import load

from confpop.assess import (
    ParticleBlowup,
    assess,
    ground_plan,
    linearize,
    propagate,
    simulate,
    simulate_actions,
)
from confpop.search import SearchConfig, TerminationCriteria, probapop


def enumerate_success(problem, actions):
    """Sum over every initial state and outcome sequence, one branch at a time."""
    total = 0.0
    mass = 0.0

    def walk(state, i, p):
        nonlocal total, mass
        if i == len(actions):
            mass += p
            if problem.is_goal_state(state):
                total += p
            return
        action = actions[i]
        b = action.active_branch(state)
        if b is None:
            walk(state, i + 1, p)
            return
        for outcome in action.branches[b].outcomes:
            walk(outcome.apply(state), i + 1, p * outcome.probability)

    for state, p in problem.init.states:
        walk(state, 0, p)
    assert mass == pytest.approx(1.0, abs=1e-9)
    return total


def asks(problem, k):
    ask = problem.domain.schema("ask-prof")
    return [ask.ground((f"p{i}",)) for i in range(1, k + 1)]


@pytest.mark.parametrize("k", range(0, 10))
def test_k_asks(letters, k):
    success, _, _ = propagate(letters, asks(letters, k))
    assert success == pytest.approx(1 - 0.2**k, abs=1e-12)
    assert success == pytest.approx(enumerate_success(letters, asks(letters, k)), abs=1e-12)


def _solved(problem, **kw):
    config = SearchConfig(criteria=TerminationCriteria(node_limit=20_000, **kw))
    return probapop(problem, config)


@pytest.mark.parametrize(
    "domain, problem, kw",
    [
        ("letters", "letters-p01", {"probability_threshold": 0.9}),
        ("letters", "letters-forms", {}),
        ("bw", "bw5", {"probability_threshold": 0.2}),
        ("fig4", "fig4-p", {}),
    ],
)
def test_assessment_matches_enumeration(domain, problem, kw):
    prob = load(domain, problem)
    plan = _solved(prob, **kw).best_plan
    _, ground = ground_plan(plan)
    actions = [ground[s] for s in linearize(plan)]
    a = assess(plan, trace=True)
    assert a.success_probability == pytest.approx(enumerate_success(prob, actions), abs=1e-12)
    for row in a.trace:
        assert row["total_mass"] == pytest.approx(1.0, abs=1e-9)


def test_link_support_matches_enumeration(letters):
    plan = _solved(letters, probability_threshold=0.9).best_plan
    a = assess(plan)
    for link in plan.links:
        expected = 0.96 if link.condition.predicate == "letter-sent" else 1.0
        assert a.per_condition[link.key] == pytest.approx(expected, abs=1e-12)


def test_conditional_action_with_uncertain_init():
    prob = load("fig4", "fig4-p")
    (a1,) = prob.domain.schemas
    success, _, belief = propagate(prob, [a1])
    # (p q) holds with 0.6, then (a) follows with 0.7
    assert success == pytest.approx(0.42, abs=1e-12)
    assert sum(belief.values()) == pytest.approx(1.0, abs=1e-9)


def test_particle_cap(letters):
    with pytest.raises(ParticleBlowup):
        propagate(letters, asks(letters, 1), cap=1)


def test_monte_carlo_band_and_reproducibility(letters):
    n = 100_000
    count, rate = simulate_actions(letters, asks(letters, 2), n, seed=11)
    p = 0.96
    assert abs(count - n * p) <= 3 * math.sqrt(n * p * (1 - p))
    assert simulate_actions(letters, asks(letters, 2), n, seed=11) == (count, rate)


def test_deterministic_plan_always_succeeds(bw5):
    put = bw5.domain.schema("put-down")
    problem = bw5.with_goal([])
    assert simulate_actions(problem, [put.ground(("a",))], 50, seed=3) == (50, 1.0)


def test_simulate_plan_and_zero_trials(letters):
    plan = _solved(letters, probability_threshold=0.9).best_plan
    count, _ = simulate(plan, 30, seed=5)
    assert 0 <= count <= 30
    assert simulate(plan, 30, seed=5)[0] == count
    with pytest.raises(ValueError):
        simulate(plan, 0, seed=5)
