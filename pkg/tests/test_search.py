from __future__ import annotations

import pytest

from confpop.plan import validate_plan
from confpop.ppddl import parse_domain, parse_problem
from confpop.search import NoPlanFound, PlanQueue, SearchConfig, TerminationCriteria, probapop

STUCK = """
(define (domain stuck)
  (:predicates (p) (q))
  (:action make-p :parameters () :precondition (q) :effect (p)))
"""


def test_letters_base_then_improvement(letters):
    config = SearchConfig(criteria=TerminationCriteria(probability_threshold=0.9))
    result = probapop(letters, config)
    probs = [row["probability"] for row in result.progress]
    assert probs[0] == pytest.approx(0.8, abs=1e-9)
    assert probs[1] == pytest.approx(0.96, abs=1e-9)
    assert result.termination_reason == "threshold"


def test_fixpoint_is_one_minus_point_two_to_the_k(letters):
    result = probapop(letters, SearchConfig())
    k = result.best_plan.g
    assert result.best_probability == pytest.approx(1 - 0.2**k, abs=1e-9)
    assert result.termination_reason == "no_progress"
    probs = [row["probability"] for row in result.progress]
    assert probs == sorted(probs)
    validate_plan(result.best_plan, complete=True)


def test_no_plan_raises():
    domain = parse_domain(STUCK)
    problem = parse_problem("(define (problem s) (:domain stuck) (:init) (:goal (p)))", domain)
    with pytest.raises(NoPlanFound):
        probapop(problem, SearchConfig())


def test_node_limit_stops_search(bw5):
    config = SearchConfig(criteria=TerminationCriteria(node_limit=50))
    result = probapop(bw5, config)
    assert result.termination_reason == "node_limit"
    assert result.best_plan is None
    assert result.nodes_generated >= 50


def test_time_limit_stops_search(bw5):
    config = SearchConfig(strategy="mc", criteria=TerminationCriteria(time_limit=0.2))
    result = probapop(bw5, config)
    assert result.termination_reason == "time_limit"


def test_criteria_validation():
    with pytest.raises(ValueError):
        TerminationCriteria(progress_epsilon=None)
    with pytest.raises(ValueError):
        TerminationCriteria(probability_threshold=1.5)


def test_queue_orders_by_rank_then_steps():
    class Stub:
        def __init__(self, g):
            self.g = g

    q = PlanQueue()
    a, b, c = Stub(2), Stub(1), Stub(1)
    q.push(a, 3.0)
    q.push(b, 3.0)
    q.push(c, 1.0)
    assert [q.pop(), q.pop(), q.pop()] == [c, b, a]


def test_dedupe_keeps_result(letters):
    plain = probapop(letters, SearchConfig(dedupe=False))
    deduped = probapop(letters, SearchConfig())
    assert plain.best_probability == deduped.best_probability
    assert deduped.nodes_expanded <= plain.nodes_expanded


@pytest.mark.parametrize("strategy", ["static", "lcfr", "mc-loc-dsep", "mw-loc-dsep"])
def test_returned_plans_are_valid(bw5, strategy):
    result = probapop(bw5, SearchConfig(strategy=strategy, improve=False))
    validate_plan(result.best_plan, complete=True)
    assert result.best_probability == pytest.approx(0.75**5)
    assert result.assessment.success_probability == result.best_probability
