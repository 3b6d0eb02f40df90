from __future__ import annotations

import random

import pytest
from conftest import fixture_text, load
from hypothesis import given
from hypothesis import strategies as st

from confpop.domain import (
    ActionSchema,
    CompiledAction,
    EffectBranch,
    Literal,
    OutcomeEffect,
    execute,
    ground_instances,
    most_likely_outcome,
    split_schema,
)
from confpop.ppddl import parse_domain


def test_conditional_probabilistic_action_has_three_splits():
    (a1,) = parse_domain(fixture_text("fig4")).schemas
    splits = split_schema(a1)
    assert len(splits) == 3
    effects = sorted(tuple(str(l) for l in s.adds) for s in splits)
    assert effects == [("(a)",), ("(b)",), ("(c)",)]


def test_pick_up_has_one_split():
    pick = parse_domain(fixture_text("bw")).schema("pick-up")
    (split,) = split_schema(pick)
    assert split.name == "pick-up-1-1"
    assert set(split.adds) == {Literal("holding", ("?x",))}


def test_deterministic_action_has_one_split():
    assert len(split_schema(parse_domain(fixture_text("bw")).schema("stack"))) == 1


def test_split_inherits_branch_condition():
    (a1,) = parse_domain(fixture_text("fig4")).schemas
    for split in split_schema(a1):
        branch = a1.branches[split.branch]
        assert split.precondition == a1.precondition + branch.condition


def test_grounding_respects_inequalities():
    problem = load("bw", "bw5")
    stacks = ground_instances(problem.domain.schema("stack"), problem)
    assert len(stacks) == 5 * 4
    assert all(g.parameters[0][0] != g.parameters[1][0] for g in stacks)


def test_most_likely_outcome_breaks_ties_by_order():
    fair = ActionSchema(
        "coin",
        (),
        (),
        (EffectBranch((), (OutcomeEffect(0.5, (Literal("heads"),)), OutcomeEffect(0.5, (Literal("tails"),)))),),
    )
    assert most_likely_outcome(fair, frozenset()) == 0


def test_execute_inapplicable_leaves_state():
    pick = parse_domain(fixture_text("bw")).schema("pick-up").ground(("a",))
    state = frozenset({("ontable", ("a",))})
    assert execute(state, pick) == state


ATOMS = [("p", ()), ("q", ()), ("r", ())]
LITS = st.builds(Literal, st.sampled_from(["p", "q", "r"]), st.just(()), st.booleans())


@given(
    pre=st.lists(LITS, max_size=2),
    cond=st.lists(LITS, max_size=2),
    state=st.sets(st.sampled_from(ATOMS)),
    seed=st.integers(0, 1000),
)
def test_compiled_action_agrees_with_schema(pre, cond, state, seed):
    action = ActionSchema(
        "a",
        (),
        tuple(pre),
        (
            EffectBranch(tuple(cond), (OutcomeEffect(0.6, (Literal("r"),), (Literal("p"),)), OutcomeEffect(0.4))),
            EffectBranch((), (OutcomeEffect(1.0, (Literal("q"),)),)),
        ),
    )
    state = frozenset(state)
    compiled = CompiledAction(action)
    assert compiled.applicable(state) == action.applicable(state)
    outs = compiled.outcomes(state)
    branch = action.active_branch(state)
    if branch is None:
        assert outs is None
        return
    expected = [o.apply(state) for o in action.branches[branch].outcomes]
    assert [(state - d) | a for _, d, a in outs] == expected
    choice = random.Random(seed).randrange(len(expected))
    assert execute(state, action, choice) == expected[choice]


def test_problem_goal_state_check():
    problem = load("letters", "letters-forms")
    assert not problem.is_goal_state(frozenset())
    assert problem.is_goal_state(frozenset({("letter-sent", ()), ("forms-sent", ())}))

