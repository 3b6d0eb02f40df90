"""Plan assessment by belief-state propagation and Monte Carlo simulation."""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from .domain import ActionSchema, CompiledAction, Problem, WorldState, sample_index
from .plan import GOAL_ID, INIT_ID, Plan

DEFAULT_PARTICLE_CAP = 1_000_000


class UngroundablePlan(Exception):
    pass


class ParticleBlowup(Exception):
    pass


@dataclass
class Assessment:
    success_probability: float
    per_condition: dict = field(default_factory=dict)
    linearization: tuple[int, ...] = ()
    grounding: dict[str, str] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)


def linearize(plan: Plan) -> list[int]:
    """Topological order of the body steps, smallest ready id first."""
    body = [sid for sid in plan.steps if sid not in (INIT_ID, GOAL_ID)]
    preds = {s: {p for p in plan.ord.pred.get(s, ()) if p in plan.steps and p not in (INIT_ID, GOAL_ID)} for s in body}
    succs: dict[int, list[int]] = {s: [] for s in body}
    for s, ps in preds.items():
        for p in ps:
            succs[p].append(s)
    waiting = {s: len(ps) for s, ps in preds.items()}
    ready = [s for s, n in waiting.items() if n == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        s = heapq.heappop(ready)
        order.append(s)
        for t in succs[s]:
            waiting[t] -= 1
            if waiting[t] == 0:
                heapq.heappush(ready, t)
    if len(order) != len(body):
        raise ValueError("ordering constraints are cyclic")
    return order


def ground_plan(plan: Plan) -> tuple[dict[str, str], dict[int, ActionSchema]]:
    grounding = plan.bind.grounding()
    if grounding is None:
        raise UngroundablePlan("binding constraints admit no grounding")
    actions = {
        sid: step.action.substitute(grounding)
        for sid, step in plan.steps.items()
        if sid not in (INIT_ID, GOAL_ID)
    }
    return grounding, actions


def propagate(
    problem: Problem,
    actions: list[ActionSchema],
    checks: dict[int, list] | None = None,
    cap: int = DEFAULT_PARTICLE_CAP,
    trace: list | None = None,
):
    """Push the initial belief through ``actions``.

    ``checks`` maps a position in ``actions`` (``len(actions)`` meaning the
    end) to ``(key, literal)`` pairs; the returned table gives the mass of
    particles in which each literal holds just before that position.
    """
    checks = checks or {}
    is_goal = CompiledAction(ActionSchema("goal", (), problem.goal, ())).applicable

    belief: dict[WorldState, float] = {}
    for state, p in problem.init.states:
        belief[state] = belief.get(state, 0.0) + p
    support = {}

    def measure(pos):
        for key, lit in checks.get(pos, ()):
            support[key] = sum(m for s, m in belief.items() if lit.holds(s))

    for i, action in enumerate(actions):
        measure(i)
        compiled = CompiledAction(action)
        nxt: dict[WorldState, float] = {}
        for state, mass in belief.items():
            outs = compiled.outcomes(state)
            if outs is None:
                nxt[state] = nxt.get(state, 0.0) + mass
                continue
            for p, dels, adds in outs:
                s2 = (state - dels) | adds if dels or adds else state
                nxt[s2] = nxt.get(s2, 0.0) + mass * p
        belief = nxt
        if len(belief) > cap:
            raise ParticleBlowup(f"{len(belief)} particles after step {i + 1} (cap {cap})")
        if trace is not None:
            trace.append(
                {
                    "step": i + 1,
                    "action": str(action),
                    "particles": len(belief),
                    "goal_mass": sum(m for s, m in belief.items() if is_goal(s)),
                    "total_mass": sum(belief.values()),
                }
            )
    measure(len(actions))
    success = sum(m for s, m in belief.items() if is_goal(s))
    return success, support, belief


def assess(plan: Plan, cap: int = DEFAULT_PARTICLE_CAP, trace: bool = False) -> Assessment:
    """Exact success probability of the canonical linearization of ``plan``.

    Support probabilities of every causal link and goal literal are measured
    in the same pass.
    """
    order = linearize(plan)
    grounding, ground = ground_plan(plan)
    actions = [ground[s] for s in order]
    position = {sid: i for i, sid in enumerate(order)}
    position[GOAL_ID] = len(order)
    checks: dict[int, list] = {}
    for link in plan.links:
        lit = link.condition.substitute(grounding)
        checks.setdefault(position[link.consumer], []).append((link.key, lit))
    for g in plan.problem.goal:
        checks.setdefault(len(order), []).append((("goal", g), g))
    steps_trace: list | None = [] if trace else None
    success, support, _ = propagate(plan.problem, actions, checks, cap, steps_trace)
    return Assessment(success, support, tuple(order), grounding, steps_trace or [])


def support_probabilities(plan: Plan, cap: int = DEFAULT_PARTICLE_CAP) -> dict:
    return assess(plan, cap).per_condition


def simulate_actions(problem: Problem, actions: list[ActionSchema], trials: int, seed: int) -> tuple[int, float]:
    if trials <= 0:
        raise ValueError("trials must be positive")
    rng = random.Random(seed)
    states = [s for s, _ in problem.init.states]
    weights = [p for _, p in problem.init.states]
    compiled = [CompiledAction(a) for a in actions]
    goal = CompiledAction(ActionSchema("goal", (), problem.goal, ()))
    successes = 0
    for _ in range(trials):
        state = states[sample_index(weights, rng)] if len(states) > 1 else states[0]
        for action in compiled:
            outs = action.outcomes(state)
            if outs is None:
                continue
            if len(outs) == 1:
                _, dels, adds = outs[0]
            else:
                _, dels, adds = outs[sample_index([o[0] for o in outs], rng)]
            state = (state - dels) | adds
        successes += goal.applicable(state)
    return successes, successes / trials


def simulate(plan: Plan, trials: int, seed: int) -> tuple[int, float]:
    """Execute the linearization ``trials`` times with a seeded generator."""
    order = linearize(plan)
    _, ground = ground_plan(plan)
    return simulate_actions(plan.problem, [ground[s] for s in order], trials, seed)
