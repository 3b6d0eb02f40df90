"""Top-level goal ordering and goal-by-goal incremental planning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .assess import Assessment, ParticleBlowup, ground_plan, linearize, propagate, simulate_actions
from .domain import ActionSchema, InitialDistribution, Literal, Problem, WorldState, ground_instances, most_likely_outcome
from .heuristics import build_relaxed_graph, ground_splits
from .search import NoPlanFound, SearchConfig, SearchResult, probapop

log = logging.getLogger(__name__)

GOAL_ORDER_MODES = ("as-given", "auto", "file")


class PhaseFailure(Exception):
    """Phase ``index`` (1-based) found no plan for goals ``1..index``."""

    def __init__(self, index: int, goal: Literal, reason: str = ""):
        super().__init__(f"phase {index} failed on goal {goal}" + (f" ({reason})" if reason else ""))
        self.index = index
        self.goal = goal
        self.reason = reason


# ---------------------------------------------------------------------------
# binary reachability


def _ground_actions(problem: Problem) -> list[ActionSchema]:
    return [g for schema in problem.domain.schemas for g in ground_instances(schema, problem)]


class PairReachability:
    """Pairs of atoms that may hold together in some reachable state.

    A relaxed fixpoint over atom pairs: deletes are respected, negative
    preconditions are ignored, and every outcome of every branch counts as a
    separate deterministic action. Pairs never reached are mutually exclusive.
    """

    def __init__(self, problem: Problem):
        atoms: dict = {}
        for state, _ in problem.init.states:
            for a in sorted(state):
                atoms.setdefault(a, len(atoms))
        ops = []
        for act in _ground_actions(problem):
            for branch in act.branches:
                pre = [l.atom for l in act.precondition + branch.condition if l.positive and not l.is_equality]
                for o in branch.outcomes:
                    adds = [l.atom for l in o.adds]
                    dels = [l.atom for l in o.deletes]
                    for a in pre + adds + dels:
                        atoms.setdefault(a, len(atoms))
                    ops.append((pre, adds, dels))
        self.index = atoms
        n = len(atoms)
        reach = [0] * n
        for state, _ in problem.init.states:
            mask = 0
            for a in state:
                mask |= 1 << atoms[a]
            for a in state:
                reach[atoms[a]] |= mask
        compiled = []
        for pre, adds, dels in ops:
            pre_i = [atoms[a] for a in pre]
            pre_mask = sum(1 << i for i in set(pre_i))
            add_i = sorted({atoms[a] for a in adds})
            add_mask = sum(1 << i for i in add_i)
            del_mask = sum(1 << atoms[a] for a in set(dels)) & ~add_mask
            compiled.append((pre_i, pre_mask, add_i, add_mask, del_mask))
        everything = (1 << n) - 1
        changed = True
        while changed:
            changed = False
            for pre_i, pre_mask, add_i, add_mask, del_mask in compiled:
                compatible = everything
                for p in pre_i:
                    row = reach[p]
                    if pre_mask & ~row:
                        break
                    compatible &= row
                else:
                    # atoms that survive alongside every precondition
                    gain = (compatible & ~del_mask) | add_mask
                    for p in add_i:
                        new = gain & ~reach[p]
                        if not new:
                            continue
                        changed = True
                        reach[p] |= new
                        bit = 1 << p
                        while new:
                            low = new & -new
                            reach[low.bit_length() - 1] |= bit
                            new ^= low
        self._reach = reach

    def reachable(self, a, b) -> bool:
        i, j = self.index.get(a), self.index.get(b)
        if i is None or j is None:
            return False
        return bool(self._reach[i] >> j & 1)


def _inconsistent(lit: Literal, goal: Literal, pairs: PairReachability) -> bool:
    if lit.is_equality:
        return False
    if lit.atom == goal.atom:
        return lit.positive != goal.positive
    if lit.positive and goal.positive:
        return not pairs.reachable(lit.atom, goal.atom)
    return False


def _destroys(action: ActionSchema, branch: int, outcome: int, goal: Literal) -> bool:
    o = action.branches[branch].outcomes[outcome]
    if goal.positive:
        return any(d.atom == goal.atom for d in o.deletes)
    return any(a.atom == goal.atom for a in o.adds)


def goal_ordering_constraints(problem: Problem, goals=None) -> list[tuple[int, int]]:
    """Pairs ``(i, j)`` meaning goal ``i`` should be achieved before goal ``j``.

    Goal ``i`` precedes goal ``j`` when every ground achiever of goal ``i``
    destroys goal ``j`` or needs a precondition inconsistent with it: reaching
    ``i`` after ``j`` would then undo ``j``.
    """
    goals = list(problem.goal if goals is None else goals)
    actions = _ground_actions(problem)
    pairs = PairReachability(problem)
    achievers: dict[int, list] = {}
    for i, g in enumerate(goals):
        found = []
        for act in actions:
            for b, branch in enumerate(act.branches):
                for o, out in enumerate(branch.outcomes):
                    lits = out.adds if g.positive else tuple(d.negate() for d in out.deletes)
                    if any(l.atom == g.atom for l in lits):
                        found.append((act, b, o))
        achievers[i] = found
    out = []
    for i, gi in enumerate(goals):
        if not achievers[i]:
            continue
        for j, gj in enumerate(goals):
            if i == j:
                continue
            if all(
                _destroys(act, b, o, gj)
                or any(_inconsistent(p, gj, pairs) for p in act.precondition + act.branches[b].condition)
                for act, b, o in achievers[i]
            ):
                out.append((i, j))
    return out


def order_goals(problem: Problem, goals=None) -> list[Literal]:
    """Goals reordered so that reasonable orderings are respected.

    Constraints are added one at a time; one that would close a cycle is
    dropped with a warning. Among the valid orders the one preferring
    earlier-listed goals is returned.
    """
    goals = list(problem.goal if goals is None else goals)
    succ: dict[int, set[int]] = {i: set() for i in range(len(goals))}

    def reaches(a, b):
        stack, seen = [a], {a}
        while stack:
            x = stack.pop()
            if x == b:
                return True
            for y in succ[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return False

    for i, j in goal_ordering_constraints(problem, goals):
        if reaches(j, i):
            log.warning("dropping goal ordering %s < %s: it would close a cycle", goals[i], goals[j])
            continue
        succ[i].add(j)
    indeg = {i: 0 for i in succ}
    for i in succ:
        for j in succ[i]:
            indeg[j] += 1
    order = []
    ready = sorted(i for i, d in indeg.items() if d == 0)
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in sorted(succ[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
        ready.sort()
    return [goals[i] for i in order]


def read_goal_order(text: str, problem: Problem) -> list[Literal]:
    """Parse a goal-order file: one goal literal per line, a permutation of the goals."""
    from .ppddl import PPDDLSyntaxError, read_sexprs

    by_text = {str(g): g for g in problem.goal}
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        node = read_sexprs(line)
        if len(node) != 1 or not isinstance(node[0], list):
            raise PPDDLSyntaxError("expected one goal literal", lineno, 1)
        key = _literal_text(node[0])
        if key not in by_text:
            raise PPDDLSyntaxError(f"{key} is not a goal of {problem.name}", lineno, 1)
        out.append(by_text[key])
    if sorted(map(str, out)) != sorted(by_text):
        raise ValueError("goal-order file must list every goal exactly once")
    return out


def _literal_text(node) -> str:
    if node and node[0] == "not":
        return f"(not {_literal_text(node[1])})"
    return "(" + " ".join(str(x) for x in node) + ")"


# ---------------------------------------------------------------------------
# incremental planning


@dataclass
class PhaseResult:
    goals: tuple[Literal, ...]
    search: SearchResult
    actions: list[ActionSchema]
    end_state: WorldState


@dataclass
class IncrementalResult:
    goal_order: list[Literal]
    phases: list[PhaseResult] = field(default_factory=list)
    assessment: Assessment | None = None
    # False when the belief state outgrew the particle cap and the
    # probability is a seeded Monte Carlo estimate
    exact: bool = True

    @property
    def actions(self) -> list[ActionSchema]:
        return [a for ph in self.phases for a in ph.actions]

    @property
    def probability(self) -> float:
        return self.assessment.success_probability if self.assessment else 0.0

    def statistics(self) -> dict[str, object]:
        return {
            "phases": len(self.phases),
            "nodes_generated": sum(p.search.nodes_generated for p in self.phases),
            "nodes_expanded": sum(p.search.nodes_expanded for p in self.phases),
            "queue_peak": max((p.search.queue_peak for p in self.phases), default=0),
            "improvement_rounds": sum(p.search.improvement_rounds for p in self.phases),
            "final_probability": self.probability,
            "probability_exact": self.exact,
            "steps": len(self.actions),
            "termination_reason": "incremental",
        }


def simulate_intended(state: WorldState, actions) -> WorldState:
    """Execute ground actions taking each one's most likely outcome."""
    for act in actions:
        b = act.active_branch(state)
        if b is None:
            continue
        state = act.branches[b].outcomes[most_likely_outcome(act, state)].apply(state)
    return state


def _most_likely_state(init: InitialDistribution) -> WorldState:
    best = max(p for _, p in init.states)
    return next(s for s, p in init.states if p == best)


def incremental_solve(
    problem: Problem,
    config: SearchConfig | None = None,
    goal_order: str | list[Literal] = "auto",
    improve_phases: bool = False,
    exact_cap: int = 20_000,
    fallback_trials: int = 10_000,
    seed: int = 0,
) -> IncrementalResult:
    """Plan for goals ``1..i`` in phase ``i``, starting where phase ``i - 1`` ended.

    Between phases the sub-plan is simulated with each step's most likely
    outcome. The concatenated plan is assessed against the original initial
    distribution; when exact assessment needs more than ``exact_cap``
    particles (or the configured cap, if smaller),
    ``fallback_trials`` seeded simulations estimate it instead. Raises
    ``PhaseFailure`` naming the first phase without a plan.
    """
    config = config or SearchConfig()
    if isinstance(goal_order, str):
        if goal_order == "as-given":
            goals = list(problem.goal)
        elif goal_order == "auto":
            goals = order_goals(problem)
        else:
            raise ValueError(f"unknown goal order {goal_order!r}; choose from as-given, auto or a list")
    else:
        goals = list(goal_order)
    result = IncrementalResult(goals)
    phase_config = replace(config, improve=config.improve and improve_phases)
    init = problem.init
    state = _most_likely_state(init)
    base_graph = build_relaxed_graph(ground_splits(problem), init)
    for i in range(1, len(goals) + 1):
        sub = problem.with_init(init).with_goal(goals[:i])
        graph = base_graph if i == 1 else base_graph.with_init(sub.init)
        try:
            found = probapop(sub, phase_config, graph)
        except NoPlanFound:
            raise PhaseFailure(i, goals[i - 1], "search space exhausted") from None
        if found.best_plan is None:
            raise PhaseFailure(i, goals[i - 1], found.termination_reason)
        plan = found.best_plan
        _, ground = ground_plan(plan)
        actions = [ground[s] for s in linearize(plan)]
        state = simulate_intended(state, actions)
        result.phases.append(PhaseResult(tuple(goals[:i]), found, actions, state))
        log.info("phase %d: %d steps, %d nodes", i, len(actions), found.nodes_generated)
        init = InitialDistribution.deterministic(state)
    actions = result.actions
    checks = {len(actions): [(("goal", g), g) for g in problem.goal]}
    try:
        success, support, _ = propagate(problem, actions, checks, min(exact_cap, config.particle_cap))
    except ParticleBlowup as err:
        log.warning("%s; estimating by simulation", err)
        _, success = simulate_actions(problem, actions, fallback_trials, seed)
        support = {}
        result.exact = False
    result.assessment = Assessment(success, support, tuple(range(1, len(actions) + 1)))
    return result
