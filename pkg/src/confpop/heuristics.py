"""Relaxed planning graph over split actions, plan ranking and flaw selection."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

from .bindings import BindingSet
from .domain import InitialDistribution, Literal, Problem, SplitAction, ground_instances, split_schema
from .plan import GOAL_ID, INIT_ID, OpenCondition, Plan, UnsafeLink, is_separable
from .refine import accept_risk_allowed

INF = math.inf


def ground_splits(problem: Problem) -> list[SplitAction]:
    """Split actions of every grounding of every schema."""
    out = []
    for schema in problem.domain.schemas:
        for ground in ground_instances(schema, problem):
            out.extend(split_schema(ground))
    return out


def _preconditions(split: SplitAction) -> tuple[Literal, ...]:
    return tuple(dict.fromkeys(l for l in split.precondition if not l.is_equality))


def _effects(split: SplitAction) -> tuple[Literal, ...]:
    return split.adds + tuple(d.negate() for d in split.deletes)


class RelaxedGraph:
    """Additive costs of ground literals and split actions, delete lists ignored.

    Negative literals are tracked as their own nodes: they cost 0 when the
    atom is absent from some initial state and otherwise as much as the
    cheapest split deleting the atom.
    """

    def __init__(self, splits, init: InitialDistribution, _tables=None):
        self.splits = list(splits)
        self.init = init
        if _tables is None:
            pres = [_preconditions(s) for s in self.splits]
            users: dict[Literal, list[int]] = {}
            for i, ps in enumerate(pres):
                for p in ps:
                    users.setdefault(p, []).append(i)
            _tables = (pres, [_effects(s) for s in self.splits], users)
        self._tables = _tables
        self.literal_cost: dict[Literal, float] = {}
        self.action_cost: dict[int, float] = {}
        self.best_achiever: dict[Literal, int] = {}
        self._memo: dict = {}
        self._work_memo: dict[Literal, frozenset[int]] = {}
        self._compute()
        by_pred: dict[tuple[str, bool], list[tuple[float, Literal]]] = {}
        for lit, c in self.literal_cost.items():
            by_pred.setdefault((lit.predicate, lit.positive), []).append((c, lit))
        self.by_pred = {k: sorted(v) for k, v in by_pred.items()}

    def _compute(self) -> None:
        cost = self.literal_cost
        certain = self.init.certain_atoms
        for pred, args in self.init.possible_atoms:
            cost[Literal(pred, args)] = 0
        pres, effects, users = self._tables
        for p in users:
            if not p.positive and p.atom not in certain:
                cost[p] = 0
        remaining = [len(ps) for ps in pres]
        sums = [0.0] * len(pres)
        heap: list = []
        tick = itertools.count()
        for lit, c in cost.items():
            heapq.heappush(heap, (c, next(tick), lit))

        def fire(i):
            ac = 1 + sums[i]
            self.action_cost[i] = ac
            for eff in effects[i]:
                if ac < cost.get(eff, INF):
                    cost[eff] = ac
                    self.best_achiever[eff] = i
                    heapq.heappush(heap, (ac, next(tick), eff))

        for i, r in enumerate(remaining):
            if r == 0:
                fire(i)
        done = set()
        while heap:
            c, _, lit = heapq.heappop(heap)
            if lit in done or c > cost.get(lit, INF):
                continue
            done.add(lit)
            for i in users.get(lit, ()):
                remaining[i] -= 1
                sums[i] += c
                if remaining[i] == 0:
                    fire(i)

    def with_init(self, init: InitialDistribution) -> RelaxedGraph:
        """The graph over the same splits from another initial distribution."""
        return RelaxedGraph(self.splits, init, self._tables)

    # -- queries ------------------------------------------------------------

    def ground_cost(self, lit: Literal) -> float:
        if not lit.positive and lit.atom not in self.init.certain_atoms:
            return 0
        return self.literal_cost.get(lit, INF)

    def cost(self, lit: Literal, bind: BindingSet | None = None) -> float:
        """Cost of a possibly lifted literal: minimum over consistent groundings."""
        if bind is not None:
            key = (self, lit)
            c = bind.cached(key, lit.args)
            if c is None:
                grounding = self._best_grounding(lit, bind)
                c = bind._cache[key] = INF if grounding is None else grounding[0]
            return c
        grounding = self._best_grounding(lit, bind)
        return INF if grounding is None else grounding[0]

    def work(self, lit: Literal, bind: BindingSet | None = None) -> float:
        """Size of a greedily extracted relaxed plan for the literal."""
        grounding = self._best_grounding(lit, bind)
        if grounding is None:
            return INF
        return len(self._relaxed_plan(grounding[1]))

    def _relaxed_plan(self, lit: Literal) -> frozenset[int]:
        memo = self._work_memo
        if lit in memo:
            return memo[lit]
        if self.ground_cost(lit) == 0 or lit not in self.best_achiever:
            memo[lit] = frozenset()
            return memo[lit]
        memo[lit] = frozenset()  # guards against cycles
        a = self.best_achiever[lit]
        acts = {a}
        for p in _preconditions(self.splits[a]):
            acts |= self._relaxed_plan(p)
        memo[lit] = frozenset(acts)
        return memo[lit]

    def _signature(self, lit: Literal, bind: BindingSet | None):
        if bind is None:
            return lit, None
        parts, reps, doms = [], {}, []
        for a in lit.args:
            v = bind.value(a)
            if v is not None:
                parts.append(v)
                continue
            r = bind.find(a)
            if r not in reps:
                reps[r] = len(reps)
                doms.append(bind.domain(a))
            parts.append(reps[r])
        if not reps:
            return Literal(lit.predicate, tuple(parts), lit.positive), None
        neq = tuple(
            sorted(
                (reps[r], reps[n])
                for r in reps
                for n in bind.inequalities(r)
                if n in reps and reps[r] < reps[n]
            )
        )
        return (lit.predicate, lit.positive, tuple(parts), tuple(doms), neq), (parts, doms, neq)

    def _best_grounding(self, lit: Literal, bind: BindingSet | None):
        key, pattern = self._signature(lit, bind)
        if pattern is None:
            if isinstance(key, Literal):
                c = self.ground_cost(key)
                return None if c == INF else (c, key)
            c = self.ground_cost(lit)
            return None if c == INF else (c, lit)
        if key in self._memo:
            return self._memo[key]
        parts, doms, neq = pattern
        result = None

        def matches(args):
            vals = [None] * len(doms)
            for p, a in zip(parts, args):
                if isinstance(p, str):
                    if p != a:
                        return False
                else:
                    if a not in doms[p]:
                        return False
                    if vals[p] is None:
                        vals[p] = a
                    elif vals[p] != a:
                        return False
            return all(vals[i] != vals[j] for i, j in neq)

        if lit.positive:
            for c, g in self.by_pred.get((lit.predicate, True), ()):
                if len(g.args) == len(parts) and matches(g.args):
                    result = (c, g)
                    break
        else:
            certain = self.init.certain_atoms
            for combo in itertools.product(*(sorted(d) for d in doms)):
                if any(combo[i] == combo[j] for i, j in neq):
                    continue
                args = tuple(p if isinstance(p, str) else combo[p] for p in parts)
                if (lit.predicate, args) not in certain:
                    result = (0, Literal(lit.predicate, args, False))
                    break
            if result is None:
                for c, g in self.by_pred.get((lit.predicate, False), ()):
                    if len(g.args) == len(parts) and matches(g.args):
                        result = (c, g)
                        break
        self._memo[key] = result
        return result


def build_relaxed_graph(splits, init: InitialDistribution) -> RelaxedGraph:
    return RelaxedGraph(splits, init)


# ---------------------------------------------------------------------------
# ranking


def has_reusable_achiever(plan: Plan, oc: OpenCondition) -> bool:
    cond = oc.condition
    for sid, step in plan.steps.items():
        if step.is_dummy or sid == oc.consumer or plan.before(oc.consumer, sid):
            continue
        for _, _, eff in step.effects:
            if (
                eff.predicate == cond.predicate
                and eff.positive == cond.positive
                and plan.bind.can_unify(eff, cond)
            ):
                return True
    return False


def h_add_open(plan: Plan, graph: RelaxedGraph, reuse: bool = False) -> float:
    """Sum of relaxed costs of the open conditions (ADDR when ``reuse``)."""
    total = 0
    for oc in plan.open:
        if reuse and has_reusable_achiever(plan, oc):
            continue
        c = graph.cost(oc.condition, plan.bind)
        if c == INF:
            return INF
        total += c
    return total


HEURISTICS = ("ADD", "ADDR")


def rank(plan: Plan, graph: RelaxedGraph, heuristic: str = "ADD") -> float:
    if heuristic not in HEURISTICS:
        raise ValueError(f"unknown heuristic {heuristic!r}; choose from {', '.join(HEURISTICS)}")
    return plan.g + h_add_open(plan, graph, reuse=heuristic == "ADDR")


# ---------------------------------------------------------------------------
# flaw selection

LIFO, LR, MC, MW = "LIFO", "LR", "MC_add", "MW_add"


@dataclass(frozen=True)
class FlawSelectionStrategy:
    name: str
    tiers: tuple[tuple[frozenset[str], str], ...]
    dsep: bool = False

    def __str__(self) -> str:
        return " / ".join("{" + ",".join(sorted(c)) + "} " + crit for c, crit in self.tiers)

    @property
    def categories(self) -> frozenset[str]:
        return frozenset().union(*(c for c, _ in self.tiers))


def _tiers(spec: str):
    out = []
    for part in spec.split("/"):
        cats, crit = part.split()
        out.append((frozenset(cats.split(",")), crit))
    return tuple(out)


_TABLE = {
    "ucpop": "n,s LIFO / o LIFO",
    "static": "t LIFO / n,s LIFO / o LIFO",
    "lcfr": "n,s,o LR",
    "lcfr-loc": "n,s,l LR",
    "lcfr-conf": "n,s,u LR / o LR",
    "lcfr-loc-conf": "n,s,u LR / l LR",
    "mc": "n,s LR / o MC_add",
    "mc-dsep": "n LR / o MC_add / s LR",
    "mc-loc": "n,s LR / l MC_add",
    "mc-loc-dsep": "n LR / l MC_add / s LR",
    "mw": "n,s LR / o MW_add",
    "mw-dsep": "n LR / o MW_add / s LR",
    "mw-loc": "n,s LR / l MW_add",
    "mw-loc-dsep": "n LR / l MW_add / s LR",
}

STRATEGIES = {
    name: FlawSelectionStrategy(name, _tiers(spec), name.endswith("dsep"))
    for name, spec in _TABLE.items()
}


def get_strategy(name: str) -> FlawSelectionStrategy:
    try:
        return STRATEGIES[name]
    except KeyError:
        raise ValueError(
            f"unknown strategy {name!r}; valid names: {', '.join(STRATEGIES)}"
        ) from None


def is_static(plan: Plan, oc: OpenCondition) -> bool:
    return oc.condition.predicate in plan.problem.domain.static_predicates


def is_unsafe_open(plan: Plan, oc: OpenCondition) -> bool:
    """Some step could clobber the condition before its consumer."""
    target = oc.condition.negate()
    for sid, step in plan.steps.items():
        if sid == oc.consumer or plan.before(oc.consumer, sid):
            continue
        for _, _, eff in step.effects:
            if (
                eff.predicate == target.predicate
                and eff.positive == target.positive
                and plan.bind.can_unify(eff, target)
            ):
                return True
    return False


def categories(plan: Plan, flaw, wanted=frozenset("nsotlu")) -> frozenset[str]:
    """Categories of ``flaw``; only those in ``wanted`` are tested."""
    if isinstance(flaw, UnsafeLink):
        return frozenset("s" if is_separable(plan, flaw) else "n")
    cats = {"o"}
    if "t" in wanted and is_static(plan, flaw):
        cats.add("t")
    if "l" in wanted and flaw.consumer == plan.last_added:
        cats.add("l")
    if "u" in wanted and is_unsafe_open(plan, flaw):
        cats.add("u")
    return frozenset(cats)


def count_refinements(plan: Plan, flaw) -> int:
    """Cheap upper bound on the number of children ``refine_plan`` would produce."""
    if isinstance(flaw, UnsafeLink):
        link, k = flaw.link, flaw.threat
        n = 0
        if link.producer != INIT_ID and not plan.before(link.producer, k):
            n += 1
        if link.consumer != GOAL_ID and not plan.before(k, link.consumer):
            n += 1
        n += sum(
            not plan.bind.codesignated(x, y) and not plan.bind.distinct(x, y)
            for x, y in zip(flaw.effect.args, link.condition.args)
        )
        branch = plan.steps[k].action.branches[flaw.branch]
        if branch.condition and plan.committed.get(k) != flaw.branch:
            n += len(branch.condition)
        if accept_risk_allowed(plan, flaw):
            n += 1
        return n
    cond = flaw.condition
    n = 0
    for sid, step in plan.steps.items():
        if sid in (GOAL_ID, flaw.consumer) or plan.before(flaw.consumer, sid):
            continue
        if sid == INIT_ID and not cond.positive:
            n += 1
            continue
        seen = set()
        for _, _, eff in step.effects:
            if eff.predicate != cond.predicate or eff.positive != cond.positive or eff in seen:
                continue
            seen.add(eff)
            if plan.bind.can_unify(eff, cond):
                n += 1
    problem = plan.problem
    seen = set()
    for si, b, _, lit in problem.achievers.get((cond.predicate, cond.positive), ()):
        if (si, b, lit) in seen:
            continue
        seen.add((si, b, lit))
        types = dict(problem.domain.schemas[si].parameters)
        ok = True
        for x, y in zip(lit.args, cond.args):
            ys = plan.bind.domain(y)
            xs = frozenset((x,)) if x[0] != "?" else frozenset(problem.objects_of(types[x]))
            if not xs & ys:
                ok = False
                break
        n += ok
    return n


def select_flaw(plan: Plan, strategy: FlawSelectionStrategy, graph: RelaxedGraph | None = None):
    """Pick the flaw to repair next according to ``strategy``."""
    flaws = list(plan.flaws)
    if not flaws:
        raise ValueError("plan has no flaws")
    wanted = strategy.categories
    cats = {id(f): categories(plan, f, wanted) for f in flaws}
    chosen_tier = None
    for tier_cats, crit in strategy.tiers:
        cands = [f for f in flaws if cats[id(f)] & tier_cats]
        if cands:
            chosen_tier = (cands, crit)
            break
    if chosen_tier is None:
        chosen_tier = (flaws, strategy.tiers[-1][1])
    cands, crit = chosen_tier
    if crit == LIFO:
        return max(cands, key=lambda f: f.serial)
    if crit == LR:
        return min(cands, key=lambda f: (count_refinements(plan, f), -f.serial))
    if graph is None:
        raise ValueError(f"criterion {crit} needs a relaxed graph")

    def score(f):
        if isinstance(f, UnsafeLink):
            return 0
        if crit == MC:
            return graph.cost(f.condition, plan.bind)
        return graph.work(f.condition, plan.bind)

    return max(cands, key=lambda f: (score(f), f.serial))
