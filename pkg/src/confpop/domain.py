"""Probabilistic STRIPS actions, problems, splitting, grounding and execution."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field, replace
from functools import cached_property

PROB_TOL = 1e-9

Atom = tuple  # (predicate, args-tuple), ground
WorldState = frozenset  # frozenset[Atom]; closed world


def is_var(term: str) -> bool:
    return term.startswith("?")


@dataclass(frozen=True, slots=True, order=True)
class Literal:
    predicate: str
    args: tuple[str, ...] = ()
    positive: bool = True
    # literals are hashed constantly during search, so the hash is computed once
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash((self.predicate, self.args, self.positive)))

    def __hash__(self) -> int:
        return self._hash

    def __reduce__(self):
        # string hashes differ between processes; recompute on unpickling
        return (Literal, (self.predicate, self.args, self.positive))

    @property
    def atom(self) -> Atom:
        return (self.predicate, self.args)

    @property
    def is_equality(self) -> bool:
        return self.predicate == "="

    @property
    def is_ground(self) -> bool:
        return not any(is_var(a) for a in self.args)

    def negate(self) -> Literal:
        return Literal(self.predicate, self.args, not self.positive)

    def substitute(self, mapping: dict[str, str]) -> Literal:
        return Literal(self.predicate, tuple(mapping.get(a, a) for a in self.args), self.positive)

    def holds(self, state: WorldState) -> bool:
        """Closed-world truth of a ground literal in ``state``."""
        if self.is_equality:
            return (self.args[0] == self.args[1]) == self.positive
        return (self.atom in state) == self.positive

    def __str__(self) -> str:
        body = "(" + " ".join((self.predicate, *self.args)) + ")"
        return body if self.positive else f"(not {body})"


@dataclass(frozen=True, slots=True)
class OutcomeEffect:
    probability: float
    adds: tuple[Literal, ...] = ()
    deletes: tuple[Literal, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.adds and not self.deletes

    def literals(self) -> tuple[Literal, ...]:
        """Effect literals; deletes appear as negative literals."""
        return self.adds + tuple(d.negate() for d in self.deletes)

    def apply(self, state: WorldState) -> WorldState:
        if self.is_empty:
            return state
        return (state - {d.atom for d in self.deletes}) | {a.atom for a in self.adds}

    def substitute(self, mapping: dict[str, str]) -> OutcomeEffect:
        return OutcomeEffect(
            self.probability,
            tuple(a.substitute(mapping) for a in self.adds),
            tuple(d.substitute(mapping) for d in self.deletes),
        )


@dataclass(frozen=True, slots=True)
class EffectBranch:
    condition: tuple[Literal, ...]
    outcomes: tuple[OutcomeEffect, ...]

    def substitute(self, mapping: dict[str, str]) -> EffectBranch:
        return EffectBranch(
            tuple(c.substitute(mapping) for c in self.condition),
            tuple(o.substitute(mapping) for o in self.outcomes),
        )


@dataclass(frozen=True, slots=True)
class ActionSchema:
    name: str
    parameters: tuple[tuple[str, str], ...]  # (variable, type)
    precondition: tuple[Literal, ...]
    branches: tuple[EffectBranch, ...]

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.parameters)

    def effect_literals(self):
        """Yield ``(branch, outcome, literal)`` for every effect literal."""
        for b, branch in enumerate(self.branches):
            for o, outcome in enumerate(branch.outcomes):
                for lit in outcome.literals():
                    yield b, o, lit

    def substitute(self, mapping: dict[str, str]) -> ActionSchema:
        return ActionSchema(
            self.name,
            tuple((mapping.get(v, v), t) for v, t in self.parameters),
            tuple(p.substitute(mapping) for p in self.precondition),
            tuple(b.substitute(mapping) for b in self.branches),
        )

    def ground(self, args: tuple[str, ...]) -> ActionSchema:
        return self.substitute(dict(zip(self.variables, args)))

    def applicable(self, state: WorldState) -> bool:
        return all(p.holds(state) for p in self.precondition)

    def active_branch(self, state: WorldState) -> int | None:
        """Index of the branch whose condition holds, if the action applies."""
        if not self.applicable(state):
            return None
        for b, branch in enumerate(self.branches):
            if all(c.holds(state) for c in branch.condition):
                return b
        return None

    def __str__(self) -> str:
        args = [v for v, _ in self.parameters]
        return "(" + " ".join([self.name, *args]) + ")"


@dataclass(frozen=True, slots=True)
class SplitAction:
    schema: str
    branch: int
    outcome: int
    parameters: tuple[tuple[str, str], ...]
    precondition: tuple[Literal, ...]
    adds: tuple[Literal, ...]
    deletes: tuple[Literal, ...]

    @property
    def name(self) -> str:
        return f"{self.schema}-{self.branch + 1}-{self.outcome + 1}"


@dataclass(frozen=True)
class InitialDistribution:
    states: tuple[tuple[WorldState, float], ...]

    def __post_init__(self):
        total = sum(p for _, p in self.states)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"initial distribution sums to {total}, not 1")
        if len({s for s, _ in self.states}) != len(self.states):
            raise ValueError("initial states must be pairwise distinct")

    @classmethod
    def deterministic(cls, atoms) -> InitialDistribution:
        return cls(((frozenset(atoms), 1.0),))

    @cached_property
    def possible_atoms(self) -> frozenset:
        return frozenset().union(*(s for s, _ in self.states))

    @cached_property
    def certain_atoms(self) -> frozenset:
        return frozenset.intersection(*(s for s, _ in self.states))


@dataclass(frozen=True)
class Domain:
    name: str
    types: dict[str, str | None] = field(default_factory=lambda: {"object": None})
    constants: dict[str, str] = field(default_factory=dict)
    predicates: dict[str, tuple[str, ...]] = field(default_factory=dict)  # name -> param types
    schemas: tuple[ActionSchema, ...] = ()

    def schema(self, name: str) -> ActionSchema:
        for s in self.schemas:
            if s.name == name:
                return s
        raise KeyError(name)

    def is_subtype(self, child: str, ancestor: str) -> bool:
        seen = set()
        t: str | None = child
        while t is not None and t not in seen:
            if t == ancestor:
                return True
            seen.add(t)
            t = self.types.get(t)
        return ancestor == "object"

    @cached_property
    def static_predicates(self) -> frozenset[str]:
        """Predicates that no action effect mentions."""
        touched = {lit.predicate for s in self.schemas for _, _, lit in s.effect_literals()}
        return frozenset(p for p in self.predicates if p not in touched)


@dataclass(frozen=True)
class Problem:
    name: str
    domain: Domain
    objects: dict[str, str]  # name -> type, domain constants included
    init: InitialDistribution
    goal: tuple[Literal, ...]

    def with_init(self, init: InitialDistribution) -> Problem:
        return replace(self, init=init)

    def with_goal(self, goal) -> Problem:
        return replace(self, goal=tuple(goal))

    def objects_of(self, type_name: str) -> tuple[str, ...]:
        cache = self.__dict__.setdefault("_objects_of", {})
        if type_name not in cache:
            cache[type_name] = tuple(
                sorted(o for o, t in self.objects.items() if self.domain.is_subtype(t, type_name))
            )
        return cache[type_name]

    @cached_property
    def achievers(self) -> dict[tuple[str, bool], tuple[tuple[int, int, int, Literal], ...]]:
        """(predicate, polarity) -> effects ``(schema index, branch, outcome, literal)``."""
        index: dict[tuple[str, bool], list] = {}
        for i, schema in enumerate(self.domain.schemas):
            for b, o, lit in schema.effect_literals():
                index.setdefault((lit.predicate, lit.positive), []).append((i, b, o, lit))
        return {k: tuple(v) for k, v in index.items()}

    def is_goal_state(self, state: WorldState) -> bool:
        return all(g.holds(state) for g in self.goal)


# ---------------------------------------------------------------------------
# effect normalization


def _consistent(lits) -> bool:
    seen = {}
    for lit in lits:
        if lit.is_equality and lit.is_ground and (lit.args[0] == lit.args[1]) != lit.positive:
            return False
        prev = seen.setdefault((lit.predicate, lit.args), lit.positive)
        if prev != lit.positive:
            return False
    return True


def _canonical(lits) -> tuple[Literal, ...]:
    return tuple(sorted(set(lits)))


def combine_outcomes(left, right) -> list[OutcomeEffect]:
    """Product of two independent outcome lists."""
    out = []
    for a in left:
        for b in right:
            out.append(
                OutcomeEffect(
                    a.probability * b.probability,
                    tuple(dict.fromkeys(a.adds + b.adds)),
                    tuple(dict.fromkeys(a.deletes + b.deletes)),
                )
            )
    return out


def _clean(outcome: OutcomeEffect) -> OutcomeEffect:
    adds = tuple(sorted(set(outcome.adds)))
    # deletes are applied before adds, so an atom in both ends up true
    deletes = tuple(sorted(set(outcome.deletes) - set(adds)))
    return OutcomeEffect(outcome.probability, adds, deletes)


def normalize_effect(base, whens) -> tuple[EffectBranch, ...]:
    """Build mutually exclusive conjunctive branches.

    ``base`` is the unconditional outcome list, ``whens`` a list of
    ``(condition, outcomes)``. Every cell of the partition keeps a
    conjunctive condition; a cell overlapping a ``when`` is split into the
    overlap and the disjoint residue ``c1..ck-1 & not ck``. Cells with only
    empty outcomes are dropped (the action then has no effect there).
    """
    cells: list[tuple[tuple[Literal, ...], list[OutcomeEffect]]] = [((), list(base))]
    for cond, outs in whens:
        cond = _canonical(cond)
        nxt = []
        for cell_cond, cell_outs in cells:
            if not _consistent(cell_cond + cond):
                nxt.append((cell_cond, cell_outs))
                continue
            missing = [c for c in cond if c not in cell_cond]
            nxt.append((_canonical(cell_cond + cond), combine_outcomes(cell_outs, outs)))
            prefix: tuple[Literal, ...] = ()
            for c in missing:
                nxt.append((_canonical(cell_cond + prefix + (c.negate(),)), cell_outs))
                prefix += (c,)
        cells = nxt
    branches = []
    for cond, outs in cells:
        outs = [_clean(o) for o in outs if o.probability > 0]
        if all(o.is_empty for o in outs):
            continue
        branches.append(EffectBranch(cond, tuple(outs)))
    return tuple(branches)


# ---------------------------------------------------------------------------
# operations


def split_schema(schema: ActionSchema) -> list[SplitAction]:
    """One deterministic action per nonempty (branch, outcome) pair."""
    splits = []
    for b, branch in enumerate(schema.branches):
        for o, outcome in enumerate(branch.outcomes):
            if outcome.is_empty:
                continue
            splits.append(
                SplitAction(
                    schema.name,
                    b,
                    o,
                    schema.parameters,
                    schema.precondition + branch.condition,
                    outcome.adds,
                    outcome.deletes,
                )
            )
    return splits


def _static_equalities_ok(lits) -> bool:
    return all(l.holds(frozenset()) for l in lits if l.is_equality and l.is_ground)


def ground_instances(schema: ActionSchema, problem: Problem) -> list[ActionSchema]:
    """All type-consistent groundings whose (in)equality preconditions can hold."""
    domains = [problem.objects_of(t) for _, t in schema.parameters]
    out = []
    for args in itertools.product(*domains):
        ground = schema.ground(args)
        if not _static_equalities_ok(ground.precondition):
            continue
        branches = tuple(b for b in ground.branches if _static_equalities_ok(b.condition))
        out.append(replace(ground, branches=branches))
    return out


def execute(state: WorldState, action: ActionSchema, choice: int | random.Random = 0) -> WorldState:
    """Apply a ground action; inapplicable actions leave the state unchanged.

    ``choice`` is either the outcome index of the active branch or a random
    generator used to sample one.
    """
    b = action.active_branch(state)
    if b is None:
        return state
    outcomes = action.branches[b].outcomes
    if isinstance(choice, int):
        outcome = outcomes[choice]
    else:
        outcome = outcomes[sample_index([o.probability for o in outcomes], choice)]
    return outcome.apply(state)


def sample_index(weights, rng: random.Random) -> int:
    r = rng.random()
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if r < acc:
            return i
    return len(weights) - 1


def most_likely_outcome(action: ActionSchema, state: WorldState) -> int:
    """Index of the highest-probability outcome of the active branch (first on ties)."""
    b = action.active_branch(state)
    if b is None:
        return 0
    probs = [o.probability for o in action.branches[b].outcomes]
    return probs.index(max(probs))


def _split_test(lits) -> tuple[frozenset, frozenset, bool]:
    pos = frozenset(l.atom for l in lits if l.positive and not l.is_equality)
    neg = frozenset(l.atom for l in lits if not l.positive and not l.is_equality)
    ok = all(l.holds(frozenset()) for l in lits if l.is_equality)
    return pos, neg, ok


class CompiledAction:
    """A ground action reduced to set operations for fast state updates."""

    __slots__ = ("pos", "neg", "ok", "branches")

    def __init__(self, action: ActionSchema):
        self.pos, self.neg, self.ok = _split_test(action.precondition)
        self.branches = []
        for branch in action.branches:
            pos, neg, ok = _split_test(branch.condition)
            if not ok:
                continue
            outs = tuple(
                (
                    o.probability,
                    frozenset(d.atom for d in o.deletes),
                    frozenset(a.atom for a in o.adds),
                )
                for o in branch.outcomes
            )
            self.branches.append((pos, neg, outs))

    def applicable(self, state: WorldState) -> bool:
        return self.ok and self.pos <= state and not self.neg & state

    def outcomes(self, state: WorldState):
        """``(probability, deletes, adds)`` of the active branch, or None if inapplicable."""
        if not self.ok or not self.pos <= state or self.neg & state:
            return None
        for pos, neg, outs in self.branches:
            if pos <= state and not neg & state:
                return outs
        return None
