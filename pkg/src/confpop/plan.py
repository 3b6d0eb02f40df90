"""Partial plans: steps, bindings, orderings, causal links and flaws."""

from __future__ import annotations

from dataclasses import dataclass, field

from .bindings import BindingSet
from .domain import ActionSchema, EffectBranch, Literal, OutcomeEffect, Problem

INIT_ID = 0
GOAL_ID = 2**31 - 1


class CycleError(Exception):
    pass


class Orderings:
    """Transitively closed precedence relation; persistent."""

    __slots__ = ("succ", "pred", "_key")

    def __init__(self, succ=None, pred=None):
        self.succ: dict[int, frozenset[int]] = succ or {}
        self.pred: dict[int, frozenset[int]] = pred or {}
        self._key: frozenset | None = None

    def key(self) -> frozenset:
        if self._key is None:
            self._key = frozenset(self.pairs())
        return self._key

    def before(self, a: int, b: int) -> bool:
        s = self.succ.get(a)
        return s is not None and b in s

    def add(self, a: int, b: int) -> Orderings:
        """Return the relation extended with ``a < b``; raise on a cycle."""
        if a == b or self.before(b, a):
            raise CycleError(f"{a} < {b} would form a cycle")
        if self.before(a, b):
            return self
        empty = frozenset()
        left = self.pred.get(a, empty) | {a}
        right = self.succ.get(b, empty) | {b}
        succ = dict(self.succ)
        pred = dict(self.pred)
        for x in left:
            succ[x] = succ.get(x, empty) | right
        for y in right:
            pred[y] = pred.get(y, empty) | left
        return Orderings(succ, pred)

    def try_add(self, a: int, b: int) -> Orderings | None:
        try:
            return self.add(a, b)
        except CycleError:
            return None

    def pairs(self):
        for a, bs in self.succ.items():
            for b in bs:
                yield a, b


def transitive_reduction(orderings: Orderings, nodes) -> list[tuple[int, int]]:
    """Pairs ``(a, b)`` over ``nodes`` with ``a < b`` not implied via another node."""
    nodes = sorted(nodes)
    out = []
    for a in nodes:
        for b in nodes:
            if not orderings.before(a, b):
                continue
            if any(orderings.before(a, c) and orderings.before(c, b) for c in nodes):
                continue
            out.append((a, b))
    return out


@dataclass(frozen=True, slots=True)
class Step:
    id: int
    action: ActionSchema  # instantiated with this step's variables
    schema_index: int | None = None  # None for the INIT/GOAL dummies
    effects: tuple[tuple[int, int, Literal], ...] = ()
    # effects grouped by (predicate, sign)
    by_kind: dict = field(default=None, compare=False, hash=False, repr=False)

    def __post_init__(self):
        index: dict = {}
        for entry in self.effects:
            lit = entry[2]
            index.setdefault((lit.predicate, lit.positive), []).append(entry)
        object.__setattr__(self, "by_kind", index)

    @property
    def name(self) -> str:
        return self.action.name

    @property
    def args(self) -> tuple[str, ...]:
        return self.action.variables

    @property
    def is_dummy(self) -> bool:
        return self.schema_index is None


@dataclass(frozen=True, slots=True)
class CausalLink:
    producer: int
    condition: Literal
    consumer: int
    branch: int | None = None
    outcome: int | None = None

    @property
    def key(self):
        return (self.producer, self.condition, self.consumer)


@dataclass(frozen=True, slots=True)
class OpenCondition:
    condition: Literal
    consumer: int
    serial: int = 0
    # reopened conditions may also keep the support they already have
    reopened: bool = False


@dataclass(frozen=True, slots=True)
class UnsafeLink:
    link: CausalLink
    threat: int
    branch: int
    outcome: int
    effect: Literal
    serial: int = 0

    @property
    def key(self):
        return (self.link, self.threat, self.branch, self.outcome, self.effect)


class Plan:
    """A node of the plan-space search. Treat instances as immutable."""

    __slots__ = (
        "problem",
        "steps",
        "bind",
        "ord",
        "links",
        "open",
        "unsafe",
        "accepted_risks",
        "confronted",
        "committed",
        "link_outcomes",
        "next_id",
        "next_serial",
        "last_added",
        "g",
        "parent",
        "how",
        "_keys",
    )
    _FIELDS = __slots__[:-1]

    def __init__(self, **kw):
        for k in self._FIELDS:
            setattr(self, k, kw[k])
        self._keys = None

    def derive(self, how: str, **changes) -> Plan:
        kw = {k: getattr(self, k) for k in self._FIELDS}
        kw.update(changes)
        kw["parent"] = self
        kw["how"] = how
        return Plan(**kw)

    # -- queries ------------------------------------------------------------

    @property
    def flaws(self) -> tuple:
        return self.open + self.unsafe

    @property
    def is_complete(self) -> bool:
        return not self.open and not self.unsafe

    def body_steps(self) -> list[Step]:
        return [s for sid, s in sorted(self.steps.items()) if not s.is_dummy]

    def before(self, a: int, b: int) -> bool:
        return self.ord.before(a, b)

    def may_intervene(self, k: int, link: CausalLink) -> bool:
        if k == link.producer or k == link.consumer:
            return False
        return not self.ord.before(k, link.producer) and not self.ord.before(link.consumer, k)

    def has_link(self, producer: int, condition: Literal, consumer: int) -> bool:
        return any(l.key == (producer, condition, consumer) for l in self.links)

    def signature(self) -> tuple:
        """Hashable key equal for plans that differ only in search history."""
        if self._keys is None:
            parent = self.parent
            inherited = parent._keys if parent is not None else None
            keys = {}
            for name, make in _KEY_PARTS:
                if inherited is not None and getattr(parent, name) is getattr(self, name):
                    keys[name] = inherited[name]
                else:
                    keys[name] = make(getattr(self, name))
            self._keys = keys
        k = self._keys
        return (
            k["steps"],
            self.bind.signature(),
            self.ord.key(),
            k["links"],
            frozenset((o.condition, o.consumer, o.reopened) for o in self.open),
            k["unsafe"],
            self.accepted_risks,
            self.confronted,
            k["committed"],
        )

    def trace(self) -> list[str]:
        out, p = [], self
        while p is not None:
            out.append(p.how)
            p = p.parent
        return out[::-1]

    def __repr__(self) -> str:
        body = " ".join(str(s.action) for s in self.body_steps())
        return f"<Plan g={self.g} open={len(self.open)} unsafe={len(self.unsafe)} [{body}]>"

    # -- construction helpers (used by refinement) --------------------------

    def serials(self, n: int) -> tuple[range, int]:
        return range(self.next_serial, self.next_serial + n), self.next_serial + n


_KEY_PARTS = (
    ("steps", lambda steps: frozenset((sid, st.name, st.args) for sid, st in steps.items())),
    ("links", lambda links: frozenset((l.key, l.branch, l.outcome) for l in links)),
    ("unsafe", lambda unsafe: frozenset(u.key for u in unsafe)),
    ("committed", lambda committed: frozenset(committed.items())),
)


def _init_schema(problem: Problem) -> ActionSchema:
    outcomes = tuple(
        OutcomeEffect(p, tuple(sorted(Literal(pred, args) for pred, args in state)))
        for state, p in problem.init.states
    )
    return ActionSchema("INIT", (), (), (EffectBranch((), outcomes),))


def make_minimal_plan(problem: Problem) -> Plan:
    init_action = _init_schema(problem)
    init = Step(INIT_ID, init_action, None, tuple(init_action.effect_literals()))
    goal = Step(GOAL_ID, ActionSchema("GOAL", (), problem.goal, ()), None, ())
    ords = Orderings().add(INIT_ID, GOAL_ID)
    open_ = tuple(OpenCondition(g, GOAL_ID, i) for i, g in enumerate(problem.goal))
    return Plan(
        problem=problem,
        steps={INIT_ID: init, GOAL_ID: goal},
        bind=BindingSet(),
        ord=ords,
        links=(),
        open=open_,
        unsafe=(),
        accepted_risks=frozenset(),
        confronted=frozenset(),
        committed={},
        link_outcomes={},
        next_id=1,
        next_serial=len(open_),
        last_added=GOAL_ID,
        g=0,
        parent=None,
        how="minimal",
    )


def add_ordering(plan: Plan, a: int, b: int) -> Plan:
    """Plan extended with ``a < b``; raises ``CycleError`` on inconsistency."""
    return refresh_unsafe(plan.derive(f"order {a}<{b}", ord=plan.ord.add(a, b)))


def instantiate(plan: Plan, schema_index: int) -> tuple[Step, BindingSet | None]:
    """A fresh step for a domain schema with renamed variables registered in BIND."""
    problem = plan.problem
    schema = problem.domain.schemas[schema_index]
    sid = plan.next_id
    mapping = {v: f"{v}@{sid}" for v in schema.variables}
    action = schema.substitute(mapping)
    bind = plan.bind.add_variables(
        (mapping[v], frozenset(problem.objects_of(t))) for v, t in schema.parameters
    )
    step = Step(sid, action, schema_index, tuple(action.effect_literals()))
    return step, bind


# ---------------------------------------------------------------------------
# threats


def threatening_effects(plan: Plan, step: Step, link: CausalLink, bind: BindingSet | None = None):
    """Effects of ``step`` that may clobber ``link`` under some extension of BIND."""
    cond = link.condition
    candidates = step.by_kind.get((cond.predicate, not cond.positive))
    if not candidates or not plan.may_intervene(step.id, link):
        return
    bind = bind or plan.bind
    for b, o, eff in candidates:
        if bind.can_unify(eff, cond):  # arguments only; the signs are opposite
            yield b, o, eff


def detect_threats(plan: Plan, new_steps=(), new_links=()) -> list[UnsafeLink]:
    """Threats introduced by newly added steps and/or links.

    New steps are checked against every link; new links against every step.
    Threats already accepted or confronted are not reported again.
    """
    found: dict = {}
    serial = plan.next_serial
    dismissed = plan.accepted_risks | plan.confronted

    def record(link, step):
        nonlocal serial
        for b, o, eff in threatening_effects(plan, step, link):
            u = UnsafeLink(link, step.id, b, o, eff, serial)
            if u.key in dismissed or u.key in found:
                continue
            found[u.key] = u
            serial += 1

    # only effects of the opposite sign on the same predicate can threaten
    for sid in new_steps:
        step = plan.steps[sid]
        kinds = step.by_kind
        for link in plan.links:
            cond = link.condition
            if (cond.predicate, not cond.positive) in kinds:
                record(link, step)
    for link in new_links:
        kind = (link.condition.predicate, not link.condition.positive)
        for sid in sorted(plan.steps):
            step = plan.steps[sid]
            if kind in step.by_kind:
                record(link, step)
    return list(found.values())


def threat_still_possible(plan: Plan, u: UnsafeLink) -> bool:
    if not plan.may_intervene(u.threat, u.link):
        return False
    return plan.bind.can_unify(u.effect, u.link.condition.negate())


def refresh_unsafe(plan: Plan) -> Plan:
    """Drop unsafe links that orderings or bindings have since ruled out."""
    kept = tuple(u for u in plan.unsafe if threat_still_possible(plan, u))
    if len(kept) == len(plan.unsafe):
        return plan
    plan.unsafe = kept  # plan is freshly derived by every caller
    return plan


def with_new_threats(plan: Plan, new_steps=(), new_links=()) -> Plan:
    threats = detect_threats(plan, new_steps, new_links)
    if not threats:
        return plan
    known = {u.key for u in plan.unsafe}
    fresh = tuple(u for u in threats if u.key not in known)
    plan.unsafe = plan.unsafe + fresh
    plan.next_serial = max(u.serial for u in threats) + 1
    return plan


def is_separable(plan: Plan, u: UnsafeLink) -> bool:
    """A threat is separable when its clobbering unification still needs bindings."""
    return not all(
        plan.bind.codesignated(a, b) for a, b in zip(u.effect.args, u.link.condition.args)
    )


# ---------------------------------------------------------------------------
# validation


class InvalidPlan(AssertionError):
    pass


def validate_plan(plan: Plan, complete: bool = False) -> None:
    """Check every structural invariant; raise ``InvalidPlan`` on violation."""

    def fail(msg):
        raise InvalidPlan(msg)

    steps = plan.steps
    if INIT_ID not in steps or GOAL_ID not in steps:
        fail("missing dummy steps")
    for a, b in plan.ord.pairs():
        if a == b:
            fail(f"reflexive ordering {a}")
        if plan.ord.before(b, a):
            fail(f"ordering cycle {a} {b}")
        if a not in steps or b not in steps:
            fail(f"ordering on unknown step {a} {b}")
    for sid in steps:
        if sid not in (INIT_ID, GOAL_ID):
            if not plan.ord.before(INIT_ID, sid) or not plan.ord.before(sid, GOAL_ID):
                fail(f"step {sid} not between INIT and GOAL")
    # brute-force closure check
    edges = set(plan.ord.pairs())
    for a, b in edges:
        for c in plan.ord.succ.get(b, ()):
            if (a, c) not in edges:
                fail(f"ordering closure missing {a}<{c}")
    try:
        plan.bind.check()
    except AssertionError as err:
        fail(f"bindings: {err}")
    for link in plan.links:
        if link.producer not in steps or link.consumer not in steps:
            fail(f"link on unknown step {link}")
        if not plan.ord.before(link.producer, link.consumer):
            fail(f"link producer not before consumer: {link}")
        producer = steps[link.producer]
        supported = any(
            eff.positive == link.condition.positive
            and eff.predicate == link.condition.predicate
            and all(plan.bind.codesignated(x, y) for x, y in zip(eff.args, link.condition.args))
            for _, _, eff in producer.effects
        )
        if not supported and not (link.producer == INIT_ID and not link.condition.positive):
            fail(f"link not supported by its producer: {link}")
        if link.producer == INIT_ID and not link.condition.positive:
            atom = plan.bind.resolve_literal(link.condition).atom
            if atom in plan.problem.init.certain_atoms:
                fail(f"negative link from INIT on an initially certain atom: {link}")
    body = [s for s in steps.values() if not s.is_dummy]
    if plan.g != len(body):
        fail(f"g={plan.g} but {len(body)} body steps")
    for oc in plan.open:
        if oc.consumer not in steps:
            fail(f"open condition on unknown step {oc}")
    if complete:
        if plan.open or plan.unsafe:
            fail("plan still has flaws")
        dismissed = plan.accepted_risks | plan.confronted
        for link in plan.links:
            for sid in sorted(steps):
                for b, o, eff in threatening_effects(plan, steps[sid], link):
                    key = (link, sid, b, o, eff)
                    if key not in dismissed:
                        fail(f"unresolved threat by step {sid} on {link}")
        if plan.bind.grounding() is None:
            fail("bindings admit no grounding")
