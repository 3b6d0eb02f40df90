"""Parser for the supported PPDDL subset and writers for domains and plan listings.

Supported: STRIPS with typing, ``(not (= ...))`` in preconditions,
conditional effects (``when`` with a conjunctive condition), one level of
``probabilistic`` in effects and probabilistic ``:init`` clauses.
``forall``, disjunction, quantifiers and nested probabilistic effects are
rejected. Reward updates are ignored with a warning.
"""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction

from .domain import (
    PROB_TOL,
    ActionSchema,
    Domain,
    InitialDistribution,
    Literal,
    OutcomeEffect,
    Problem,
    combine_outcomes,
    is_var,
    normalize_effect,
)
from .plan import GOAL_ID, INIT_ID, Plan, transitive_reduction
from .assess import ground_plan, linearize

log = logging.getLogger(__name__)


class PPDDLError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class PPDDLSyntaxError(PPDDLError):
    pass


class UnsupportedConstruct(PPDDLError):
    pass


class SemanticError(PPDDLError):
    pass


class UndeclaredPredicate(SemanticError):
    pass


class ArityMismatch(SemanticError):
    pass


class UnknownObject(SemanticError):
    pass


class UngroundGoal(SemanticError):
    pass


# ---------------------------------------------------------------------------
# s-expressions


class Sym(str):
    line: int
    col: int

    def __new__(cls, text, line, col):
        obj = super().__new__(cls, text)
        obj.line, obj.col = line, col
        return obj


class Node(list):
    line: int = 0
    col: int = 0


_TOKEN = re.compile(r"\s+|;[^\n]*|\(|\)|[^\s();]+")


def read_sexprs(text: str) -> list:
    stack: list[Node] = [Node()]
    line, line_start = 1, 0
    for m in _TOKEN.finditer(text):
        tok = m.group()
        col = m.start() - line_start + 1
        if tok == "(":
            node = Node()
            node.line, node.col = line, col
            stack[-1].append(node)
            stack.append(node)
        elif tok == ")":
            if len(stack) == 1:
                raise PPDDLSyntaxError("unbalanced ')'", line, col)
            stack.pop()
        elif not tok[0].isspace() and tok[0] != ";":
            stack[-1].append(Sym(tok.lower(), line, col))
        nl = tok.count("\n")
        if nl:
            line += nl
            line_start = m.start() + tok.rindex("\n") + 1
    if len(stack) != 1:
        open_node = stack[-1]
        raise PPDDLSyntaxError("unclosed '('", open_node.line, open_node.col)
    return stack[0]


def _pos(x):
    return getattr(x, "line", 0), getattr(x, "col", 0)


def _expect_list(x, what):
    if not isinstance(x, list):
        raise PPDDLSyntaxError(f"expected {what}", *_pos(x))
    return x


def _head(x):
    if isinstance(x, list) and x and isinstance(x[0], str):
        return x[0]
    return None


def _typed_list(items) -> list[tuple[str, str]]:
    """Parse ``a b - t c`` into ``[(a, t), (b, t), (c, object)]``."""
    out, pending = [], []
    it = iter(items)
    for tok in it:
        if isinstance(tok, list):
            raise UnsupportedConstruct("composite types are not supported", *_pos(tok))
        if tok == "-":
            t = next(it, None)
            if t is None or isinstance(t, list):
                raise PPDDLSyntaxError("missing type after '-'", *_pos(tok))
            out.extend((p, str(t)) for p in pending)
            pending = []
        else:
            pending.append(str(tok))
    out.extend((p, "object") for p in pending)
    return out


def _number(tok) -> float:
    try:
        return float(Fraction(str(tok)))
    except (ValueError, ZeroDivisionError):
        raise PPDDLSyntaxError(f"expected a probability, got {tok!r}", *_pos(tok)) from None


_REJECTED = {"forall", "exists", "or", "imply", "either"}


def _reject(node):
    h = _head(node)
    if h in _REJECTED:
        raise UnsupportedConstruct(f"'{h}' is not supported", *_pos(node[0]))


# ---------------------------------------------------------------------------
# domain


class _DomainBuilder:
    def __init__(self):
        self.name = ""
        self.types: dict[str, str | None] = {"object": None}
        self.constants: dict[str, str] = {}
        self.predicates: dict[str, tuple[str, ...]] = {}
        self.schemas: list[ActionSchema] = []

    def literal(self, node, scope: set[str], negated=False) -> Literal:
        _expect_list(node, "a literal")
        _reject(node)
        if _head(node) == "not":
            if len(node) != 2:
                raise PPDDLSyntaxError("'not' takes one argument", *_pos(node))
            return self.literal(node[1], scope, not negated)
        if not node or isinstance(node[0], list):
            raise PPDDLSyntaxError("expected a predicate name", *_pos(node))
        if node[0] in ("and", "when", "probabilistic"):
            raise UnsupportedConstruct(f"'{node[0]}' cannot appear here", *_pos(node[0]))
        pred = str(node[0])
        args = []
        for a in node[1:]:
            if isinstance(a, list):
                raise UnsupportedConstruct("function terms are not supported", *_pos(a))
            if is_var(a) and a not in scope:
                raise SemanticError(f"free variable {a}", *_pos(a))
            if not is_var(a) and a not in self.constants:
                raise UnknownObject(f"unknown constant {a}", *_pos(a))
            args.append(str(a))
        if pred == "=":
            if len(args) != 2:
                raise ArityMismatch("'=' takes two arguments", *_pos(node[0]))
        elif pred not in self.predicates:
            raise UndeclaredPredicate(f"undeclared predicate {pred}", *_pos(node[0]))
        elif len(args) != len(self.predicates[pred]):
            raise ArityMismatch(
                f"{pred} expects {len(self.predicates[pred])} arguments, got {len(args)}",
                *_pos(node[0]),
            )
        return Literal(pred, tuple(args), not negated)

    def conjunction(self, node, scope) -> list[Literal]:
        if isinstance(node, list) and not node:
            return []
        _expect_list(node, "a formula")
        _reject(node)
        if _head(node) == "and":
            out = []
            for child in node[1:]:
                out.extend(self.conjunction(child, scope))
            return out
        return [self.literal(node, scope)]

    def effect(self, node, scope, in_when=False, in_prob=False):
        """Return ``(outcomes, whens)`` for an effect formula."""
        if isinstance(node, list) and not node:
            return [OutcomeEffect(1.0)], []
        _expect_list(node, "an effect")
        _reject(node)
        h = _head(node)
        if h == "and":
            outs, whens = [OutcomeEffect(1.0)], []
            for child in node[1:]:
                o, w = self.effect(child, scope, in_when, in_prob)
                outs = combine_outcomes(outs, o)
                whens.extend(w)
            return outs, whens
        if h in ("increase", "decrease", "assign", "scale-up", "scale-down"):
            log.warning("%d:%d: ignoring numeric effect '%s'", *_pos(node), h)
            return [OutcomeEffect(1.0)], []
        if h == "when":
            if in_when or in_prob:
                raise UnsupportedConstruct("nested 'when' is not supported", *_pos(node[0]))
            if len(node) != 3:
                raise PPDDLSyntaxError("'when' takes a condition and an effect", *_pos(node))
            cond = self.conjunction(node[1], scope)
            outs, _ = self.effect(node[2], scope, True, in_prob)
            return [OutcomeEffect(1.0)], [(tuple(cond), outs)]
        if h == "probabilistic":
            if in_prob:
                raise UnsupportedConstruct("nested 'probabilistic' is not supported", *_pos(node[0]))
            body = node[1:]
            if len(body) % 2:
                raise PPDDLSyntaxError("'probabilistic' needs weight/effect pairs", *_pos(node))
            outs, total = [], 0.0
            for w_tok, eff in zip(body[::2], body[1::2]):
                w = _number(w_tok)
                if w < 0:
                    raise SemanticError("negative probability", *_pos(w_tok))
                sub, _ = self.effect(eff, scope, in_when, True)
                total += w
                outs.extend(OutcomeEffect(w * s.probability, s.adds, s.deletes) for s in sub)
            if total > 1 + PROB_TOL:
                raise SemanticError(f"probabilities sum to {total} > 1", *_pos(node[0]))
            if total < 1 - 1e-12:
                outs.append(OutcomeEffect(1.0 - total))
            return outs, []
        lit = self.literal(node, scope)
        if lit.is_equality:
            raise UnsupportedConstruct("equality is not an effect", *_pos(node))
        if lit.positive:
            return [OutcomeEffect(1.0, adds=(lit,))], []
        return [OutcomeEffect(1.0, deletes=(lit.negate(),))], []

    def action(self, node) -> ActionSchema:
        if len(node) < 2 or isinstance(node[1], list):
            raise PPDDLSyntaxError("action needs a name", *_pos(node))
        name = str(node[1])
        keys = {}
        rest = node[2:]
        if len(rest) % 2:
            raise PPDDLSyntaxError("malformed action body", *_pos(node))
        for k, v in zip(rest[::2], rest[1::2]):
            if k not in (":parameters", ":precondition", ":effect"):
                raise UnsupportedConstruct(f"unknown action key {k}", *_pos(k))
            keys[str(k)] = v
        params = _typed_list(_expect_list(keys.get(":parameters", Node()), "a parameter list"))
        for v, t in params:
            if not is_var(v):
                raise PPDDLSyntaxError(f"parameter {v} must start with '?'", *_pos(node))
            if t not in self.types:
                raise SemanticError(f"undeclared type {t}", *_pos(node))
        scope = {v for v, _ in params}
        pre = self.conjunction(keys.get(":precondition", Node()), scope)
        outs, whens = self.effect(keys.get(":effect", Node()), scope)
        branches = normalize_effect(outs, whens)
        return ActionSchema(name, tuple(params), tuple(dict.fromkeys(pre)), branches)


def parse_domain(text: str) -> Domain:
    forms = read_sexprs(text)
    if len(forms) != 1 or _head(forms[0]) != "define":
        raise PPDDLSyntaxError("expected a single (define ...) form", *_pos(forms[0] if forms else None))
    form = forms[0]
    b = _DomainBuilder()
    if len(form) < 2 or _head(form[1]) != "domain" or len(form[1]) != 2:
        raise PPDDLSyntaxError("expected (domain NAME)", *_pos(form))
    b.name = str(form[1][1])
    actions = []
    for section in form[2:]:
        _expect_list(section, "a section")
        h = _head(section)
        if h == ":requirements":
            continue
        elif h == ":types":
            for t, parent in _typed_list(section[1:]):
                b.types[t] = parent
                b.types.setdefault(parent, "object" if parent != "object" else None)
        elif h == ":constants":
            for c, t in _typed_list(section[1:]):
                b.constants[c] = t
        elif h == ":predicates":
            for p in section[1:]:
                _expect_list(p, "a predicate signature")
                if not p or isinstance(p[0], list):
                    raise PPDDLSyntaxError("expected a predicate name", *_pos(p))
                b.predicates[str(p[0])] = tuple(t for _, t in _typed_list(p[1:]))
        elif h == ":action":
            actions.append(section)
        elif h in (":functions",):
            log.warning("%d:%d: ignoring %s", *_pos(section), h)
        else:
            raise UnsupportedConstruct(f"unsupported section {h}", *_pos(section))
    for t in b.constants.values():
        if t not in b.types:
            raise SemanticError(f"undeclared type {t}", *_pos(form))
    for a in actions:
        schema = b.action(a)
        if any(s.name == schema.name for s in b.schemas):
            raise SemanticError(f"duplicate action {schema.name}", *_pos(a))
        b.schemas.append(schema)
    return Domain(b.name, b.types, b.constants, b.predicates, tuple(b.schemas))


# ---------------------------------------------------------------------------
# problem


def _ground_atom(node, domain: Domain, objects, what="atom") -> Literal:
    builder = _DomainBuilder()
    builder.predicates = domain.predicates
    builder.constants = objects
    try:
        lit = builder.literal(node, set())
    except SemanticError as err:
        if "free variable" in err.message:
            raise UngroundGoal(f"{what} must be ground", err.line, err.col) from None
        raise
    return lit


def parse_problem(text: str, domain: Domain) -> Problem:
    forms = read_sexprs(text)
    if len(forms) != 1 or _head(forms[0]) != "define":
        raise PPDDLSyntaxError("expected a single (define ...) form", *_pos(forms[0] if forms else None))
    form = forms[0]
    if len(form) < 2 or _head(form[1]) != "problem" or len(form[1]) != 2:
        raise PPDDLSyntaxError("expected (problem NAME)", *_pos(form))
    name = str(form[1][1])
    objects = dict(domain.constants)
    init_node = goal_node = None
    for section in form[2:]:
        _expect_list(section, "a section")
        h = _head(section)
        if h == ":domain":
            if len(section) != 2 or section[1] != domain.name:
                raise SemanticError(
                    f"problem is for domain {section[1] if len(section) > 1 else '?'}, "
                    f"not {domain.name}",
                    *_pos(section),
                )
        elif h == ":objects":
            for o, t in _typed_list(section[1:]):
                if t not in domain.types:
                    raise SemanticError(f"undeclared type {t}", *_pos(section))
                objects[o] = t
        elif h == ":init":
            init_node = section
        elif h == ":goal":
            goal_node = section
        elif h in (":requirements", ":metric", ":goal-reward", ":horizon"):
            log.warning("%d:%d: ignoring %s", *_pos(section), h)
        else:
            raise UnsupportedConstruct(f"unsupported section {h}", *_pos(section))
    if goal_node is None or len(goal_node) != 2:
        raise PPDDLSyntaxError("problem needs one (:goal ...) formula", *_pos(form))

    certain: list = []
    alternatives: list[list[tuple[float, frozenset]]] = []
    for item in (init_node or [None])[1:]:
        _expect_list(item, "an init element")
        h = _head(item)
        if h == "=":
            log.warning("%d:%d: ignoring numeric init", *_pos(item))
            continue
        if h == "probabilistic":
            alternatives.append(_init_alternatives(item, domain, objects))
            continue
        if h == "not":
            continue  # closed world
        certain.append(_ground_atom(item, domain, objects).atom)

    states: dict[frozenset, float] = {}
    for combo in itertools.product(*alternatives):
        mass = 1.0
        atoms = set(certain)
        for w, extra in combo:
            mass *= w
            atoms |= extra
        if mass <= 0:
            continue
        key = frozenset(atoms)
        states[key] = states.get(key, 0.0) + mass
    init = InitialDistribution(tuple(states.items()))

    goal = []
    node = goal_node[1]
    _reject(node)
    items = node[1:] if _head(node) == "and" else [node]
    for g in items:
        _reject(g)
        lit = _ground_atom(g, domain, objects, "goal")
        goal.append(lit)
    return Problem(name, domain, objects, init, tuple(dict.fromkeys(goal)))


def _init_alternatives(node, domain, objects):
    body = node[1:]
    if len(body) % 2:
        raise PPDDLSyntaxError("'probabilistic' needs weight/effect pairs", *_pos(node))
    out, total = [], 0.0
    for w_tok, eff in zip(body[::2], body[1::2]):
        w = _number(w_tok)
        total += w
        _expect_list(eff, "an init formula")
        atoms = eff[1:] if _head(eff) == "and" else [eff]
        if _head(eff) == "probabilistic":
            raise UnsupportedConstruct("nested 'probabilistic' is not supported", *_pos(eff))
        out.append((w, frozenset(_ground_atom(a, domain, objects).atom for a in atoms)))
    if total > 1 + PROB_TOL:
        raise SemanticError(f"probabilities sum to {total} > 1", *_pos(node[0]))
    if total < 1 - 1e-12:
        out.append((1.0 - total, frozenset()))
    return out


# ---------------------------------------------------------------------------
# printing


def _conj(lits) -> str:
    lits = list(lits)
    if len(lits) == 1:
        return str(lits[0])
    return "(and" + "".join(" " + str(l) for l in lits) + ")"


def _outcome_text(o: OutcomeEffect) -> str:
    return _conj(list(o.adds) + [d.negate() for d in o.deletes])


def _effect_text(branch) -> str:
    outs = [o for o in branch.outcomes if not o.is_empty]
    if len(outs) == 1 and abs(outs[0].probability - 1.0) <= PROB_TOL:
        return _outcome_text(outs[0])
    return "(probabilistic" + "".join(f" {o.probability!r} {_outcome_text(o)}" for o in outs) + ")"


def _typed(pairs) -> str:
    return " ".join(f"{n} - {t}" for n, t in pairs)


def print_domain(domain: Domain) -> str:
    lines = [f"(define (domain {domain.name})"]
    types = [(t, p) for t, p in domain.types.items() if t != "object"]
    if types:
        lines.append(f"  (:types {_typed(types)})")
    if domain.constants:
        lines.append(f"  (:constants {_typed(domain.constants.items())})")
    preds = []
    for p, ts in domain.predicates.items():
        params = " ".join(f"?a{i} - {t}" for i, t in enumerate(ts))
        preds.append(f"({p}{' ' + params if params else ''})")
    lines.append(f"  (:predicates {' '.join(preds)})")
    for s in domain.schemas:
        lines.append(f"  (:action {s.name}")
        lines.append(f"    :parameters ({_typed(s.parameters)})")
        if s.precondition:
            lines.append(f"    :precondition {_conj(s.precondition)}")
        parts = []
        for br in s.branches:
            eff = _effect_text(br)
            parts.append(f"(when {_conj(br.condition)} {eff})" if br.condition else eff)
        lines.append(f"    :effect {_conj_text(parts)})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def _conj_text(parts) -> str:
    if len(parts) == 1:
        return parts[0]
    return "(and" + "".join(" " + p for p in parts) + ")"


# ---------------------------------------------------------------------------
# plan listings

INIT_NAME = "init"
GOAL_NAME = "goal"


def format_probability(p: float) -> str:
    return format(p, ".12g")


@dataclass
class PlanListing:
    """Parsed form of a plan listing."""

    steps: dict[int, tuple[str, tuple[str, ...]]] = field(default_factory=dict)
    orderings: list[tuple[int, int]] = field(default_factory=list)
    links: list[tuple[str, Literal, str]] = field(default_factory=list)
    phases: list[list[int]] = field(default_factory=list)
    probability: float | None = None


def write_listing(
    steps: dict[int, tuple[str, tuple[str, ...]]],
    orderings,
    links=(),
    probability: float | None = None,
    linearization=(),
    phases=(),
    header: dict[str, str] | None = None,
) -> str:
    """Render a plan listing; step ids are positive integers."""
    out = []
    for k, v in (header or {}).items():
        out.append(f"{k} {v}")
    phase_of = {}
    for i, ph in enumerate(phases, 1):
        for s in ph:
            phase_of[s] = i
    current = None
    for sid in sorted(steps):
        if phase_of.get(sid) != current and sid in phase_of:
            current = phase_of[sid]
            out.append(f"phase {current}")
        name, args = steps[sid]
        out.append(f"step {sid} ({' '.join((name, *args))})")
    for a, b in sorted(orderings):
        out.append(f"order {a} {b}")
    for p, lit, c in links:
        out.append(f"link {p} {lit} {c}")
    if linearization:
        out.append("linearization " + " ".join(str(s) for s in linearization))
    if probability is not None:
        out.append(f"prob {format_probability(probability)}")
    return "\n".join(out) + "\n"


def read_plan(text: str) -> PlanListing:
    listing = PlanListing()
    phase = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        try:
            if key == "step":
                sid, _, action = rest.partition(" ")
                node = read_sexprs(action)
                if len(node) != 1 or not isinstance(node[0], list) or not node[0]:
                    raise PPDDLSyntaxError("expected (action args...)", lineno, len(key) + 2)
                listing.steps[int(sid)] = (str(node[0][0]), tuple(str(a) for a in node[0][1:]))
                if phase is not None:
                    listing.phases[phase].append(int(sid))
            elif key == "order":
                a, b = rest.split()
                listing.orderings.append((int(a), int(b)))
            elif key == "link":
                p, _, tail = rest.partition(" ")
                lit_text, _, c = tail.rpartition(" ")
                node = read_sexprs(lit_text)[0]
                neg = _head(node) == "not"
                atom = node[1] if neg else node
                lit = Literal(str(atom[0]), tuple(str(a) for a in atom[1:]), not neg)
                listing.links.append((p, lit, c))
            elif key == "phase":
                listing.phases.append([])
                phase = len(listing.phases) - 1
            elif key == "prob":
                listing.probability = float(rest)
            elif key in ("linearization", "domain", "problem", "accepted-risk"):
                continue
            else:
                raise PPDDLSyntaxError(f"unknown listing entry {key!r}", lineno, 1)
        except (ValueError, IndexError):
            raise PPDDLSyntaxError(f"malformed {key} entry", lineno, 1) from None
    return listing


def _step_name(sid: int) -> str:
    if sid == INIT_ID:
        return INIT_NAME
    if sid == GOAL_ID:
        return GOAL_NAME
    return str(sid)


def write_plan(plan: Plan, probability: float | None = None, phases=()) -> str:
    """Listing of a plan: ground steps, reduced orderings, links and probability."""
    grounding, ground = ground_plan(plan)
    body = sorted(ground)
    steps = {sid: (ground[sid].name, tuple(v for v, _ in ground[sid].parameters)) for sid in body}
    links = sorted(
        (
            (_step_name(l.producer), l.condition.substitute(grounding), _step_name(l.consumer))
            for l in plan.links
        ),
        key=lambda t: (t[0] != INIT_NAME, t[0], t[2] != GOAL_NAME, t[2], str(t[1])),
    )
    return write_listing(
        steps,
        transitive_reduction(plan.ord, body),
        links,
        probability,
        linearize(plan),
        phases,
    )


def listing_order(listing: PlanListing) -> list[int]:
    """Step ids in execution order: the orderings extended to a total order,
    smallest id first among unordered steps."""
    known = set(listing.steps)
    succs: dict[int, set[int]] = {s: set() for s in known}
    waiting = dict.fromkeys(known, 0)
    for a, b in listing.orderings:
        if a not in known or b not in known:
            raise SemanticError(f"ordering {a} {b} names an unknown step")
        if b not in succs[a]:
            succs[a].add(b)
            waiting[b] += 1
    ready = sorted(s for s, n in waiting.items() if n == 0)
    order = []
    while ready:
        s = ready.pop(0)
        order.append(s)
        for t in succs[s]:
            waiting[t] -= 1
            if waiting[t] == 0:
                ready.append(t)
        ready.sort()
    if len(order) != len(known):
        raise SemanticError("plan orderings are cyclic")
    return order


def listing_actions(listing: PlanListing, problem: Problem) -> list[ActionSchema]:
    """Ground actions of a listing in the order given by ``listing_order``."""
    actions = {}
    for sid, (name, args) in listing.steps.items():
        try:
            schema = problem.domain.schema(name)
        except KeyError:
            raise SemanticError(f"step {sid}: unknown action {name}") from None
        if len(args) != len(schema.parameters):
            raise ArityMismatch(f"step {sid}: {name} takes {len(schema.parameters)} arguments, got {len(args)}")
        for a, (_, t) in zip(args, schema.parameters):
            if a not in problem.objects:
                raise UnknownObject(f"step {sid}: unknown object {a}")
            if not problem.domain.is_subtype(problem.objects[a], t):
                raise SemanticError(f"step {sid}: {a} is not of type {t}")
        actions[sid] = schema.ground(args)
    return [actions[s] for s in listing_order(listing)]
