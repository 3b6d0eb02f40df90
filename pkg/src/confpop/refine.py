"""Flaw repair: closing open conditions, resolving threats, reopening conditions."""

from __future__ import annotations

from .bindings import BindingSet
from .domain import Literal
from .plan import (
    GOAL_ID,
    INIT_ID,
    CausalLink,
    OpenCondition,
    Plan,
    Step,
    UnsafeLink,
    instantiate,
    refresh_unsafe,
    with_new_threats,
)

SUPPORT_TOL = 1e-12


def _constrain(bind: BindingSet | None, lit: Literal) -> BindingSet | None:
    """Apply an (in)equality literal to BIND."""
    if bind is None:
        return None
    a, b = lit.args
    return bind.unify_terms([(a, b)]) if lit.positive else bind.add_inequality(a, b)


def _requirements(bind, lits, consumer: int, plan: Plan):
    """Split literals into binding constraints and new open conditions."""
    pending = []
    for lit in lits:
        if lit.is_equality:
            bind = _constrain(bind, lit)
            if bind is None:
                return None, ()
        elif lit not in pending and not _already_required(plan, lit, consumer):
            pending.append(lit)
    return bind, pending


def _already_required(plan: Plan, lit: Literal, consumer: int) -> bool:
    return any(oc.consumer == consumer and oc.condition == lit for oc in plan.open) or any(
        l.consumer == consumer and l.condition == lit for l in plan.links
    )


def _link(
    plan: Plan,
    oc: OpenCondition,
    producer: Step,
    branch: int | None,
    outcome: int | None,
    bind: BindingSet,
    how: str,
    new_step: bool = False,
) -> Plan | None:
    """Close ``oc`` with a link from ``producer`` (already in ``steps`` if new)."""
    consumer = oc.consumer
    ords = plan.ord
    steps = plan.steps
    pushed: list[Literal] = []
    pushed_on: list[int] = []
    committed = plan.committed
    if new_step:
        steps = {**steps, producer.id: producer}
        ords = ords.add(INIT_ID, producer.id).add(producer.id, GOAL_ID)
        bind, pre = _requirements(bind, producer.action.precondition, producer.id, plan)
        if bind is None:
            return None
        pushed.extend(pre)
        pushed_on.extend([producer.id] * len(pre))
    ords = ords.try_add(producer.id, consumer)
    if ords is None:
        return None
    if not producer.is_dummy:
        current = committed.get(producer.id)
        if current is not None and current != branch:
            return None
        if current is None:
            cond = producer.action.branches[branch].condition
            bind, extra = _requirements(bind, cond, producer.id, plan)
            if bind is None:
                return None
            extra = [l for l in extra if l not in pushed]
            pushed.extend(extra)
            pushed_on.extend([producer.id] * len(extra))
            committed = {**committed, producer.id: branch}
    link = CausalLink(producer.id, oc.condition, consumer, branch, outcome)
    link_outcomes = plan.link_outcomes
    if not producer.is_dummy:
        link_outcomes = {
            **link_outcomes,
            producer.id: link_outcomes.get(producer.id, frozenset()) | {(branch, outcome)},
        }
    serial = plan.next_serial
    new_open = tuple(
        OpenCondition(lit, sid, serial + i) for i, (lit, sid) in enumerate(zip(pushed, pushed_on))
    )
    child = plan.derive(
        how,
        steps=steps,
        bind=bind,
        ord=ords,
        links=plan.links + (link,),
        open=tuple(o for o in plan.open if o is not oc) + new_open,
        committed=committed,
        link_outcomes=link_outcomes,
        next_serial=serial + len(new_open),
    )
    if new_step:
        child.g = plan.g + 1
        child.next_id = plan.next_id + 1
        child.last_added = producer.id
    child = refresh_unsafe(child)
    return with_new_threats(child, (producer.id,) if new_step else (), (link,))


# ---------------------------------------------------------------------------
# open conditions


def _quick_match(a: Literal, b: Literal) -> bool:
    if a.predicate != b.predicate or a.positive != b.positive or len(a.args) != len(b.args):
        return False
    for x, y in zip(a.args, b.args):
        if x != y and x[0] != "?" and y[0] != "?":
            return False
    return True


def reuse_step(plan: Plan, oc: OpenCondition) -> list[Plan]:
    """Children linking ``oc`` to an effect of a step already in the plan."""
    cond = oc.condition
    children = []
    # no duplicate support
    linked = {l.producer for l in plan.links if l.consumer == oc.consumer and l.condition == cond}
    for sid in sorted(plan.steps):
        if sid in (GOAL_ID, oc.consumer) or sid in linked or plan.before(oc.consumer, sid):
            continue
        step = plan.steps[sid]
        if sid == INIT_ID:
            children.extend(_reuse_init(plan, oc, step))
            continue
        seen = set()
        committed = plan.committed.get(sid)
        for b, o, eff in step.effects:
            if committed is not None and b != committed:
                continue
            if (b, eff) in seen or not _quick_match(eff, cond):
                continue
            seen.add((b, eff))
            bind = plan.bind.unify(eff, cond)
            if bind is None:
                continue
            child = _link(plan, oc, step, b, o, bind, f"reuse {sid} for {cond}@{oc.consumer}")
            if child is not None:
                children.append(child)
    return children


def _reuse_init(plan: Plan, oc: OpenCondition, init: Step) -> list[Plan]:
    cond = oc.condition
    out = []
    if cond.positive:
        seen = set()
        for b, o, eff in init.effects:
            if eff in seen or not _quick_match(eff, cond):
                continue
            seen.add(eff)
            bind = plan.bind.unify(eff, cond)
            if bind is not None:
                child = _link(plan, oc, init, b, o, bind, f"init supports {cond}@{oc.consumer}")
                if child is not None:
                    out.append(child)
        return out
    # closed world: the atom must differ from every atom true in all initial states
    atom = cond.negate()
    binds = [plan.bind]
    for pred, args in sorted(plan.problem.init.certain_atoms):
        if pred != atom.predicate:
            continue
        target = Literal(pred, args)
        nxt = []
        for bnd in binds:
            if not bnd.can_unify(atom, target):
                nxt.append(bnd)
                continue
            for x, y in zip(atom.args, args):
                if not bnd.codesignated(x, y):
                    sep = bnd.add_inequality(x, y)
                    if sep is not None:
                        nxt.append(sep)
        binds = nxt
        if not binds:
            return []
    for bnd in binds:
        child = _link(plan, oc, init, 0, None, bnd, f"init supports {cond}@{oc.consumer}")
        if child is not None:
            out.append(child)
    return out


def add_new_step(plan: Plan, oc: OpenCondition) -> list[Plan]:
    """Children adding a fresh instance of every schema with an effect matching ``oc``."""
    cond = oc.condition
    children = []
    seen = set()
    for si, b, o, lit in plan.problem.achievers.get((cond.predicate, cond.positive), ()):
        if (si, b, lit) in seen:
            continue
        seen.add((si, b, lit))
        if not _quick_match(lit, cond):
            continue
        step, bind = instantiate(plan, si)
        if bind is None:
            continue
        eff = lit.substitute({v: f"{v}@{step.id}" for v in step_vars(plan, si)})
        bind = bind.unify(eff, cond)
        if bind is None:
            continue
        child = _link(
            plan, oc, step, b, o, bind, f"add {step.action} for {cond}@{oc.consumer}", new_step=True
        )
        if child is not None:
            children.append(child)
    return children


def step_vars(plan: Plan, schema_index: int):
    return plan.problem.domain.schemas[schema_index].variables


# ---------------------------------------------------------------------------
# threats


def _without(plan: Plan, u: UnsafeLink) -> tuple[UnsafeLink, ...]:
    return tuple(x for x in plan.unsafe if x is not u)


def accept_risk_allowed(plan: Plan, u: UnsafeLink) -> bool:
    """Whether the clobbering outcome is a chance outcome the plan does not rely on."""
    step = plan.steps[u.threat]
    outcomes = step.action.branches[u.branch].outcomes
    if len(outcomes) < 2:
        return False
    if (u.branch, u.outcome) in plan.link_outcomes.get(u.threat, ()):
        return False
    target = u.link.condition.negate()
    for o, outcome in enumerate(outcomes):
        if not any(
            lit.predicate == target.predicate
            and lit.positive == target.positive
            and plan.bind.can_unify(lit, target)
            for lit in outcome.literals()
        ):
            return True
    return False


def resolve_threat(plan: Plan, u: UnsafeLink) -> list[Plan]:
    link, k = u.link, u.threat
    children = []
    # demotion: threat before producer
    if link.producer != INIT_ID:
        ords = plan.ord.try_add(k, link.producer)
        if ords is not None:
            children.append(refresh_unsafe(plan.derive(f"demote {k}<{link.producer}", ord=ords, unsafe=_without(plan, u))))
    # promotion: threat after consumer
    if link.consumer != GOAL_ID:
        ords = plan.ord.try_add(link.consumer, k)
        if ords is not None:
            children.append(refresh_unsafe(plan.derive(f"promote {link.consumer}<{k}", ord=ords, unsafe=_without(plan, u))))
    # separation, systematic: the i-th child equates the first i-1 argument
    # pairs and separates the i-th, so no two children share a grounding
    prefix = plan.bind
    for x, y in zip(u.effect.args, link.condition.args):
        if prefix.codesignated(x, y):
            continue
        bind = prefix.add_inequality(x, y)
        if bind is not None:
            children.append(refresh_unsafe(plan.derive(f"separate {x}!={y}", bind=bind, unsafe=_without(plan, u))))
        prefix = prefix.unify_terms([(x, y)])
        if prefix is None:
            break
    # confrontation against a conditional branch
    step = plan.steps[k]
    branch = step.action.branches[u.branch]
    if branch.condition and plan.committed.get(k) != u.branch:
        for c in branch.condition:
            neg = c.negate()
            if neg.is_equality:
                bind = _constrain(plan.bind, neg)
                if bind is None:
                    continue
                pushed = ()
            else:
                bind = plan.bind
                pushed = () if _already_required(plan, neg, k) else (OpenCondition(neg, k, plan.next_serial),)
            child = plan.derive(
                f"confront {k} with {neg}",
                bind=bind,
                unsafe=_without(plan, u),
                open=plan.open + pushed,
                confronted=plan.confronted | {u.key},
                next_serial=plan.next_serial + len(pushed),
            )
            children.append(refresh_unsafe(child))
    # a chance outcome the plan does not rely on: accept the risk
    if accept_risk_allowed(plan, u):
        children.append(
            plan.derive(
                f"accept risk {k} on {link.condition}",
                unsafe=_without(plan, u),
                accepted_risks=plan.accepted_risks | {u.key},
            )
        )
    return children


def refine_plan(plan: Plan, flaw) -> list[Plan]:
    """All repairs of ``flaw``; an empty list means a dead end."""
    if isinstance(flaw, OpenCondition):
        kept = []
        if flaw.reopened:
            rest = tuple(o for o in plan.open if o is not flaw)
            kept.append(plan.derive(f"keep support of {flaw.condition}@{flaw.consumer}", open=rest))
        return kept + reuse_step(plan, flaw) + add_new_step(plan, flaw)
    if isinstance(flaw, UnsafeLink):
        return resolve_threat(plan, flaw)
    raise TypeError(f"not a flaw: {flaw!r}")


# ---------------------------------------------------------------------------
# reopening


def conditions_to_reopen(plan: Plan, mode: str, support: dict | None = None) -> list[tuple[Literal, int]]:
    if mode not in ("selective", "all"):
        raise ValueError(f"unknown reopen mode {mode!r}")
    out = []
    for link in plan.links:
        if mode == "selective":
            if support is None:
                raise ValueError("selective reopening needs support probabilities")
            if support[link.key] >= 1 - SUPPORT_TOL:
                continue
        key = (link.condition, link.consumer)
        if key not in out:
            out.append(key)
    return out


def reopen_conditions(plan: Plan, mode: str = "selective", support: dict | None = None) -> Plan:
    """Reopen linked conditions so they can gain additional support.

    ``mode="all"`` reopens every linked condition; ``"selective"`` only those
    whose support probability (keyed by ``link.key``) is below one. Existing
    links are kept, and a reopened condition may be closed again without new
    support.
    """
    conds = conditions_to_reopen(plan, mode, support)
    serial = plan.next_serial
    new_open = tuple(OpenCondition(c, s, serial + i, reopened=True) for i, (c, s) in enumerate(conds))
    return plan.derive(f"reopen {mode}", open=plan.open + new_open, next_serial=serial + len(new_open))
