"""Codesignation constraints over plan variables.

Variables are grouped into equivalence classes; each class carries the set
of constants it may still take (its type domain, narrowed by equalities and
disequalities with constants) and the classes it must differ from. A class
whose domain is a singleton is bound. Instances are persistent: every
operation returns a new ``BindingSet`` (or ``None`` on inconsistency) and
leaves the receiver untouched.
"""

from __future__ import annotations

from collections.abc import Iterable

from .domain import Literal, is_var


class _Txn:
    """Copy-on-write overlay used while building a derived binding set."""

    __slots__ = ("base", "rep", "members", "dom", "neq")

    def __init__(self, base: BindingSet):
        self.base = base
        self.rep: dict[str, str] = {}
        self.members: dict[str, tuple[str, ...]] = {}
        self.dom: dict[str, frozenset[str]] = {}
        self.neq: dict[str, frozenset[str]] = {}

    def find(self, v: str) -> str:
        r = self.rep.get(v)
        return r if r is not None else self.base._rep[v]

    def get_dom(self, r):
        d = self.dom.get(r)
        return d if d is not None else self.base._dom[r]

    def get_neq(self, r):
        n = self.neq.get(r)
        return n if n is not None else self.base._neq.get(r, frozenset())

    def get_members(self, r):
        m = self.members.get(r)
        return m if m is not None else self.base._members[r]

    def restrict(self, r: str, allowed: frozenset[str]) -> bool:
        d = self.get_dom(r)
        nd = d & allowed
        if nd == d:
            return True
        if not nd:
            return False
        self.dom[r] = nd
        if len(nd) == 1:
            return self._propagate(r)
        return True

    def _propagate(self, r: str) -> bool:
        queue = [r]
        while queue:
            x = queue.pop()
            (val,) = self.get_dom(x)
            for n in self.get_neq(x):
                d = self.get_dom(n)
                if val in d:
                    nd = d - {val}
                    if not nd:
                        return False
                    self.dom[n] = nd
                    if len(nd) == 1:
                        queue.append(n)
        return True

    def equate(self, a: str, b: str) -> bool:
        av, bv = is_var(a), is_var(b)
        if not av and not bv:
            return a == b
        if not av:
            a, b = b, a
            av, bv = bv, av
        ra = self.find(a)
        if not bv:
            return self.restrict(ra, frozenset((b,)))
        rb = self.find(b)
        if ra == rb:
            return True
        if rb in self.get_neq(ra):
            return False
        dom = self.get_dom(ra) & self.get_dom(rb)
        if not dom:
            return False
        # merge rb into ra
        mb = self.get_members(rb)
        for v in mb:
            self.rep[v] = ra
        self.members[ra] = self.get_members(ra) + mb
        self.members[rb] = ()
        nb = self.get_neq(rb)
        self.neq[ra] = self.get_neq(ra) | nb
        self.neq[rb] = frozenset()
        for n in nb:
            self.neq[n] = (self.get_neq(n) - {rb}) | {ra}
        self.dom[ra] = dom
        if len(dom) == 1:
            return self._propagate(ra)
        return True

    def separate(self, a: str, b: str) -> bool:
        av, bv = is_var(a), is_var(b)
        if not av and not bv:
            return a != b
        if not av:
            a, b = b, a
            av, bv = bv, av
        ra = self.find(a)
        if not bv:
            return self.restrict(ra, self.get_dom(ra) - {b})
        rb = self.find(b)
        if ra == rb:
            return False
        da, db = self.get_dom(ra), self.get_dom(rb)
        if len(da) == 1 and da == db:
            return False
        self.neq[ra] = self.get_neq(ra) | {rb}
        self.neq[rb] = self.get_neq(rb) | {ra}
        if len(da) == 1:
            return self.restrict(rb, db - da)
        if len(db) == 1:
            return self.restrict(ra, da - db)
        return True

    def commit(self) -> BindingSet:
        base = self.base
        if not (self.rep or self.members or self.dom or self.neq):
            return base
        out = BindingSet.__new__(BindingSet)
        out._rep = {**base._rep, **self.rep} if self.rep else base._rep
        out._members = {**base._members, **self.members} if self.members else base._members
        out._dom = {**base._dom, **self.dom} if self.dom else base._dom
        out._neq = {**base._neq, **self.neq} if self.neq else base._neq
        out._cache = {}
        out._parent = base
        touched = set(self.rep)
        for r in {*self.members, *self.dom, *self.neq}:
            touched.update(out._members[r])
        out._touched = frozenset(touched)
        return out


class BindingSet:
    __slots__ = ("_rep", "_members", "_dom", "_neq", "_cache", "_parent", "_touched")

    def __init__(self):
        self._rep: dict[str, str] = {}
        self._members: dict[str, tuple[str, ...]] = {}
        self._dom: dict[str, frozenset[str]] = {}
        self._neq: dict[str, frozenset[str]] = {}
        # memo for derived values; safe because instances never change
        self._cache: dict = {}
        # the set this one was derived from and the variables whose classes changed
        self._parent: BindingSet | None = None
        self._touched: frozenset[str] = frozenset()

    # -- construction -------------------------------------------------------

    def add_variables(self, typed: Iterable[tuple[str, frozenset[str]]]) -> BindingSet | None:
        """Register fresh variables with their allowed constants."""
        out = BindingSet.__new__(BindingSet)
        out._rep = dict(self._rep)
        out._members = dict(self._members)
        out._dom = dict(self._dom)
        out._neq = self._neq
        out._cache = {}
        out._parent = self
        out._touched = frozenset()
        for v, dom in typed:
            if v in out._rep:
                raise ValueError(f"variable {v} already registered")
            if not dom:
                return None
            out._rep[v] = v
            out._members[v] = (v,)
            out._dom[v] = frozenset(dom)
        return out

    def unify_terms(self, pairs: Iterable[tuple[str, str]]) -> BindingSet | None:
        txn = _Txn(self)
        for a, b in pairs:
            if not txn.equate(a, b):
                return None
        return txn.commit()

    def unify(self, lit1: Literal, lit2: Literal) -> BindingSet | None:
        """Minimal extension making the two literals' arguments codesignate."""
        if lit1.predicate != lit2.predicate or len(lit1.args) != len(lit2.args):
            return None
        return self.unify_terms(zip(lit1.args, lit2.args))

    def can_unify(self, lit1: Literal, lit2: Literal) -> bool:
        if lit1.predicate != lit2.predicate or len(lit1.args) != len(lit2.args):
            return False
        for a, b in zip(lit1.args, lit2.args):
            if a != b and not is_var(a) and not is_var(b):
                return False
        if len(lit1.args) == 1:
            quick = self._can_equate(lit1.args[0], lit2.args[0])
            if quick is not None:
                return quick
        txn = _Txn(self)
        return all(txn.equate(a, b) for a, b in zip(lit1.args, lit2.args))

    def _can_equate(self, a: str, b: str) -> bool | None:
        """Answer without a transaction when no propagation can follow; else None."""
        av, bv = is_var(a), is_var(b)
        if not av and not bv:
            return a == b
        if not av:
            a, b, bv = b, a, av
        ra = self._rep[a]
        if not bv:
            d = self._dom[ra]
            return False if b not in d else (True if len(d) == 1 else None)
        rb = self._rep[b]
        if ra == rb:
            return True
        if rb in self._neq.get(ra, ()):
            return False
        common = len(self._dom[ra] & self._dom[rb])
        return False if common == 0 else (True if common > 1 else None)

    def cached(self, key, terms):
        """Memoized value for ``key`` computed from the classes of ``terms``.

        Ancestors' memos are consulted as long as no derivation in between
        changed the class of any of the terms.
        """
        b = self
        while b is not None:
            v = b._cache.get(key)
            if v is not None:
                if b is not self:
                    self._cache[key] = v
                return v
            t = b._touched
            if t is None or any(x in t for x in terms):
                return None
            b = b._parent
        return None

    def add_inequality(self, a: str, b: str) -> BindingSet | None:
        txn = _Txn(self)
        if not txn.separate(a, b):
            return None
        return txn.commit()

    def restrict(self, var: str, allowed) -> BindingSet | None:
        txn = _Txn(self)
        if not txn.restrict(txn.find(var), frozenset(allowed)):
            return None
        return txn.commit()

    # -- queries ------------------------------------------------------------

    def find(self, term: str) -> str:
        return self._rep[term] if is_var(term) else term

    def domain(self, term: str) -> frozenset[str]:
        if not is_var(term):
            return frozenset((term,))
        return self._dom[self._rep[term]]

    def value(self, term: str) -> str | None:
        """The constant a term is bound to, or ``None`` if still free."""
        if not is_var(term):
            return term
        d = self._dom[self._rep[term]]
        if len(d) == 1:
            return next(iter(d))
        return None

    def resolve(self, term: str) -> str:
        """Bound constant if any, otherwise the class representative."""
        v = self.value(term)
        return v if v is not None else self._rep[term]

    def resolve_literal(self, lit: Literal) -> Literal:
        return Literal(lit.predicate, tuple(self.resolve(a) for a in lit.args), lit.positive)

    def codesignated(self, a: str, b: str) -> bool:
        if a == b:
            return True
        va, vb = self.value(a), self.value(b)
        if va is not None and vb is not None:
            return va == vb
        if is_var(a) and is_var(b):
            return self._rep[a] == self._rep[b]
        return False

    def distinct(self, a: str, b: str) -> bool:
        """True when the constraints force ``a`` and ``b`` apart."""
        if self.codesignated(a, b):
            return False
        if not is_var(a) and not is_var(b):
            return True
        if not is_var(a):
            a, b = b, a
        if not is_var(b):
            return b not in self.domain(a)
        ra, rb = self._rep[a], self._rep[b]
        return rb in self._neq.get(ra, ()) or not (self._dom[ra] & self._dom[rb])

    def signature(self) -> frozenset:
        """Canonical description of the constraints, equal for equivalent sets."""
        sig = self._cache.get("signature")
        if sig is None:
            sig = self._cache["signature"] = self._signature()
        return sig

    def _signature(self) -> frozenset:
        canon = {r: min(m) for r, m in self._members.items() if m}
        out = []
        for r, name in canon.items():
            dom = self._dom[r]
            neq = frozenset(canon[n] for n in self._neq.get(r, ()) if n in canon)
            out.append((name, frozenset(self._members[r]), dom, neq))
        return frozenset(out)

    def inequalities(self, term: str) -> frozenset[str]:
        if not is_var(term):
            return frozenset()
        return self._neq.get(self._rep[term], frozenset())

    def variables(self) -> list[str]:
        return sorted(self._rep)

    def check(self) -> None:
        """Assert the structural invariants (debug validator)."""
        for v, r in self._rep.items():
            assert v in self._members[r], (v, r)
            assert self._dom[r], f"empty domain for {r}"
        for r, ns in self._neq.items():
            if not self._members.get(r):
                continue
            for n in ns:
                assert n != r, f"inequality inside class {r}"
                assert r in self._neq.get(n, ()), f"asymmetric inequality {r} {n}"
                if len(self._dom[r]) == 1:
                    assert self._dom[r] != self._dom[n], f"{r} and {n} both bound to the same constant"

    def grounding(self, variables: Iterable[str] | None = None) -> dict[str, str] | None:
        """Lexicographically least consistent assignment, or ``None``.

        Classes are assigned in order of their smallest member; each takes the
        least constant allowed by its domain that differs from every
        already-assigned class it must differ from.
        """
        vars_ = sorted(self._rep if variables is None else set(variables) & set(self._rep))
        reps = sorted({self._rep[v] for v in vars_}, key=lambda r: min(self._members[r]))
        # include classes constrained against the requested ones so choices stay consistent
        closure = list(reps)
        seen = set(reps)
        i = 0
        while i < len(closure):
            for n in sorted(self._neq.get(closure[i], ())):
                if n not in seen:
                    seen.add(n)
                    closure.append(n)
            i += 1
        order = sorted(closure, key=lambda r: min(self._members[r]))
        assign: dict[str, str] = {}

        def search(k: int) -> bool:
            if k == len(order):
                return True
            r = order[k]
            banned = {assign[n] for n in self._neq.get(r, ()) if n in assign}
            for c in sorted(self._dom[r]):
                if c in banned:
                    continue
                assign[r] = c
                if search(k + 1):
                    return True
                del assign[r]
            return False

        if not search(0):
            return None
        return {v: assign[self._rep[v]] for v in vars_}
