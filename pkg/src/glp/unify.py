"""Writer unification: the succeed / suspend / fail trichotomy.

A regular mgu is computed first, treating readers and writers as
ordinary distinct variables (occurs check on).  The outcome is then
classified: a regular mgu that is a writer substitution succeeds; one
that binds readers to non-variables suspends on exactly those readers;
cyclic or writer-to-writer obstructions with nothing to wait on fail.
"""

from __future__ import annotations

from dataclasses import dataclass

from .terms import (
    Const, Derefable, Num, Struct, Subst, Term, Var, num_eq, term_vars,
)


@dataclass
class Success:
    sigma: Subst


@dataclass
class Suspend:
    blockers: frozenset  # of Var(reader)

    def sorted_blockers(self):
        return sorted(self.blockers, key=lambda v: v.vid)


@dataclass
class Fail:
    reason: str  # clash | cycle | writer_writer | reader_needs_value


class _Clash(Exception):
    pass


class _Cycle(Exception):
    pass


class _EmptyDeref(Derefable):
    def lookup(self, key):
        return None


EMPTY_DEREF = _EmptyDeref()


class _RegularUnifier:
    """Regular mgu over equations, with the binding orientation that finds
    a writer mgu whenever one exists: writers bind to anything non-writer,
    readers bind only against non-variables or other readers."""

    def __init__(self, deref: Derefable):
        self.deref = deref
        self.subst: dict[tuple[int, bool], Term] = {}
        self.pairs: dict[int, object] = {}  # vid -> VarPair, for reporting

    def note(self, v: Var):
        self.pairs.setdefault(v.vid, v.pair)

    def walk(self, t: Term) -> Term:
        while True:
            t = self.deref.walk(t)
            if isinstance(t, Var):
                self.note(t)
                nxt = self.subst.get(t.key())
                if nxt is None:
                    return t
                t = nxt
            else:
                return t

    def occurs_in(self, v: Var, t: Term) -> bool:
        stack = [t]
        while stack:
            cur = self.walk(stack.pop())
            if isinstance(cur, Var):
                if cur.key() == v.key():
                    return True
            elif isinstance(cur, Struct):
                stack.extend(cur.args)
        return False

    def bind(self, v: Var, t: Term):
        if self.occurs_in(v, t):
            raise _Cycle()
        one = Subst({v.key(): t})
        for key, old in self.subst.items():
            self.subst[key] = one.apply(old)
        self.subst[v.key()] = t

    def solve(self, eqs):
        work = list(eqs)
        while work:
            a, b = work.pop()
            a, b = self.walk(a), self.walk(b)
            if isinstance(a, Var) and isinstance(b, Var) and a.key() == b.key():
                continue
            if isinstance(a, Var) or isinstance(b, Var):
                if isinstance(a, Var) and not a.reader:
                    self.bind(a, b)
                elif isinstance(b, Var) and not b.reader:
                    self.bind(b, a)
                elif isinstance(a, Var):
                    self.bind(a, b)  # reader against non-var or reader
                else:
                    self.bind(b, a)
                continue
            if isinstance(a, Const) and isinstance(b, Const):
                if a.name != b.name:
                    raise _Clash()
                continue
            if isinstance(a, Num) and isinstance(b, Num):
                if not num_eq(a, b):
                    raise _Clash()
                continue
            if isinstance(a, Struct) and isinstance(b, Struct):
                if a.functor != b.functor or len(a.args) != len(b.args):
                    raise _Clash()
                work.extend(zip(a.args, b.args))
                continue
            raise _Clash()
        return self.subst


def unify_equations(eqs, deref: Derefable | None = None):
    """Simultaneous writer unification of (a, b) term pairs.

    Any failure dominates; otherwise suspends on the union of readers the
    regular mgu binds to non-variables; otherwise succeeds with the
    combined writer mgu (unique, so returned as-is).
    """
    if deref is None:
        deref = EMPTY_DEREF
    uni = _RegularUnifier(deref)
    try:
        subst = uni.solve(eqs)
    except _Clash:
        return Fail("clash")
    except _Cycle:
        return Fail("cycle")

    binds_reader = False
    writer_writer = False
    cycle = False
    blockers = []
    for (vid, reader), val in subst.items():
        if reader:
            binds_reader = True
            if not isinstance(val, Var):
                blockers.append(Var(uni.pairs[vid], True))
        else:
            if isinstance(val, Var) and not val.reader:
                writer_writer = True
            if any(w.reader and w.vid == vid for w in term_vars(val)):
                cycle = True

    if cycle:
        return Fail("cycle")
    if not binds_reader and not writer_writer:
        return Success(Subst(subst, uni.pairs))
    if blockers:
        return Suspend(frozenset(blockers))
    if writer_writer:
        return Fail("writer_writer")
    return Fail("reader_needs_value")


def writer_unify(a: Term, b: Term, deref: Derefable | None = None):
    """Writer unification of two terms against a store (or none)."""
    return unify_equations([(a, b)], deref)
