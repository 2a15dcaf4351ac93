"""Terms, paired variables, substitutions and the binding store.

A logic variable is a pair: the writer half may be assigned once, the
reader half observes the value.  Terms are immutable; dereferencing
against a store preserves object identity of subterms that contain no
bound variables (delivered message payloads keep their identity, which
the attestation machinery relies on).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal

# Dereference chains longer than this indicate a cyclic term, which the
# occurs checks are supposed to make impossible.
MAX_DEREF_DEPTH = 100_000


class CorruptionError(Exception):
    """Internal invariant broke: a cycle showed up during dereference."""


@dataclass(frozen=True)
class VarPair:
    """Identity of a writer/reader pair: globally unique id within a run."""

    vid: int
    origin: str = "local"  # creating agent id, or "local" for single-agent runs
    hint: str = "_"        # source-text name, only for readability of traces


class Term:
    __slots__ = ()


@dataclass(frozen=True)
class Var(Term):
    pair: VarPair
    reader: bool = False

    @property
    def vid(self) -> int:
        return self.pair.vid

    def counterpart(self) -> "Var":
        return Var(self.pair, not self.reader)

    def key(self) -> tuple[int, bool]:
        return (self.pair.vid, self.reader)


@dataclass(frozen=True)
class Const(Term):
    name: str


@dataclass(frozen=True)
class Num(Term):
    value: object  # int or Decimal, normalized by make_num

    def __post_init__(self):
        assert isinstance(self.value, (int, Decimal))


@dataclass(frozen=True)
class Struct(Term):
    functor: str
    args: tuple


NIL = Const("[]")
TRUE = Const("true")


def make_num(value) -> Num:
    """Normalize a numeric value: integral decimals become ints."""
    if isinstance(value, Decimal):
        if value == value.to_integral_value():
            return Num(int(value))
        return Num(value.normalize())
    return Num(int(value))


def cons(head: Term, tail: Term) -> Struct:
    return Struct(".", (head, tail))


def make_list(items, tail: Term = NIL) -> Term:
    out = tail
    for item in reversed(list(items)):
        out = cons(item, out)
    return out


def is_cons(t: Term) -> bool:
    return isinstance(t, Struct) and t.functor == "." and len(t.args) == 2


def is_atom(t: Term) -> bool:
    """An atom is a constant or a composite term (callable as a goal)."""
    return isinstance(t, (Const, Struct))


class IdSource:
    """Monotone allocator of pair ids; never reuses an id within a run."""

    def __init__(self, start: int = 0):
        self._next = start

    def fresh(self, hint: str = "_", origin: str = "local") -> VarPair:
        pair = VarPair(self._next, origin, hint)
        self._next += 1
        return pair

    @property
    def next_id(self) -> int:
        return self._next


class Subst:
    """An idempotent assignment set {X:=T, ...} keyed by (vid, polarity).

    `pairs` carries VarPair objects for the vids involved, so callers can
    reconstruct full variables (origin, hint) from the keys.
    """

    def __init__(self, items=None, pairs=None):
        self.map: dict[tuple[int, bool], Term] = dict(items or {})
        self.pairs: dict[int, VarPair] = dict(pairs or {})

    def __bool__(self):
        return bool(self.map)

    def __len__(self):
        return len(self.map)

    def __eq__(self, other):
        return isinstance(other, Subst) and self.map == other.map

    def lookup(self, v: Var):
        return self.map.get(v.key())

    def bind(self, v: Var, t: Term):
        self.map[v.key()] = t

    def items_sorted(self):
        return sorted(self.map.items(), key=lambda kv: (kv[0][0], kv[0][1]))

    def apply(self, t: Term) -> Term:
        """Replace every assigned variable occurrence by its value (one pass)."""
        if isinstance(t, Var):
            got = self.map.get(t.key())
            return t if got is None else got
        if isinstance(t, Struct):
            if is_cons(t):
                return self._apply_list(t)
            new_args = tuple(self.apply(a) for a in t.args)
            if all(n is o for n, o in zip(new_args, t.args)):
                return t
            return Struct(t.functor, new_args)
        return t

    def _apply_list(self, t: Struct) -> Term:
        # iterative over cons spines so long lists do not recurse deeply
        spine = []
        cur: Term = t
        while is_cons(cur):
            spine.append((cur, self.apply(cur.args[0])))
            cur = cur.args[1]
        out = self.apply(cur)
        for cell, h in reversed(spine):
            if h is cell.args[0] and out is cell.args[1]:
                out = cell
            else:
                out = cons(h, out)
        return out


def reader_counterpart(sigma: Subst) -> Subst:
    """The reader substitution delivering each writer binding to its pair."""
    out = Subst()
    for (vid, reader), t in sigma.map.items():
        if reader:
            raise ValueError("reader_counterpart requires a writer substitution")
        out.map[(vid, True)] = t
    return out


class Derefable:
    """Shared dereferencing over some (vid, polarity) -> Term lookup."""

    def lookup(self, key: tuple[int, bool]):
        raise NotImplementedError

    def is_bound(self, v: Var) -> bool:
        return self.lookup(v.key()) is not None

    def walk(self, t: Term) -> Term:
        """Follow variable bindings at the top until unbound or non-var."""
        depth = 0
        while isinstance(t, Var):
            nxt = self.lookup(t.key())
            if nxt is None:
                return t
            t = nxt
            depth += 1
            if depth > MAX_DEREF_DEPTH:
                raise CorruptionError("dereference chain too long (cycle?)")
        return t

    def resolve(self, t: Term, _depth: int = 0) -> Term:
        """Fully dereference: every bound variable occurrence replaced.

        Unchanged subterms come back as the same objects, so delivered
        payloads keep their identity through reads.
        """
        if _depth > MAX_DEREF_DEPTH:
            raise CorruptionError("resolve exceeded depth bound (cycle?)")
        walked = self.walk(t)
        if isinstance(walked, (Var, Const, Num)):
            return walked
        if is_cons(walked):
            return self._resolve_list(walked, _depth)
        assert isinstance(walked, Struct)
        new_args = tuple(self.resolve(a, _depth + 1) for a in walked.args)
        if all(n is o for n, o in zip(new_args, walked.args)):
            return walked
        return Struct(walked.functor, new_args)

    def _resolve_list(self, t: Struct, _depth: int) -> Term:
        # t is a cons cell already walked; keep suffix sharing so that
        # unchanged stored cells come back identical
        spine = []
        cur: Term = t
        while True:
            if len(spine) > MAX_DEREF_DEPTH:
                raise CorruptionError("list spine too long (cycle?)")
            spine.append((cur, self.resolve(cur.args[0], _depth + 1)))
            nxt = self.walk(cur.args[1])
            if not is_cons(nxt):
                out = self.resolve(nxt, _depth + 1)
                break
            cur = nxt
        for cell, h in reversed(spine):
            if h is cell.args[0] and out is cell.args[1]:
                out = cell
            else:
                out = cons(h, out)
        return out


class BindingStore(Derefable):
    """Single-assignment store: (pair id, polarity) -> value, plus abandonment.

    Observationally equivalent to eager substitution application over
    whole resolvents: assignments are recorded once, dereferenced on read.
    """

    def __init__(self):
        self.bindings: dict[tuple[int, bool], Term] = {}
        self.abandoned: set[tuple[int, bool]] = set()

    def lookup(self, key):
        return self.bindings.get(key)

    def is_abandoned(self, v: Var) -> bool:
        return v.key() in self.abandoned

    def bind(self, v: Var, t: Term):
        key = v.key()
        if key in self.bindings:
            raise CorruptionError(
                f"rebinding of _W{v.pair.vid}{'?' if v.reader else ''}")
        self.bindings[key] = t

    def mark_abandoned(self, v: Var):
        self.abandoned.add(v.key())


class View(Derefable):
    """A store with an overlay of tentative bindings (uncommitted guards)."""

    def __init__(self, store: BindingStore, overlay: dict | None = None):
        self.store = store
        self.overlay: dict[tuple[int, bool], Term] = overlay if overlay is not None else {}

    def lookup(self, key):
        got = self.overlay.get(key)
        if got is not None:
            return got
        return self.store.lookup(key)

    def is_abandoned(self, v: Var) -> bool:
        return self.store.is_abandoned(v)

    def bind(self, v: Var, t: Term):
        key = v.key()
        if self.lookup(key) is not None:
            raise CorruptionError(
                f"rebinding of _W{v.pair.vid}{'?' if v.reader else ''}")
        self.overlay[key] = t


def apply(t: Term, sigma: Subst, store: "Derefable | None" = None) -> Term:
    """Apply a substitution, dereferencing through the store when given."""
    out = sigma.apply(t)
    if store is not None:
        out = store.resolve(out)
    return out


def term_vars(t: Term):
    """All variable occurrences, left to right (no dereferencing)."""
    out = []
    stack = [t]
    while stack:
        cur = stack.pop()
        if isinstance(cur, Var):
            out.append(cur)
        elif isinstance(cur, Struct):
            stack.extend(reversed(cur.args))
    return out


def occurs(v: Var, t: Term) -> bool:
    return any(w.key() == v.key() for w in term_vars(t))


def pair_occurs(pair_vid: int, t: Term) -> bool:
    return any(w.vid == pair_vid for w in term_vars(t))


def is_ground(t: Term) -> bool:
    return not term_vars(t)


def classify(t: Term, store: BindingStore) -> str:
    """One of ground, known_nonground, unbound_writer, unbound_reader."""
    r = store.resolve(t)
    if isinstance(r, Var):
        return "unbound_reader" if r.reader else "unbound_writer"
    return "ground" if is_ground(r) else "known_nonground"


def rename_terms(terms, ids: IdSource, origin: str = "local"):
    """Variant of `terms` over fresh pairs, writer->writer, reader->paired
    reader of the same fresh pair.  Fresh ids are allocated in order of
    first occurrence, so the result is deterministic given the counter.
    """
    mapping: dict[int, VarPair] = {}

    def walk(t: Term) -> Term:
        if isinstance(t, Var):
            fresh = mapping.get(t.vid)
            if fresh is None:
                fresh = ids.fresh(t.pair.hint, origin)
                mapping[t.vid] = fresh
            return Var(fresh, t.reader)
        if isinstance(t, Struct):
            if is_cons(t):
                heads = []
                cur: Term = t
                while is_cons(cur):
                    heads.append(walk(cur.args[0]))
                    cur = cur.args[1]
                return make_list(heads, walk(cur))
            return Struct(t.functor, tuple(walk(a) for a in t.args))
        return t

    return [walk(t) for t in terms], mapping


def to_pure_logic(t: Term) -> Term:
    """Pure logic variant: every reader replaced by its paired writer."""
    if isinstance(t, Var):
        return Var(t.pair, False) if t.reader else t
    if isinstance(t, Struct):
        if is_cons(t):
            heads = []
            cur: Term = t
            while is_cons(cur):
                heads.append(to_pure_logic(cur.args[0]))
                cur = cur.args[1]
            return make_list(heads, to_pure_logic(cur))
        return Struct(t.functor, tuple(to_pure_logic(a) for a in t.args))
    return t


def match(pattern: Term, t: Term, binding: dict | None = None):
    """One-way matching: pattern variables capture subterms of `t`.

    Used by scenario scripts; repeated pattern variables must capture
    equal subterms.  Returns the capture dict or None.
    """
    if binding is None:
        binding = {}
    if isinstance(pattern, Var):
        seen = binding.get(pattern.vid)
        if seen is None:
            binding[pattern.vid] = t
            return binding
        return binding if seen == t else None
    if isinstance(pattern, Const):
        return binding if pattern == t else None
    if isinstance(pattern, Num):
        return binding if isinstance(t, Num) and num_eq(pattern, t) else None
    assert isinstance(pattern, Struct)
    if not isinstance(t, Struct) or t.functor != pattern.functor \
            or len(t.args) != len(pattern.args):
        return None
    for p, s in zip(pattern.args, t.args):
        if match(p, s, binding) is None:
            return None
    return binding


def num_eq(a: Num, b: Num) -> bool:
    return a.value == b.value


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

BARE_ATOM = re.compile(r"^[a-z][A-Za-z0-9_]*$")

# binary operators printed infix, always parenthesized
INFIX = {"=", "=\\=", ":=", "<", ">", "=<", ">=", "+", "-", "*", "/", "mod"}


def quote_atom(name: str) -> str:
    if BARE_ATOM.match(name) or name == "[]":
        return name
    escaped = name.replace("\\", "\\\\").replace('"', '\\"') \
                  .replace("\n", "\\n").replace("\t", "\\t")
    return f'"{escaped}"'


def format_num(n: Num) -> str:
    v = n.value
    if isinstance(v, int):
        return str(v)
    return format(v, "f")


def print_term(t: Term, rename: dict | None = None) -> str:
    """Canonical text of a term.

    `rename` maps pair vids to print ids; when given, unseen vids are
    numbered by first occurrence (used for clause canonicalization).
    """
    parts: list[str] = []
    _print(t, parts, rename)
    return "".join(parts)


def _var_name(v: Var, rename: dict | None) -> str:
    if rename is None:
        n = v.vid
    else:
        n = rename.setdefault(v.vid, len(rename))
    return f"_W{n}?" if v.reader else f"_W{n}"


def _print(t: Term, parts: list, rename):
    if isinstance(t, Var):
        parts.append(_var_name(t, rename))
    elif isinstance(t, Const):
        parts.append(quote_atom(t.name))
    elif isinstance(t, Num):
        parts.append(format_num(t))
    elif is_cons(t):
        parts.append("[")
        first = True
        cur: Term = t
        while is_cons(cur):
            if not first:
                parts.append(",")
            _print(cur.args[0], parts, rename)
            first = False
            cur = cur.args[1]
        if cur != NIL:
            parts.append("|")
            _print(cur, parts, rename)
        parts.append("]")
    else:
        assert isinstance(t, Struct)
        if t.functor in INFIX and len(t.args) == 2:
            parts.append("(")
            _print(t.args[0], parts, rename)
            parts.append(t.functor)
            _print(t.args[1], parts, rename)
            parts.append(")")
            return
        parts.append(quote_atom(t.functor))
        parts.append("(")
        for i, a in enumerate(t.args):
            if i:
                parts.append(",")
            _print(a, parts, rename)
        parts.append(")")
