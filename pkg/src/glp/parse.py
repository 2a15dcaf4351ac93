"""Surface-syntax parser, SRSW checker and module loader.

One module per `.glp` file, name = file stem; loading several files
merges their clauses into one namespace (clause order per predicate is
load order, which matters for first-clause commit and `otherwise`).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from decimal import Decimal

from .terms import (
    Const, IdSource, Num, Struct, Term, Var, VarPair, cons, is_cons,
    make_list, make_num, print_term, term_vars, NIL,
)


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} at line {line}, column {col}")
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

SYMBOLS = [":-", ":=", "=\\=", "=<", ">=", "<", ">", "=",
           "+", "-", "*", "/", "|", ",", "(", ")", "[", "]", "?", "."]


@dataclass
class Token:
    kind: str   # atom var num quoted sym end
    value: object
    line: int
    col: int


def tokenize(text: str):
    tokens = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c.isspace():
            i += 1
            col += 1
            continue
        if c == "%":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_col = col
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
                tokens.append(Token("num", Decimal(text[i:j]), line, start_col))
            else:
                tokens.append(Token("num", int(text[i:j]), line, start_col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            if word == "mod":
                tokens.append(Token("sym", "mod", line, start_col))
            elif word[0].islower():
                tokens.append(Token("atom", word, line, start_col))
            else:
                tokens.append(Token("var", word, line, start_col))
            col += j - i
            i = j
            continue
        if c in "\"'":
            quote = c
            j = i + 1
            buf = []
            while j < n and text[j] != quote:
                if text[j] == "\\" and j + 1 < n:
                    esc = text[j + 1]
                    buf.append({"n": "\n", "t": "\t", "\\": "\\",
                                '"': '"', "'": "'"}.get(esc, esc))
                    j += 2
                else:
                    buf.append(text[j])
                    j += 1
            if j >= n:
                raise ParseError("unterminated quoted constant", line, start_col)
            tokens.append(Token("quoted", "".join(buf), line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        for sym in SYMBOLS:
            if text.startswith(sym, i):
                tokens.append(Token("sym", sym, line, start_col))
                i += len(sym)
                col += len(sym)
                break
        else:
            raise ParseError(f"unexpected character {c!r}", line, col)
    tokens.append(Token("end", None, line, col))
    return tokens


# ---------------------------------------------------------------------------
# Operator-precedence parser (higher number binds looser)
# ---------------------------------------------------------------------------

BINOPS = {
    ":-": (1200, "xfx"),
    "|": (1100, "xfx"),
    ",": (1000, "xfy"),
    "=": (700, "xfx"), "=\\=": (700, "xfx"), ":=": (700, "xfx"),
    "<": (700, "xfx"), ">": (700, "xfx"), "=<": (700, "xfx"), ">=": (700, "xfx"),
    "+": (500, "yfx"), "-": (500, "yfx"),
    "*": (400, "yfx"), "/": (400, "yfx"), "mod": (400, "yfx"),
}

ARG_PREC = 999  # argument positions sit just below ','


class TermParser:
    def __init__(self, tokens, ids: IdSource, origin: str = "local"):
        self.tokens = tokens
        self.pos = 0
        self.ids = ids
        self.origin = origin
        self.varmap: dict[str, VarPair] = {}

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value: str):
        tok = self.next()
        if tok.kind != "sym" or tok.value != value:
            raise ParseError(f"expected {value!r}, found {tok.value!r}",
                             tok.line, tok.col)

    def at_sym(self, *values) -> bool:
        tok = self.peek()
        return tok.kind == "sym" and tok.value in values

    def parse(self, max_prec: int = 1200) -> Term:
        left = self.primary()
        while True:
            tok = self.peek()
            if tok.kind != "sym" or tok.value not in BINOPS:
                return left
            prec, assoc = BINOPS[tok.value]
            if prec > max_prec:
                return left
            self.next()
            if assoc == "xfx":
                right = self.parse(prec - 1)
                nxt = self.peek()
                if nxt.kind == "sym" and nxt.value in BINOPS \
                        and BINOPS[nxt.value][0] == prec:
                    raise ParseError(f"operator {nxt.value!r} is not associative",
                                     nxt.line, nxt.col)
            elif assoc == "xfy":
                right = self.parse(prec)
            else:  # yfx
                right = self.parse(prec - 1)
            left = Struct(tok.value, (left, right))

    def primary(self) -> Term:
        tok = self.next()
        if tok.kind == "num":
            return make_num(tok.value)
        if tok.kind == "sym" and tok.value == "-" and self.peek().kind == "num":
            num = self.next()
            return make_num(-num.value)
        if tok.kind == "var":
            return self.variable(tok)
        if tok.kind in ("atom", "quoted"):
            if self.at_sym("("):
                return self.compound(tok.value)
            return Const(tok.value)
        if tok.kind == "sym" and tok.value == "(":
            inner = self.parse(1200)
            self.expect(")")
            return inner
        if tok.kind == "sym" and tok.value == "[":
            return self.list_term(tok)
        raise ParseError(f"unexpected token {tok.value!r}", tok.line, tok.col)

    def variable(self, tok: Token) -> Term:
        name = tok.value
        if name == "_":
            pair = self.ids.fresh("_", self.origin)
        else:
            pair = self.varmap.get(name)
            if pair is None:
                pair = self.ids.fresh(name, self.origin)
                self.varmap[name] = pair
        reader = False
        while self.at_sym("?"):
            self.next()
            reader = True  # `?` is identity on readers
        return Var(pair, reader)

    def compound(self, functor: str) -> Term:
        self.expect("(")
        args = [self.parse(ARG_PREC)]
        while self.at_sym(","):
            self.next()
            args.append(self.parse(ARG_PREC))
        self.expect(")")
        return Struct(functor, tuple(args))

    def list_term(self, open_tok: Token) -> Term:
        if self.at_sym("]"):
            self.next()
            return NIL
        items = [self.parse(ARG_PREC)]
        while self.at_sym(","):
            self.next()
            items.append(self.parse(ARG_PREC))
        tail: Term = NIL
        if self.at_sym("|"):
            self.next()
            tail = self.parse(ARG_PREC)
        self.expect("]")
        return make_list(items, tail)


def parse_term(text: str, ids: IdSource | None = None, origin: str = "local"):
    """Parse a single term; returns (term, name->VarPair map)."""
    parser = TermParser(tokenize(text), ids or IdSource(), origin)
    term = parser.parse(1200)
    tok = parser.peek()
    if parser.at_sym("."):
        parser.next()
        tok = parser.peek()
    if tok.kind != "end":
        raise ParseError(f"trailing input {tok.value!r}", tok.line, tok.col)
    return term, parser.varmap


def parse_goal(text: str, ids: IdSource | None = None, origin: str = "local"):
    """Parse a (possibly conjunctive) goal; returns (atoms, name map)."""
    term, varmap = parse_term(text, ids, origin)
    return flatten_conj(term), varmap


def flatten_conj(t: Term) -> list[Term]:
    out = []
    stack = [t]
    while stack:
        cur = stack.pop()
        if isinstance(cur, Struct) and cur.functor == "," and len(cur.args) == 2:
            stack.append(cur.args[1])
            stack.append(cur.args[0])
        elif isinstance(cur, Const) and cur.name == "true":
            continue
        else:
            out.append(cur)
    return out


# ---------------------------------------------------------------------------
# Clauses and modules
# ---------------------------------------------------------------------------

@dataclass
class Clause:
    head: Term
    guard: list
    body: list
    line: int = 0
    source: str = ""
    prelude: bool = False

    def key(self) -> tuple[str, int]:
        if isinstance(self.head, Const):
            return (self.head.name, 0)
        return (self.head.functor, len(self.head.args))

    def parts(self):
        return [self.head, *self.guard, *self.body]


@dataclass
class SrswViolation:
    clause_index: int
    line: int
    hint: str
    reader: bool
    count: int
    source: str

    def __str__(self):
        kind = "reader" if self.reader else "writer"
        return (f"clause {self.clause_index} (line {self.line}): "
                f"{kind} {self.hint} occurs {self.count} times")


@dataclass
class Module:
    name: str
    clauses: list = field(default_factory=list)
    procedures: dict = field(default_factory=dict)  # (functor, arity) -> [Clause]
    srsw_report: list = field(default_factory=list)
    _hash: str | None = None

    def add_clause(self, clause: Clause):
        self.clauses.append(clause)
        self.procedures.setdefault(clause.key(), []).append(clause)
        self._hash = None

    def procedure(self, functor: str, arity: int):
        return self.procedures.get((functor, arity))

    @property
    def hash(self) -> str:
        if self._hash is None:
            self._hash = module_hash(self)
        return self._hash


PRELUDE_TEXT = """
X? := E :- ground(E) | evaluate(E?, X).
export_reader(Y, Z?) :- known(Y) | Z = Y?.
"""


def split_clause(term: Term, line: int, source: str = "") -> Clause:
    guard: list = []
    body: list = []
    head = term
    if isinstance(term, Struct) and term.functor == ":-" and len(term.args) == 2:
        head, rest = term.args
        if isinstance(rest, Struct) and rest.functor == "|" and len(rest.args) == 2:
            guard = flatten_conj(rest.args[0])
            body = flatten_conj(rest.args[1])
        else:
            body = flatten_conj(rest)
    if isinstance(head, Var) or isinstance(head, Num) or is_cons(head) \
            or (isinstance(head, Struct) and head.functor in (",", "|", ":-")):
        raise ParseError("clause head must be an atom", line, 0)
    return Clause(head, guard, body, line, source)


def parse_module(text: str, name: str = "main") -> Module:
    module = Module(name)
    tokens = tokenize(text)
    pos = 0
    ids = IdSource()
    while tokens[pos].kind != "end":
        parser = TermParser(tokens, ids)
        parser.pos = pos
        start = tokens[pos]
        term = parser.parse(1200)
        parser.expect(".")
        pos = parser.pos
        module.add_clause(split_clause(term, start.line, name))
    module.srsw_report = srsw_check(module)
    return module


def load_prelude(module: Module):
    prelude = parse_module(PRELUDE_TEXT, "prelude")
    for clause in prelude.clauses:
        clause.prelude = True
        module.add_clause(clause)
    module._hash = None
    return module


def load_module_files(paths) -> Module:
    """Load several `.glp` files into one namespace (duplicate names error)."""
    seen = set()
    combined = Module("+".join(stem_of(p) for p in paths) or "empty")
    for path in paths:
        stem = stem_of(path)
        if stem in seen:
            raise ParseError(f"duplicate module name {stem!r}", 0, 0)
        seen.add(stem)
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        sub = parse_module(text, stem)
        for clause in sub.clauses:
            combined.add_clause(clause)
    combined.srsw_report = srsw_check(combined)
    load_prelude(combined)
    return combined


def stem_of(path) -> str:
    import os
    return os.path.splitext(os.path.basename(str(path)))[0]


# ---------------------------------------------------------------------------
# SRSW static check
# ---------------------------------------------------------------------------

def ground_waived(clause: Clause) -> set[int]:
    """Pair ids waived by a ground/1 guard on that variable."""
    waived = set()
    for g in clause.guard:
        if isinstance(g, Struct) and g.functor == "ground" and len(g.args) == 1:
            arg = g.args[0]
            if isinstance(arg, Var):
                waived.add(arg.vid)
    return waived


def srsw_check(module: Module) -> list[SrswViolation]:
    """Flag variables occurring more than once per polarity in head+body.

    Guard occurrences are read-only and exempt; a ground/1 guard on a
    variable waives the whole pair for that clause.
    """
    report = []
    for idx, clause in enumerate(module.clauses):
        if clause.prelude:
            continue
        waived = ground_waived(clause)
        counts: dict[tuple[int, bool], int] = {}
        hints: dict[int, str] = {}
        for part in [clause.head, *clause.body]:
            for v in term_vars(part):
                counts[v.key()] = counts.get(v.key(), 0) + 1
                hints[v.vid] = v.pair.hint
        for (vid, reader), count in sorted(counts.items()):
            if count > 1 and vid not in waived:
                hint = hints[vid] + ("?" if reader else "")
                report.append(SrswViolation(idx, clause.line, hint,
                                            reader, count, clause.source))
    return report


def has_writer_violation(report) -> bool:
    return any(not v.reader for v in report)


# ---------------------------------------------------------------------------
# Canonical clause serialization and hashing
# ---------------------------------------------------------------------------

def print_clause(clause: Clause, rename: dict | None = None) -> str:
    if rename is None:
        rename = {}
    head = print_term(clause.head, rename)
    if not clause.guard and not clause.body:
        return head + "."
    body = ",".join(print_term(b, rename) for b in clause.body) or "true"
    if clause.guard:
        guard = ",".join(print_term(g, rename) for g in clause.guard)
        return f"{head} :- {guard} | {body}."
    return f"{head} :- {body}."


def print_module(module: Module) -> str:
    lines = []
    for clause in module.clauses:
        if clause.prelude:
            continue
        lines.append(print_clause(clause, {}))
    return "\n".join(lines) + "\n"


def module_hash(module: Module) -> str:
    """Digest of the canonical serialization; any clause edit changes it."""
    return hashlib.sha256(print_module(module).encode("utf-8")).hexdigest()
