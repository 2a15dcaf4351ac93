"""Deterministic single-agent scheduler.

Configuration is the triple (Q, S, F): FIFO active queue, suspended
goals with their blocker sets, failed goals.  One reduction pops the
head goal, scans its procedure's clauses in source order and commits to
the first applicable one; otherwise the goal suspends on the union of
blockers or fails.  Guard bindings are buffered and take effect only on
commit.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from decimal import Decimal, DivisionByZero, InvalidOperation

from .parse import Clause, Module, has_writer_violation
from .terms import (
    BindingStore, Const, Derefable, IdSource, Num, Struct, Subst, Term, Var,
    View, classify, is_atom, make_num, print_term, rename_terms, term_vars,
)
from .unify import Fail, Success, Suspend, unify_equations, writer_unify


class GlpError(Exception):
    pass


class LoadError(GlpError):
    pass


class ContractViolation(GlpError):
    pass


TEST_GUARDS = {("ground", 1), ("known", 1), ("unknown", 1), ("writer", 1),
               ("reader", 1), ("otherwise", 0), ("=\\=", 2),
               ("<", 2), (">", 2), ("=<", 2), (">=", 2)}
BINDING_GUARDS = {("=", 2), ("attestation", 2), ("module", 1),
                  ("current_time", 1), ("variable_name", 2)}
BUILTIN_GOALS = {("true", 0), ("=", 2), ("evaluate", 2),
                 ("current_time", 1), ("variable_name", 2)}


@dataclass
class Goal:
    gid: int
    term: Term


@dataclass
class Commit:
    clause_index: int
    sigma: Subst                  # total writer bindings (head + guards)
    body: list                    # renamed body atoms
    renames: dict                 # template vid -> runtime VarPair
    clause: Clause | None = None


@dataclass
class ClauseSuspend:
    blockers: frozenset


@dataclass
class ClauseFail:
    reason: str = "clash"


@dataclass
class GuardOutcome:
    kind: str                     # succeed | suspend | fail
    extra: Subst = field(default_factory=Subst)
    blockers: frozenset = frozenset()


G_OK = GuardOutcome("succeed")
G_FAIL = GuardOutcome("fail")


def call_key(t: Term):
    if isinstance(t, Const):
        return (t.name, 0)
    if isinstance(t, Struct):
        return (t.functor, len(t.args))
    return None


def validate_module(module: Module):
    """Guard calls must name known guards or all-unit procedures."""
    for clause in module.clauses:
        for g in clause.guard:
            key = call_key(g)
            if key is None:
                raise LoadError(f"guard is not an atom in clause at line {clause.line}")
            if key in TEST_GUARDS or key in BINDING_GUARDS:
                continue
            proc = module.procedure(*key)
            if proc is None:
                raise LoadError(f"unknown guard predicate {key[0]}/{key[1]} "
                                f"(line {clause.line})")
            if any(c.guard or c.body for c in proc):
                raise LoadError(f"guard predicate {key[0]}/{key[1]} must be "
                                f"defined by unit clauses (line {clause.line})")


class EngineConfig:
    """The (Q, S, F) triple plus store, id source and bookkeeping."""

    def __init__(self, module: Module, ids: IdSource | None = None,
                 store: BindingStore | None = None, agent: str = "local",
                 clock=None, hooks=None, gid_source=None):
        self.module = module
        self.ids = ids or IdSource()
        self.store = store or BindingStore()
        self.agent = agent
        self.queue: deque[Goal] = deque()
        self.suspended: dict[int, tuple[Goal, frozenset]] = {}
        self.by_blocker: dict[int, list[int]] = {}
        self.failed: list[tuple[Goal, str]] = []
        self.step_count = 0
        self._gids = gid_source or IdSource()
        self._clock = clock or (lambda: self.step_count)
        self.hooks = hooks
        # provenance: id(term object) -> (agent const, module hash const)
        self.provenance: dict[int, tuple] = {}
        self._provenance_keep: list = []

    def new_goal(self, term: Term) -> Goal:
        return Goal(self._gids.fresh().vid, term)

    def push_goals(self, terms):
        goals = [self.new_goal(t) for t in terms]
        self.queue.extend(goals)
        return goals

    def attestation_of(self, obj: Term):
        """AttestationInfo for a resolved term: recorded sender or self."""
        got = self.provenance.get(id(obj))
        if got is not None:
            return got
        return (Const("self"), Const(self.module.hash))

    def register_provenance(self, obj: Term, agent_const: Const,
                            module_const: Const):
        """Record delivery provenance for obj and all its subterms.

        Existing records are kept (nested forwards keep the inner
        sender), and objects are pinned so ids stay unique.
        """
        stack = [obj]
        while stack:
            cur = stack.pop()
            if id(cur) not in self.provenance:
                self.provenance[id(cur)] = (agent_const, module_const)
                self._provenance_keep.append(cur)
            if isinstance(cur, Struct):
                stack.extend(cur.args)

    def live_goals(self):
        out = list(self.queue)
        out.extend(goal for goal, _ in self.suspended.values())
        return out

    def suspend_goal(self, goal: Goal, blockers: frozenset):
        self.suspended[goal.gid] = (goal, blockers)
        for b in sorted(blockers, key=lambda v: v.vid):
            self.by_blocker.setdefault(b.vid, []).append(goal.gid)

    def wake(self, vids) -> list[Goal]:
        """Suspended goals blocked on any of `vids`, in suspension order."""
        gids = []
        for vid in vids:
            for gid in self.by_blocker.get(vid, []):
                if gid in self.suspended and gid not in gids:
                    gids.append(gid)
        woken = []
        for gid in sorted(gids, key=self._suspension_order):
            goal, blockers = self.suspended.pop(gid)
            for b in blockers:
                lst = self.by_blocker.get(b.vid)
                if lst and gid in lst:
                    lst.remove(gid)
            woken.append(goal)
        return woken

    def _suspension_order(self, gid: int) -> int:
        return list(self.suspended).index(gid)


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------

class _ArithError(Exception):
    pass


def arith_eval(t: Term):
    """Numeric value of a fully resolved ground expression."""
    if isinstance(t, Num):
        return t.value
    if isinstance(t, Struct) and len(t.args) == 2 \
            and t.functor in ("+", "-", "*", "/", "mod"):
        a = arith_eval(t.args[0])
        b = arith_eval(t.args[1])
        try:
            if t.functor == "+":
                return a + b
            if t.functor == "-":
                return a - b
            if t.functor == "*":
                return a * b
            if t.functor == "mod":
                if not isinstance(a, int) or not isinstance(b, int):
                    raise _ArithError("mod needs integers")
                return a % b
            if isinstance(a, int) and isinstance(b, int):
                if b == 0:
                    raise _ArithError("division by zero")
                if a % b == 0:
                    return a // b
            return Decimal(a) / Decimal(b)
        except (DivisionByZero, InvalidOperation, ZeroDivisionError):
            raise _ArithError("division by zero")
    raise _ArithError(f"not arithmetic: {print_term(t)}")


def frontier_readers(t: Term) -> frozenset:
    return frozenset(v for v in term_vars(t) if v.reader)


def arith_guard_value(t: Term, view: Derefable):
    """('ok', value) | ('suspend', readers) | ('fail', None)."""
    r = view.resolve(t)
    if term_vars(r):
        return ("suspend", frontier_readers(r))
    try:
        return ("ok", arith_eval(r))
    except _ArithError:
        return ("fail", None)


# ---------------------------------------------------------------------------
# Guards
# ---------------------------------------------------------------------------

def eval_guard(call: Term, view: View, cfg: EngineConfig,
               prior_outcomes: list) -> GuardOutcome:
    key = call_key(call)
    name, arity = key
    args = call.args if isinstance(call, Struct) else ()

    if key == ("otherwise", 0):
        if all(isinstance(o, ClauseFail) for o in prior_outcomes):
            return G_OK
        blockers = frozenset().union(
            *[o.blockers for o in prior_outcomes if isinstance(o, ClauseSuspend)])
        if blockers or any(isinstance(o, ClauseSuspend) for o in prior_outcomes):
            return GuardOutcome("suspend", blockers=blockers)
        return G_FAIL

    if key == ("ground", 1):
        r = view.resolve(args[0])
        if not term_vars(r):
            return G_OK
        return GuardOutcome("suspend", blockers=frontier_readers(r))

    if key == ("known", 1):
        r = view.resolve(args[0])
        if isinstance(r, Var):
            blockers = frozenset([r]) if r.reader else frozenset()
            return GuardOutcome("suspend", blockers=blockers)
        return G_OK

    if key == ("unknown", 1):
        return G_OK if isinstance(view.resolve(args[0]), Var) else G_FAIL

    if key == ("writer", 1):
        r = view.resolve(args[0])
        return G_OK if isinstance(r, Var) and not r.reader else G_FAIL

    if key == ("reader", 1):
        r = view.resolve(args[0])
        return G_OK if isinstance(r, Var) and r.reader else G_FAIL

    if key == ("=", 2):
        return unify_to_guard(writer_unify(args[0], args[1], view))

    if key == ("=\\=", 2):
        out = writer_unify(args[0], args[1], view)
        if isinstance(out, Success):
            return G_FAIL
        if isinstance(out, Fail):
            return G_OK
        return GuardOutcome("suspend", blockers=out.blockers)

    if key in (("<", 2), (">", 2), ("=<", 2), (">=", 2)):
        left = arith_guard_value(args[0], view)
        right = arith_guard_value(args[1], view)
        for st, _ in (left, right):
            if st == "fail":
                return G_FAIL
        blockers = frozenset()
        for st, val in (left, right):
            if st == "suspend":
                blockers |= val
        if blockers:
            return GuardOutcome("suspend", blockers=blockers)
        a, b = left[1], right[1]
        holds = {"<": a < b, ">": a > b, "=<": a <= b, ">=": a >= b}[name]
        return G_OK if holds else G_FAIL

    if key == ("attestation", 2):
        r = view.resolve(args[0])
        if isinstance(r, Var):
            return G_FAIL
        agent_const, module_const = cfg.attestation_of(r)
        info = Struct("att", (agent_const, module_const))
        return unify_to_guard(writer_unify(args[1], info, view))

    if key == ("module", 1):
        return unify_to_guard(
            writer_unify(args[0], Const(cfg.module.hash), view))

    if key == ("current_time", 1):
        return unify_to_guard(
            writer_unify(args[0], make_num(cfg._clock()), view))

    if key == ("variable_name", 2):
        r = view.resolve(args[0])
        if not isinstance(r, Var):
            return G_FAIL
        return unify_to_guard(
            writer_unify(args[1], Const(f"_W{r.vid}"), view))

    # defined guard: fold against the procedure's unit clauses in order
    proc = cfg.module.procedure(name, arity)
    if proc is None:
        raise LoadError(f"unknown guard predicate {name}/{arity}")
    for unit in proc:
        renamed, _ = rename_terms([unit.head], cfg.ids, cfg.agent)
        head = renamed[0]
        head_args = head.args if isinstance(head, Struct) else ()
        out = unify_equations(list(zip(head_args, args)), view)
        if isinstance(out, Success):
            return GuardOutcome("succeed", extra=out.sigma)
        if isinstance(out, Suspend):
            return GuardOutcome("suspend", blockers=out.blockers)
    return G_FAIL


def unify_to_guard(out) -> GuardOutcome:
    if isinstance(out, Success):
        return GuardOutcome("succeed", extra=out.sigma)
    if isinstance(out, Suspend):
        return GuardOutcome("suspend", blockers=out.blockers)
    return G_FAIL


# ---------------------------------------------------------------------------
# Clause attempts
# ---------------------------------------------------------------------------

def try_clause(goal_term: Term, clause: Clause, index: int, cfg: EngineConfig,
               prior_outcomes: list):
    """Rename apart, writer-unify with the head, then run the guards."""
    parts, mapping = rename_terms(clause.parts(), cfg.ids, cfg.agent)
    head = parts[0]
    n_guard = len(clause.guard)
    guards = parts[1:1 + n_guard]
    body = parts[1 + n_guard:]

    out = writer_unify(goal_term, head, cfg.store)
    if isinstance(out, Fail):
        return ClauseFail(out.reason)
    if isinstance(out, Suspend):
        return ClauseSuspend(out.blockers)

    overlay = dict(out.sigma.map)
    pairs = dict(out.sigma.pairs)
    view = View(cfg.store, overlay)
    blockers: frozenset = frozenset()
    for g in guards:
        res = eval_guard(g, view, cfg, prior_outcomes)
        if res.kind == "fail":
            return ClauseFail("guard")
        if res.kind == "suspend":
            blockers |= res.blockers
        else:
            overlay.update(res.extra.map)
            pairs.update(res.extra.pairs)
    if blockers:
        return ClauseSuspend(blockers)
    sigma = Subst(overlay, pairs)
    return Commit(index, sigma, body, mapping, clause)


# ---------------------------------------------------------------------------
# Builtins appearing as body goals
# ---------------------------------------------------------------------------

def try_builtin(goal_term: Term, key, cfg: EngineConfig):
    name, _ = key
    args = goal_term.args if isinstance(goal_term, Struct) else ()
    if name == "true":
        return Commit(-1, Subst(), [], {})
    if name == "=":
        out = writer_unify(args[0], args[1], cfg.store)
        if isinstance(out, Success):
            return Commit(-1, out.sigma, [], {})
        if isinstance(out, Suspend):
            return ClauseSuspend(out.blockers)
        return ClauseFail("unify")
    if name == "evaluate":
        expr = cfg.store.resolve(args[0])
        if term_vars(expr):
            raise ContractViolation(
                f"evaluate/2 on non-ground expression {print_term(expr)}")
        try:
            value = arith_eval(expr)
        except _ArithError:
            return ClauseFail("evaluate")
        return builtin_unify(args[1], make_num(value), cfg)
    if name == "current_time":
        return builtin_unify(args[0], make_num(cfg._clock()), cfg)
    if name == "variable_name":
        r = cfg.store.resolve(args[0])
        if not isinstance(r, Var):
            return ClauseFail("variable_name")
        return builtin_unify(args[1], Const(f"_W{r.vid}"), cfg)
    raise AssertionError(name)


def builtin_unify(a: Term, b: Term, cfg: EngineConfig):
    out = writer_unify(a, b, cfg.store)
    if isinstance(out, Success):
        return Commit(-1, out.sigma, [], {})
    if isinstance(out, Suspend):
        return ClauseSuspend(out.blockers)
    return ClauseFail("unify")


# ---------------------------------------------------------------------------
# Reduction
# ---------------------------------------------------------------------------

def reduce_step(cfg: EngineConfig) -> dict:
    """Pop and reduce the head goal; returns a trace record dict."""
    goal = cfg.queue.popleft()
    cfg.step_count += 1
    resolved = cfg.store.resolve(goal.term)
    pre_vars = unique_vars(resolved)

    key = call_key(resolved)
    commit = None
    outcomes: list = []
    reason = "clash"
    if key is None:
        reason = "not_callable"
    elif key in BUILTIN_GOALS:
        out = try_builtin(resolved, key, cfg)
        outcomes.append(out)
        if isinstance(out, Commit):
            commit = out
        elif isinstance(out, ClauseFail):
            reason = out.reason
    else:
        proc = cfg.module.procedure(*key)
        if proc is None:
            reason = "unknown_procedure"
        else:
            for idx, clause in enumerate(proc):
                out = try_clause(resolved, clause, idx, cfg, outcomes)
                outcomes.append(out)
                if isinstance(out, Commit):
                    commit = out
                    break

    if commit is not None:
        return apply_commit(cfg, goal, resolved, pre_vars, key, commit)

    blockers = frozenset().union(
        *[o.blockers for o in outcomes if isinstance(o, ClauseSuspend)]) \
        if outcomes else frozenset()
    live = frozenset(b for b in blockers if not cfg.store.is_abandoned(b))
    if live:
        cfg.suspend_goal(goal, live)
        if cfg.hooks is not None:
            cfg.hooks.on_suspend(cfg, live)
        return {"kind": "suspend", "gid": goal.gid,
                "goal": print_term(resolved),
                "blockers": blockers_text(live)}

    if any(isinstance(o, ClauseSuspend) for o in outcomes):
        reason = "all_blockers_abandoned"
    elif outcomes and all(isinstance(o, ClauseFail) for o in outcomes):
        reason = outcomes[0].reason if len(outcomes) == 1 else "no_clause"
    cfg.failed.append((goal, reason))
    vanished = do_abandonment(cfg, pre_vars, [])
    woken = requeue_woken(cfg, [], vanished)
    record = {"kind": "fail", "gid": goal.gid, "goal": print_term(resolved),
              "reason": reason,
              "react": ",".join(str(g.gid) for g in woken)}
    if vanished:
        record["vanished"] = ",".join(var_text(v) for v in vanished)
    return record


def apply_commit(cfg: EngineConfig, goal: Goal, resolved: Term, pre_vars,
                 key, commit: Commit) -> dict:
    assigned_readers = []
    for (vid, reader), value in commit.sigma.items_sorted():
        assert not reader
        pair = commit.sigma.pairs.get(vid) or find_pair(vid, pre_vars, commit)
        writer = Var(pair, False)
        cfg.store.bind(writer, value)
        cfg.store.bind(writer.counterpart(), value)
        assigned_readers.append(writer.counterpart())

    if cfg.hooks is not None:
        for rd in assigned_readers:
            cfg.hooks.on_reader_assign(cfg, rd, cfg.store.resolve(rd))

    body_goals = [cfg.new_goal(t) for t in commit.body]
    body_vars = set()
    for g in body_goals:
        for v in unique_vars(cfg.store.resolve(g.term)):
            body_vars.add(v.key())
    vanished = do_abandonment(cfg, pre_vars, body_vars)

    cfg.queue.extend(body_goals)
    woken = requeue_woken(cfg, assigned_readers, vanished)

    record = {
        "kind": "reduce", "gid": goal.gid, "goal": print_term(resolved),
        "pred": f"{key[0]}/{key[1]}",
        "clause": str(commit.clause_index),
        "bindings": bindings_text(commit.sigma),
        "renames": renames_text(commit.renames),
        "body": "[" + ";".join(print_term(g.term) for g in body_goals) + "]",
        "bgids": ",".join(str(g.gid) for g in body_goals),
        "react": ",".join(str(g.gid) for g in woken),
    }
    if vanished:
        record["vanished"] = ",".join(var_text(v) for v in vanished)
    return record


def do_abandonment(cfg: EngineConfig, pre_vars, body_vars):
    """Pair counterparts of occurrences that vanished uninstantiated."""
    vanished = []
    for v in pre_vars:
        if cfg.store.is_bound(v):
            continue
        if v.key() in body_vars:
            continue
        vanished.append(v)
        counterpart = v.counterpart()
        cfg.store.mark_abandoned(counterpart)
        if cfg.hooks is not None:
            cfg.hooks.on_vanished(cfg, v)
    return vanished


def requeue_woken(cfg: EngineConfig, assigned_readers, vanished):
    vids = [rd.vid for rd in assigned_readers]
    vids.extend(v.vid for v in vanished if v.counterpart().reader)
    woken = cfg.wake(vids)
    cfg.queue.extend(woken)
    return woken


def unique_vars(t: Term):
    seen = set()
    out = []
    for v in term_vars(t):
        if v.key() not in seen:
            seen.add(v.key())
            out.append(v)
    return out


def find_pair(vid: int, pre_vars, commit: Commit):
    for v in pre_vars:
        if v.vid == vid:
            return v.pair
    for pair in commit.renames.values():
        if pair.vid == vid:
            return pair
    raise AssertionError(f"pair {vid} not found")


def bindings_text(sigma: Subst) -> str:
    items = [f"_W{vid}:={print_term(t)}"
             for (vid, _), t in sigma.items_sorted()]
    return "{" + ";".join(items) + "}"


def renames_text(renames: dict) -> str:
    items = [f"{t}:{p.vid}" for t, p in sorted(renames.items())]
    return "{" + ";".join(items) + "}"


def blockers_text(blockers) -> str:
    return "{" + ";".join(f"_W{v.vid}?" for v in
                          sorted(blockers, key=lambda b: b.vid)) + "}"


def var_text(v: Var) -> str:
    return f"_W{v.vid}?" if v.reader else f"_W{v.vid}"


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def check_goal_srsw(goals):
    counts: dict[tuple[int, bool], int] = {}
    for g in goals:
        for v in term_vars(g):
            counts[v.key()] = counts.get(v.key(), 0) + 1
    bad = [k for k, c in counts.items() if c > 1]
    if bad:
        names = ",".join(f"_W{vid}{'?' if rd else ''}" for vid, rd in bad)
        raise LoadError(f"initial goal violates SRSW: {names}")


def run_engine(module: Module, goals, fuel: int = 100_000, on_record=None,
               cfg: EngineConfig | None = None):
    """Reduce until the queue empties or fuel runs out.

    Returns (status, cfg); status is quiescent_success, deadlock, failed
    or fuel_exhausted.  Failed dominates deadlock when both apply.
    """
    if has_writer_violation(module.srsw_report):
        bad = "; ".join(str(v) for v in module.srsw_report if not v.reader)
        raise LoadError(f"module has writer SRSW violations: {bad}")
    validate_module(module)
    if cfg is None:
        cfg = EngineConfig(module)
    check_goal_srsw(goals)
    cfg.push_goals(goals)
    steps = 0
    while cfg.queue and steps < fuel:
        record = reduce_step(cfg)
        steps += 1
        if on_record is not None:
            record.setdefault("step", cfg.step_count)
            record.setdefault("agent", cfg.agent)
            on_record(record)
    if cfg.queue:
        status = "fuel_exhausted"
    elif cfg.failed:
        status = "failed"
    elif cfg.suspended:
        status = "deadlock"
    else:
        status = "quiescent_success"
    return status, cfg
