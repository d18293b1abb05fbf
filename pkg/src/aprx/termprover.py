"""Termination prover for MiniImp: TR with ranking functions, NT with lassos, else UN.

TR proofs work loop by loop.  The body of a loop is executed symbolically
from the loop header, giving a finite set of *transitions*: a conjunction of
linear path conditions over the pre-state plus an affine post-state.
Anything outside the linear fragment is over-approximated soundly
(non-linear assignments become fresh unconstrained values, non-linear
conditions are dropped, inner loops havoc what they write and then assume
their exit condition).  A candidate ``r(x) = c0 + sum(c_j * x_j)`` is accepted
when Fourier-Motzkin elimination shows, for every transition, that
``r(x) >= 0`` and ``r(x) - r(x') >= 1``.

NT proofs are concrete: inputs are enumerated over a finite grid and the
program is run while hashing the full state at loop headers.  A repeated
state is a lasso that replays forever.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from . import interp, lang, linear
from .lang import (Assign, BinOp, BoolLit, BoolOp, Cmp, Halt, If, Neg, Not, Num,
                   Program, Var, While)
from .linear import Lin

TR, NT, UN = "TR", "NT", "UN"

MAX_DNF = 64
MAX_TRANSITIONS = 256
MAX_RANK_VARS = 5


class Unsupported(Exception):
    """The loop falls outside the fragment the ranking search handles."""


@dataclass(frozen=True)
class InputDomain:
    """Inclusive integer interval per input parameter; unnamed params use ``default``."""

    ranges: dict = field(default_factory=dict)
    default: tuple = (-5, 5)

    def __post_init__(self):
        for name, (lo, hi) in list(self.ranges.items()) + [("<default>", self.default)]:
            if lo > hi:
                raise ValueError(f"empty interval for {name}: [{lo}, {hi}]")

    def interval(self, name):
        return tuple(self.ranges.get(name, self.default))

    def grid(self, params, cap=10_000):
        """Deterministic enumeration of input bindings, at most ``cap`` of them."""
        axes = []
        for p in params:
            lo, hi = self.interval(p)
            axes.append(range(lo, hi + 1))
        out = []
        for combo in itertools.product(*axes):
            out.append(dict(zip(params, combo)))
            if len(out) >= cap:
                break
        return out

    @classmethod
    def parse(cls, specs, default=(-5, 5)):
        """Build from strings like ``"n=1..10"`` (several may be comma separated)."""
        ranges = {}
        for spec in specs or ():
            for part in str(spec).split(","):
                part = part.strip()
                if not part:
                    continue
                name, _, rng = part.partition("=")
                lo, sep, hi = rng.partition("..")
                if not sep:
                    hi = lo
                ranges[name.strip()] = (int(lo), int(hi))
        return cls(ranges, default)


@dataclass
class RankingFunction:
    loop: int
    coeffs: dict  # variable -> int
    const: int

    def lin(self) -> Lin:
        return Lin(self.coeffs, self.const)

    def text(self) -> str:
        # positive terms first reads naturally: "n - i" rather than "-i + n"
        order = sorted(self.coeffs, key=lambda v: (self.coeffs[v] < 0, v))
        return linear.format_lin(self.lin(), order=order)

    def value(self, store) -> int:
        return self.const + sum(c * store[v] for v, c in self.coeffs.items())


@dataclass
class Lasso:
    input: dict
    stem: list
    cycle: list
    cycle_state: tuple  # (pc, store dict)
    proc: str | None = None

    def to_dict(self):
        return {"input": dict(self.input), "stem": list(self.stem), "cycle": list(self.cycle)}


@dataclass
class Verdict:
    answer: str
    ranking: dict = field(default_factory=dict)  # loop sid -> RankingFunction
    lasso: Lasso | None = None
    reason: str = ""
    proc: str | None = None

    def __post_init__(self):
        if self.answer not in (TR, NT, UN):
            raise ValueError(self.answer)
        if self.answer == NT and self.lasso is None:
            raise ValueError("NT needs a lasso")
        if self.answer != NT and self.lasso is not None:
            raise ValueError("only NT carries a lasso")

    def to_dict(self):
        out = {"answer": self.answer}
        if self.answer == TR:
            out["ranking"] = {str(k): v.text() for k, v in sorted(self.ranking.items())}
        if self.lasso is not None:
            out["lasso"] = self.lasso.to_dict()
        if self.reason:
            out["reason"] = self.reason
        if self.proc is not None:
            out["proc"] = self.proc
        return out


# ---------------------------------------------------------------------------
# Symbolic execution of loop bodies
# ---------------------------------------------------------------------------

class _Fresh:
    def __init__(self):
        self.n = 0

    def __call__(self, hint="h"):
        self.n += 1
        return Lin.var(f"${hint}{self.n}")


class _Sym:
    """Symbolic evaluation context for one proc."""

    def __init__(self, havoc_vars=frozenset()):
        self.havoc_vars = frozenset(havoc_vars)
        self.fresh = _Fresh()
        self.side = []  # per division: alternative facts about its quotient

    def drain(self):
        """Case split over pending division facts; returns a list of constraint lists."""
        cases = [[]]
        for alternatives in self.side:
            cases = [c + alt for c in cases for alt in alternatives]
            if len(cases) > MAX_DNF:
                raise Unsupported("too many divisions in one expression")
        self.side = []
        return cases

    def read(self, sigma, name):
        if name in self.havoc_vars:
            return self.fresh(name)
        return sigma.get(name, Lin.var(name))

    def lin(self, sigma, e):
        """Affine value of ``e`` or None when non-linear."""
        if isinstance(e, Num):
            return Lin.constant(e.value)
        if isinstance(e, Var):
            return self.read(sigma, e.name)
        if isinstance(e, Neg):
            inner = self.lin(sigma, e.operand)
            return None if inner is None else -inner
        a, b = self.lin(sigma, e.left), self.lin(sigma, e.right)
        if a is None or b is None:
            return None
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b.is_const() and b.const != 0 and b.const.denominator == 1:
            # q = a / k truncates toward zero: the remainder a - k*q has the
            # sign of a and magnitude at most |k| - 1
            q = self.fresh("q")
            r = a - q.scale(b.const)
            slack = abs(b.const) - 1
            self.side.append([[linear.ge(a, 0), linear.ge(r, 0), linear.le(r, slack)],
                              [linear.le(a, -1), linear.le(r, 0), linear.ge(r, -slack)]])
            return q
        return None

    def atom(self, sigma, op, left, right):
        self.side = []
        a, b = self.lin(sigma, left), self.lin(sigma, right)
        sides = self.drain()
        if a is None or b is None:
            return sides  # dropped: over-approximate by true
        one = Lin.constant(1)
        if op == "<":
            cases = [[linear.le(a + one, b)]]
        elif op == "<=":
            cases = [[linear.le(a, b)]]
        elif op == ">":
            cases = [[linear.le(b + one, a)]]
        elif op == ">=":
            cases = [[linear.le(b, a)]]
        elif op == "==":
            cases = [[linear.le(a, b), linear.le(b, a)]]
        else:  # !=
            cases = [[linear.le(a + one, b)], [linear.le(b + one, a)]]
        return [side + c for side in sides for c in cases]

    def dnf(self, sigma, b, positive=True):
        """Disjunctive normal form of ``b`` (or its negation) as lists of constraints."""
        if isinstance(b, BoolLit):
            return [[]] if b.value == positive else []
        if isinstance(b, Cmp):
            op = b.op if positive else lang.NEGATED_REL[b.op]
            return self.atom(sigma, op, b.left, b.right)
        if isinstance(b, Not):
            return self.dnf(sigma, b.operand, not positive)
        conj = (b.op == "&&") == positive
        left = self.dnf(sigma, b.left, positive)
        right = self.dnf(sigma, b.right, positive)
        out = [l + r for l in left for r in right] if conj else left + right
        if len(out) > MAX_DNF:
            raise Unsupported("condition too large after case splitting")
        return out

    def block(self, block, states):
        for s in block:
            states = self.stmt(s, states)
            if len(states) > MAX_TRANSITIONS:
                raise Unsupported("too many paths through loop body")
        return states

    def stmt(self, s, states):
        if isinstance(s, Assign):
            out = []
            for sigma, cons in states:
                self.side = []
                value = self.lin(sigma, s.expr)
                sides = self.drain()
                sigma = dict(sigma)
                sigma[s.var] = value if value is not None else self.fresh(s.var)
                out += [(sigma, cons + side) for side in sides]
            return out
        if isinstance(s, If):
            out = []
            for sigma, cons in states:
                for case in self.dnf(sigma, s.cond, True):
                    out += self.block(s.then, [(sigma, cons + case)])
                for case in self.dnf(sigma, s.cond, False):
                    out += self.block(s.orelse, [(sigma, cons + case)])
            return out
        if isinstance(s, While):
            written = {x.var for x in lang.walk(s.body) if isinstance(x, Assign)}
            out = []
            for sigma, cons in states:
                sigma = dict(sigma)
                for v in sorted(written):
                    sigma[v] = self.fresh(v)
                for case in self.dnf(sigma, s.cond, False):
                    out.append((sigma, cons + case))
            return out
        if isinstance(s, Halt):
            return []
        return states


@dataclass
class Transition:
    constraints: list
    post: dict  # var -> Lin over pre-state vars and fresh values


def loop_transitions(loop: While, havoc_vars=frozenset()) -> list:
    """Feasible one-iteration transitions of ``loop`` (header back to header)."""
    sym = _Sym(havoc_vars)
    states = []
    for case in sym.dnf({}, loop.cond, True):
        states += sym.block(loop.body, [({}, list(case))])
    out = []
    for sigma, cons in states:
        if linear.satisfiable(cons):
            out.append(Transition(cons, sigma))
    return out


def _post(t: Transition, v):
    return t.post.get(v, Lin.var(v))


def ranking_holds(rf: RankingFunction, transitions) -> bool:
    """Re-check both implications for every transition."""
    r = rf.lin()
    for t in transitions:
        r_post = rf.lin().substitute({v: _post(t, v) for v in rf.coeffs})
        if not linear.implies(t.constraints, linear.ge(r, 0)):
            return False
        if not linear.implies(t.constraints, linear.ge(r - r_post, 1)):
            return False
    return True


def _coefficient_order(max_coeff):
    vals = [0]
    for k in range(1, max_coeff + 1):
        vals += [k, -k]
    return vals


def synthesize_ranking(loop_sid, transitions, variables, max_coeff=3):
    """Search integer coefficient vectors in [-max_coeff, max_coeff] for a ranking function.

    Returns a verified ``RankingFunction`` or None.
    """
    variables = sorted(variables)
    if not transitions:
        return RankingFunction(loop_sid, {}, 0)
    order = _coefficient_order(max_coeff)
    rank = {v: i for i, v in enumerate(order)}
    deltas = [{v: Lin.var(v) - _post(t, v) for v in variables} for t in transitions]
    candidates = sorted(itertools.product(order, repeat=len(variables)),
                        key=lambda c: (sum(abs(x) for x in c), [rank[x] for x in c]))
    for coeffs in candidates:
        if not any(coeffs):
            continue
        ok = True
        for t, d in zip(transitions, deltas):
            dec = Lin()
            for v, c in zip(variables, coeffs):
                if c:
                    dec = dec + d[v].scale(c)
            if dec.is_const():
                if dec.const < 1:
                    ok = False
                    break
            elif not linear.implies(t.constraints, linear.ge(dec, 1)):
                ok = False
                break
        if not ok:
            continue
        body = Lin({v: c for v, c in zip(variables, coeffs) if c})
        need = 0
        for t in transitions:
            try:
                bound = linear.lower_bound(t.constraints, body)
            except ValueError:
                continue
            if bound is None:
                ok = False
                break
            need = max(need, linear.ceil_fraction(-bound[0]))
        if not ok:
            continue
        rf = RankingFunction(loop_sid, {v: c for v, c in zip(variables, coeffs) if c}, need)
        if ranking_holds(rf, transitions):
            return rf
    return None


def _rank_vars(loop: While, havoc_vars):
    guard = lang.expr_vars(loop.cond)
    written = {x.var for x in lang.walk(loop.body) if isinstance(x, Assign)}
    guard_vars = sorted(guard - set(havoc_vars))
    others = sorted(written - guard - set(havoc_vars))
    chosen = (guard_vars + others)[:MAX_RANK_VARS]
    return chosen


def rank_loops(proc: lang.Proc, havoc_vars=frozenset(), max_coeff=3):
    """Certificates for every loop of ``proc``; raises Unsupported with the first failure."""
    certs = {}
    loops = [s for s in lang.walk(proc.body) if isinstance(s, While)]
    # innermost loops first: reverse pre-order visits children before parents
    for loop in reversed(loops):
        transitions = loop_transitions(loop, havoc_vars)
        rf = synthesize_ranking(loop.sid, transitions, _rank_vars(loop, havoc_vars), max_coeff)
        if rf is None:
            raise Unsupported(f"no linear ranking function for loop {loop.sid} "
                              f"({lang.format_stmt_head(loop)})")
        certs[loop.sid] = rf
    return certs


def verify_certificate(prog: Program, verdict: Verdict, proc_name=None) -> bool:
    """Independently re-check every ranking function stored in a TR verdict."""
    if verdict.answer != TR:
        return False
    proc = prog.proc(proc_name) if proc_name else prog.procs[0]
    havoc = frozenset(prog.global_vars)
    loops = [s for s in lang.walk(proc.body) if isinstance(s, While)]
    if {s.sid for s in loops} != set(verdict.ranking):
        return False
    for loop in loops:
        if not ranking_holds(verdict.ranking[loop.sid], loop_transitions(loop, havoc)):
            return False
    return True


# ---------------------------------------------------------------------------
# Lasso search
# ---------------------------------------------------------------------------

def _search_lasso(comp, cp, L, G, budget):
    """Run one proc alone, hashing states at loop headers; return (stem, cycle, state) or None."""
    code = cp.code
    headers = cp.loop_headers
    lvars = cp.locals
    gvars = comp.global_vars
    seen = {}
    trace = []
    owners = {}
    outputs = []
    pc = cp.entry
    steps = 0
    try:
        while steps < budget:
            if code[pc][0] == interp.TERMINAL:
                return None
            if pc in headers:
                key = (pc, tuple(L[v] for v in lvars), tuple(G[v] for v in gvars), tuple(sorted(owners.items())))
                first = seen.get(key)
                if first is not None:
                    store = dict(L)
                    store.update(G)
                    return trace[:first], trace[first:], (pc, store)
                seen[key] = len(trace)
            trace.append(pc)
            pc = interp.exec_step(cp, pc, L, G, owners, outputs)
            steps += 1
    except interp.Fault:
        return None
    return None


def find_lasso(prog: Program, dom: InputDomain, budget=10_000, grid_cap=10_000, proc_name=None):
    """Search the input grid for a replayable lasso.

    For concurrent programs ``proc_name`` selects a proc that is run alone from
    the initial shared store; a lasso is only reported when no branch in its
    cycle depends on shared values (so interference cannot break the cycle).
    """
    comp = interp.compile_program(prog)
    if prog.is_sequential:
        cp = comp.procs[0]
    else:
        cp = comp.procs[prog.proc_index(proc_name)]
    for inputs in dom.grid(list(prog.input_params), grid_cap):
        locals_, G = interp.initial_stores(comp, inputs)
        found = _search_lasso(comp, cp, locals_[cp.index], G, budget)
        if found is None:
            continue
        stem, cycle, state = found
        lasso = Lasso(dict(inputs), stem, cycle, state, None if prog.is_sequential else cp.name)
        if prog.is_sequential or _interference_free(prog, cycle):
            return lasso
    return None


def _interference_free(prog: Program, cycle) -> bool:
    """No branch or division in the cycle may depend on shared values."""
    shared = set(prog.global_vars)
    stmts = prog.stmt_map
    tainted_in = set()
    while True:
        tainted = set(shared) | tainted_in
        for sid in cycle:
            s = stmts[sid]
            reads = lang.stmt_reads(s)
            if isinstance(s, (If, While)) and reads & tainted:
                return False
            if isinstance(s, (Assign, lang.Output)) and _divisor_vars(s.expr) & tainted:
                return False
            if isinstance(s, Assign) and s.var not in shared:
                if reads & tainted:
                    tainted.add(s.var)
                else:
                    tainted.discard(s.var)
        nxt = tainted - shared
        if nxt <= tainted_in:
            return True
        tainted_in |= nxt


def _divisor_vars(e) -> set:
    if isinstance(e, BinOp):
        out = _divisor_vars(e.left) | _divisor_vars(e.right)
        if e.op == "/":
            out |= lang.expr_vars(e.right)
        return out
    if isinstance(e, Neg):
        return _divisor_vars(e.operand)
    return set()


def replay_lasso(prog: Program, lasso: Lasso) -> bool:
    """Replay stem and cycle; True iff the cycle returns to the recorded state."""
    comp = interp.compile_program(prog)
    cp = comp.procs[0] if lasso.proc is None else comp.procs[prog.proc_index(lasso.proc)]
    locals_, G = interp.initial_stores(comp, lasso.input)
    L = locals_[cp.index]
    owners, outputs = {}, []
    pc = cp.entry
    halting = cp.halting

    def snapshot():
        store = dict(L)
        store.update(G)
        return pc, store

    try:
        for sid in lasso.stem:
            if pc != sid:
                return False
            pc = interp.exec_step(cp, pc, L, G, owners, outputs)
        if snapshot() != tuple(lasso.cycle_state):
            return False
        if not lasso.cycle:
            return False
        for sid in lasso.cycle:
            if pc != sid or sid in halting:
                return False
            pc = interp.exec_step(cp, pc, L, G, owners, outputs)
    except interp.Fault:
        return False
    return snapshot() == tuple(lasso.cycle_state)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def prove(prog: Program, dom: InputDomain = InputDomain(), budget=10_000,
          max_coeff=3, grid_cap=10_000, search_lasso=True) -> Verdict:
    """TR / NT / UN for a sequential program.

    With ``search_lasso=False`` only a TR proof is attempted (anything else is
    UN); patch validation uses this since it only accepts TR.
    """
    if not prog.is_sequential:
        return Verdict(UN, reason="concurrent program: analyse procs with prove_proc_havoc")
    proc = prog.procs[0]
    try:
        certs = rank_loops(proc, frozenset(), max_coeff)
        return Verdict(TR, ranking=certs)
    except Unsupported as exc:
        why = str(exc)
    if not search_lasso:
        return Verdict(UN, reason=why)
    lasso = find_lasso(prog, dom, budget, grid_cap)
    if lasso is not None:
        return Verdict(NT, lasso=lasso)
    return Verdict(UN, reason=f"{why}; no repeated state found on the input grid")


def prove_proc_havoc(prog: Program, proc_name: str, dom: InputDomain = InputDomain(),
                     budget=10_000, max_coeff=3, grid_cap=10_000, search_lasso=True) -> Verdict:
    """Analyse one proc of a concurrent program with every shared read unconstrained."""
    if prog.is_sequential:
        v = prove(prog, dom, budget, max_coeff, grid_cap, search_lasso)
        v.proc = prog.procs[0].name
        return v
    proc = prog.proc(proc_name)
    try:
        certs = rank_loops(proc, frozenset(prog.global_vars), max_coeff)
        return Verdict(TR, ranking=certs, proc=proc_name)
    except Unsupported as exc:
        why = str(exc)
    if not search_lasso:
        return Verdict(UN, reason=why, proc=proc_name)
    lasso = find_lasso(prog, dom, budget, grid_cap, proc_name=proc_name)
    if lasso is not None:
        return Verdict(NT, lasso=lasso, proc=proc_name)
    return Verdict(UN, reason=f"{why}; no interference-independent lasso found", proc=proc_name)


def prove_all_procs(prog: Program, dom: InputDomain = InputDomain(), budget=10_000,
                    max_coeff=3, grid_cap=10_000, search_lasso=True) -> dict:
    return {p.name: prove_proc_havoc(prog, p.name, dom, budget, max_coeff, grid_cap, search_lasso)
            for p in prog.procs}
