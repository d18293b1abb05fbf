"""Reference implementations used to cross-check the package.

Nothing here imports the interpreter, the prover or the model checker: the
sequential oracle transpiles a program into straight Python, and the
interleaving enumerator walks the AST with explicit continuations.
"""

from __future__ import annotations

from collections import deque

from aprx import lang
from aprx.lang import (Assign, BoolLit, Cmp, Halt, If, Lock, Neg, Not, Num, Output, Skip,
                       Unlock, Var, While)

LIMIT = 2**63


class OracleFault(Exception):
    pass


def tdiv(a, b):
    if b == 0:
        raise OracleFault("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def checked(v):
    if not -LIMIT <= v < LIMIT:
        raise OracleFault("overflow")
    return v


# ---------------------------------------------------------------------------
# Expression evaluation straight from the AST
# ---------------------------------------------------------------------------

def ev(e, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return -ev(e.operand, env)
    a, b = ev(e.left, env), ev(e.right, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    return tdiv(a, b)


_REL = {"<": lambda a, b: a < b, "<=": lambda a, b: a <= b, ">": lambda a, b: a > b,
        ">=": lambda a, b: a >= b, "==": lambda a, b: a == b, "!=": lambda a, b: a != b}


def bev(b, env):
    if isinstance(b, BoolLit):
        return b.value
    if isinstance(b, Cmp):
        return _REL[b.op](ev(b.left, env), ev(b.right, env))
    if isinstance(b, Not):
        return not bev(b.operand, env)
    if b.op == "&&":
        return bev(b.left, env) and bev(b.right, env)
    return bev(b.left, env) or bev(b.right, env)


# ---------------------------------------------------------------------------
# Sequential programs: transpile to Python
# ---------------------------------------------------------------------------

class _Halted(Exception):
    pass


class _Budget(Exception):
    pass


class _Cycle(Exception):
    pass


def _py_expr(e):
    if isinstance(e, Num):
        return f"({e.value})"
    if isinstance(e, Var):
        return f"env[{e.name!r}]"
    if isinstance(e, Neg):
        return f"(-{_py_expr(e.operand)})"
    if e.op == "/":
        return f"tdiv({_py_expr(e.left)}, {_py_expr(e.right)})"
    return f"({_py_expr(e.left)} {e.op} {_py_expr(e.right)})"


def _py_bexpr(b):
    if isinstance(b, BoolLit):
        return "True" if b.value else "False"
    if isinstance(b, Cmp):
        return f"({_py_expr(b.left)} {b.op} {_py_expr(b.right)})"
    if isinstance(b, Not):
        return f"(not {_py_bexpr(b.operand)})"
    op = "and" if b.op == "&&" else "or"
    return f"({_py_bexpr(b.left)} {op} {_py_bexpr(b.right)})"


def _emit(block, depth, out):
    pad = "    " * depth
    if not block:
        out.append(pad + "pass")
    for s in block:
        if isinstance(s, Halt):
            out.append(pad + "raise Halted()")
            continue
        out.append(pad + "st[0] += 1")
        out.append(pad + "if st[0] > budget: raise Budget()")
        if isinstance(s, Assign):
            out.append(pad + f"env[{s.var!r}] = checked({_py_expr(s.expr)})")
        elif isinstance(s, Output):
            out.append(pad + f"outs.append(checked({_py_expr(s.expr)}))")
        elif isinstance(s, Skip):
            pass
        elif isinstance(s, If):
            out.append(pad + f"if {_py_bexpr(s.cond)}:")
            _emit(s.then, depth + 1, out)
            out.append(pad + "else:")
            _emit(s.orelse, depth + 1, out)
        elif isinstance(s, While):
            out.append(pad + f"seen({s.sid}, env)")
            out.append(pad + f"while {_py_bexpr(s.cond)}:")
            _emit(s.body, depth + 1, out)
            out.append(pad + "    st[0] += 1")
            out.append(pad + "    if st[0] > budget: raise Budget()")
            out.append(pad + f"    seen({s.sid}, env)")
        else:
            raise ValueError(f"not sequential: {s}")


def transpile(prog):
    assert prog.is_sequential
    out = ["def body(env, outs, st, budget, seen):"]
    _emit(prog.procs[0].body, 1, out)
    src = "\n".join(out) + "\n"
    ns = {"tdiv": tdiv, "checked": checked, "Halted": _Halted, "Budget": _Budget}
    exec(compile(src, "<oracle>", "exec"), ns)
    return ns["body"]


def oracle_run(prog, inputs, budget=10**7, detect_cycles=True, max_seen=200_000):
    """Returns (status, outputs, env) with status halted / fault / budget / cycle."""
    fn = transpile(prog)
    proc = prog.procs[0]
    names = sorted(set(proc.params) | set(proc.assigned))
    env = {n: 0 for n in names}
    env.update(inputs)
    outs = []
    st = [0]
    visited = set()

    def seen(sid, env):
        if not detect_cycles or len(visited) >= max_seen:
            return
        key = (sid, tuple(env.values()))
        if key in visited:
            raise _Cycle()
        visited.add(key)

    try:
        fn(env, outs, st, budget, seen)
    except _Halted:
        pass
    except OracleFault:
        return "fault", outs, env
    except _Budget:
        return "budget", outs, env
    except _Cycle:
        return "cycle", outs, env
    return "halted", outs, env


# ---------------------------------------------------------------------------
# One loop iteration by direct AST interpretation (for ranking samples)
# ---------------------------------------------------------------------------

class _Fuel(Exception):
    pass


def exec_block(block, env, fuel):
    """Run ``block`` in place; returns 'ok' or 'halt'.  Raises _Fuel / OracleFault."""
    for s in block:
        fuel[0] -= 1
        if fuel[0] < 0:
            raise _Fuel()
        if isinstance(s, Assign):
            env[s.var] = checked(ev(s.expr, env))
        elif isinstance(s, If):
            r = exec_block(s.then if bev(s.cond, env) else s.orelse, env, fuel)
            if r == "halt":
                return r
        elif isinstance(s, While):
            while bev(s.cond, env):
                r = exec_block(s.body, env, fuel)
                if r == "halt":
                    return r
                fuel[0] -= 1
                if fuel[0] < 0:
                    raise _Fuel()
        elif isinstance(s, Halt):
            return "halt"
    return "ok"


def one_iteration(loop, env, fuel=100_000):
    """Execute the body of ``loop`` once from ``env``; None if it halts, faults or runs out of fuel."""
    env = dict(env)
    try:
        r = exec_block(loop.body, env, [fuel])
    except (_Fuel, OracleFault):
        return None
    return None if r == "halt" else env


# ---------------------------------------------------------------------------
# Concurrent programs: brute-force interleavings over AST continuations
# ---------------------------------------------------------------------------

def _location(proc, cont):
    if not cont:
        return proc.end_id
    return cont[0].sid


class Interleavings:
    """Continuation-passing transition system of a program.

    A state is (conts, locals, shared, owners, outputs, fault) where each
    continuation is the tuple of statements a proc still has to run.
    """

    def __init__(self, prog, inputs):
        self.prog = prog
        self.procs = prog.procs
        self.gvars = list(prog.global_vars)
        self.mutexes = list(prog.mutexes)
        self.locs = [list(prog.locals_of(p)) for p in self.procs]
        self.halting = lang.halting_set(prog)
        shared = {d.name: d.value for d in prog.shared if d.kind == "int"}
        if prog.is_sequential:
            local0 = [{**{v: 0 for v in self.locs[0]}, **inputs}]
        else:
            shared.update(inputs)
            for n in self.gvars:
                shared.setdefault(n, 0)
            local0 = [{v: 0 for v in names} for names in self.locs]
        self.init = (tuple(tuple(p.body) for p in self.procs), tuple(local0), shared,
                     {m: -1 for m in self.mutexes}, (), None)

    def canon(self, state):
        conts, locals_, shared, owners, outputs, fault = state
        return (tuple(_location(p, c) for p, c in zip(self.procs, conts)),
                tuple(tuple(l[v] for v in names) for l, names in zip(locals_, self.locs)),
                tuple(shared[v] for v in self.gvars),
                tuple(owners[m] for m in self.mutexes),
                tuple(sorted(outputs)),
                fault)

    def enabled(self, state):
        conts, _, _, owners, _, fault = state
        if fault is not None:
            return []
        out = []
        for p, c in enumerate(conts):
            if not c or isinstance(c[0], Halt):
                continue
            if isinstance(c[0], Lock) and owners[c[0].mutex] != -1:
                continue
            out.append(p)
        return out

    def stuck_unhalted(self, state):
        if state[5] is not None:
            return True
        if self.enabled(state):
            return False
        return not all(_location(p, c) in self.halting[p.name] for p, c in zip(self.procs, state[0]))

    def step(self, state, p):
        conts, locals_, shared, owners, outputs, _ = state
        cont = conts[p]
        s = cont[0]
        rest = cont[1:]
        env = dict(shared)
        env.update(locals_[p])
        L = dict(locals_[p])
        G = dict(shared)
        O = dict(owners)
        outs = list(outputs)
        try:
            if isinstance(s, Assign):
                v = checked(ev(s.expr, env))
                if s.var in L:
                    L[s.var] = v
                else:
                    G[s.var] = v
                new = rest
            elif isinstance(s, If):
                new = (s.then if bev(s.cond, env) else s.orelse) + rest
            elif isinstance(s, While):
                new = (s.body + cont) if bev(s.cond, env) else rest
            elif isinstance(s, Lock):
                O[s.mutex] = p
                new = rest
            elif isinstance(s, Unlock):
                if O[s.mutex] != p:
                    return state[:5] + ((p, "crash", s.sid),)
                O[s.mutex] = -1
                new = rest
            elif isinstance(s, Output):
                outs.append(checked(ev(s.expr, env)))
                new = rest
            elif isinstance(s, Skip):
                new = rest
            else:
                raise AssertionError(s)
        except OracleFault:
            return state[:5] + ((p, "exception", s.sid),)
        conts = conts[:p] + (new,) + conts[p + 1:]
        locals_ = locals_[:p] + (L,) + locals_[p + 1:]
        return conts, locals_, G, O, tuple(outs), None


def enumerate_states(prog, inputs):
    """All reachable states, in the same canonical shape as the model checker's.

    Returns (states, deadlocks) where each state is
    (pcs, locals, shared, owners, outputs, fault).
    """
    ts = Interleavings(prog, inputs)
    seen = {ts.canon(ts.init)}
    deadlocks = set()
    q = deque([ts.init])
    while q:
        st = q.popleft()
        if ts.stuck_unhalted(st):
            deadlocks.add(ts.canon(st))
        for p in ts.enabled(st):
            nxt = ts.step(st, p)
            k = ts.canon(nxt)
            if k not in seen:
                seen.add(k)
                q.append(nxt)
    return seen, deadlocks


def replay_steps(prog, inputs, stem, cycle=()):
    """Follow (proc index, sid) steps; returns (state after stem, state after cycle) canonically.

    Returns None when a step is not enabled or its statement id does not match.
    """
    ts = Interleavings(prog, inputs)
    st = ts.init

    def follow(st, steps):
        for p, sid in steps:
            if p not in ts.enabled(st) or _location(ts.procs[p], st[0][p]) != sid:
                return None
            st = ts.step(st, p)
        return st

    mid = follow(st, stem)
    if mid is None:
        return None
    end = follow(mid, cycle)
    if end is None:
        return None
    return ts.canon(mid), ts.canon(end), ts.stuck_unhalted(mid)


# ---------------------------------------------------------------------------
# Linear feasibility by floating-point LP (scipy), for cross-checking FM
# ---------------------------------------------------------------------------

def lp_satisfiable(constraints, tol=1e-7):
    """Feasibility of ``lin <= 0`` / ``lin < 0`` constraints via HiGHS.

    Strict constraints share a slack ``eps`` that is maximised; the system is
    satisfiable iff the LP is feasible and, when any constraint is strict,
    the optimal slack is positive.
    """
    import numpy as np
    from scipy.optimize import linprog

    names = sorted({v for lin, _ in constraints for v in lin.coeffs})
    n = len(names) + 1
    A, b = [], []
    for lin, strict in constraints:
        row = [float(lin.coeffs.get(v, 0)) for v in names] + [1.0 if strict else 0.0]
        A.append(row)
        b.append(-float(lin.const))
    if not A:
        return True
    c = np.zeros(n)
    c[-1] = -1.0
    bounds = [(None, None)] * (n - 1) + [(0, 1)]
    res = linprog(c, A_ub=np.array(A), b_ub=np.array(b), bounds=bounds, method="highs")
    if res.status == 2:
        return False
    assert res.status == 0, res.message
    if any(strict for _, strict in constraints):
        return -res.fun > tol
    return True


def lp_implies(constraints, goal):
    lin, strict = goal
    return not lp_satisfiable(list(constraints) + [(-lin, not strict)])


# ---------------------------------------------------------------------------
# Randomised check of ranking functions
# ---------------------------------------------------------------------------

def sample_ranking(prog, loop, rank, n=1000, seed=0, max_tries=400_000):
    """Draw ``n`` states satisfying the guard of ``loop`` and run one iteration each.

    ``rank(env)`` evaluates the certificate.  Returns (accepted, violations)
    where a violation is a state with rank < 0 or a decrease below 1.
    Iterations that halt, fault or run out of fuel prove nothing and are
    skipped (they are not counted as accepted).
    """
    import random

    rng = random.Random(seed)
    proc = next(p for p in prog.procs if loop.sid in {s.sid for s in lang.walk(p.body)})
    names = sorted(set(proc.params) | set(proc.assigned) | set(prog.global_vars))
    accepted, violations = 0, []
    for _ in range(max_tries):
        if accepted >= n:
            break
        span = rng.choice((3, 12, 60, 400))
        env = {v: rng.randint(-span, span) for v in names}
        try:
            if not bev(loop.cond, env):
                continue
        except OracleFault:
            continue
        after = one_iteration(loop, env)
        if after is None:
            continue
        accepted += 1
        before = rank(env)
        if before < 0 or before - rank(after) < 1:
            violations.append(env)
    return accepted, violations
