"""Deterministic MiniImp interpreter, test-suite files and the test harness.

Programs are compiled once into per-proc instruction tables whose
expressions are plain Python lambdas over a local store ``L`` and the
shared store ``G``.  Each executed statement is one step; ``halt`` and the
end of a proc body are terminal locations and cost nothing.  Integers are
signed 64-bit: a result outside that range is an ``exception`` fault, as is
division by zero.

Sequential runs are deterministic.  Concurrent runs pick the next proc with
a ``random.Random(seed)`` scheduler, so a fixed seed gives a fixed trace.
"""

from __future__ import annotations

import hashlib
import random
import re
from array import array
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import lru_cache

from . import lang
from .lang import (Assign, BinOp, BoolLit, BoolOp, Cmp, Halt, If, Lock, Neg, Not,
                   Num, Output, Program, Skip, Unlock, Var, While)

ASSIGN, BRANCH, LOCK, UNLOCK, OUTPUT, SKIP, TERMINAL = range(7)

NORMAL = "normal"
CRASH = "crash"
EXCEPTION = "exception"
INCORRECT = "incorrectResult"
SOFT_HANG = "softHang"
HARD_HANG = "hardHangSuspected"
BEHAVIORS = (NORMAL, CRASH, EXCEPTION, INCORRECT, SOFT_HANG, HARD_HANG)


INT_MAX = 2**63 - 1
INT_MIN = -2**63


def _overflow(value):
    return Fault(EXCEPTION, f"integer overflow ({value.bit_length()}-bit result)")


class Fault(Exception):
    """Runtime fault raised while executing one statement."""

    def __init__(self, behavior, message):
        super().__init__(message)
        self.behavior = behavior


def _div(a, b):
    if b == 0:
        raise Fault(EXCEPTION, "division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

def _expr_src(e, is_global) -> str:
    if isinstance(e, Num):
        return f"({e.value})"
    if isinstance(e, Var):
        return f"G[{e.name!r}]" if is_global(e.name) else f"L[{e.name!r}]"
    if isinstance(e, Neg):
        return f"(-{_expr_src(e.operand, is_global)})"
    a, b = _expr_src(e.left, is_global), _expr_src(e.right, is_global)
    if e.op == "/":
        return f"_div({a}, {b})"
    return f"({a} {e.op} {b})"


def _bexpr_src(b, is_global) -> str:
    if isinstance(b, BoolLit):
        return "True" if b.value else "False"
    if isinstance(b, Cmp):
        return f"({_expr_src(b.left, is_global)} {b.op} {_expr_src(b.right, is_global)})"
    if isinstance(b, Not):
        return f"(not {_bexpr_src(b.operand, is_global)})"
    op = "and" if b.op == "&&" else "or"
    return f"({_bexpr_src(b.left, is_global)} {op} {_bexpr_src(b.right, is_global)})"


def _lambda(src):
    return eval(f"lambda L, G: {src}", {"_div": _div})  # noqa: S307 - generated from the AST


@dataclass
class CompiledProc:
    name: str
    index: int
    entry: int
    end_id: int
    locals: tuple
    halting: frozenset
    code: dict
    loop_headers: frozenset


@dataclass
class Compiled:
    program: Program
    procs: list
    global_vars: tuple
    mutexes: tuple
    sequential: bool


@lru_cache(maxsize=512)
def compile_program(prog: Program) -> Compiled:
    glob = set(prog.global_vars)
    is_global = glob.__contains__
    halting = lang.halting_set(prog)
    procs = []
    for idx, proc in enumerate(prog.procs):
        succ = lang.proc_successors(proc)
        code = {}
        loops = set()
        for s in lang.walk(proc.body):
            info = succ[s.sid]
            if isinstance(s, Assign):
                code[s.sid] = (ASSIGN, s.var, is_global(s.var), _lambda(_expr_src(s.expr, is_global)), info[1])
            elif isinstance(s, (If, While)):
                code[s.sid] = (BRANCH, _lambda(_bexpr_src(s.cond, is_global)), info[1], info[2])
                if isinstance(s, While):
                    loops.add(s.sid)
            elif isinstance(s, Lock):
                code[s.sid] = (LOCK, s.mutex, info[1])
            elif isinstance(s, Unlock):
                code[s.sid] = (UNLOCK, s.mutex, info[1])
            elif isinstance(s, Output):
                code[s.sid] = (OUTPUT, _lambda(_expr_src(s.expr, is_global)), info[1])
            elif isinstance(s, Skip):
                code[s.sid] = (SKIP, info[1])
            elif isinstance(s, Halt):
                code[s.sid] = (TERMINAL,)
        code[proc.end_id] = (TERMINAL,)
        procs.append(CompiledProc(proc.name, idx, lang.entry_of(proc), proc.end_id,
                                  prog.locals_of(proc), halting[proc.name], code, frozenset(loops)))
    return Compiled(prog, procs, tuple(prog.global_vars), tuple(prog.mutexes), prog.is_sequential)


def initial_stores(comp: Compiled, inputs: dict):
    """Fresh (per-proc locals, shared store) for the given input binding."""
    prog = comp.program
    params = prog.input_params
    missing = [p for p in params if p not in inputs]
    extra = [k for k in inputs if k not in params]
    if missing or extra:
        raise ValueError(f"input must bind exactly {list(params)}; missing={missing} extra={extra}")
    if comp.sequential:
        L = {v: 0 for v in comp.procs[0].locals}
        L.update({k: int(v) for k, v in inputs.items()})
        return [L], {}
    G = {d.name: d.value for d in prog.shared if d.kind == "int"}
    G.update({k: int(v) for k, v in inputs.items()})
    return [{v: 0 for v in cp.locals} for cp in comp.procs], G


def exec_step(cp: CompiledProc, pc: int, L: dict, G: dict, owners: dict, outputs: list) -> int:
    """Execute the statement at ``pc`` of ``cp`` in place; return the next location.

    The caller must only invoke this for an enabled location (see ``enabled``).
    Raises ``Fault`` for division by zero or unlock of a mutex not held.
    """
    ins = cp.code[pc]
    k = ins[0]
    if k == ASSIGN:
        value = ins[3](L, G)
        if not INT_MIN <= value <= INT_MAX:
            raise _overflow(value)
        if ins[2]:
            G[ins[1]] = value
        else:
            L[ins[1]] = value
        return ins[4]
    if k == BRANCH:
        return ins[2] if ins[1](L, G) else ins[3]
    if k == LOCK:
        owners[ins[1]] = cp.index
        return ins[2]
    if k == UNLOCK:
        if owners.get(ins[1], -1) != cp.index:
            raise Fault(CRASH, f"unlock({ins[1]}) by {cp.name} without holding it")
        owners[ins[1]] = -1
        return ins[2]
    if k == OUTPUT:
        value = ins[1](L, G)
        if not INT_MIN <= value <= INT_MAX:
            raise _overflow(value)
        outputs.append(value)
        return ins[2]
    if k == SKIP:
        return ins[1]
    raise RuntimeError(f"terminal location {pc} is not executable")


def enabled(cp: CompiledProc, pc: int, owners: dict) -> bool:
    ins = cp.code[pc]
    if ins[0] == TERMINAL:
        return False
    if ins[0] == LOCK:
        return owners.get(ins[1], -1) == -1
    return True


# ---------------------------------------------------------------------------
# Running programs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObserverConfig:
    step_budget: int = 100_000
    soft_hang_threshold: int | None = None
    schedule_seed: int = 0

    def __post_init__(self):
        if self.step_budget < 1:
            raise ValueError("step_budget must be positive")
        if self.soft_hang_threshold is None:
            object.__setattr__(self, "soft_hang_threshold", max(1, self.step_budget // 10))
        if not 0 < self.soft_hang_threshold < self.step_budget:
            raise ValueError("soft_hang_threshold must lie in (0, step_budget)")


@dataclass
class RunResult:
    behavior: str
    outputs: tuple
    steps: int
    trace_digest: str
    coverage: frozenset
    final_store: dict | None
    first_seen: dict = field(repr=False, default_factory=dict)
    fault: str | None = None
    deadlocked: bool = False
    final_locations: dict = field(default_factory=dict)
    trace: tuple | None = field(repr=False, default=None)

    @property
    def terminated(self) -> bool:
        return self.behavior in (NORMAL, SOFT_HANG, INCORRECT)

    def to_dict(self) -> dict:
        return {
            "behavior": self.behavior,
            "outputs": list(self.outputs),
            "steps": self.steps,
            "traceDigest": self.trace_digest,
            "coverage": sorted(self.coverage),
            "finalStore": self.final_store,
            "fault": self.fault,
        }


def _digest(trace, tail) -> str:
    h = hashlib.sha256(array("q", trace).tobytes())
    h.update(repr(tail).encode())
    return h.hexdigest()[:16]


def run(prog: Program, inputs: dict, cfg: ObserverConfig = ObserverConfig(),
        record_trace: bool = False) -> RunResult:
    """Run ``prog`` on ``inputs`` within ``cfg.step_budget`` steps and classify the behaviour."""
    comp = compile_program(prog)
    locals_, G = initial_stores(comp, inputs)
    budget = cfg.step_budget
    trace = []
    outputs = []
    fault = None
    deadlocked = False
    halted = False
    if comp.sequential:
        cp = comp.procs[0]
        L = locals_[0]
        code = cp.code
        pc = cp.entry
        append = trace.append
        steps = 0
        try:
            while True:
                ins = code[pc]
                k = ins[0]
                if k == TERMINAL:
                    halted = True
                    break
                if steps >= budget:
                    break
                append(pc)
                steps += 1
                if k == ASSIGN:
                    v = ins[3](L, G)
                    if not INT_MIN <= v <= INT_MAX:
                        raise _overflow(v)
                    L[ins[1]] = v
                    pc = ins[4]
                elif k == BRANCH:
                    pc = ins[2] if ins[1](L, G) else ins[3]
                elif k == OUTPUT:
                    pc = exec_step(cp, pc, L, G, {}, outputs)
                else:
                    pc = exec_step(cp, pc, L, G, {}, outputs)
        except Fault as f:
            fault = f
        pcs = [pc]
    else:
        rng = random.Random(cfg.schedule_seed)
        procs = comp.procs
        pcs = [cp.entry for cp in procs]
        owners = {m: -1 for m in comp.mutexes}
        steps = 0
        try:
            while True:
                ready = [i for i, cp in enumerate(procs) if enabled(cp, pcs[i], owners)]
                if not ready:
                    halted = all(procs[i].code[pcs[i]][0] == TERMINAL for i in range(len(procs)))
                    if not halted:
                        deadlocked = True
                        steps = budget
                    break
                if steps >= budget:
                    break
                i = ready[0] if len(ready) == 1 else rng.choice(ready)
                trace.append(pcs[i])
                steps += 1
                pcs[i] = exec_step(procs[i], pcs[i], locals_[i], G, owners, outputs)
        except Fault as f:
            fault = f

    if fault is not None:
        behavior = fault.behavior
    elif halted:
        behavior = NORMAL if steps <= cfg.soft_hang_threshold else SOFT_HANG
    else:
        behavior = HARD_HANG
    first_seen = {}
    for idx, sid in enumerate(trace):
        if sid not in first_seen:
            first_seen[sid] = idx
    stmt_ids = prog.stmt_ids()
    for pc in pcs:
        if pc in stmt_ids and pc not in first_seen and halted:
            first_seen[pc] = len(trace)  # halt statements are reached, not stepped
    if comp.sequential:
        final_store = dict(locals_[0]) if halted else None
    else:
        final_store = None
        if halted:
            final_store = dict(G)
            for cp, L in zip(comp.procs, locals_):
                final_store.update({f"{cp.name}.{k}": v for k, v in L.items()})
    final_locations = {cp.name: pcs[i] for i, cp in enumerate(comp.procs)}
    return RunResult(
        behavior=behavior,
        outputs=tuple(outputs),
        steps=steps,
        trace_digest=_digest(trace, (behavior, tuple(pcs))),
        coverage=frozenset(first_seen),
        final_store=final_store,
        first_seen=first_seen,
        fault=str(fault) if fault else None,
        deadlocked=deadlocked,
        final_locations=final_locations,
        trace=tuple(trace) if record_trace else None,
    )


def execute_from(prog: Program, pc: int, store: dict, budget: int, stop_at=None):
    """Run the sequential ``prog`` from location ``pc`` with a copy of ``store``.

    Stops when a terminal location is reached, when ``stop_at`` is reached
    after at least one step, or after ``budget`` steps.  Returns
    ``(status, pc, store, steps)`` with status in
    {"halted", "stopped", "budget", "fault"}.
    """
    comp = compile_program(prog)
    cp = comp.procs[0]
    L = dict(store)
    steps = 0
    try:
        while True:
            if cp.code[pc][0] == TERMINAL:
                return "halted", pc, L, steps
            if steps and pc == stop_at:
                return "stopped", pc, L, steps
            if steps >= budget:
                return "budget", pc, L, steps
            pc = exec_step(cp, pc, L, {}, {}, [])
            steps += 1
    except Fault:
        return "fault", pc, L, steps


# ---------------------------------------------------------------------------
# Test suites
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpectedOutcome:
    outputs: tuple | None = None
    final_vars: dict | None = None

    def __post_init__(self):
        if self.outputs is None and self.final_vars is None:
            raise ValueError("an expectation needs outputs or final values")

    def to_dict(self):
        out = {}
        if self.outputs is not None:
            out["outputs"] = list(self.outputs)
        if self.final_vars is not None:
            out["final"] = dict(self.final_vars)
        return out


@dataclass(frozen=True)
class TestCase:
    name: str
    input: dict
    expected: ExpectedOutcome

    __test__ = False  # keep pytest from collecting this class


@dataclass
class TestSuite:
    cases: list

    __test__ = False

    def __iter__(self):
        return iter(self.cases)

    def __len__(self):
        return len(self.cases)


_TEST_TOKEN = re.compile(r"\s+|//[^\n]*|(-?\d+|[A-Za-z_][A-Za-z0-9_.]*|[{}\[\];,=])")


def parse_tests(text: str) -> TestSuite:
    """Parse the ``.tests`` format::

        test NAME { input x = 3, y = 4; expect output = [7]; expect final z = 7; }
    """
    toks = []
    pos = 0
    while pos < len(text):
        m = _TEST_TOKEN.match(text, pos)
        if not m:
            line = text.count("\n", 0, pos) + 1
            raise lang.ParseError(f"unexpected character {text[pos]!r} in test file", line, 0)
        if m.group(1):
            toks.append(m.group(1))
        pos = m.end()
    toks.append("<eof>")
    i = 0

    def take(expected=None):
        nonlocal i
        t = toks[i]
        if expected is not None and t != expected:
            raise lang.ParseError(f"unexpected {t!r} in test file", expected=[expected])
        i += 1
        return t

    def integer():
        t = take()
        try:
            return int(t)
        except ValueError:
            raise lang.ParseError(f"expected integer, got {t!r}") from None

    def bindings():
        out = {}
        while toks[i] != ";":
            name = take()
            take("=")
            out[name] = integer()
            if toks[i] == ",":
                take()
        take(";")
        return out

    cases = []
    while toks[i] != "<eof>":
        take("test")
        name = take()
        take("{")
        inputs, outputs, final = {}, None, None
        while toks[i] != "}":
            head = take()
            if head == "input":
                inputs.update(bindings())
            elif head == "expect":
                what = take()
                if what == "output":
                    take("=")
                    take("[")
                    vals = []
                    while toks[i] != "]":
                        vals.append(integer())
                        if toks[i] == ",":
                            take()
                    take("]")
                    take(";")
                    outputs = tuple(vals)
                elif what == "final":
                    final = {**(final or {}), **bindings()}
                else:
                    raise lang.ParseError(f"unknown expectation {what!r}", expected=["output", "final"])
            else:
                raise lang.ParseError(f"unexpected {head!r} in test {name}", expected=["input", "expect"])
        take("}")
        if outputs is None and final is None:
            raise lang.ParseError(f"test {name} has no expectation")
        cases.append(TestCase(name, inputs, ExpectedOutcome(outputs, final)))
    return TestSuite(cases)


def format_tests(suite: TestSuite) -> str:
    lines = []
    for t in suite.cases:
        parts = []
        if t.input:
            parts.append("input " + ", ".join(f"{k} = {v}" for k, v in t.input.items()) + ";")
        if t.expected.outputs is not None:
            parts.append("expect output = [" + ", ".join(map(str, t.expected.outputs)) + "];")
        if t.expected.final_vars is not None:
            parts.append("expect final " + ", ".join(f"{k} = {v}" for k, v in t.expected.final_vars.items()) + ";")
        lines.append(f"test {t.name} {{ " + " ".join(parts) + " }")
    return "\n".join(lines) + "\n"


def outcome_matches(prog: Program, result: RunResult, expected: ExpectedOutcome) -> bool:
    if expected.outputs is not None:
        if prog.is_sequential:
            if tuple(result.outputs) != tuple(expected.outputs):
                return False
        elif Counter(result.outputs) != Counter(expected.outputs):
            return False
    if expected.final_vars is not None:
        store = result.final_store or {}
        for k, v in expected.final_vars.items():
            if store.get(k) != v:
                return False
    return True


@dataclass
class TestOutcome:
    passed: bool
    result: RunResult

    __test__ = False


def run_test(prog: Program, t: TestCase, cfg: ObserverConfig = ObserverConfig()) -> TestOutcome:
    res = run(prog, t.input, cfg)
    if res.behavior != NORMAL:
        return TestOutcome(False, res)
    if not outcome_matches(prog, res, t.expected):
        return TestOutcome(False, replace(res, behavior=INCORRECT))
    return TestOutcome(True, res)


@dataclass
class SuiteResult:
    passing: list
    failing: list
    results: dict  # test name -> RunResult, in suite order


def evaluate_suite(prog: Program, suite, cfg: ObserverConfig = ObserverConfig()) -> SuiteResult:
    passing, failing, results = [], [], {}
    for t in suite:
        out = run_test(prog, t, cfg)
        results[t.name] = out.result
        (passing if out.passed else failing).append(t.name)
    return SuiteResult(passing, failing, results)


@dataclass
class BehCheck:
    holds: bool
    witness: TestCase | None = None
    result: RunResult | None = None


def check_beh(prog: Program, cases, cfg: ObserverConfig = ObserverConfig()) -> BehCheck:
    """Every case must pass; the first failing case is the witness."""
    for t in cases:
        out = run_test(prog, t, cfg)
        if not out.passed:
            return BehCheck(False, t, out.result)
    return BehCheck(True)
