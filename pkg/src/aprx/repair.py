"""Repair loops for sequential and concurrent MiniImp programs.

Sequential repair only accepts a patch that passes every test *and* is
proved terminating (TR).  Concurrent repair accepts a patch only when every
proc is proved terminating under interference and the model checker shows
deadlock freedom, livelock freedom, the expected behaviour and eventual
halting of every proc, for every input in the specification.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from . import faultloc, interp, lang, patchgen, smc, termprover
from .interp import ObserverConfig
from .smc import SmcConfig
from .termprover import TR, InputDomain

log = logging.getLogger(__name__)

PATCH_FOUND = "PatchFound"
NO_PATCH = "NoPatchFound"
BUDGET_EXHAUSTED = "BudgetExhausted"

INFINITE_LOOP = "infiniteLoop"
DEADLOCK = "deadlock"
LIVELOCK = "livelock"


class NotNonTerminating(ValueError):
    def __init__(self, verdict):
        super().__init__(f"input program is not proved non-terminating (verdict {verdict.answer})")
        self.verdict = verdict


class NoDefectDetected(ValueError):
    pass


@dataclass
class RepairConfig:
    time_budget: float = 60.0
    observer: ObserverConfig = field(default_factory=ObserverConfig)
    dom: InputDomain = field(default_factory=InputDomain)
    smc: SmcConfig = field(default_factory=SmcConfig)
    max_edits: int = 1
    top_k: int = patchgen.DEFAULT_TOP_K
    tp_budget: int = 10_000
    grid_cap: int = 10_000

    def __post_init__(self):
        if not self.time_budget > 0:
            raise ValueError("time_budget must be positive")
        if self.max_edits not in (1, 2):
            raise ValueError("max_edits must be 1 or 2")


@dataclass
class Conjunct:
    name: str
    holds: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "holds": self.holds, "detail": self.detail}


@dataclass
class ValidationEvidence:
    """Per-conjunct verdicts; ``failed`` names the first conjunct that did not hold."""

    formula: str
    conjuncts: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return bool(self.conjuncts) and all(c.holds for c in self.conjuncts)

    @property
    def failed(self):
        for c in self.conjuncts:
            if not c.holds:
                return c.name
        return None

    def to_dict(self):
        out = {"formula": self.formula, "accepted": self.complete,
               "conjuncts": [c.to_dict() for c in self.conjuncts]}
        if self.failed:
            out["failed"] = self.failed
        if self.notes:
            out["notes"] = list(self.notes)
        return out


@dataclass
class RootCause:
    causes: list
    traces: dict = field(default_factory=dict)   # cause -> [faultloc.Trace]
    details: dict = field(default_factory=dict)  # cause -> [json-able witness]

    def to_dict(self):
        return {"causes": list(self.causes), "witnesses": self.details}


@dataclass
class RepairResult:
    status: str
    patch: patchgen.Patch | None = None
    evidence: ValidationEvidence | None = None
    stats: dict = field(default_factory=dict)
    original: lang.Program | None = None
    root_cause: RootCause | None = None

    def to_dict(self, timings=True):
        stats = dict(self.stats)
        if not timings:
            stats.pop("timeUsed", None)
        out = {"status": self.status, "stats": stats}
        if self.patch is not None:
            out["patch"] = self.patch.to_dict()
            out["diff"] = patchgen.diff(self.original, self.patch.program)
            out["patched"] = lang.pretty_print(self.patch.program)
        if self.evidence is not None:
            out["evidence"] = self.evidence.to_dict()
        if self.root_cause is not None:
            out["rootCause"] = self.root_cause.to_dict()
        return out

    def report(self) -> str:
        lines = [f"status: {self.status}",
                 f"patches tried: {self.stats.get('patchesTried', 0)} of {self.stats.get('spaceSize', 0)}"]
        if self.root_cause is not None:
            lines.append("root causes: " + ", ".join(self.root_cause.causes))
        if self.patch is not None:
            lines.append("edits: " + "; ".join(
                f"{e.kind}@{e.target}{list(patchgen._jsonable(e.args)) if e.args else ''}" for e in self.patch.edits))
            lines.append(patchgen.diff(self.original, self.patch.program).rstrip("\n"))
        if self.evidence is not None:
            for c in self.evidence.conjuncts:
                lines.append(f"  [{'ok' if c.holds else 'FAIL'}] {c.name}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_eq1(patched: lang.Program, tests, dom: InputDomain = InputDomain(),
                 observer: ObserverConfig = ObserverConfig(), tp_budget=10_000) -> ValidationEvidence:
    """All tests pass and the prover answers TR."""
    ev = ValidationEvidence("tests-and-termination")
    verdicts = {}
    for t in tests:
        out = interp.run_test(patched, t, observer)
        verdicts[t.name] = out.result.behavior if not out.passed else "pass"
        if not out.passed:
            ev.conjuncts.append(Conjunct(f"test {t.name} passes", False,
                                         {"behavior": out.result.behavior, "outputs": list(out.result.outputs)}))
            return ev
    ev.conjuncts.append(Conjunct("all tests pass", True, {"tests": verdicts}))
    v = termprover.prove(patched, dom, tp_budget, search_lasso=False)
    ev.conjuncts.append(Conjunct("termination verdict is TR", v.answer == TR, v.to_dict()))
    return ev


def _case_inputs(prog, cases):
    if cases:
        return [(t.name, dict(t.input), t.expected) for t in cases]
    return [("default", {p: 0 for p in prog.input_params}, None)]


def validate_eq2(patched: lang.Program, cases, dom: InputDomain = InputDomain(),
                 smc_cfg: SmcConfig = SmcConfig(), tp_budget=10_000) -> ValidationEvidence:
    """Expected behaviour, per-proc TR under interference, no deadlock, no livelock, every proc halts."""
    ev = ValidationEvidence("termination-deadlock-livelock-behavior")
    graphs = []
    for name, inputs, expected in _case_inputs(patched, cases):
        try:
            g = smc.explore(patched, inputs, smc_cfg)
        except smc.ExplorationError as exc:
            ev.conjuncts.append(Conjunct(f"state space of {name} explored", False, {"error": str(exc)}))
            return ev
        graphs.append((name, g, expected))

    # behaviour first: it is the cheap filter
    for name, g, expected in graphs:
        if expected is None:
            continue
        res = smc.check_beh_model(g, expected)
        if not res.holds or res.info.get("vacuous"):
            ev.conjuncts.append(Conjunct(f"behavior on {name}", False, smc.result_to_dict(g, res)))
            return ev
    ev.conjuncts.append(Conjunct("behavior holds", True, {"inputs": [n for n, _, e in graphs if e is not None]}))

    for proc in patched.procs:
        v = termprover.prove_proc_havoc(patched, proc.name, dom, tp_budget, search_lasso=False)
        ev.conjuncts.append(Conjunct(f"termination verdict of {proc.name} is TR", v.answer == TR, v.to_dict()))
        if v.answer != TR:
            return ev
    ev.notes.append("per-proc TR was established with every shared read unconstrained")

    for label, check in (("deadlock freedom", smc.check_deadlock), ("livelock freedom", smc.check_livelock)):
        for name, g, _ in graphs:
            res = check(g)
            if not res.holds:
                ev.conjuncts.append(Conjunct(f"{label} on {name}", False, smc.result_to_dict(g, res)))
                return ev
        ev.conjuncts.append(Conjunct(label, True, {"inputs": [n for n, _, _ in graphs]}))

    for proc in patched.procs:
        for name, g, _ in graphs:
            res = smc.check_af_halt(g, proc.name)
            if not res.holds:
                ev.conjuncts.append(Conjunct(f"{proc.name} eventually halts on {name}", False,
                                             smc.result_to_dict(g, res)))
                return ev
        ev.conjuncts.append(Conjunct(f"{proc.name} eventually halts", True, {}))
    return ev


# ---------------------------------------------------------------------------
# Sequential repair
# ---------------------------------------------------------------------------

def _search(prog, space, validate, cfg, start, extra_stats=None):
    tried = 0
    stats = dict(extra_stats or {})
    stats["spaceSize"] = len(space)
    last = None
    for patch in space:
        if time.monotonic() - start >= cfg.time_budget:
            stats.update(patchesTried=tried, timeUsed=round(time.monotonic() - start, 3))
            return RepairResult(BUDGET_EXHAUSTED, None, last, stats, prog)
        tried += 1
        ev = validate(patch.program)
        log.debug("patch %d %s -> %s", patch.origin_id, [e.kind for e in patch.edits], ev.failed or "accepted")
        if ev.complete:
            stats.update(patchesTried=tried, timeUsed=round(time.monotonic() - start, 3))
            return RepairResult(PATCH_FOUND, patch, ev, stats, prog)
        last = ev
    stats.update(patchesTried=tried, timeUsed=round(time.monotonic() - start, 3))
    return RepairResult(NO_PATCH, None, None, stats, prog)


def repair_sequential(prog: lang.Program, tests, cfg: RepairConfig = None, phi_beh=None) -> RepairResult:
    """Localise with the lasso and the test spectrum, mutate, accept the first patch passing both checks.

    ``phi_beh`` is accepted for symmetry but the test suite is the behavioural
    specification here.
    """
    cfg = cfg or RepairConfig()
    start = time.monotonic()
    tests = list(tests) + list(phi_beh or ())
    verdict = termprover.prove(prog, cfg.dom, cfg.tp_budget, grid_cap=cfg.grid_cap)
    if verdict.answer != termprover.NT:
        raise NotNonTerminating(verdict)
    suite = interp.evaluate_suite(prog, tests, cfg.observer)
    spectrum = None
    if suite.failing:
        spectrum = faultloc.build_spectrum(suite.results, suite.passing, suite.failing)
    susp = faultloc.localize(prog, [faultloc.Trace.from_lasso(verdict.lasso)], spectrum)
    root = RootCause([INFINITE_LOOP], {INFINITE_LOOP: [faultloc.Trace.from_lasso(verdict.lasso)]},
                     {INFINITE_LOOP: [verdict.lasso.to_dict()]})
    try:
        space = patchgen.mutate_logic(prog, susp, cfg.max_edits, cfg.top_k)
    except patchgen.EmptyPatchSpace:
        return RepairResult(NO_PATCH, stats={"patchesTried": 0, "spaceSize": 0,
                                             "timeUsed": round(time.monotonic() - start, 3)},
                            original=prog, root_cause=root)

    def validate(patched):
        return validate_eq1(patched, tests, cfg.dom, cfg.observer, cfg.tp_budget)

    res = _search(prog, space, validate, cfg, start)
    res.root_cause = root
    return res


# ---------------------------------------------------------------------------
# Concurrent repair
# ---------------------------------------------------------------------------

def diagnose_root_cause(prog: lang.Program, cfg: RepairConfig = None, cases=()) -> RootCause:
    """Deadlock and livelock from the model checker, infinite loops from the prover and the checker."""
    if prog.is_sequential:
        raise ValueError("root-cause diagnosis needs a concurrent program")
    cfg = cfg or RepairConfig()
    traces = {DEADLOCK: [], LIVELOCK: [], INFINITE_LOOP: []}
    details = {DEADLOCK: [], LIVELOCK: [], INFINITE_LOOP: []}
    for name, inputs, _ in _case_inputs(prog, cases):
        try:
            g = smc.explore(prog, inputs, cfg.smc)
        except smc.ExplorationError as exc:
            log.info("model checking %s stopped early: %s", name, exc)
            continue
        dl = smc.check_deadlock(g)
        if not dl.holds:
            traces[DEADLOCK].append(faultloc.Trace.from_witness(g, dl))
            details[DEADLOCK].append({"input": name, **smc.result_to_dict(g, dl)})
        ll = smc.check_livelock(g)
        if not ll.holds:
            traces[LIVELOCK].append(faultloc.Trace.from_witness(g, ll))
            details[LIVELOCK].append({"input": name, **smc.result_to_dict(g, ll)})
        for procs, w in ll.info.get("infinite_loops", ()):
            stem, cycle = w.stmt_ids()
            traces[INFINITE_LOOP].append(faultloc.Trace(tuple(stem), tuple(cycle)))
            details[INFINITE_LOOP].append({"input": name, "procs": procs, "source": "model checker",
                                           "witness": smc.serialize_witness(g, w)})
    for proc in prog.procs:
        v = termprover.prove_proc_havoc(prog, proc.name, cfg.dom, cfg.tp_budget, grid_cap=cfg.grid_cap)
        if v.answer == termprover.NT:
            traces[INFINITE_LOOP].append(faultloc.Trace.from_lasso(v.lasso))
            details[INFINITE_LOOP].append({"proc": proc.name, "source": "termination prover",
                                           "lasso": v.lasso.to_dict()})
    causes = [c for c in (INFINITE_LOOP, DEADLOCK, LIVELOCK) if traces[c]]
    if not causes:
        raise NoDefectDetected("neither the model checker nor the termination prover flags the program")
    return RootCause(causes, {c: traces[c] for c in causes}, {c: details[c] for c in causes})


def repair_concurrent(prog: lang.Program, phi_beh=(), cfg: RepairConfig = None) -> RepairResult:
    """``phi_beh`` is a list of TestCase: one model-checked input and expected outcome each."""
    if prog.is_sequential:
        raise ValueError("repair_concurrent needs a concurrent program")
    cfg = cfg or RepairConfig()
    start = time.monotonic()
    cases = list(phi_beh)
    root = diagnose_root_cause(prog, cfg, cases)
    susp_d = susp_l = None
    sync = root.traces.get(DEADLOCK, []) + root.traces.get(LIVELOCK, [])
    if sync:
        susp_d = faultloc.localize(prog, sync)
    if INFINITE_LOOP in root.traces:
        susp_l = faultloc.localize(prog, root.traces[INFINITE_LOOP])
    try:
        space = patchgen.union_space(prog, susp_d, susp_l, cfg.max_edits, cfg.top_k)
    except patchgen.EmptyPatchSpace:
        return RepairResult(NO_PATCH, stats={"patchesTried": 0, "spaceSize": 0,
                                             "timeUsed": round(time.monotonic() - start, 3)},
                            original=prog, root_cause=root)

    def validate(patched):
        return validate_eq2(patched, cases, cfg.dom, cfg.smc, cfg.tp_budget)

    res = _search(prog, space, validate, cfg, start)
    res.root_cause = root
    return res


def repair(prog: lang.Program, tests=(), cfg: RepairConfig = None) -> RepairResult:
    if prog.is_sequential:
        return repair_sequential(prog, tests, cfg)
    return repair_concurrent(prog, tests, cfg)
