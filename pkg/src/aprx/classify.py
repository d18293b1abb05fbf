"""Bug classification (observability, reproducibility, tractability) and APR recommendation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import faultloc, interp, smc, termprover
from .interp import ObserverConfig
from .termprover import InputDomain

OBSERVABLE = "observable"
PARTIALLY_OBSERVABLE = "partiallyObservable"
NON_OBSERVABLE = "nonObservable"
EASY = "easyToReproduce"
HARD = "hardToReproduce"
SHALLOW = "shallow"
DEEP = "deep"
LIVENESS = "liveness"

OBSERVABILITY = (OBSERVABLE, PARTIALLY_OBSERVABLE, NON_OBSERVABLE)
REPRODUCIBILITY = (EASY, HARD)
TRACTABILITY = (SHALLOW, DEEP, LIVENESS)

VISIBLE_FAILURES = (interp.CRASH, interp.EXCEPTION, interp.INCORRECT)
HANG_FAILURES = (interp.SOFT_HANG, interp.HARD_HANG)

VALIDATION = {
    "dynamic": "test cases",
    "static": "termination provers",
    "dynamicStatic": "test cases and termination provers",
    "formal": "termination provers and SMC",
}


class NoBugSignal(ValueError):
    pass


@dataclass
class BugClassification:
    observability: str
    reproducibility: str
    tractability: str
    evidence: dict = field(default_factory=dict)

    @property
    def triple(self):
        return (self.observability, self.reproducibility, self.tractability)

    def to_dict(self):
        return {"observability": self.observability, "reproducibility": self.reproducibility,
                "tractability": self.tractability, "evidence": self.evidence}


@dataclass(frozen=True)
class AprRecommendation:
    approach: str
    rationale: str
    validation: str

    def to_dict(self):
        return {"approach": self.approach, "rule": self.rationale, "validation": self.validation}


def recommend(c: BugClassification) -> AprRecommendation:
    obs, rep, tr = c.triple
    if obs == OBSERVABLE and tr in (SHALLOW, DEEP):
        approach, rule = "dynamic", "R1 observable and finite trace"
    elif obs == OBSERVABLE:
        approach, rule = "dynamicStatic", "R2 observable liveness bug"
    elif obs == PARTIALLY_OBSERVABLE and rep == EASY:
        approach, rule = "dynamicStatic", "R3 partially observable, reproducible"
    elif obs == PARTIALLY_OBSERVABLE:
        approach, rule = "formal", "R4 partially observable, hard to reproduce"
    else:
        approach, rule = "formal", "R5 not observable by tests"
    return AprRecommendation(approach, rule, VALIDATION[approach])


def _runs(prog, tests, cfg, seeds):
    """test name -> list of (seed, TestOutcome)."""
    out = {}
    for t in tests:
        out[t.name] = [(s, interp.run_test(prog, t, replace(cfg, schedule_seed=s))) for s in seeds]
    return out


def _formal_traces(prog, tests, dom, smc_cfg, tp_budget, grid_cap, evidence):
    traces = []
    if prog.is_sequential:
        v = termprover.prove(prog, dom, tp_budget, grid_cap=grid_cap)
        evidence["termination"] = v.to_dict()
        if v.answer == termprover.NT:
            traces.append(faultloc.Trace.from_lasso(v.lasso))
        return traces
    inputs = [(t.name, t.input) for t in tests] or [("default", {p: 0 for p in prog.input_params})]
    checks = []
    for name, inp in inputs:
        try:
            g = smc.explore(prog, inp, smc_cfg)
        except smc.ExplorationError as exc:
            checks.append({"input": name, "error": str(exc)})
            continue
        for res in [smc.check_deadlock(g), smc.check_livelock(g)] + \
                [smc.check_af_halt(g, p.name) for p in prog.procs]:
            if not res.holds:
                checks.append({"input": name, **smc.result_to_dict(g, res)})
                traces.append(faultloc.Trace.from_witness(g, res))
    evidence["modelChecking"] = checks
    for p in prog.procs:
        v = termprover.prove_proc_havoc(prog, p.name, dom, tp_budget, grid_cap=grid_cap)
        evidence.setdefault("termination", {})[p.name] = v.to_dict()
        if v.answer == termprover.NT:
            traces.append(faultloc.Trace.from_lasso(v.lasso))
    return traces


def classify_bug(prog, tests=(), cfg: ObserverConfig = ObserverConfig(), dom: InputDomain = InputDomain(),
                 repeats=20, shallow_threshold=1000, smc_cfg: smc.SmcConfig = smc.SmcConfig(),
                 tp_budget=10_000, grid_cap=10_000) -> BugClassification:
    tests = list(tests)
    evidence = {"observer": {"stepBudget": cfg.step_budget, "softHangThreshold": cfg.soft_hang_threshold,
                             "note": "observability is relative to this observer"}}
    seeds = [0, 1] if prog.is_sequential else list(range(repeats))
    runs = _runs(prog, tests, cfg, seeds)
    failing = {name: [(s, o) for s, o in rs if not o.passed] for name, rs in runs.items()}
    failing = {k: v for k, v in failing.items() if v}
    behaviors = sorted({o.result.behavior for v in failing.values() for _, o in v})
    evidence["failingTests"] = {k: sorted({o.result.behavior for _, o in v}) for k, v in failing.items()}

    ces = _formal_traces(prog, tests, dom, smc_cfg, tp_budget, grid_cap, evidence)
    if not failing and not ces:
        raise NoBugSignal("no failing test and no failing formal check")

    # observability
    if any(b in VISIBLE_FAILURES for b in behaviors):
        observability = OBSERVABLE
    elif failing:
        observability = PARTIALLY_OBSERVABLE
    else:
        observability = NON_OBSERVABLE

    # reproducibility: every repetition of every failing test fails the same way
    reproducible = bool(failing)
    repro = {}
    for name, rs in runs.items():
        if name not in failing:
            continue
        verdicts = [o.result.behavior if not o.passed else "pass" for _, o in rs]
        digests = {o.result.trace_digest for _, o in rs}
        agree = len(set(verdicts)) == 1 and (not prog.is_sequential or len(digests) == 1)
        repro[name] = {"failedRuns": sum(v != "pass" for v in verdicts), "runs": len(verdicts)}
        reproducible &= agree
    evidence["reproduction"] = repro or "no failing run"
    reproducibility = EASY if reproducible else HARD

    # tractability
    spectrum = None
    if failing:
        passing = [n for n in runs if n not in failing]
        results = {n: runs[n][0][1].result for n in passing}
        results.update({n: failing[n][0][1].result for n in failing})
        spectrum = faultloc.build_spectrum(results, passing, list(failing))
    cyc = [c for c in ces if c.cycle]
    susp = faultloc.localize(prog, ces, spectrum)
    if cyc:
        cycle_ids = {sid for c in cyc for sid in c.cycle}
        buggy = next(sid for sid in susp.ranked() if sid in cycle_ids)
        tractability = LIVENESS
        evidence["counterexample"] = {"stem": list(cyc[0].stem), "cycle": list(cyc[0].cycle)}
    else:
        buggy = susp.ranked()[0]
        reach = [o.result.first_seen.get(buggy) for v in failing.values() for _, o in v]
        tractability = SHALLOW if reach and all(r is not None and r <= shallow_threshold for r in reach) else DEEP
        evidence["stepsToBuggyLocation"] = reach
    evidence["buggyLocation"] = buggy
    return BugClassification(observability, reproducibility, tractability, evidence)
