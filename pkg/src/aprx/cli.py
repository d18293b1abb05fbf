"""``aprx`` command line: run, prove, check, localize, classify, repair and corpus.

Option values come from flags, then ``APRX_<NAME>`` environment variables,
then built-in defaults.  Exit codes: repair 0 patch found, 1 no patch,
3 budget exhausted, 4 precondition failed; prove 0 TR, 1 NT, 5 UN; check
0 all properties hold, 1 otherwise; 2 is always a usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import classify, faultloc, interp, lang, repair, smc, termprover
from .interp import ObserverConfig
from .termprover import InputDomain

log = logging.getLogger("aprx")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET, EXIT_PRECONDITION, EXIT_UNKNOWN = 0, 1, 2, 3, 4, 5
REPAIR_EXIT = {repair.PATCH_FOUND: EXIT_OK, repair.NO_PATCH: EXIT_FAIL, repair.BUDGET_EXHAUSTED: EXIT_BUDGET}
PROVE_EXIT = {termprover.TR: EXIT_OK, termprover.NT: EXIT_FAIL, termprover.UN: EXIT_UNKNOWN}

DOM_PRAGMA = re.compile(r"//\s*@dom\s+(.+)")
EDITS_PRAGMA = re.compile(r"//\s*@max-edits\s+(\d+)")
MANIFEST = "manifest.txt"


class UsageError(Exception):
    pass


def _env(name, conv, default):
    raw = os.environ.get("APRX_" + name)
    if raw is None:
        return default
    try:
        return conv(raw)
    except ValueError:
        raise UsageError(f"bad value for APRX_{name}: {raw!r}")


def parse_bindings(text) -> dict:
    out = {}
    for part in (text or "").split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, value = part.partition("=")
        if not sep:
            raise UsageError(f"expected name=value, got {part!r}")
        try:
            out[name.strip()] = int(value)
        except ValueError:
            raise UsageError(f"value of {name.strip()} is not an integer: {value!r}")
    return out


def load_program(path):
    try:
        src = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}")
    try:
        return lang.parse(src), src
    except lang.LangError as exc:
        raise UsageError(f"{path}: {exc}")


def load_tests(path):
    if path is None:
        return []
    try:
        return list(interp.parse_tests(Path(path).read_text()))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}")
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}")


def domain_for(args, src) -> InputDomain:
    specs = [m.group(1) for m in DOM_PRAGMA.finditer(src)]
    specs += list(args.dom or ())
    try:
        return InputDomain.parse(specs)
    except ValueError as exc:
        raise UsageError(f"bad input domain: {exc}")


def max_edits_for(args, src) -> int:
    """--max-edits wins when given; otherwise a ``// @max-edits N`` pragma, then the default."""
    if args.max_edits is not None:
        return args.max_edits
    m = EDITS_PRAGMA.search(src)
    return int(m.group(1)) if m else _env("MAX_EDITS", int, 1)


def observer_for(args) -> ObserverConfig:
    try:
        return ObserverConfig(step_budget=args.steps, schedule_seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))


def smc_for(args) -> smc.SmcConfig:
    try:
        return smc.SmcConfig(value_bound=args.bound, state_cap=args.state_cap)
    except ValueError as exc:
        raise UsageError(str(exc))


def emit(args, record, text):
    """Human text to stdout, JSON to --json (``-`` means stdout instead of text)."""
    data = json.dumps(record, indent=2, sort_keys=True) + "\n"
    if args.json == "-":
        sys.stdout.write(data)
        return
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    if args.json:
        Path(args.json).write_text(data)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_run(args):
    prog, _ = load_program(args.program)
    cfg = observer_for(args)
    tests = load_tests(args.tests)
    if tests:
        res = interp.evaluate_suite(prog, tests, cfg)
        record = {"passing": res.passing, "failing": res.failing,
                  "results": {k: v.to_dict() for k, v in res.results.items()}}
        text = "\n".join(f"{name}: {'pass' if name in res.passing else 'FAIL (' + r.behavior + ')'}"
                         for name, r in res.results.items())
        emit(args, record, text)
        return EXIT_OK if not res.failing else EXIT_FAIL
    try:
        result = interp.run(prog, parse_bindings(args.input), cfg)
    except ValueError as exc:
        raise UsageError(str(exc))
    text = (f"behavior: {result.behavior}\nsteps: {result.steps}\noutputs: {list(result.outputs)}\n"
            f"final: {result.final_store}")
    emit(args, result.to_dict(), text)
    return EXIT_OK if result.behavior == interp.NORMAL else EXIT_FAIL


def cmd_prove(args):
    prog, src = load_program(args.program)
    dom = domain_for(args, src)
    if prog.is_sequential:
        verdicts = {"main": termprover.prove(prog, dom, args.tp_steps)}
    else:
        verdicts = termprover.prove_all_procs(prog, dom, args.tp_steps)
    lines = []
    for name, v in verdicts.items():
        lines.append(f"{name}: {v.answer}")
        for sid, rf in sorted(v.ranking.items()):
            lines.append(f"  loop {sid}: ranking function {rf.text()}")
        if v.lasso is not None:
            lines.append(f"  lasso input {v.lasso.input}: stem {v.lasso.stem} cycle {v.lasso.cycle}")
        if v.reason:
            lines.append(f"  reason: {v.reason}")
    answers = {v.answer for v in verdicts.values()}
    overall = termprover.NT if termprover.NT in answers else termprover.UN if termprover.UN in answers else termprover.TR
    emit(args, {"verdict": overall, "procs": {k: v.to_dict() for k, v in verdicts.items()}}, "\n".join(lines))
    return PROVE_EXIT[overall]


def cmd_check(args):
    prog, _ = load_program(args.program)
    cfg = smc_for(args)
    tests = load_tests(args.tests)
    cases = [(t.name, t.input, t.expected) for t in tests] or [("input", parse_bindings(args.input), None)]
    rows, records, ok = [], [], True
    for name, inputs, expected in cases:
        try:
            g = smc.explore(prog, inputs, cfg)
        except smc.ExplorationError as exc:
            rows.append(f"{name}: exploration stopped: {exc}")
            records.append({"input": name, "error": str(exc)})
            ok = False
            continue
        except ValueError as exc:
            raise UsageError(str(exc))
        if args.dot:
            Path(args.dot).write_text(g.to_dot())
        results = [smc.check_deadlock(g), smc.check_livelock(g)]
        results += [smc.check_af_halt(g, p) for p in g.proc_names()]
        if expected is not None:
            results.append(smc.check_beh_model(g, expected))
        rows.append(f"{name}: {len(g.states)} states")
        for r in results:
            rows.append(f"  {r.property:<24} {r.outcome}")
            ok &= r.holds
        records.append({"input": name, "states": len(g.states),
                        "results": [smc.result_to_dict(g, r) for r in results]})
    emit(args, {"checks": records}, "\n".join(rows))
    return EXIT_OK if ok else EXIT_FAIL


def _localize(prog, src, args):
    tests = load_tests(args.tests)
    dom = domain_for(args, src)
    ces, spectrum = [], None
    if tests:
        res = interp.evaluate_suite(prog, tests, observer_for(args))
        if res.failing:
            spectrum = faultloc.build_spectrum(res.results, res.passing, res.failing)
    if prog.is_sequential:
        v = termprover.prove(prog, dom, args.tp_steps)
        if v.lasso is not None:
            ces.append(faultloc.Trace.from_lasso(v.lasso))
    else:
        try:
            rc = repair.diagnose_root_cause(prog, _repair_cfg(args, dom, src), tests)
            for traces in rc.traces.values():
                ces.extend(traces)
        except repair.NoDefectDetected:
            pass
    return faultloc.localize(prog, ces, spectrum)


def cmd_localize(args):
    prog, src = load_program(args.program)
    try:
        susp = _localize(prog, src, args)
    except faultloc.NothingToLocalize as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    csv_text = susp.to_csv(prog)
    if args.localize_report:
        Path(args.localize_report).write_text(csv_text)
    emit(args, {"ranking": [{"stmtId": s, "score": round(sc, 6), "provenance": p} for s, sc, p in susp.entries]},
         csv_text)
    return EXIT_OK


def cmd_classify(args):
    prog, src = load_program(args.program)
    tests = load_tests(args.tests)
    try:
        c = classify.classify_bug(prog, tests, observer_for(args), domain_for(args, src),
                                  repeats=args.repeats, smc_cfg=smc_for(args), tp_budget=args.tp_steps)
    except classify.NoBugSignal as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    rec = classify.recommend(c)
    text = (f"{c.observability}, {c.reproducibility}, {c.tractability} -> {rec.approach} "
            f"(validate with {rec.validation})")
    emit(args, {"classification": c.to_dict(), "recommendation": rec.to_dict()}, text)
    return EXIT_OK


def _repair_cfg(args, dom, src=""):
    try:
        return repair.RepairConfig(time_budget=args.budget, observer=observer_for(args), dom=dom,
                                   smc=smc_for(args), max_edits=max_edits_for(args, src),
                                   tp_budget=args.tp_steps)
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_repair(args):
    prog, src = load_program(args.program)
    tests = load_tests(args.tests)
    cfg = _repair_cfg(args, domain_for(args, src), src)
    try:
        result = repair.repair(prog, tests, cfg)
    except (repair.NotNonTerminating, repair.NoDefectDetected) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    emit(args, result.to_dict(), result.report())
    if result.patch is not None and args.output:
        Path(args.output).write_text(lang.pretty_print(result.patch.program))
    return REPAIR_EXIT[result.status]


# ---------------------------------------------------------------------------
# Corpus runner
# ---------------------------------------------------------------------------

SEQ_VERDICTS = ("TR", "NT", "UN")


def parse_manifest(text):
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] != "repair"):
            raise UsageError(f"manifest line {lineno}: expected 'path verdict [repair]'")
        entries.append({"path": parts[0], "expected": parts[1], "repair": len(parts) == 3})
    return entries


def concurrent_verdict(causes) -> str:
    return "+".join(sorted(causes)) if causes else "clean"


def run_entry(root, entry, settings):
    """Analyse one manifest entry; returns a JSON-able record without timings."""
    path = Path(root) / entry["path"]
    src = path.read_text()
    prog = lang.parse(src)
    dom = InputDomain.parse([m.group(1) for m in DOM_PRAGMA.finditer(src)])
    tests_path = path.with_suffix(".tests")
    tests = list(interp.parse_tests(tests_path.read_text())) if tests_path.exists() else []
    record = {"program": entry["path"], "expected": entry["expected"]}
    m = EDITS_PRAGMA.search(src)
    max_edits = settings["max_edits"] or (int(m.group(1)) if m else 1)
    cfg = repair.RepairConfig(time_budget=settings["budget"], dom=dom, max_edits=max_edits,
                              smc=smc.SmcConfig(settings["bound"], settings["state_cap"]),
                              tp_budget=settings["tp_steps"])
    if prog.is_sequential:
        v = termprover.prove(prog, dom, settings["tp_steps"])
        record["verdict"] = v.answer
        record["detail"] = v.to_dict()
    else:
        try:
            rc = repair.diagnose_root_cause(prog, cfg, tests)
            record["verdict"] = concurrent_verdict(rc.causes)
        except repair.NoDefectDetected:
            record["verdict"] = "clean"
    record["match"] = record["verdict"] == entry["expected"]
    if entry["repair"]:
        try:
            res = repair.repair(prog, tests, cfg)
            record["repair"] = res.status
            if res.patch is not None:
                record["patch"] = res.patch.to_dict()
        except (repair.NotNonTerminating, repair.NoDefectDetected) as exc:
            record["repair"] = f"precondition: {exc}"
    return record


def _run_entry_star(job):
    return run_entry(*job)


def cmd_corpus(args):
    root = Path(args.directory)
    manifest = root / MANIFEST
    if not root.is_dir():
        raise UsageError(f"{root} is not a directory")
    if not manifest.exists():
        raise UsageError(f"{root} has no {MANIFEST}")
    entries = parse_manifest(manifest.read_text())
    if not entries:
        raise UsageError(f"{manifest} lists no programs")
    for e in entries:
        if not (root / e["path"]).exists():
            raise UsageError(f"manifest names a missing program: {e['path']}")
    settings = {"budget": args.budget,
                "max_edits": args.max_edits if args.max_edits is not None else _env("MAX_EDITS", int, None), "bound": args.bound,
                "state_cap": args.state_cap, "tp_steps": args.tp_steps}
    jobs = [(str(root), e, settings) for e in entries]
    t0 = time.monotonic()
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            records = list(pool.map(_run_entry_star, jobs))
    else:
        records = [_run_entry_star(j) for j in jobs]
    elapsed = time.monotonic() - t0

    definite = [r for r in records if r["expected"] in ("TR", "NT")]
    hits = sum(1 for r in definite if r["verdict"] in ("TR", "NT"))
    repairs = [r for r in records if "repair" in r]
    fixed = sum(1 for r in repairs if r["repair"] == repair.PATCH_FOUND)
    mismatches = [r["program"] for r in records if not r["match"]]
    summary = {"summary": {
        "programs": len(records),
        "definiteRate": round(hits / len(definite), 4) if definite else None,
        "repairRate": round(fixed / len(repairs), 4) if repairs else None,
        "mismatches": mismatches,
    }}
    lines = [json.dumps(r, sort_keys=True) for r in records] + [json.dumps(summary, sort_keys=True)]
    data = "\n".join(lines) + "\n"
    if args.json and args.json != "-":
        Path(args.json).write_text(data)
    sys.stdout.write(data)
    s = summary["summary"]
    if s["definiteRate"] is not None:
        print(f"definite-verdict rate: {hits}/{len(definite)}", file=sys.stderr)
    if s["repairRate"] is not None:
        print(f"repair success rate: {fixed}/{len(repairs)}", file=sys.stderr)
    print(f"wall clock: {elapsed:.1f}s", file=sys.stderr)
    for name in mismatches:
        print(f"MISMATCH: {name}", file=sys.stderr)
    return EXIT_FAIL if mismatches else EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", metavar="PATH", help="also write a JSON report here ('-' prints JSON only)")
    common.add_argument("--steps", type=int, default=_env("STEPS", int, 100_000),
                        help="observer step budget per run")
    common.add_argument("--tp-steps", type=int, default=_env("TP_STEPS", int, 10_000),
                        help="step budget per input for the lasso search")
    common.add_argument("--seed", type=int, default=_env("SEED", int, 0), help="scheduler seed")
    common.add_argument("--dom", action="append", default=None,
                        help="input domain such as n=0..10 (repeatable; adds to // @dom pragmas)")
    common.add_argument("--bound", type=int, default=_env("BOUND", int, 1024),
                        help="model checker value bound")
    common.add_argument("--state-cap", type=int, default=_env("STATE_CAP", int, 1_000_000),
                        help="model checker state cap")
    common.add_argument("--budget", type=float, default=_env("BUDGET", float, 60.0),
                        help="repair time budget in seconds")
    common.add_argument("--max-edits", type=int, default=None, choices=(1, 2),
                        help="edits per patch (default: // @max-edits pragma, then APRX_MAX_EDITS, then 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="aprx", description="Termination-bug analysis and repair for MiniImp.",
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], formatter_class=fmt, help="execute a program or a test suite")
    p.add_argument("program")
    p.add_argument("--input", default="", help="bindings such as x=1,y=2")
    p.add_argument("--tests")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("prove", parents=[common], formatter_class=fmt, help="termination verdict TR/NT/UN")
    p.add_argument("program")
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("check", parents=[common], formatter_class=fmt, help="model-check a concurrent program")
    p.add_argument("program")
    p.add_argument("--input", default="")
    p.add_argument("--tests", help="test file whose cases give inputs and expected outcomes")
    p.add_argument("--dot", metavar="PATH", help="write the state graph in Graphviz format")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("localize", parents=[common], formatter_class=fmt, help="rank suspicious statements")
    p.add_argument("program")
    p.add_argument("--tests")
    p.add_argument("--localize-report", metavar="PATH", help="write the ranking as CSV")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("classify", parents=[common], formatter_class=fmt, help="classify a bug, recommend an approach")
    p.add_argument("program")
    p.add_argument("--tests")
    p.add_argument("--repeats", type=int, default=_env("REPEATS", int, 20), help="schedules tried per test")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("repair", parents=[common], formatter_class=fmt, help="search for a validated patch")
    p.add_argument("program")
    p.add_argument("--tests")
    p.add_argument("--output", metavar="PATH", help="write the patched program here")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("corpus", parents=[common], formatter_class=fmt, help="run a corpus manifest")
    p.add_argument("directory")
    p.add_argument("--jobs", type=int, default=_env("JOBS", int, 1))
    p.set_defaults(func=cmd_corpus)
    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
