"""Acceptance gate: one PASS/FAIL line per criterion (shown in the terminal summary)."""

import contextlib
import io
import random
import time

import pytest

from aprx import classify, cli, interp, lang, linear, repair, smc, termprover as tp
from aprx.interp import ExpectedOutcome, ObserverConfig, TestCase
from aprx.linear import Lin
import oracles
from conftest import CONC_DIR, SEQ_DIR, load, manifest


@pytest.fixture
def report(request):
    lines = request.config.__dict__.setdefault("acceptance_lines", [])

    def emit(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        lines.append(line)
        print(line)
        return ok
    return emit


def seq_entries():
    return [(e, *load(SEQ_DIR, e["path"])) for e in manifest(SEQ_DIR)]


def conc_entries():
    return [(e, *load(CONC_DIR, e["path"])) for e in manifest(CONC_DIR)]


def concurrent_inputs(prog, tests):
    return [dict(t.input) for t in tests] or [{p: 0 for p in prog.input_params}]


def without_outputs(canon):
    # a lasso repeats the control and data state; the output log is an observation
    return canon[:4] + canon[5:]


def lasso_replays(prog, lasso):
    idx = 0 if lasso.proc is None else prog.proc_index(lasso.proc)
    halting = lang.halting_set(prog)[prog.procs[idx].name]
    out = oracles.replay_steps(prog, lasso.input, [(idx, s) for s in lasso.stem], [(idx, s) for s in lasso.cycle])
    return (tp.replay_lasso(prog, lasso) and out is not None and not out[2]
            and without_outputs(out[0]) == without_outputs(out[1])
            and bool(lasso.cycle) and not set(lasso.cycle) & halting)


def lp_certificate_holds(rf, transitions):
    r = rf.lin()
    for t in transitions:
        post = r.substitute({v: t.post.get(v, Lin.var(v)) for v in rf.coeffs})
        if not oracles.lp_implies(t.constraints, linear.ge(r, 0)):
            return False
        if not oracles.lp_implies(t.constraints, linear.ge(r - post, 1)):
            return False
    return True


def loops_of(prog, proc=None):
    body = (prog.proc(proc) if proc else prog.procs[0]).body
    return [s for s in lang.walk(body) if isinstance(s, lang.While)]


# ---------------------------------------------------------------------------

def test_prover_soundness(report):
    start = time.monotonic()
    entries = seq_entries()
    counts = {v: sum(e["expected"] == v for e, *_ in entries) for v in ("TR", "NT", "UN")}
    wrong, definite, subset = [], 0, 0
    for e, prog, _, _, dom in entries:
        v = tp.prove(prog, dom)
        if e["expected"] in ("TR", "NT"):
            subset += 1
            definite += v.answer in ("TR", "NT")
        if v.answer == tp.TR:
            for inp in dom.grid(list(prog.input_params)):
                status = oracles.oracle_run(prog, inp, budget=10**7)[0]
                if status not in ("halted", "fault"):
                    wrong.append((e["path"], inp, status))
                    break
        elif v.answer == tp.NT:
            if oracles.oracle_run(prog, v.lasso.input, budget=10**7)[0] not in ("cycle", "budget"):
                wrong.append((e["path"], v.lasso.input, "terminates"))
    elapsed = time.monotonic() - start
    rate = definite / subset
    shape = counts["TR"] >= 12 and counts["NT"] >= 12 and counts["UN"] >= 3 and len(entries) >= 30
    ok = shape and not wrong and rate >= 0.85 and elapsed <= 120
    report("prover soundness", ok,
           f"{len(entries)} programs ({counts}), wrong verdicts {len(wrong)}, "
           f"definite rate {definite}/{subset} = {rate:.0%}, {elapsed:.1f}s")
    assert ok, wrong


def test_lasso_replay(report):
    total, bad = 0, []
    for e, prog, _, _, dom in seq_entries():
        v = tp.prove(prog, dom)
        if v.answer == tp.NT:
            total += 1
            if not lasso_replays(prog, v.lasso):
                bad.append(e["path"])
    for e, prog, _, _, dom in conc_entries():
        for name, v in tp.prove_all_procs(prog, dom).items():
            if v.answer == tp.NT:
                total += 1
                if not lasso_replays(prog, v.lasso):
                    bad.append(f"{e['path']}:{name}")
    ok = total > 0 and not bad
    report("lasso replay", ok, f"{total - len(bad)}/{total} NT verdicts replay to a repeated state")
    assert ok, bad


def _certificates():
    """(label, program, proc name or None, TR verdict) over both corpora."""
    for e, prog, _, _, dom in seq_entries():
        v = tp.prove(prog, dom)
        if v.answer == tp.TR:
            yield e["path"], prog, None, v
    for e, prog, _, _, dom in conc_entries():
        for name, v in tp.prove_all_procs(prog, dom).items():
            if v.answer == tp.TR:
                yield f"{e['path']}:{name}", prog, name, v


def test_ranking_verification(report):
    certs, loops, bad, samples = 0, 0, [], 0
    for label, prog, proc, v in _certificates():
        certs += 1
        havoc = frozenset(prog.global_vars) if proc else frozenset()
        if not tp.verify_certificate(prog, v, proc):
            bad.append((label, "re-check"))
            continue
        for loop in loops_of(prog, proc):
            loops += 1
            rf = v.ranking[loop.sid]
            if not lp_certificate_holds(rf, tp.loop_transitions(loop, havoc)):
                bad.append((label, loop.sid, "lp"))
            lin = rf.lin()
            accepted, violations = oracles.sample_ranking(prog, loop, lambda env: lin.evaluate(env))
            samples += accepted
            if accepted < 1000 or violations:
                bad.append((label, loop.sid, accepted, len(violations)))
    ok = certs > 0 and not bad
    report("ranking verification", ok,
           f"{certs} TR certificates, {loops} loops, {samples} sampled states, failures {len(bad)}")
    assert ok, bad


def _replay_witness(g, res):
    w = res.witness
    out = oracles.replay_steps(g.program, g.inputs, [(p, sid) for _, p, sid, _ in w.stem],
                               [(p, sid) for _, p, sid, _ in w.cycle])
    if out is None or out[0] != tuple(g.states[w.state]):
        return False
    return not w.cycle or out[1] == out[0]


def test_model_checker_equivalence(report):
    start = time.monotonic()
    programs, graphs, witnesses, bad = 0, 0, 0, []
    for e, prog, _, tests, _ in conc_entries():
        programs += 1
        for inp in concurrent_inputs(prog, tests):
            g = smc.explore(prog, inp, smc.SmcConfig(state_cap=10**5))
            graphs += 1
            states, deadlocks = oracles.enumerate_states(prog, inp)
            mine = {tuple(s) for s in g.states}
            stuck = {tuple(g.states[i]) for i in range(len(g.states)) if not g.succ[i] and not g.all_halted(i)}
            if mine != states or stuck != deadlocks:
                bad.append((e["path"], "states"))
            dl = smc.check_deadlock(g)
            if dl.holds != (not deadlocks):
                bad.append((e["path"], "deadlock verdict"))
            results = [dl, smc.check_livelock(g)] + [smc.check_af_halt(g, n) for n in g.proc_names()]
            results += [smc.check_beh_model(g, t.expected) for t in tests if t.input == inp]
            for res in results:
                if not res.holds and res.witness is not None:
                    witnesses += 1
                    if not (smc.replay_witness(g, res) and _replay_witness(g, res)):
                        bad.append((e["path"], res.property))
    elapsed = time.monotonic() - start
    ok = programs >= 10 and not bad and elapsed <= 300
    report("model-checker equivalence", ok,
           f"{programs} programs, {graphs} state graphs match the enumerator, "
           f"{witnesses} witnesses replayed, failures {len(bad)}, {elapsed:.1f}s")
    assert ok, bad


def held_out_inputs(prog, tests, n=100, seed=0):
    params = list(prog.input_params)
    used = {tuple(t.input.get(p, 0) for p in params) for t in tests}
    rng = random.Random(seed)
    out, seen = [], set(used)
    space = 1001 ** len(params)
    while len(out) < min(n, space - len(used)):
        key = tuple(rng.randint(-500, 500) for _ in params)
        if key not in seen:
            seen.add(key)
            out.append(dict(zip(params, key)))
    return out


def test_sequential_repair(report):
    rows = [(e, prog, tests, dom) for e, prog, _, tests, dom in seq_entries() if e["repair"]]
    fixed, problems, slowest = 0, [], 0.0
    for e, prog, tests, dom in rows:
        t0 = time.monotonic()
        res = repair.repair_sequential(prog, tests, repair.RepairConfig(time_budget=60, dom=dom))
        took = time.monotonic() - t0
        slowest = max(slowest, took)
        if res.status != repair.PATCH_FOUND or took > 60:
            problems.append((e["path"], res.status))
            continue
        patched = res.patch.program
        ev = res.evidence
        verdict = tp.prove(patched, dom)
        evidence_ok = (ev.complete and len(ev.conjuncts) == 2 and verdict.answer == tp.TR
                       and tp.verify_certificate(patched, verdict)
                       and all(interp.run_test(patched, t).passed for t in tests))
        inputs = held_out_inputs(prog, tests)
        halted = sum(oracles.oracle_run(patched, inp)[0] == "halted" for inp in inputs)
        if not evidence_ok or halted != len(inputs) or len(inputs) < 100:
            problems.append((e["path"], "evidence" if not evidence_ok else f"held-out {halted}/{len(inputs)}"))
            continue
        fixed += 1
    ok = len(rows) >= 10 and fixed >= 8
    report("sequential repair", ok,
           f"{fixed}/{len(rows)} repaired with tests passing and TR, 100 held-out inputs each terminate; "
           f"slowest {slowest:.1f}s; problems {problems}")
    assert ok, problems


CONJUNCTS = ("behavior holds", "deadlock freedom", "livelock freedom")


def test_concurrent_repair(report):
    rows = [(e, prog, tests, dom, src) for e, prog, src, tests, dom in conc_entries() if e["repair"]]
    kinds = {"deadlock": 0, "infiniteLoop": 0, "combined": 0}
    fixed, problems, slowest = 0, [], 0.0
    for e, prog, tests, dom, src in rows:
        causes = e["expected"].split("+")
        if len(causes) > 1 and "deadlock" in causes:
            kinds["combined"] += 1
        elif "deadlock" in causes:
            kinds["deadlock"] += 1
        else:
            kinds["infiniteLoop"] += 1
        m = cli.EDITS_PRAGMA.search(src)
        cfg = repair.RepairConfig(time_budget=120, dom=dom, max_edits=int(m.group(1)) if m else 1)
        t0 = time.monotonic()
        res = repair.repair_concurrent(prog, tests, cfg)
        took = time.monotonic() - t0
        slowest = max(slowest, took)
        if res.status != repair.PATCH_FOUND or took > 120:
            problems.append((e["path"], res.status))
            continue
        names = [c.name for c in res.evidence.conjuncts]
        want = list(CONJUNCTS) + [f"termination verdict of {p.name} is TR" for p in prog.procs] + \
            [f"{p.name} eventually halts" for p in prog.procs]
        patched = res.patch.program
        no_deadlock = all(not oracles.enumerate_states(patched, inp)[1] for inp in concurrent_inputs(patched, tests))
        if not (res.evidence.complete and set(want) <= set(names) and no_deadlock):
            problems.append((e["path"], "evidence"))
            continue
        fixed += 1
    shape = len(rows) >= 6 and kinds["deadlock"] >= 3 and kinds["infiniteLoop"] >= 2 and kinds["combined"] >= 1
    ok = shape and fixed >= 5
    report("concurrent repair", ok,
           f"{fixed}/{len(rows)} repaired with full evidence ({kinds}); slowest {slowest:.1f}s; problems {problems}")
    assert ok, problems


def test_classification_conformance(report):
    arith = lang.parse("proc main(x, y){ output x - y; }")
    c1 = classify.classify_bug(arith, [TestCase("add", {"x": 2, "y": 3}, ExpectedOutcome(outputs=(5,)))])
    hang = lang.parse("proc main(n){ i := 0; while (i < n) { skip; } halt; }")
    c2 = classify.classify_bug(hang, [TestCase("t", {"n": 3}, ExpectedOutcome(final_vars={"i": 3}))],
                               ObserverConfig(step_budget=2000), tp.InputDomain({"n": (0, 5)}))
    racy = lang.parse("""mutex m; mutex k; shared s = 0;
        proc a(){ s := s + 1; s := s + 1; s := s + 1; lock(m); lock(k); unlock(k); unlock(m); }
        proc b(){ lock(k); lock(m); unlock(m); unlock(k); }""")
    c3 = classify.classify_bug(racy, [TestCase("t", {}, ExpectedOutcome(final_vars={"s": 3}))],
                               ObserverConfig(step_budget=200))
    r2, r3 = classify.recommend(c2), classify.recommend(c3)
    ok = (c1.triple == ("observable", "easyToReproduce", "shallow")
          and (c2.observability, c2.tractability) == ("partiallyObservable", "liveness")
          and r2.validation == "test cases and termination provers"
          and c3.reproducibility == "hardToReproduce"
          and r3.validation == "termination provers and SMC")
    report("classification conformance", ok,
           f"arithmetic {c1.triple}; sequential hang {c2.triple} -> {r2.validation}; "
           f"schedule-dependent deadlock {c3.triple} -> {r3.validation}")
    assert ok


def _corpus_output(directory):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(io.StringIO()):
        code = cli.main(["corpus", str(directory)])
    return code, buf.getvalue()


def test_determinism(report):
    runs = [[_corpus_output(d) for d in (SEQ_DIR, CONC_DIR)] for _ in range(2)]
    same = runs[0] == runs[1]
    codes = [code for code, _ in runs[0]]
    ok = same and codes == [0, 0]
    size = sum(len(out) for _, out in runs[0])
    report("determinism", ok, f"two full corpus runs {'byte-identical' if same else 'differ'} "
                              f"({size} bytes of NDJSON), exit codes {codes}")
    assert ok
