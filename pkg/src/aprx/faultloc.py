"""Suspiciousness ranking from test spectra and counterexample traces."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from . import lang


class NoFailingTests(ValueError):
    pass


class NothingToLocalize(ValueError):
    pass


@dataclass
class Spectrum:
    passed_cover: dict = field(default_factory=dict)
    failed_cover: dict = field(default_factory=dict)
    total_passed: int = 0
    total_failed: int = 0

    def statements(self):
        return set(self.passed_cover) | set(self.failed_cover)


def build_spectrum(results: dict, passing, failing) -> Spectrum:
    """Aggregate per-statement coverage counts.

    Budget-exhausted runs are failing tests and contribute the prefix they
    executed, which is exactly what their recorded coverage holds.
    """
    spec = Spectrum(total_passed=len(passing), total_failed=len(failing))
    for name in passing:
        for sid in results[name].coverage:
            spec.passed_cover[sid] = spec.passed_cover.get(sid, 0) + 1
    for name in failing:
        for sid in results[name].coverage:
            spec.failed_cover[sid] = spec.failed_cover.get(sid, 0) + 1
    return spec


def ochiai(spec: Spectrum, sid) -> float:
    if spec.total_failed == 0:
        raise NoFailingTests("Ochiai needs at least one failing test")
    ef = spec.failed_cover.get(sid, 0)
    if ef == 0:
        return 0.0
    ep = spec.passed_cover.get(sid, 0)
    return ef / math.sqrt(spec.total_failed * (ef + ep))


@dataclass(frozen=True)
class Trace:
    """A counterexample reduced to statement ids: a finite stem and a repeating cycle.

    For a deadlock the "cycle" holds the statements the stuck procs wait at
    forever.
    """

    stem: tuple
    cycle: tuple = ()

    @classmethod
    def from_lasso(cls, lasso):
        return cls(tuple(lasso.stem), tuple(lasso.cycle))

    @classmethod
    def from_witness(cls, graph, result):
        stem, cycle = result.witness.stmt_ids()
        if not cycle:
            state = graph.states[result.witness.state]
            if state.fault is not None:
                cycle = [state.fault[2]]
            else:
                cycle = [pc for p, pc in enumerate(state.pcs) if not graph.at_halting(result.witness.state, p)]
        return cls(tuple(stem), tuple(cycle))


@dataclass
class SuspStats:
    entries: list  # (sid, score, provenance), sorted

    def ranked(self):
        return [sid for sid, _, _ in self.entries]

    def score(self, sid) -> float:
        for s, sc, _ in self.entries:
            if s == sid:
                return sc
        return 0.0

    def top(self, k):
        return self.entries[:k]

    def __len__(self):
        return len(self.entries)

    def to_csv(self, prog: lang.Program) -> str:
        lines = lang.stmt_line_map(prog)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stmtId", "line", "score", "provenance"])
        for sid, score, prov in self.entries:
            w.writerow([sid, lines.get(sid, ""), f"{score:.6f}", prov])
        return buf.getvalue()


def localize(prog: lang.Program, ces=(), spectrum: Spectrum | None = None) -> SuspStats:
    """Fuse counterexample traces with Ochiai scores.

    Cycle statements score 1.0, stem-only statements at least 0.5, every
    other statement keeps its spectrum score.
    """
    ces = [c for c in ces if c.stem or c.cycle]
    if not ces and (spectrum is None or spectrum.total_failed == 0):
        raise NothingToLocalize("no counterexample and no failing test")
    use_spec = spectrum is not None and spectrum.total_failed > 0
    in_cycle, in_stem = set(), set()
    for c in ces:
        in_cycle.update(c.cycle)
        in_stem.update(c.stem)
    in_stem -= in_cycle
    valid = prog.stmt_ids()
    entries = []
    for sid in sorted(valid):
        spec_score = ochiai(spectrum, sid) if use_spec else 0.0
        covered_failing = use_spec and spectrum.failed_cover.get(sid, 0) > 0
        if sid in in_cycle:
            entries.append((sid, 1.0, "both" if covered_failing else "counterexample"))
        elif sid in in_stem:
            entries.append((sid, max(spec_score, 0.5), "both" if covered_failing else "counterexample"))
        elif use_spec:
            entries.append((sid, spec_score, "spectrum"))
    entries.sort(key=lambda e: (-e[1], e[0]))
    return SuspStats(entries)
