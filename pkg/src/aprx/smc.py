"""Explicit-state model checking of concurrent MiniImp programs.

``explore`` builds the full interleaving graph by breadth-first search, so
state numbers are deterministic and parent pointers give shortest paths.
One transition executes one statement of one proc; ``lock(m)`` is enabled
only while ``m`` is free.  A runtime fault (division by zero, unlock of a
mutex the proc does not hold) produces a terminal fault state.

Cycle-based checks use strong fairness restricted to a strongly connected
component: a proc enabled somewhere in the component must also move inside
it.  Components violating this are pruned Emerson-Lei style until only
fair cores remain.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import NamedTuple

from . import interp, lang
from .lang import Lock, Program, Unlock


class GlobalState(NamedTuple):
    pcs: tuple
    locals: tuple   # per proc, values ordered as CompiledProc.locals
    shared: tuple   # values ordered as Compiled.global_vars
    owners: tuple   # per mutex: owning proc index or -1
    outputs: tuple  # sorted multiset
    fault: tuple | None  # (proc index, behaviour, sid)


@dataclass(frozen=True)
class SmcConfig:
    value_bound: int = 1024
    state_cap: int = 1_000_000

    def __post_init__(self):
        if self.value_bound < 1 or self.state_cap < 1:
            raise ValueError("value_bound and state_cap must be >= 1")


class ExplorationError(Exception):
    def __init__(self, message, graph):
        super().__init__(message)
        self.graph = graph


class StateSpaceExceeded(ExplorationError):
    pass


class ValueBoundExceeded(ExplorationError):
    pass


@dataclass
class StateGraph:
    program: Program
    inputs: dict
    states: list
    succ: list          # per state: list of (proc index, sid, target)
    parent: list        # per state: (source, proc index, sid) or None
    complete: bool
    comp: interp.Compiled = field(repr=False, default=None)

    @property
    def initial(self) -> int:
        return 0

    @property
    def edges(self):
        for i, out in enumerate(self.succ):
            for p, sid, j in out:
                yield i, p, sid, j

    def proc_names(self):
        return [cp.name for cp in self.comp.procs]

    def at_halting(self, i, p) -> bool:
        return self.states[i].pcs[p] in self.comp.procs[p].halting

    def all_halted(self, i) -> bool:
        s = self.states[i]
        return s.fault is None and all(self.at_halting(i, p) for p in range(len(s.pcs)))

    def enabled(self, i) -> list:
        return _enabled(self.comp, self.states[i])

    def path_to(self, i) -> list:
        steps = []
        while self.parent[i] is not None:
            src, p, sid = self.parent[i]
            steps.append((src, p, sid, i))
            i = src
        return steps[::-1]

    def store(self, i) -> dict:
        """Observable valuation: shared vars plus ``proc.var`` locals (plain names if sequential)."""
        s = self.states[i]
        out = dict(zip(self.comp.global_vars, s.shared))
        seq = self.comp.sequential
        for cp, vals in zip(self.comp.procs, s.locals):
            for k, v in zip(cp.locals, vals):
                out[k if seq else f"{cp.name}.{k}"] = v
        return out

    def to_dot(self) -> str:
        names = self.proc_names()
        lines = ["digraph states {", "  node [shape=box, fontsize=10];"]
        for i, s in enumerate(self.states):
            label = " ".join(f"{n}@{pc}" for n, pc in zip(names, s.pcs))
            if s.fault:
                label += f" FAULT:{s.fault[1]}"
            style = ', style=bold' if i == 0 else ""
            lines.append(f'  s{i} [label="{i}: {label}"{style}];')
        for i, p, sid, j in self.edges:
            lines.append(f'  s{i} -> s{j} [label="{names[p]}:{sid}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _enabled(comp, s: GlobalState) -> list:
    if s.fault is not None:
        return []
    out = []
    midx = {m: k for k, m in enumerate(comp.mutexes)}
    for p, cp in enumerate(comp.procs):
        ins = cp.code[s.pcs[p]]
        if ins[0] == interp.TERMINAL:
            continue
        if ins[0] == interp.LOCK and s.owners[midx[ins[1]]] != -1:
            continue
        out.append(p)
    return out


def initial_state(comp, inputs) -> GlobalState:
    locals_, G = interp.initial_stores(comp, inputs)
    return GlobalState(
        pcs=tuple(cp.entry for cp in comp.procs),
        locals=tuple(tuple(L[v] for v in cp.locals) for cp, L in zip(comp.procs, locals_)),
        shared=tuple(G[v] for v in comp.global_vars),
        owners=tuple(-1 for _ in comp.mutexes),
        outputs=(),
        fault=None,
    )


def successor(comp, s: GlobalState, p: int) -> GlobalState:
    """State after proc ``p`` executes its next statement (``p`` must be enabled)."""
    cp = comp.procs[p]
    L = dict(zip(cp.locals, s.locals[p]))
    G = dict(zip(comp.global_vars, s.shared))
    owners = dict(zip(comp.mutexes, s.owners))
    outputs = list(s.outputs)
    pc = s.pcs[p]
    try:
        nxt = interp.exec_step(cp, pc, L, G, owners, outputs)
    except interp.Fault as f:
        return s._replace(fault=(p, f.behavior, pc))
    pcs = s.pcs[:p] + (nxt,) + s.pcs[p + 1:]
    loc = s.locals[:p] + (tuple(L[v] for v in cp.locals),) + s.locals[p + 1:]
    return GlobalState(pcs, loc, tuple(G[v] for v in comp.global_vars),
                       tuple(owners[m] for m in comp.mutexes),
                       tuple(sorted(outputs)) if len(outputs) != len(s.outputs) else s.outputs,
                       None)


def _in_bound(s: GlobalState, bound) -> bool:
    for vals in s.locals:
        for v in vals:
            if v > bound or v < -bound:
                return False
    for v in s.shared:
        if v > bound or v < -bound:
            return False
    for v in s.outputs:
        if v > bound or v < -bound:
            return False
    return True


def explore(prog: Program, inputs: dict | None = None, cfg: SmcConfig = SmcConfig()) -> StateGraph:
    """Breadth-first construction of every reachable interleaving state."""
    comp = interp.compile_program(prog)
    init = initial_state(comp, inputs or {})
    graph = StateGraph(prog, dict(inputs or {}), [init], [[]], [None], False, comp)
    if not _in_bound(init, cfg.value_bound):
        raise ValueBoundExceeded(f"initial state exceeds value bound {cfg.value_bound}", graph)
    index = {init: 0}
    queue = deque([0])
    states, succ, parent = graph.states, graph.succ, graph.parent
    while queue:
        i = queue.popleft()
        s = states[i]
        for p in _enabled(comp, s):
            t = successor(comp, s, p)
            if not _in_bound(t, cfg.value_bound):
                raise ValueBoundExceeded(
                    f"value bound {cfg.value_bound} exceeded after {comp.procs[p].name}:{s.pcs[p]} "
                    f"({len(states)} states explored)", graph)
            j = index.get(t)
            if j is None:
                if len(states) >= cfg.state_cap:
                    raise StateSpaceExceeded(f"state cap {cfg.state_cap} reached", graph)
                j = len(states)
                index[t] = j
                states.append(t)
                succ.append([])
                parent.append((i, p, s.pcs[p]))
                queue.append(j)
            succ[i].append((p, s.pcs[p], j))
    graph.complete = True
    return graph


# ---------------------------------------------------------------------------
# Results and witnesses
# ---------------------------------------------------------------------------

@dataclass
class Witness:
    stem: list            # (source, proc index, sid, target)
    cycle: list = field(default_factory=list)
    state: int = 0        # violating state (deadlock / behaviour) or cycle entry

    def stmt_ids(self):
        return [sid for _, _, sid, _ in self.stem], [sid for _, _, sid, _ in self.cycle]


@dataclass
class CheckResult:
    property: str   # "deadlock", "livelock", "afHalt(<proc>)", "behavior"
    outcome: str    # "holds" or "fails"
    witness: Witness | None = None
    info: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.outcome == "holds"


def serialize_witness(graph: StateGraph, w: Witness) -> dict:
    names = graph.proc_names()
    gv = graph.comp.global_vars

    def steps(seq):
        out = []
        for src, p, sid, dst in seq:
            a, b = graph.states[src].shared, graph.states[dst].shared
            delta = {gv[k]: b[k] for k in range(len(gv)) if a[k] != b[k]}
            out.append([names[p], sid, delta])
        return out

    return {"stem": steps(w.stem), "cycle": steps(w.cycle), "state": w.state}


def result_to_dict(graph, res: CheckResult) -> dict:
    out = {"property": res.property, "outcome": res.outcome}
    if res.witness is not None:
        out["witness"] = serialize_witness(graph, res.witness)
    info = {k: v for k, v in res.info.items() if k != "infinite_loops"}
    if info:
        out["info"] = info
    return out


def check_deadlock(g: StateGraph) -> CheckResult:
    """Fails on the first (BFS-shallowest) state with nothing enabled and some proc not halted."""
    for i in range(len(g.states)):
        if not g.succ[i] and not g.all_halted(i):
            s = g.states[i]
            blocked = [g.comp.procs[p].name for p in range(len(s.pcs)) if not g.at_halting(i, p)]
            info = {"blocked": blocked}
            if s.fault is not None:
                info["fault"] = s.fault[1]
            return CheckResult("deadlock", "fails", Witness(g.path_to(i), [], i), info)
    return CheckResult("deadlock", "holds")


def _tarjan(nodes, succ):
    """Iterative Tarjan restricted to ``nodes``; returns SCCs as sets."""
    nodes = set(nodes)
    index, low, on_stack = {}, {}, set()
    stack, out = [], []
    counter = 0
    for root in sorted(nodes):
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, k = work.pop()
            if k == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            recurse = False
            edges = succ[v]
            while k < len(edges):
                w = edges[k][2]
                k += 1
                if w not in nodes:
                    continue
                if w not in index:
                    work.append((v, k))
                    work.append((w, 0))
                    recurse = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if low[v] == index[v]:
                comp = set()
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.add(w)
                    if w == v:
                        break
                out.append(comp)
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return out


def fair_components(g: StateGraph, allowed=None) -> list:
    """Fair cores of the SCCs of the subgraph induced by ``allowed`` states.

    Each entry is ``(states, internal_edges)``; every proc enabled somewhere
    in ``states`` moves along some internal edge.
    """
    allowed = set(range(len(g.states))) if allowed is None else set(allowed)
    work = _tarjan(allowed, g.succ)
    out = []
    while work:
        comp = work.pop()
        edges = [(i, p, sid, j) for i in comp for p, sid, j in g.succ[i] if j in comp]
        if not edges:
            continue
        movers = {p for _, p, _, _ in edges}
        bad = {i for i in comp if set(g.enabled(i)) - movers}
        if not bad:
            out.append((comp, edges))
        else:
            work.extend(_tarjan(comp - bad, g.succ))
    out.sort(key=lambda ce: min(ce[0]))
    return out


def _bfs_within(g, comp, start, goal_pred):
    """Shortest path inside ``comp`` from ``start`` to a state satisfying ``goal_pred``."""
    if goal_pred(start):
        return []
    prev = {start: None}
    q = deque([start])
    while q:
        i = q.popleft()
        for p, sid, j in g.succ[i]:
            if j in comp and j not in prev:
                prev[j] = (i, p, sid)
                if goal_pred(j):
                    path = []
                    k = j
                    while prev[k] is not None:
                        a, pp, ss = prev[k]
                        path.append((a, pp, ss, k))
                        k = a
                    return path[::-1]
                q.append(j)
    return None


def _fair_cycle_witness(g, comp, edges) -> Witness:
    entry = min(comp)
    movers = sorted({p for _, p, _, _ in edges})
    cycle = []
    cur = entry
    for p in movers:
        sources = {i for i, pp, _, j in edges if pp == p}
        path = _bfs_within(g, comp, cur, sources.__contains__)
        cycle += path
        cur = path[-1][3] if path else cur
        sid, j = next((sid, j) for pp, sid, j in g.succ[cur] if pp == p and j in comp)
        cycle.append((cur, p, sid, j))
        cur = j
    back = _bfs_within(g, comp, cur, lambda k: k == entry)
    cycle += back
    return Witness(g.path_to(entry), cycle, entry)


def check_af_halt(g: StateGraph, proc: str, halting=None) -> CheckResult:
    """AF(proc at a halting location) on all fair paths."""
    p = g.proc_names().index(proc)
    halting = frozenset(halting) if halting is not None else g.comp.procs[p].halting
    prop = f"afHalt({proc})"

    def halted(i):
        return g.states[i].pcs[p] in halting

    for i in range(len(g.states)):
        if not g.succ[i] and not halted(i):
            return CheckResult(prop, "fails", Witness(g.path_to(i), [], i), {"reason": "stuck"})
    allowed = [i for i in range(len(g.states)) if not halted(i)]
    fair = fair_components(g, allowed)
    if fair:
        comp, edges = fair[0]
        return CheckResult(prop, "fails", _fair_cycle_witness(g, comp, edges), {"reason": "fair cycle"})
    return CheckResult(prop, "holds")


def check_livelock(g: StateGraph) -> CheckResult:
    """Fails on a fair cycle driven by synchronisation or by two or more procs.

    Fair cycles where a single proc spins without lock operations are
    reported in ``info["infinite_loops"]`` instead (logic bugs, not livelock).
    """
    loops = []
    for comp, edges in fair_components(g):
        movers = {p for _, p, _, _ in edges}
        sync = any(isinstance(g.program.stmt_map[sid], (Lock, Unlock)) for _, _, sid, _ in edges)
        if len(movers) >= 2 or sync:
            w = _fair_cycle_witness(g, comp, edges)
            return CheckResult("livelock", "fails", w,
                               {"procs": sorted(g.proc_names()[p] for p in movers),
                                "infinite_loops": loops})
        names = g.proc_names()
        loops.append(([names[p] for p in sorted(movers)], _fair_cycle_witness(g, comp, edges)))
    return CheckResult("livelock", "holds", info={"infinite_loops": loops})


def check_beh_model(g: StateGraph, expected) -> CheckResult:
    """Every all-halted state must match the expected final values and output multiset."""
    finals = [i for i in range(len(g.states)) if g.all_halted(i)]
    for i in finals:
        s = g.states[i]
        ok = True
        if expected.outputs is not None:
            got = Counter(s.outputs)
            if g.comp.sequential:
                # the graph keeps outputs as a multiset; sequential order is fixed by the path
                got_seq = _path_outputs(g, i)
                ok = tuple(got_seq) == tuple(expected.outputs)
            else:
                ok = got == Counter(expected.outputs)
        if ok and expected.final_vars is not None:
            store = g.store(i)
            ok = all(store.get(k) == v for k, v in expected.final_vars.items())
        if not ok:
            return CheckResult("behavior", "fails", Witness(g.path_to(i), [], i),
                               {"store": g.store(i), "outputs": list(s.outputs)})
    return CheckResult("behavior", "holds", info={"vacuous": not finals})


def _path_outputs(g, i):
    comp = g.comp
    s = initial_state(comp, g.inputs)
    outs = []
    for _, p, _, _ in g.path_to(i):
        before = len(s.outputs)
        cp = comp.procs[p]
        ins = cp.code[s.pcs[p]]
        s2 = successor(comp, s, p)
        if len(s2.outputs) != before and ins[0] == interp.OUTPUT:
            L = dict(zip(cp.locals, s.locals[p]))
            G = dict(zip(comp.global_vars, s.shared))
            outs.append(ins[1](L, G))
        s = s2
    return outs


def replay_witness(g: StateGraph, res: CheckResult) -> bool:
    """Re-execute a failing witness with the transition function alone."""
    if res.holds or res.witness is None:
        return False
    comp = g.comp
    s = initial_state(comp, g.inputs)

    def follow(s, seq):
        for _, p, sid, _ in seq:
            if p not in _enabled(comp, s) or s.pcs[p] != sid:
                return None
            s = successor(comp, s, p)
        return s

    s = follow(s, res.witness.stem)
    if s is None or s != g.states[res.witness.state]:
        return False
    if res.witness.cycle:
        end = follow(s, res.witness.cycle)
        return end == s
    if res.property == "deadlock" or res.property.startswith("afHalt"):
        return not _enabled(comp, s)
    return True


def halting_ok_for_all(g: StateGraph) -> dict:
    return {name: check_af_halt(g, name) for name in g.proc_names()}


def proc_halting_sets(prog: Program) -> dict:
    return lang.halting_set(prog)
