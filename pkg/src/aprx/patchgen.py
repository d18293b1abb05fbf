"""Candidate patches: bounded edit sets over suspicious statements.

Logic edits (``mutate_logic``) change expressions that steer loops; the
synchronisation edits (``mutate_concur``) move, swap, retarget, add or
delete lock operations.  Every candidate is materialised, re-checked by
the static checker and deduplicated structurally, and the resulting
``PatchSpace`` is ordered best-first: target suspiciousness, then edit-kind
priority, then generation order.
"""

from __future__ import annotations

import dataclasses
import difflib
import itertools
from dataclasses import dataclass

from . import lang
from .lang import (Assign, BinOp, Cmp, If, Lock, Neg, Not, Num, Output, Program,
                   Unlock, Var, While)

LOGIC_KINDS = ("InsertUpdate", "RelOpSwap", "ArithOpSwap", "ConstShift", "GuardNegate", "VarSwap")
CONCUR_KINDS = ("SwapAdjacentLocks", "MoveUnlock", "RetargetLock", "DeleteLockPair", "AddLockPair")

# one global order so that interleaved logic/concurrency spaces stay deterministic
PRIORITY = {k: i for i, k in enumerate((
    "SwapAdjacentLocks", "InsertUpdate", "MoveUnlock", "RelOpSwap", "ArithOpSwap",
    "ConstShift", "RetargetLock", "DeleteLockPair", "GuardNegate", "AddLockPair", "VarSwap",
))}

DEFAULT_TOP_K = 10
PAIR_POOL = 40


class ConflictingEdits(ValueError):
    pass


class EmptyPatchSpace(ValueError):
    pass


@dataclass(frozen=True)
class Edit:
    target: int
    kind: str
    args: tuple = ()

    def to_dict(self):
        return {"target": self.target, "kind": self.kind, "args": _jsonable(self.args)}


def _jsonable(x):
    if isinstance(x, tuple):
        return [_jsonable(v) for v in x]
    return x


@dataclass
class Patch:
    edits: tuple
    program: Program
    origin_id: int
    score: float = 0.0

    def to_dict(self):
        return {"edits": [e.to_dict() for e in self.edits], "originId": self.origin_id,
                "score": round(self.score, 6)}


class PatchSpace:
    """Ordered, duplicate-free sequence of patches."""

    def __init__(self, patches=()):
        self.patches = list(patches)

    def __iter__(self):
        return iter(self.patches)

    def __len__(self):
        return len(self.patches)

    def __getitem__(self, i):
        return self.patches[i]

    def __bool__(self):
        return bool(self.patches)


# ---------------------------------------------------------------------------
# Expression trees
# ---------------------------------------------------------------------------

_CHILDREN = {Neg: ("operand",), Not: ("operand",), BinOp: ("left", "right"),
             Cmp: ("left", "right"), lang.BoolOp: ("left", "right")}


def subnodes(node, path=()):
    yield path, node
    for f in _CHILDREN.get(type(node), ()):
        yield from subnodes(getattr(node, f), path + (f,))


def replace_at(node, path, new):
    if not path:
        return new
    f = path[0]
    return dataclasses.replace(node, **{f: replace_at(getattr(node, f), path[1:], new)})


def node_at(node, path):
    for f in path:
        node = getattr(node, f)
    return node


def _tree(s):
    if isinstance(s, (Assign, Output)):
        return s.expr
    if isinstance(s, (If, While)):
        return s.cond
    return None


def _with_tree(s, tree):
    if isinstance(s, (Assign, Output)):
        return dataclasses.replace(s, expr=tree)
    return dataclasses.replace(s, cond=tree)


# ---------------------------------------------------------------------------
# Applying edits
# ---------------------------------------------------------------------------

def _edit_block(block, target, op):
    """Apply ``op(list_block, idx)`` to the block holding ``target``; None if absent."""
    for idx, s in enumerate(block):
        if s.sid == target:
            return tuple(op(list(block), idx))
    for idx, s in enumerate(block):
        if isinstance(s, If):
            t = _edit_block(s.then, target, op)
            if t is not None:
                return block[:idx] + (dataclasses.replace(s, then=t),) + block[idx + 1:]
            e = _edit_block(s.orelse, target, op)
            if e is not None:
                return block[:idx] + (dataclasses.replace(s, orelse=e),) + block[idx + 1:]
        elif isinstance(s, While):
            b = _edit_block(s.body, target, op)
            if b is not None:
                return block[:idx] + (dataclasses.replace(s, body=b),) + block[idx + 1:]
    return None


def _matching_unlock(block, idx):
    m = block[idx].mutex
    for j in range(idx + 1, len(block)):
        if isinstance(block[j], Unlock) and block[j].mutex == m:
            return j
    return None


class _Ids:
    def __init__(self, start):
        self.next = start

    def __call__(self):
        v = self.next
        self.next += 1
        return v


def _block_op(edit: Edit, fresh):
    kind, args = edit.kind, edit.args

    def expr_op(block, idx):
        s = block[idx]
        tree = _tree(s)
        if kind == "GuardNegate":
            new = s.cond.operand if isinstance(s.cond, Not) else Not(s.cond)
            block[idx] = dataclasses.replace(s, cond=new)
            return block
        path, value = args
        node = node_at(tree, path)
        if kind == "RelOpSwap" or kind == "ArithOpSwap":
            node = dataclasses.replace(node, op=value)
        elif kind == "ConstShift":
            node = Num(0 if value == "zero" else node.value + (1 if value == "+1" else -1))
        elif kind == "VarSwap":
            node = Var(value)
        block[idx] = _with_tree(s, replace_at(tree, path, node))
        return block

    def insert_update(block, idx):
        s = block[idx]
        var, delta = args
        upd = Assign(fresh(), var, BinOp("+" if delta > 0 else "-", Var(var), Num(abs(delta))))
        block[idx] = dataclasses.replace(s, body=s.body + (upd,))
        return block

    def swap_adjacent(block, idx):
        j = idx + 1 if args[0] == "next" else idx - 1
        block[idx], block[j] = block[j], block[idx]
        return block

    def move_unlock(block, idx):
        j = idx - 1 if args[0] == "earlier" else idx + 1
        block[idx], block[j] = block[j], block[idx]
        return block

    def delete_pair(block, idx):
        j = _matching_unlock(block, idx)
        return [s for k, s in enumerate(block) if k not in (idx, j)]

    def retarget(block, idx):
        j = _matching_unlock(block, idx)
        block[idx] = Lock(block[idx].sid, args[0])
        block[j] = Unlock(block[j].sid, args[0])
        return block

    def add_pair(block, idx):
        m = args[0]
        return block[:idx] + [Lock(fresh(), m), block[idx], Unlock(fresh(), m)] + block[idx + 1:]

    return {
        "RelOpSwap": expr_op, "ArithOpSwap": expr_op, "ConstShift": expr_op,
        "VarSwap": expr_op, "GuardNegate": expr_op, "InsertUpdate": insert_update,
        "SwapAdjacentLocks": swap_adjacent, "MoveUnlock": move_unlock,
        "DeleteLockPair": delete_pair, "RetargetLock": retarget, "AddLockPair": add_pair,
    }[kind]


def apply(prog: Program, edits) -> Program:
    """Structurally apply ``edits``; untouched statements keep their ids, new ones get fresh ids."""
    edits = tuple(edits)
    if not edits:
        raise ConflictingEdits("a patch needs at least one edit")
    targets = [e.target for e in edits]
    if len(set(targets)) != len(targets):
        raise ConflictingEdits("two edits target the same statement")
    fresh = _Ids(prog.max_id() + 1)
    procs = list(prog.procs)
    for edit in edits:
        for k, proc in enumerate(procs):
            body = _edit_block(proc.body, edit.target, _block_op(edit, fresh))
            if body is not None:
                procs[k] = dataclasses.replace(proc, body=body)
                break
        else:
            raise ConflictingEdits(f"edit target {edit.target} not found")
    out = Program(prog.shared, tuple(procs))
    lang.check(out)
    return out


def diff(before: Program, after: Program, name="program.mimp") -> str:
    return "".join(difflib.unified_diff(
        lang.pretty_print(before).splitlines(True), lang.pretty_print(after).splitlines(True),
        fromfile=f"a/{name}", tofile=f"b/{name}"))


# ---------------------------------------------------------------------------
# Edit enumeration
# ---------------------------------------------------------------------------

def _scope(prog: Program, proc) -> list:
    names = set(prog.locals_of(proc)) | set(prog.global_vars)
    return sorted(names)


def logic_edits(prog: Program, proc, s) -> list:
    out = []
    tree = _tree(s)
    scope = _scope(prog, proc)
    if isinstance(s, While):
        for v in sorted(lang.expr_vars(s.cond)):
            if v in scope:
                out.append(Edit(s.sid, "InsertUpdate", (v, 1)))
                out.append(Edit(s.sid, "InsertUpdate", (v, -1)))
    if tree is not None:
        for path, node in subnodes(tree):
            if isinstance(node, Cmp):
                out += [Edit(s.sid, "RelOpSwap", (path, op)) for op in lang.REL_OPS if op != node.op]
            elif isinstance(node, BinOp):
                out += [Edit(s.sid, "ArithOpSwap", (path, op)) for op in lang.ARITH_OPS if op != node.op]
            elif isinstance(node, Num):
                modes = ["+1", "-1"] + (["zero"] if node.value != 0 else [])
                out += [Edit(s.sid, "ConstShift", (path, m)) for m in modes]
            elif isinstance(node, Var):
                out += [Edit(s.sid, "VarSwap", (path, v)) for v in scope if v != node.name]
    if isinstance(s, (If, While)):
        out.append(Edit(s.sid, "GuardNegate", ()))
    return out


def _find_block(prog, sid):
    """(block, index) holding statement ``sid``."""
    def search(block):
        for idx, s in enumerate(block):
            if s.sid == sid:
                return block, idx
            for sub in ((s.then, s.orelse) if isinstance(s, If) else (s.body,) if isinstance(s, While) else ()):
                r = search(sub)
                if r:
                    return r
        return None

    for p in prog.procs:
        r = search(p.body)
        if r:
            return r
    return None


def concur_edits(prog: Program, proc, s) -> list:
    out = []
    block, idx = _find_block(prog, s.sid)
    mutexes = list(prog.mutexes)
    if isinstance(s, Lock):
        for direction, j in (("next", idx + 1), ("prev", idx - 1)):
            if 0 <= j < len(block) and isinstance(block[j], Lock) and block[j].mutex != s.mutex:
                out.append(Edit(s.sid, "SwapAdjacentLocks", (direction,)))
        if _matching_unlock(block, idx) is not None:
            out += [Edit(s.sid, "RetargetLock", (m,)) for m in mutexes if m != s.mutex]
            out.append(Edit(s.sid, "DeleteLockPair", ()))
    elif isinstance(s, Unlock):
        for direction, j in (("earlier", idx - 1), ("later", idx + 1)):
            if 0 <= j < len(block):
                nb = block[j]
                if isinstance(nb, (Lock, Unlock)) and nb.mutex == s.mutex:
                    continue
                out.append(Edit(s.sid, "MoveUnlock", (direction,)))
    elif isinstance(s, (Assign, Output, If, While)):
        touches = lang.stmt_reads(s) | ({s.var} if isinstance(s, Assign) else set())
        if touches & set(prog.global_vars):
            out += [Edit(s.sid, "AddLockPair", (m,)) for m in mutexes]
    return out


def _expand_logic_targets(prog: Program, susp, top_k):
    """Top-k statements plus the loops around them and the guard updates inside those loops."""
    stmts = prog.stmt_map
    loops_of = lang.enclosing_loops(prog)
    scores = {}

    def bump(sid, sc):
        if sid in stmts and sc > scores.get(sid, -1.0):
            scores[sid] = sc

    for sid, score, _ in susp.top(top_k):
        if score <= 0 or sid not in stmts:
            continue
        bump(sid, score)
        related = list(loops_of.get(sid, ()))
        if isinstance(stmts[sid], While):
            related.append(sid)
        for w in related:
            bump(w, score)
            guard_vars = lang.expr_vars(stmts[w].cond)
            for x in lang.walk(stmts[w].body):
                if isinstance(x, Assign) and x.var in guard_vars:
                    bump(x.sid, score)
    return scores


def _materialize(prog, candidates, max_edits, start_origin=0):
    """candidates: list of (score, Edit) already in preference order."""
    seen = {lang.pretty_print(prog)}
    singles = []
    origin = start_origin
    for score, edit in candidates:
        try:
            patched = apply(prog, [edit])
        except (lang.LangError, ConflictingEdits):
            continue
        key = lang.pretty_print(patched)
        if key in seen:
            continue
        seen.add(key)
        singles.append(Patch((edit,), patched, origin, score))
        origin += 1
    patches = list(singles)
    if max_edits >= 2:
        pool = singles[:PAIR_POOL]
        pairs = []
        for (i, a), (j, b) in itertools.combinations(enumerate(pool), 2):
            if a.edits[0].target == b.edits[0].target:
                continue
            pairs.append((i + j, i, a, b))
        pairs.sort(key=lambda t: (t[0], t[1]))
        for _, _, a, b in pairs:
            edits = a.edits + b.edits
            try:
                patched = apply(prog, edits)
            except (lang.LangError, ConflictingEdits):
                continue
            key = lang.pretty_print(patched)
            if key in seen:
                continue
            seen.add(key)
            patches.append(Patch(edits, patched, origin, min(a.score, b.score)))
            origin += 1
    return patches


def _ordered(cands):
    # cands: list of (score, gen_index, Edit)
    cands.sort(key=lambda c: (-c[0], PRIORITY[c[2].kind], c[1]))
    return [(sc, e) for sc, _, e in cands]


def logic_candidates(prog: Program, susp, top_k=DEFAULT_TOP_K):
    targets = _expand_logic_targets(prog, susp, top_k)
    owner = prog.owner
    cands = []
    for sid in sorted(targets, key=lambda t: (-targets[t], t)):
        proc = prog.proc(owner[sid])
        for e in logic_edits(prog, proc, prog.stmt_map[sid]):
            cands.append((targets[sid], len(cands), e))
    return cands


def concur_candidates(prog: Program, susp, top_k=DEFAULT_TOP_K):
    owner = prog.owner
    cands = []
    for sid, score, _ in susp.top(top_k):
        if score <= 0 or sid not in prog.stmt_map:
            continue
        proc = prog.proc(owner[sid])
        for e in concur_edits(prog, proc, prog.stmt_map[sid]):
            cands.append((score, len(cands), e))
    return cands


def mutate_logic(prog: Program, susp, max_edits=1, top_k=DEFAULT_TOP_K) -> PatchSpace:
    patches = _materialize(prog, _ordered(logic_candidates(prog, susp, top_k)), max_edits)
    if not patches:
        raise EmptyPatchSpace("no applicable logic edit")
    return PatchSpace(patches)


def mutate_concur(prog: Program, susp, max_edits=1, top_k=DEFAULT_TOP_K) -> PatchSpace:
    if prog.is_sequential:
        raise ValueError("mutate_concur needs a concurrent program")
    patches = _materialize(prog, _ordered(concur_candidates(prog, susp, top_k)), max_edits)
    if not patches:
        raise EmptyPatchSpace("no applicable synchronisation edit")
    return PatchSpace(patches)


def union_space(prog: Program, susp_d=None, susp_l=None, max_edits=1, top_k=DEFAULT_TOP_K) -> PatchSpace:
    """Both families interleaved by suspiciousness and kind priority."""
    cands = []
    if susp_d is not None:
        cands += concur_candidates(prog, susp_d, top_k)
    if susp_l is not None:
        cands += [(sc, len(cands) + i, e) for i, (sc, _, e) in enumerate(logic_candidates(prog, susp_l, top_k))]
    patches = _materialize(prog, _ordered(cands), max_edits)
    if not patches:
        raise EmptyPatchSpace("no applicable edit")
    return PatchSpace(patches)
