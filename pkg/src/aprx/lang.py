"""MiniImp: grammar, AST, static checks, control-flow graph and halting sets.

A program is a list of shared declarations followed by one or more procs.
A single proc named ``main`` with no shared declarations is sequential;
everything else is concurrent and runs its procs in parallel.

Every statement carries a ``sid`` (statement id).  Ids are assigned by a
pre-order walk of each proc in source order; each proc additionally owns an
``end_id`` (allocated right after its last statement) that stands for the
implicit end-of-body location.  Because the walk is canonical, printing a
parsed program and parsing it again reproduces the same ids.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Union

ARITH_OPS = ("+", "-", "*", "/")
REL_OPS = ("<", "<=", ">", ">=", "==", "!=")
NEGATED_REL = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "==": "!=", "!=": "=="}

KEYWORDS = {
    "shared", "mutex", "proc", "if", "else", "while", "lock", "unlock",
    "output", "skip", "halt", "true", "false",
}


class LangError(Exception):
    """Base class for MiniImp front-end errors."""


class ParseError(LangError):
    def __init__(self, message, line=0, col=0, expected=()):
        self.line = line
        self.col = col
        self.expected = tuple(expected)
        where = f"{line}:{col}: " if line else ""
        hint = f" (expected {', '.join(repr(e) for e in expected)})" if expected else ""
        super().__init__(f"{where}{message}{hint}")


class SemanticError(LangError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Var, Neg, BinOp]


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Cmp:
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Not:
    operand: "BExpr"


@dataclass(frozen=True)
class BoolOp:
    op: str  # "&&" or "||"
    left: "BExpr"
    right: "BExpr"


BExpr = Union[BoolLit, Cmp, Not, BoolOp]


@dataclass(frozen=True)
class Assign:
    sid: int
    var: str
    expr: Expr


@dataclass(frozen=True)
class If:
    sid: int
    cond: BExpr
    then: tuple
    orelse: tuple = ()


@dataclass(frozen=True)
class While:
    sid: int
    cond: BExpr
    body: tuple


@dataclass(frozen=True)
class Lock:
    sid: int
    mutex: str


@dataclass(frozen=True)
class Unlock:
    sid: int
    mutex: str


@dataclass(frozen=True)
class Output:
    sid: int
    expr: Expr


@dataclass(frozen=True)
class Skip:
    sid: int


@dataclass(frozen=True)
class Halt:
    sid: int


Stmt = Union[Assign, If, While, Lock, Unlock, Output, Skip, Halt]


@dataclass(frozen=True)
class SharedDecl:
    name: str
    kind: str = "int"  # "int" or "mutex"
    value: int = 0


@dataclass(frozen=True)
class Proc:
    name: str
    params: tuple
    body: tuple
    end_id: int

    @cached_property
    def assigned(self) -> frozenset:
        return frozenset(s.var for s in walk(self.body) if isinstance(s, Assign))

    def statements(self) -> list:
        return list(walk(self.body))


@dataclass(frozen=True)
class Program:
    shared: tuple
    procs: tuple

    @property
    def kind(self) -> str:
        if len(self.procs) == 1 and self.procs[0].name == "main" and not self.shared:
            return "sequential"
        return "concurrent"

    @property
    def is_sequential(self) -> bool:
        return self.kind == "sequential"

    @cached_property
    def shared_ints(self) -> tuple:
        return tuple(d.name for d in self.shared if d.kind == "int")

    @cached_property
    def mutexes(self) -> tuple:
        """Names usable by lock/unlock, in declaration order."""
        names = [d.name for d in self.shared if d.kind == "mutex"]
        used = {s.mutex for s in self.statements() if isinstance(s, (Lock, Unlock))}
        names += [d.name for d in self.shared if d.kind == "int" and d.name in used]
        return tuple(names)

    @cached_property
    def input_params(self) -> tuple:
        if self.is_sequential:
            return tuple(self.procs[0].params)
        seen = []
        for proc in self.procs:
            for name in proc.params:
                if name not in seen:
                    seen.append(name)
        return tuple(seen)

    @cached_property
    def global_vars(self) -> tuple:
        """Integer variables living in the shared store (concurrent programs only)."""
        if self.is_sequential:
            return ()
        return self.shared_ints + tuple(n for n in self.input_params if n not in self.shared_ints)

    def locals_of(self, proc: Proc) -> tuple:
        """Variables private to ``proc``, sorted; includes params for sequential programs."""
        glob = set(self.global_vars)
        names = set(proc.assigned) | (set(proc.params) if self.is_sequential else set())
        return tuple(sorted(names - glob))

    def proc(self, name: str) -> Proc:
        for p in self.procs:
            if p.name == name:
                return p
        raise KeyError(name)

    def proc_index(self, name: str) -> int:
        return [p.name for p in self.procs].index(name)

    def statements(self) -> list:
        out = []
        for p in self.procs:
            out.extend(walk(p.body))
        return out

    @cached_property
    def stmt_map(self) -> dict:
        return {s.sid: s for s in self.statements()}

    @cached_property
    def owner(self) -> dict:
        """Map statement id (and end ids) to the name of the owning proc."""
        out = {}
        for p in self.procs:
            for s in walk(p.body):
                out[s.sid] = p.name
            out[p.end_id] = p.name
        return out

    def stmt_ids(self) -> frozenset:
        return frozenset(self.stmt_map)

    def max_id(self) -> int:
        return max([p.end_id for p in self.procs] + list(self.stmt_map))


def walk(block) -> Iterator:
    """Pre-order traversal of a statement block."""
    for s in block:
        yield s
        if isinstance(s, If):
            yield from walk(s.then)
            yield from walk(s.orelse)
        elif isinstance(s, While):
            yield from walk(s.body)


def expr_vars(e) -> set:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, (Num, BoolLit)):
        return set()
    if isinstance(e, (Neg, Not)):
        return expr_vars(e.operand)
    return expr_vars(e.left) | expr_vars(e.right)


def stmt_reads(s) -> set:
    if isinstance(s, (Assign, Output)):
        return expr_vars(s.expr)
    if isinstance(s, (If, While)):
        return expr_vars(s.cond)
    return set()


# ---------------------------------------------------------------------------
# Lexer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)|(?P<comment>//[^\n]*)|(?P<int>\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>:=|<=|>=|==|!=|&&|\|\||[-+*/<>!(){};,=\[\]])"
)


@dataclass(frozen=True)
class Token:
    kind: str  # "int", "ident", "kw", "op", "eof"
    text: str
    line: int
    col: int


def tokenize(source: str) -> list:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if not m:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind not in ("ws", "comment"):
            if kind == "ident" and text in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        for i, ch in enumerate(text):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        pos = m.end()
    tokens.append(Token("eof", "<eof>", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source):
        self.toks = tokenize(source)
        self.i = 0
        self.next_id = 1

    @property
    def tok(self):
        return self.toks[self.i]

    def peek(self, k=1):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text):
        t = self.tok
        return t.kind in ("op", "kw") and t.text == text

    def expect(self, text):
        if not self.at(text):
            self.error(f"unexpected {self.tok.text!r}", [text])
        self.i += 1

    def error(self, msg, expected=()):
        t = self.tok
        raise ParseError(msg, t.line, t.col, expected)

    def ident(self):
        if self.tok.kind != "ident":
            self.error(f"unexpected {self.tok.text!r}", ["identifier"])
        name = self.tok.text
        self.i += 1
        return name

    def integer(self):
        sign = 1
        if self.at("-"):
            sign = -1
            self.i += 1
        if self.tok.kind != "int":
            self.error(f"unexpected {self.tok.text!r}", ["integer"])
        value = sign * int(self.tok.text)
        self.i += 1
        return value

    def fresh(self):
        sid = self.next_id
        self.next_id += 1
        return sid

    # program structure

    def program(self):
        shared = []
        while self.at("shared") or self.at("mutex"):
            if self.at("shared"):
                self.i += 1
                name = self.ident()
                self.expect("=")
                value = self.integer()
                self.expect(";")
                shared.append(SharedDecl(name, "int", value))
            else:
                self.i += 1
                name = self.ident()
                self.expect(";")
                shared.append(SharedDecl(name, "mutex", 0))
        procs = []
        while self.at("proc"):
            procs.append(self.proc())
        if not procs:
            self.error(f"unexpected {self.tok.text!r}", ["shared", "mutex", "proc"])
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}", ["proc", "<eof>"])
        return Program(tuple(shared), tuple(procs))

    def proc(self):
        self.expect("proc")
        name = self.ident()
        self.expect("(")
        params = []
        if not self.at(")"):
            params.append(self.ident())
            while self.at(","):
                self.i += 1
                params.append(self.ident())
        self.expect(")")
        body = self.block()
        return Proc(name, tuple(params), body, self.fresh())

    def block(self):
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                self.error("unterminated block", ["}"])
            stmts.append(self.stmt())
        self.expect("}")
        return tuple(stmts)

    def stmt(self):
        t = self.tok
        if t.kind == "ident":
            sid = self.fresh()
            name = self.ident()
            self.expect(":=")
            e = self.expr()
            self.expect(";")
            return Assign(sid, name, e)
        if self.at("if"):
            sid = self.fresh()
            self.i += 1
            self.expect("(")
            c = self.bexpr()
            self.expect(")")
            then = self.block()
            orelse = ()
            if self.at("else"):
                self.i += 1
                orelse = self.block()
            return If(sid, c, then, orelse)
        if self.at("while"):
            sid = self.fresh()
            self.i += 1
            self.expect("(")
            c = self.bexpr()
            self.expect(")")
            return While(sid, c, self.block())
        if self.at("lock") or self.at("unlock"):
            cls = Lock if t.text == "lock" else Unlock
            sid = self.fresh()
            self.i += 1
            self.expect("(")
            m = self.ident()
            self.expect(")")
            self.expect(";")
            return cls(sid, m)
        if self.at("output"):
            sid = self.fresh()
            self.i += 1
            e = self.expr()
            self.expect(";")
            return Output(sid, e)
        if self.at("skip") or self.at("halt"):
            cls = Skip if t.text == "skip" else Halt
            sid = self.fresh()
            self.i += 1
            self.expect(";")
            return cls(sid)
        self.error(f"unexpected {t.text!r}",
                   ["identifier", "if", "while", "lock", "unlock", "output", "skip", "halt", "}"])

    # arithmetic

    def expr(self):
        left = self.term()
        while self.at("+") or self.at("-"):
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.at("*") or self.at("/"):
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.at("-"):
            self.i += 1
            inner = self.unary()
            if isinstance(inner, Num):
                return Num(-inner.value)
            return Neg(inner)
        t = self.tok
        if t.kind == "int":
            self.i += 1
            return Num(int(t.text))
        if t.kind == "ident":
            self.i += 1
            return Var(t.text)
        if self.at("("):
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        self.error(f"unexpected {t.text!r}", ["integer", "identifier", "(", "-"])

    # boolean

    def bexpr(self):
        left = self.bterm()
        while self.at("||"):
            self.i += 1
            left = BoolOp("||", left, self.bterm())
        return left

    def bterm(self):
        left = self.bfactor()
        while self.at("&&"):
            self.i += 1
            left = BoolOp("&&", left, self.bfactor())
        return left

    def bfactor(self):
        if self.at("!"):
            self.i += 1
            return Not(self.bfactor())
        if self.at("true") or self.at("false"):
            value = self.tok.text == "true"
            self.i += 1
            return BoolLit(value)
        if self.at("("):
            # either a parenthesised boolean or the start of an arithmetic operand
            save = self.i
            try:
                self.i += 1
                inner = self.bexpr()
                self.expect(")")
                nxt = self.tok
                if not (nxt.kind == "op" and nxt.text in REL_OPS + ARITH_OPS):
                    return inner
            except ParseError:
                pass
            self.i = save
        left = self.expr()
        if not (self.tok.kind == "op" and self.tok.text in REL_OPS):
            self.error(f"unexpected {self.tok.text!r}", list(REL_OPS))
        op = self.tok.text
        self.i += 1
        return Cmp(op, left, self.expr())


def parse(source: str) -> Program:
    """Parse MiniImp source text and run the static checks."""
    prog = _Parser(source).program()
    check(prog)
    return prog


def check(prog: Program) -> None:
    """Static checks; raises SemanticError on the first violation."""
    names = [p.name for p in prog.procs]
    if len(set(names)) != len(names):
        raise SemanticError("duplicate proc name")
    decl_names = [d.name for d in prog.shared]
    if len(set(decl_names)) != len(decl_names):
        raise SemanticError("duplicate shared declaration")
    mutex_only = {d.name for d in prog.shared if d.kind == "mutex"}
    lockable = set(decl_names)
    seq = prog.is_sequential
    seen_ids = set()
    for proc in prog.procs:
        if len(set(proc.params)) != len(proc.params):
            raise SemanticError(f"duplicate parameter in proc {proc.name}")
        clash = set(proc.params) & set(decl_names)
        if clash:
            raise SemanticError(f"parameter {sorted(clash)[0]} shadows a shared declaration")
        scope = set(proc.params) | proc.assigned | (set(prog.shared_ints) if not seq else set())
        if not seq:
            scope |= set(prog.input_params)
        for s in walk(proc.body):
            if s.sid in seen_ids:
                raise SemanticError(f"duplicate statement id {s.sid}")
            seen_ids.add(s.sid)
            if isinstance(s, (Lock, Unlock)):
                if seq:
                    raise SemanticError(f"{type(s).__name__.lower()}({s.mutex}) in sequential program")
                if s.mutex not in lockable:
                    raise SemanticError(f"undeclared mutex {s.mutex}")
            if isinstance(s, Assign) and s.var in mutex_only:
                raise SemanticError(f"cannot assign to mutex {s.var}")
            for v in stmt_reads(s):
                if v in mutex_only:
                    raise SemanticError(f"mutex {v} used as a value")
                if v not in scope:
                    raise SemanticError(f"undeclared variable {v} in proc {proc.name}")
        if proc.end_id in seen_ids:
            raise SemanticError(f"duplicate statement id {proc.end_id}")
        seen_ids.add(proc.end_id)


# ---------------------------------------------------------------------------
# Halting statements and CFG
# ---------------------------------------------------------------------------

def halting_set(prog: Program) -> dict:
    """Per proc: ids of every ``halt`` plus the proc's end-of-body location."""
    return {
        p.name: frozenset([s.sid for s in walk(p.body) if isinstance(s, Halt)] + [p.end_id])
        for p in prog.procs
    }


@dataclass(frozen=True)
class ProcCfg:
    name: str
    entry: int
    nodes: tuple          # location ids in pre-order, end id last
    edges: tuple          # (src, dst, label) with label in {"next", "true", "false"}
    loop_headers: frozenset
    back_edges: frozenset  # (src, dst) pairs closing a loop

    def successors(self, loc) -> list:
        return [(d, lab) for s, d, lab in self.edges if s == loc]


@dataclass(frozen=True)
class Cfg:
    procs: dict = field(default_factory=dict)

    @property
    def loop_headers(self) -> frozenset:
        out = frozenset()
        for pc in self.procs.values():
            out |= pc.loop_headers
        return out


def proc_successors(proc: Proc) -> dict:
    """Control successors per statement id.

    Simple statements map to ``("next", loc)``; ``If``/``While`` map to
    ``("branch", true_loc, false_loc)``; ``Halt`` maps to ``("halt",)``.
    """
    succ = {}

    def link(block, follow):
        for idx, s in enumerate(block):
            nxt = block[idx + 1].sid if idx + 1 < len(block) else follow
            if isinstance(s, If):
                t = s.then[0].sid if s.then else nxt
                f = s.orelse[0].sid if s.orelse else nxt
                succ[s.sid] = ("branch", t, f)
                link(s.then, nxt)
                link(s.orelse, nxt)
            elif isinstance(s, While):
                t = s.body[0].sid if s.body else s.sid
                succ[s.sid] = ("branch", t, nxt)
                link(s.body, s.sid)
            elif isinstance(s, Halt):
                succ[s.sid] = ("halt",)
            else:
                succ[s.sid] = ("next", nxt)

    link(proc.body, proc.end_id)
    return succ


def entry_of(proc: Proc) -> int:
    return proc.body[0].sid if proc.body else proc.end_id


def build_cfg(prog: Program) -> Cfg:
    out = {}
    for proc in prog.procs:
        succ = proc_successors(proc)
        stmts = list(walk(proc.body))
        nodes = tuple([s.sid for s in stmts] + [proc.end_id])
        edges = []
        back = set()
        loops = set()
        for s in stmts:
            info = succ[s.sid]
            if info[0] == "next":
                edges.append((s.sid, info[1], "next"))
            elif info[0] == "branch":
                edges.append((s.sid, info[1], "true"))
                edges.append((s.sid, info[2], "false"))
            if isinstance(s, While):
                loops.add(s.sid)
        # an edge closes a loop when it jumps to a While that encloses its source
        for s in stmts:
            if isinstance(s, While):
                inner = {x.sid for x in walk(s.body)} | {s.sid}
                for src, dst, _ in edges:
                    if dst == s.sid and src in inner:
                        back.add((src, dst))
        out[proc.name] = ProcCfg(proc.name, entry_of(proc), nodes, tuple(edges),
                                 frozenset(loops), frozenset(back))
    return Cfg(out)


def enclosing_loops(prog: Program) -> dict:
    """Map each statement id to the tuple of While ids enclosing it (outermost first)."""
    out = {}

    def visit(block, stack):
        for s in block:
            out[s.sid] = tuple(stack)
            if isinstance(s, If):
                visit(s.then, stack)
                visit(s.orelse, stack)
            elif isinstance(s, While):
                visit(s.body, stack + [s.sid])

    for p in prog.procs:
        visit(p.body, [])
    return out


def stmt_line_map(prog: Program) -> dict:
    """1-based line of each statement in ``pretty_print(prog)``."""
    lines = {}
    _print_program(prog, lines)
    return lines


# ---------------------------------------------------------------------------
# Pretty printer
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_expr(e, parent=0, right=False) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = format_expr(e.operand, 3)
        return f"-{inner}" if not inner.startswith("-") else f"-({inner})"
    prec = _PREC[e.op]
    text = f"{format_expr(e.left, prec)} {e.op} {format_expr(e.right, prec, True)}"
    if prec < parent or (right and prec == parent):
        return f"({text})"
    return text


_BPREC = {"||": 1, "&&": 2}


def format_bexpr(b, parent=0) -> str:
    if isinstance(b, BoolLit):
        return "true" if b.value else "false"
    if isinstance(b, Cmp):
        return f"{format_expr(b.left)} {b.op} {format_expr(b.right)}"
    if isinstance(b, Not):
        inner = b.operand
        if isinstance(inner, (Not, BoolLit)):
            return f"!{format_bexpr(inner, 3)}"
        return f"!({format_bexpr(inner)})"
    prec = _BPREC[b.op]
    # same-precedence right operands are parenthesised to keep left associativity
    text = f"{format_bexpr(b.left, prec)} {b.op} {format_bexpr(b.right, prec + 1)}"
    if prec < parent:
        return f"({text})"
    return text


def format_stmt_head(s) -> str:
    """One-line rendering of a statement (compound statements show only the header)."""
    if isinstance(s, Assign):
        return f"{s.var} := {format_expr(s.expr)};"
    if isinstance(s, If):
        return f"if ({format_bexpr(s.cond)})"
    if isinstance(s, While):
        return f"while ({format_bexpr(s.cond)})"
    if isinstance(s, Lock):
        return f"lock({s.mutex});"
    if isinstance(s, Unlock):
        return f"unlock({s.mutex});"
    if isinstance(s, Output):
        return f"output {format_expr(s.expr)};"
    if isinstance(s, Skip):
        return "skip;"
    return "halt;"


def _print_block(block, depth, out, lines):
    pad = "  " * depth
    for s in block:
        lines[s.sid] = len(out) + 1
        if isinstance(s, If):
            out.append(f"{pad}{format_stmt_head(s)} {{")
            _print_block(s.then, depth + 1, out, lines)
            if s.orelse:
                out.append(f"{pad}}} else {{")
                _print_block(s.orelse, depth + 1, out, lines)
            out.append(f"{pad}}}")
        elif isinstance(s, While):
            out.append(f"{pad}{format_stmt_head(s)} {{")
            _print_block(s.body, depth + 1, out, lines)
            out.append(f"{pad}}}")
        else:
            out.append(f"{pad}{format_stmt_head(s)}")


def _print_program(prog, lines):
    out = []
    for d in prog.shared:
        out.append(f"shared {d.name} = {d.value};" if d.kind == "int" else f"mutex {d.name};")
    if prog.shared:
        out.append("")
    for k, p in enumerate(prog.procs):
        if k:
            out.append("")
        out.append(f"proc {p.name}({', '.join(p.params)}) {{")
        _print_block(p.body, 1, out, lines)
        out.append("}")
    return "\n".join(out) + "\n"


def pretty_print(prog: Program) -> str:
    return _print_program(prog, {})


def structurally_equal(a: Program, b: Program) -> bool:
    """Equality up to statement ids."""
    return pretty_print(a) == pretty_print(b)


def renumber(prog: Program) -> Program:
    """Canonical ids, as if the program had been printed and parsed again."""
    return parse(pretty_print(prog))
