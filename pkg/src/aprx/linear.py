"""Exact linear arithmetic over the rationals.

``Lin`` is an affine expression ``const + sum(coef * var)`` with ``Fraction``
coefficients.  A constraint ``(lin, strict)`` means ``lin < 0`` when strict
and ``lin <= 0`` otherwise.  Satisfiability is decided by Fourier-Motzkin
elimination, which is exact over the rationals; since every program variable
is an integer, rational unsatisfiability is a sound proof of integer
unsatisfiability.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable


class Lin:
    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs=None, const=0):
        self.coeffs = {k: Fraction(v) for k, v in (coeffs or {}).items() if v != 0}
        self.const = Fraction(const)

    @classmethod
    def var(cls, name):
        return cls({name: 1})

    @classmethod
    def constant(cls, value):
        return cls({}, value)

    def is_const(self):
        return not self.coeffs

    def vars(self):
        return set(self.coeffs)

    def __add__(self, other):
        other = _lift(other)
        coeffs = dict(self.coeffs)
        for k, v in other.coeffs.items():
            coeffs[k] = coeffs.get(k, 0) + v
        return Lin(coeffs, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Lin({k: -v for k, v in self.coeffs.items()}, -self.const)

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) - self

    def scale(self, k):
        k = Fraction(k)
        return Lin({v: c * k for v, c in self.coeffs.items()}, self.const * k)

    def __mul__(self, other):
        other = _lift(other)
        if other.is_const():
            return self.scale(other.const)
        if self.is_const():
            return other.scale(self.const)
        return None  # not linear

    __rmul__ = __mul__

    def substitute(self, mapping):
        """Replace variables by ``Lin`` values from ``mapping`` (others are kept)."""
        out = Lin({}, self.const)
        for v, c in self.coeffs.items():
            out = out + (mapping[v].scale(c) if v in mapping else Lin({v: c}))
        return out

    def evaluate(self, env):
        return self.const + sum(c * env[v] for v, c in self.coeffs.items())

    def key(self):
        return (tuple(sorted(self.coeffs.items())), self.const)

    def __eq__(self, other):
        return isinstance(other, Lin) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Lin({format_lin(self)})"


def _lift(x):
    return x if isinstance(x, Lin) else Lin.constant(x)


def _fmt_num(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def format_lin(e: Lin, order=None) -> str:
    """Human form such as ``n - i`` or ``2*x + 1``."""
    names = order if order is not None else sorted(e.coeffs)
    parts = []
    for v in names:
        c = e.coeffs.get(v, 0)
        if c == 0:
            continue
        mag = abs(c)
        term = v if mag == 1 else f"{_fmt_num(mag)}*{v}"
        if not parts:
            parts.append(term if c > 0 else f"-{term}")
        else:
            parts.append(("+ " if c > 0 else "- ") + term)
    if e.const or not parts:
        if not parts:
            parts.append(_fmt_num(e.const))
        else:
            parts.append(("+ " if e.const > 0 else "- ") + _fmt_num(abs(e.const)))
    return " ".join(parts)


# constraint helpers ------------------------------------------------------

def le(a, b):
    """a <= b"""
    return (_lift(a) - _lift(b), False)


def lt(a, b):
    """a < b"""
    return (_lift(a) - _lift(b), True)


def ge(a, b):
    return le(b, a)


def gt(a, b):
    return lt(b, a)


def _normalize(con):
    lin, strict = con
    if not lin.coeffs:
        return con
    scale = max(abs(c) for c in lin.coeffs.values())
    return (lin.scale(1 / scale), strict)


def _dedupe(cons):
    best = {}
    for lin, strict in cons:
        key = tuple(sorted(lin.coeffs.items()))
        cur = best.get(key)
        # keep the tighter bound: larger constant is tighter for lin <= 0
        if cur is None or lin.const > cur[0].const or (lin.const == cur[0].const and strict and not cur[1]):
            best[key] = (lin, strict)
    return list(best.values())


def _eliminate(cons, var):
    pos, neg, rest = [], [], []
    for con in cons:
        c = con[0].coeffs.get(var, 0)
        (pos if c > 0 else neg if c < 0 else rest).append(con)
    for lp, sp in pos:
        cp = lp.coeffs[var]
        for ln, sn in neg:
            cn = -ln.coeffs[var]
            combined = lp.scale(cn) + ln.scale(cp)
            combined.coeffs.pop(var, None)
            rest.append(_normalize((combined, sp or sn)))
    return _dedupe(rest)


def _const_ok(con):
    lin, strict = con
    return lin.const < 0 if strict else lin.const <= 0


def satisfiable(constraints: Iterable, keep=()) -> bool:
    """Decide whether the conjunction of ``constraints`` has a rational solution."""
    cons = _dedupe([_normalize(c) for c in constraints])
    while True:
        trivial = [c for c in cons if c[0].is_const()]
        if not all(_const_ok(c) for c in trivial):
            return False
        cons = [c for c in cons if not c[0].is_const()]
        if not cons:
            return True
        names = set()
        for lin, _ in cons:
            names |= lin.vars()
        names -= set(keep)
        if not names:
            return True

        def cost(v):
            p = sum(1 for lin, _ in cons if lin.coeffs.get(v, 0) > 0)
            n = sum(1 for lin, _ in cons if lin.coeffs.get(v, 0) < 0)
            return (p * n - p - n, v)

        cons = _eliminate(cons, min(names, key=cost))


def project(constraints: Iterable, keep: Iterable):
    """Eliminate every variable except those in ``keep``; None if infeasible."""
    keep = set(keep)
    cons = _dedupe([_normalize(c) for c in constraints])
    while True:
        trivial = [c for c in cons if c[0].is_const()]
        if not all(_const_ok(c) for c in trivial):
            return None
        cons = [c for c in cons if not c[0].is_const()]
        names = set()
        for lin, _ in cons:
            names |= lin.vars()
        names -= keep
        if not names:
            return cons
        cons = _eliminate(cons, min(sorted(names)))


def implies(constraints: Iterable, goal) -> bool:
    """True iff every rational solution of ``constraints`` satisfies ``goal``."""
    lin, strict = goal
    negated = (-lin, not strict)  # not(lin <= 0) is -lin < 0; not(lin < 0) is -lin <= 0
    return not satisfiable(list(constraints) + [negated])


def lower_bound(constraints: Iterable, expr: Lin):
    """Greatest lower bound of ``expr`` over the constraints.

    Returns ``(bound, strict)`` or None when ``expr`` is unbounded below.
    Raises ValueError when the constraints are infeasible.
    """
    t = "__t__"
    cons = list(constraints) + [le(Lin.var(t), expr), le(expr, Lin.var(t))]
    proj = project(cons, [t])
    if proj is None:
        raise ValueError("infeasible")
    best = None
    for lin, strict in proj:
        c = lin.coeffs.get(t, 0)
        if c < 0:
            # c*t + k <= 0 with c < 0  ->  t >= -k/c
            b = -lin.const / c
            if best is None or b > best[0] or (b == best[0] and strict):
                best = (b, strict)
    return best


def ceil_fraction(q: Fraction) -> int:
    return math.ceil(q)
