"""Pretty printer, inverse of the parser: parse(print(a)) == a.

Parenthesization mirrors the parser's precedence and associativity choices
(+/-/* and / left-associative, the formula connectives and ;/++
right-associative, quantifier bodies maximal). Constants print as exact
decimals when the denominator is of the form 2^a 5^b; other rationals print
as a division expression, which reparses as Div (see docs/grammar.md).
"""

from __future__ import annotations

from fractions import Fraction

from .nodes import (
    And, Assign, AssignAny, Box, Choice, Cmp, Const, Diamond, Div, Equiv,
    Exists, FalseF, Forall, Formula, Imply, Loop, Minus, Neg, Not, ODE, Or,
    Plus, Pow, Program, Seq, SP, Sqrt, Term, Test, Times, TrueF, Var,
)


def format_fraction(fr: Fraction) -> str:
    if fr < 0:
        return "-" + format_fraction(-fr)
    num, den = fr.numerator, fr.denominator
    if den == 1:
        return str(num)
    a = b = 0
    d = den
    while d % 2 == 0:
        d //= 2
        a += 1
    while d % 5 == 0:
        d //= 5
        b += 1
    if d != 1:
        return f"{num}/{den}"
    k = max(a, b)
    scaled = num * 10 ** k // den
    return f"{scaled // 10 ** k}.{scaled % 10 ** k:0{k}d}"


# term precedence levels: 1 +/-, 2 */div, 3 unary minus, 4 power, 5 atom

def _pt(t: Term, prec: int) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Const):
        s = format_fraction(t.value)
        if (t.value < 0 or "/" in s) and prec > 1:
            return f"({s})"
        return s
    if isinstance(t, Plus):
        s = f"{_pt(t.left, 1)} + {_pt(t.right, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(t, Minus):
        s = f"{_pt(t.left, 1)} - {_pt(t.right, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(t, Times):
        s = f"{_pt(t.left, 2)} * {_pt(t.right, 3)}"
        return f"({s})" if prec > 2 else s
    if isinstance(t, Div):
        s = f"{_pt(t.left, 2)} / {_pt(t.right, 3)}"
        return f"({s})" if prec > 2 else s
    if isinstance(t, Neg):
        s = f"-{_pt(t.operand, 3)}"
        return f"({s})" if prec > 3 else s
    if isinstance(t, Pow):
        s = f"{_pt(t.base, 5)}^{t.exponent}"
        return f"({s})" if prec > 4 else s
    if isinstance(t, Sqrt):
        return f"sqrt({_pt(t.operand, 1)})"
    raise TypeError(f"not a term: {t!r}")


def print_term(t: Term) -> str:
    return _pt(t, 1)


# formula precedence: 1 <->, 2 ->, 3 |, 4 &, 5 prefix/atoms
# quantifiers have maximal bodies, so they print at level 0 and get parens
# in any tighter context

def _pf(f: Formula, prec: int) -> str:
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Cmp):
        return f"{_pt(f.left, 1)} {f.op} {_pt(f.right, 1)}"
    if isinstance(f, Equiv):
        s = f"{_pf(f.left, 2)} <-> {_pf(f.right, 1)}"
        return f"({s})" if prec > 1 else s
    if isinstance(f, Imply):
        s = f"{_pf(f.left, 3)} -> {_pf(f.right, 2)}"
        return f"({s})" if prec > 2 else s
    if isinstance(f, Or):
        s = f"{_pf(f.left, 4)} | {_pf(f.right, 3)}"
        return f"({s})" if prec > 3 else s
    if isinstance(f, And):
        s = f"{_pf(f.left, 5)} & {_pf(f.right, 4)}"
        return f"({s})" if prec > 4 else s
    if isinstance(f, Not):
        return f"!{_pf(f.operand, 5)}"
    if isinstance(f, (Forall, Exists)):
        kw = "forall" if isinstance(f, Forall) else "exists"
        s = f"{kw} {f.var}. {_pf(f.body, 0)}"
        return f"({s})" if prec > 0 else s
    if isinstance(f, Box):
        return f"[{_pp(f.program, 1)}]{_pf(f.body, 5)}"
    if isinstance(f, Diamond):
        return f"<{_pp(f.program, 1)}>{_pf(f.body, 5)}"
    if isinstance(f, SP):
        return f"sp({_pp(f.program, 1)}, {_pf(f.body, 0)})"
    raise TypeError(f"not a formula: {f!r}")


def print_formula(f: Formula) -> str:
    return _pf(f, 0)


# program precedence: 1 ++, 2 ;, 3 atoms; grouping uses braces

def _pp(p: Program, prec: int) -> str:
    if isinstance(p, Assign):
        return f"{p.var} := {_pt(p.term, 1)}"
    if isinstance(p, AssignAny):
        return f"{p.var} := *"
    if isinstance(p, Test):
        return f"?{_pf(p.cond, 0)}"
    if isinstance(p, ODE):
        eqs = ", ".join(f"{x}' = {_pt(rhs, 1)}" for x, rhs in p.eqs)
        if isinstance(p.domain, TrueF):
            return f"{{{eqs}}}"
        return f"{{{eqs} & {_pf(p.domain, 0)}}}"
    if isinstance(p, Seq):
        s = f"{_pp(p.first, 3)}; {_pp(p.second, 2)}"
        return f"{{{s}}}" if prec > 2 else s
    if isinstance(p, Choice):
        s = f"{_pp(p.left, 2)} ++ {_pp(p.right, 1)}"
        return f"{{{s}}}" if prec > 1 else s
    if isinstance(p, Loop):
        return f"{{{_pp(p.body, 1)}}}*"
    raise TypeError(f"not a program: {p!r}")


def print_program(p: Program) -> str:
    return _pp(p, 1)
