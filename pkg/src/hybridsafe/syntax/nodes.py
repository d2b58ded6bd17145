"""AST node types for terms, formulas, and hybrid programs.

All nodes are frozen dataclasses: immutable, hashable, compared structurally.
Constants store exact rationals (``fractions.Fraction``) so that decimal
literals survive a parse/print round trip bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Tuple, Union

RationalLike = Union[int, str, Fraction]


def _as_fraction(v: RationalLike) -> Fraction:
    if isinstance(v, Fraction):
        return v
    return Fraction(str(v))


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------

class Term:
    __slots__ = ()


@dataclass(frozen=True)
class Var(Term):
    name: str


@dataclass(frozen=True)
class Const(Term):
    value: Fraction

    def __init__(self, value: RationalLike):
        object.__setattr__(self, "value", _as_fraction(value))


@dataclass(frozen=True)
class Plus(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Minus(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Times(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Div(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Neg(Term):
    operand: Term


@dataclass(frozen=True)
class Pow(Term):
    base: Term
    exponent: int  # natural number

    def __post_init__(self):
        if self.exponent < 0:
            raise ValueError("Pow exponent must be a natural number")


@dataclass(frozen=True)
class Sqrt(Term):
    operand: Term


# ---------------------------------------------------------------------------
# Formulas
# ---------------------------------------------------------------------------

class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class FalseF(Formula):
    pass


CMP_OPS = ("=", "<=", "<", ">=", ">")


@dataclass(frozen=True)
class Cmp(Formula):
    op: str
    left: Term
    right: Term

    def __post_init__(self):
        if self.op not in CMP_OPS:
            raise ValueError(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True)
class Not(Formula):
    operand: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Imply(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Equiv(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Forall(Formula):
    var: str
    body: Formula


@dataclass(frozen=True)
class Exists(Formula):
    var: str
    body: Formula


@dataclass(frozen=True)
class Box(Formula):
    program: "Program"
    body: Formula


@dataclass(frozen=True)
class Diamond(Formula):
    program: "Program"
    body: Formula


@dataclass(frozen=True)
class SP(Formula):
    """Strongest-postcondition marker sp(program, formula).

    Not evaluable directly; stands for the set of states the program can
    reach from the formula's states. Appears in emitted encodings.
    """

    program: "Program"
    body: Formula


# ---------------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------------

class Program:
    __slots__ = ()


@dataclass(frozen=True)
class Assign(Program):
    var: str
    term: Term


@dataclass(frozen=True)
class AssignAny(Program):
    var: str


@dataclass(frozen=True)
class Test(Program):
    cond: Formula


@dataclass(frozen=True)
class ODE(Program):
    """{x' = theta, y' = eta & Q} — simultaneous continuous evolution."""

    eqs: Tuple[Tuple[str, Term], ...]
    domain: Formula

    def __post_init__(self):
        object.__setattr__(self, "eqs", tuple((x, t) for x, t in self.eqs))
        seen = set()
        for x, _ in self.eqs:
            if x in seen:
                raise ValueError(f"duplicate ODE variable {x!r}")
            seen.add(x)


@dataclass(frozen=True)
class Seq(Program):
    first: Program
    second: Program


@dataclass(frozen=True)
class Choice(Program):
    left: Program
    right: Program


@dataclass(frozen=True)
class Loop(Program):
    body: Program


def desugar(f: Formula) -> Formula:
    """Rewrite Diamond(a, phi) to Not(Box(a, Not(phi))) literally, everywhere."""
    if isinstance(f, Diamond):
        return Not(Box(f.program, Not(desugar(f.body))))
    if isinstance(f, Not):
        return Not(desugar(f.operand))
    if isinstance(f, (And, Or, Imply, Equiv)):
        return type(f)(desugar(f.left), desugar(f.right))
    if isinstance(f, (Forall, Exists)):
        return type(f)(f.var, desugar(f.body))
    if isinstance(f, Box):
        return Box(f.program, desugar(f.body))
    if isinstance(f, SP):
        return SP(f.program, desugar(f.body))
    return f
