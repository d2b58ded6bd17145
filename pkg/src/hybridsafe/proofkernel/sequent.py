"""Simulation modalities, sequents, and proof trees.

The judgment ``[[P]]phi`` (written ``DModality`` here) says: from the
current state, every run of the attacked version of P can be matched by
some run of a renamed copy of P so that ``phi`` holds over the joint
final state. It abbreviates ``[attacked(P)] <renamed(P)> phi``, and
``unfold`` produces exactly that formula. Proof obligations are sequents
over such formulas; a proof is a tree of rule applications whose leaves
are closed by axioms or handed to the numeric falsifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

from ..attack import AttackSpec, apply_attack
from ..syntax.analysis import (
    ImageCollision, RenamingError, RenamingMap, base_vars, bound_vars,
    free_vars, rename, term_vars,
)
from ..syntax.nodes import (
    And, Assign, AssignAny, Box, Choice, Cmp, Const, Diamond, Div, Equiv,
    Exists, FalseF, Forall, Formula, Imply, Loop, Minus, Neg, Not, ODE, Or,
    Plus, Pow, Program, Seq, SP, Sqrt, Term, Test, TrueF, Times, Var,
)
from ..syntax.printer import print_formula, print_program, print_term


class RenamingNotCovering(RenamingError):
    """The renaming does not cover every variable of the program."""


class CaptureError(ValueError):
    """A substitution would move a term under a binder that captures it."""


@dataclass(frozen=True)
class DModality(Formula):
    """``[[program]]body`` relative to an attack and a variable renaming."""

    program: Program
    attack: AttackSpec
    renaming: RenamingMap
    body: Formula

    def __post_init__(self):
        pvars = base_vars(self.program)
        missing = pvars - self.renaming.domain()
        if missing:
            raise RenamingNotCovering(
                "renaming must cover every program variable; missing "
                + ", ".join(sorted(missing)))
        clash = self.renaming.image() & pvars
        if clash:
            raise ImageCollision(
                "renamed copies must not collide with program variables: "
                + ", ".join(sorted(clash)))

    def unfold(self) -> Formula:
        attacked = apply_attack(self.program, self.attack, warn=False)
        ghost = rename(self.program, self.renaming)
        return Box(attacked, Diamond(ghost, unfold_dmodalities(self.body)))

    def unfold_one(self) -> Formula:
        """One level only: the body is kept as written."""
        attacked = apply_attack(self.program, self.attack, warn=False)
        ghost = rename(self.program, self.renaming)
        return Box(attacked, Diamond(ghost, self.body))


def unfold_dmodalities(f: Formula) -> Formula:
    """`f` with every simulation modality expanded to its box/diamond form."""
    if isinstance(f, DModality):
        return f.unfold()
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return f
    if isinstance(f, Not):
        return Not(unfold_dmodalities(f.operand))
    if isinstance(f, (And, Or, Imply, Equiv)):
        return type(f)(unfold_dmodalities(f.left), unfold_dmodalities(f.right))
    if isinstance(f, (Forall, Exists)):
        return type(f)(f.var, unfold_dmodalities(f.body))
    if isinstance(f, (Box, Diamond, SP)):
        return type(f)(f.program, unfold_dmodalities(f.body))
    raise TypeError(f"not a formula: {f!r}")


def contains_dmodality(f: Formula) -> bool:
    if isinstance(f, DModality):
        return True
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return False
    if isinstance(f, Not):
        return contains_dmodality(f.operand)
    if isinstance(f, (And, Or, Imply, Equiv)):
        return contains_dmodality(f.left) or contains_dmodality(f.right)
    if isinstance(f, (Forall, Exists, Box, Diamond, SP)):
        return contains_dmodality(f.body)
    raise TypeError(f"not a formula: {f!r}")


def d_modality(program: Program, attack: AttackSpec, renaming: RenamingMap,
               body: Formula) -> Formula:
    """The unfolded form of ``[[program]]body``: a box over the attacked
    program around a diamond over the renamed copy. Raises
    RenamingNotCovering / ImageCollision on an unusable renaming."""
    return DModality(program, attack, renaming, body).unfold()


def d_free_vars(f: Formula) -> FrozenSet[str]:
    """Free variables, treating simulation modalities by their unfolding."""
    return frozenset(free_vars(unfold_dmodalities(f)))


# -- printing ---------------------------------------------------------------

def _df(f: Formula, prec: int) -> str:
    """Mirror of the plain formula printer with a [[...]] case."""
    if isinstance(f, DModality):
        return f"[[{print_program(f.program)}]]{_df(f.body, 5)}"
    if not contains_dmodality(f):
        from ..syntax.printer import _pf
        return _pf(f, prec)
    if isinstance(f, Equiv):
        s = f"{_df(f.left, 2)} <-> {_df(f.right, 1)}"
        return f"({s})" if prec > 1 else s
    if isinstance(f, Imply):
        s = f"{_df(f.left, 3)} -> {_df(f.right, 2)}"
        return f"({s})" if prec > 2 else s
    if isinstance(f, Or):
        s = f"{_df(f.left, 4)} | {_df(f.right, 3)}"
        return f"({s})" if prec > 3 else s
    if isinstance(f, And):
        s = f"{_df(f.left, 5)} & {_df(f.right, 4)}"
        return f"({s})" if prec > 4 else s
    if isinstance(f, Not):
        return f"!{_df(f.operand, 5)}"
    if isinstance(f, (Forall, Exists)):
        kw = "forall" if isinstance(f, Forall) else "exists"
        s = f"{kw} {f.var}. {_df(f.body, 0)}"
        return f"({s})" if prec > 0 else s
    if isinstance(f, Box):
        return f"[{print_program(f.program)}]{_df(f.body, 5)}"
    if isinstance(f, Diamond):
        return f"<{print_program(f.program)}>{_df(f.body, 5)}"
    if isinstance(f, SP):
        return f"sp({print_program(f.program)}, {_df(f.body, 0)})"
    raise TypeError(f"not a formula: {f!r}")


def fmt_formula(f: Formula) -> str:
    return _df(f, 0)


# -- sequents ---------------------------------------------------------------

@dataclass(frozen=True)
class Sequent:
    """``ante |- succ``: the conjunction of the antecedent formulas entails
    the disjunction of the succedent formulas. Both sides are sets, so
    contraction and permutation are built in."""

    ante: FrozenSet[Formula]
    succ: FrozenSet[Formula]

    def __init__(self, ante: Iterable[Formula] = (),
                 succ: Iterable[Formula] = ()):
        object.__setattr__(self, "ante", frozenset(ante))
        object.__setattr__(self, "succ", frozenset(succ))

    def ante_sorted(self) -> List[Formula]:
        return sorted(self.ante, key=fmt_formula)

    def succ_sorted(self) -> List[Formula]:
        return sorted(self.succ, key=fmt_formula)

    def text(self) -> str:
        left = ", ".join(fmt_formula(f) for f in self.ante_sorted())
        right = ", ".join(fmt_formula(f) for f in self.succ_sorted())
        return f"{left} |- {right}" if left else f"|- {right}"

    def replace(self, ante=None, succ=None) -> "Sequent":
        return Sequent(self.ante if ante is None else ante,
                       self.succ if succ is None else succ)


def sequent_formula(seq: Sequent) -> Formula:
    """One formula valid iff the sequent is: and(ante) -> or(succ)."""
    ante = seq.ante_sorted()
    succ = seq.succ_sorted()
    left: Formula = TrueF()
    for f in reversed(ante):
        left = f if isinstance(left, TrueF) else And(f, left)
    right: Formula = FalseF()
    for f in reversed(succ):
        right = f if isinstance(right, FalseF) else Or(f, right)
    if isinstance(left, TrueF):
        return right
    return Imply(left, right)


@dataclass
class ProofNode:
    """One step of a proof tree: the goal sequent, the rule that was
    applied to it (None while still open), and one child per premise."""

    goal: Sequent
    rule: Optional[str] = None
    args: Dict[str, object] = field(default_factory=dict)
    children: List["ProofNode"] = field(default_factory=list)

    def open_leaves(self) -> List[Tuple[Tuple[int, ...], "ProofNode"]]:
        out = []
        stack = [((), self)]
        while stack:
            path, node = stack.pop()
            if node.rule is None:
                out.append((path, node))
            for k in range(len(node.children) - 1, -1, -1):
                stack.append((path + (k,), node.children[k]))
        return sorted(out)


# -- substitution -----------------------------------------------------------

def _bound_base(p: Program) -> FrozenSet[str]:
    return frozenset(v[:-1] if v.endswith("'") else v for v in bound_vars(p))


def subst_term(t: Term, sub: Mapping[str, Term]) -> Term:
    """Simultaneous substitution of variables by terms."""
    if isinstance(t, Var):
        return sub.get(t.name, t)
    if isinstance(t, Const):
        return t
    if isinstance(t, (Plus, Minus, Times, Div)):
        return type(t)(subst_term(t.left, sub), subst_term(t.right, sub))
    if isinstance(t, Neg):
        return Neg(subst_term(t.operand, sub))
    if isinstance(t, Pow):
        return Pow(subst_term(t.base, sub), t.exponent)
    if isinstance(t, Sqrt):
        return Sqrt(subst_term(t.operand, sub))
    raise TypeError(f"not a term: {t!r}")


def _sub_vars(sub: Mapping[str, Term]) -> FrozenSet[str]:
    """Variables read by any replacement term."""
    out: set = set()
    for e in sub.values():
        out |= term_vars(e)
    return frozenset(out)


def subst_formula(f: Formula, sub: Mapping[str, Term]) -> Formula:
    """Simultaneous capture-avoiding substitution. Refuses (CaptureError)
    rather than renaming binders, which keeps the result predictable;
    callers fall back to a side-condition failure."""
    if not sub:
        return f
    if isinstance(f, (TrueF, FalseF)):
        return f
    if isinstance(f, Cmp):
        return Cmp(f.op, subst_term(f.left, sub), subst_term(f.right, sub))
    if isinstance(f, Not):
        return Not(subst_formula(f.operand, sub))
    if isinstance(f, (And, Or, Imply, Equiv)):
        return type(f)(subst_formula(f.left, sub), subst_formula(f.right, sub))
    if isinstance(f, (Forall, Exists)):
        inner = {x: e for x, e in sub.items() if x != f.var}
        if not inner:
            return f
        body_free = d_free_vars(f.body)
        live = {x: e for x, e in inner.items() if x in body_free}
        if not live:
            return f
        if f.var in _sub_vars(live):
            raise CaptureError(
                f"substituting under the binder of {f.var!r} would capture it")
        return type(f)(f.var, subst_formula(f.body, live))
    if isinstance(f, (Box, Diamond, SP)):
        assigned = _bound_base(f.program)
        live = {x: e for x, e in sub.items() if x in d_free_vars(f)}
        if not live:
            return f
        hit = set(live) & assigned
        if hit:
            raise CaptureError(
                "cannot substitute for " + ", ".join(sorted(hit))
                + ": assigned inside a modality")
        if _sub_vars(live) & assigned:
            raise CaptureError(
                "replacement term reads a variable the modality assigns")
        return type(f)(subst_program(f.program, live),
                       subst_formula(f.body, live))
    if isinstance(f, DModality):
        assigned = _bound_base(f.program)
        assigned |= {f.renaming[v] for v in assigned if v in f.renaming.domain()}
        live = {x: e for x, e in sub.items() if x in d_free_vars(f)}
        if not live:
            return f
        if set(live) & assigned or _sub_vars(live) & assigned:
            raise CaptureError(
                "cannot substitute across a simulation modality boundary")
        return DModality(subst_program(f.program, live), f.attack, f.renaming,
                         subst_formula(f.body, live))
    raise TypeError(f"not a formula: {f!r}")


def subst_program(p: Program, sub: Mapping[str, Term]) -> Program:
    """Substitute in read positions of a program. The caller must already
    have checked that no substituted variable is assigned by `p`."""
    if isinstance(p, Assign):
        return Assign(p.var, subst_term(p.term, sub))
    if isinstance(p, AssignAny):
        return p
    if isinstance(p, Test):
        return Test(subst_formula(p.cond, sub))
    if isinstance(p, ODE):
        eqs = tuple((x, subst_term(rhs, sub)) for x, rhs in p.eqs)
        return ODE(eqs, subst_formula(p.domain, sub))
    if isinstance(p, Seq):
        return Seq(subst_program(p.first, sub), subst_program(p.second, sub))
    if isinstance(p, Choice):
        return Choice(subst_program(p.left, sub), subst_program(p.right, sub))
    if isinstance(p, Loop):
        return Loop(subst_program(p.body, sub))
    raise TypeError(f"not a program: {p!r}")
