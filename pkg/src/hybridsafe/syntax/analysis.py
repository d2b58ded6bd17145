"""Static variable analyses and renaming.

free_vars / bound_vars / must_bound_vars follow the usual inductive
definitions for differential dynamic logic. For an ODE {x'=theta & Q} the
bound set is {x, x'} (the primed name is tracked as the string "x'").
"""

from __future__ import annotations

from typing import Dict, FrozenSet, Mapping, Union

from .nodes import (
    And, Assign, AssignAny, Box, Choice, Cmp, Const, Diamond, Div, Equiv,
    Exists, FalseF, Forall, Formula, Imply, Loop, Minus, Neg, Not, ODE, Or,
    Plus, Pow, Program, Seq, SP, Sqrt, Term, Test, Times, TrueF, Var,
)

Node = Union[Term, Formula, Program]
VarSet = FrozenSet[str]

EMPTY: VarSet = frozenset()


class RenamingError(ValueError):
    pass


class RenamingNotInjective(RenamingError):
    pass


class ImageCollision(RenamingError):
    """Renaming image intersects its own domain (captures a variable)."""


class RenamingMap:
    """Injective variable renaming whose image is disjoint from its domain."""

    def __init__(self, mapping: Mapping[str, str]):
        mapping = dict(mapping)
        values = list(mapping.values())
        if len(set(values)) != len(values):
            dup = sorted(v for v in set(values) if values.count(v) > 1)
            raise RenamingNotInjective(f"renaming maps two variables to {dup}")
        overlap = set(values) & set(mapping)
        if overlap:
            raise ImageCollision(
                f"renaming image collides with its domain: {sorted(overlap)}")
        self._map: Dict[str, str] = mapping

    def __getitem__(self, name: str) -> str:
        return self._map[name]

    def __contains__(self, name: str) -> bool:
        return name in self._map

    def __iter__(self):
        return iter(self._map)

    def __len__(self):
        return len(self._map)

    def __eq__(self, other):
        return isinstance(other, RenamingMap) and self._map == other._map

    def __hash__(self):
        return hash(frozenset(self._map.items()))

    def __repr__(self):
        inner = ", ".join(f"{k}->{v}" for k, v in sorted(self._map.items()))
        return f"RenamingMap({{{inner}}})"

    def items(self):
        return self._map.items()

    def domain(self) -> VarSet:
        return frozenset(self._map)

    def image(self) -> VarSet:
        return frozenset(self._map.values())

    def inverse(self) -> "RenamingMap":
        return RenamingMap({v: k for k, v in self._map.items()})


def term_vars(t: Term) -> VarSet:
    if isinstance(t, Var):
        return frozenset({t.name})
    if isinstance(t, Const):
        return EMPTY
    if isinstance(t, (Plus, Minus, Times, Div)):
        return term_vars(t.left) | term_vars(t.right)
    if isinstance(t, Neg) or isinstance(t, Sqrt):
        return term_vars(t.operand)
    if isinstance(t, Pow):
        return term_vars(t.base)
    raise TypeError(f"not a term: {t!r}")


def free_vars(node: Node) -> VarSet:
    if isinstance(node, Term):
        return term_vars(node)
    if isinstance(node, Formula):
        return _fv_formula(node)
    if isinstance(node, Program):
        return _fv_program(node)
    raise TypeError(f"not an AST node: {node!r}")


def _fv_formula(f: Formula) -> VarSet:
    if isinstance(f, (TrueF, FalseF)):
        return EMPTY
    if isinstance(f, Cmp):
        return term_vars(f.left) | term_vars(f.right)
    if isinstance(f, Not):
        return _fv_formula(f.operand)
    if isinstance(f, (And, Or, Imply, Equiv)):
        return _fv_formula(f.left) | _fv_formula(f.right)
    if isinstance(f, (Forall, Exists)):
        return _fv_formula(f.body) - {f.var}
    if isinstance(f, Box) or isinstance(f, Diamond):
        return _fv_program(f.program) | (
            _fv_formula(f.body) - must_bound_vars(f.program))
    if isinstance(f, SP):
        # reachable-set marker: depends on the program's reads and writes
        # and on the anchor formula
        return _fv_program(f.program) | bound_vars(f.program) | _fv_formula(f.body)
    raise TypeError(f"not a formula: {f!r}")


def _fv_program(p: Program) -> VarSet:
    if isinstance(p, Assign):
        return term_vars(p.term)
    if isinstance(p, AssignAny):
        return EMPTY
    if isinstance(p, Test):
        return _fv_formula(p.cond)
    if isinstance(p, ODE):
        vs = frozenset(x for x, _ in p.eqs) | _fv_formula(p.domain)
        for _, rhs in p.eqs:
            vs |= term_vars(rhs)
        return vs
    if isinstance(p, Seq):
        return _fv_program(p.first) | (
            _fv_program(p.second) - must_bound_vars(p.first))
    if isinstance(p, Choice):
        return _fv_program(p.left) | _fv_program(p.right)
    if isinstance(p, Loop):
        return _fv_program(p.body)
    raise TypeError(f"not a program: {p!r}")


def bound_vars(node: Node) -> VarSet:
    if isinstance(node, Term):
        return EMPTY
    if isinstance(node, Formula):
        return _bv_formula(node)
    return _bv_program(node)


def _bv_formula(f: Formula) -> VarSet:
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return EMPTY
    if isinstance(f, Not):
        return _bv_formula(f.operand)
    if isinstance(f, (And, Or, Imply, Equiv)):
        return _bv_formula(f.left) | _bv_formula(f.right)
    if isinstance(f, (Forall, Exists)):
        return _bv_formula(f.body) | {f.var}
    if isinstance(f, (Box, Diamond, SP)):
        return _bv_program(f.program) | _bv_formula(f.body)
    raise TypeError(f"not a formula: {f!r}")


def _bv_program(p: Program) -> VarSet:
    if isinstance(p, (Assign, AssignAny)):
        return frozenset({p.var})
    if isinstance(p, Test):
        return EMPTY
    if isinstance(p, ODE):
        vs = set()
        for x, _ in p.eqs:
            vs.add(x)
            vs.add(x + "'")
        return frozenset(vs)
    if isinstance(p, (Seq, Choice)):
        a, b = _two(p)
        return _bv_program(a) | _bv_program(b)
    if isinstance(p, Loop):
        return _bv_program(p.body)
    raise TypeError(f"not a program: {p!r}")


def must_bound_vars(p: Program) -> VarSet:
    """Variables written on every execution path of p."""
    if isinstance(p, (Assign, AssignAny)):
        return frozenset({p.var})
    if isinstance(p, Test):
        return EMPTY
    if isinstance(p, ODE):
        return bound_vars(p)
    if isinstance(p, Seq):
        return must_bound_vars(p.first) | must_bound_vars(p.second)
    if isinstance(p, Choice):
        return must_bound_vars(p.left) & must_bound_vars(p.right)
    if isinstance(p, Loop):
        return EMPTY
    raise TypeError(f"not a program: {p!r}")


def all_vars(node: Node) -> VarSet:
    """Free and bound variables together, primed ODE names included.

    A quantifier binder under a test or evolution constraint is local to
    that formula and is not a variable of the enclosing program.
    """
    return free_vars(node) | bound_vars(node)


def _two(p: Program):
    if isinstance(p, Seq):
        return p.first, p.second
    return p.left, p.right


def base_vars(node: Node) -> VarSet:
    """all_vars with primed ODE names stripped to their base variable."""
    return frozenset(v[:-1] if v.endswith("'") else v for v in all_vars(node))


def rename(node: Node, rho: Union[RenamingMap, Mapping[str, str]]) -> Node:
    """Apply an injective renaming to every variable occurrence.

    For a program the map must cover all of its variables (primed ODE names
    are renamed through their base name). For a formula or term a partial
    map is allowed and unmapped names are left alone. The image must be
    fresh for the node, so no capture can occur.
    """
    if not isinstance(rho, RenamingMap):
        rho = RenamingMap(rho)
    if isinstance(node, Program):
        missing = base_vars(node) - rho.domain()
        if missing:
            raise RenamingError(
                f"renaming does not cover program variables: {sorted(missing)}")
    clash = rho.image() & base_vars(node)
    if clash:
        raise ImageCollision(
            f"renaming image is not fresh for this node: {sorted(clash)}")
    return _rename(node, rho)


def _rn(name: str, rho: RenamingMap) -> str:
    base = name[:-1] if name.endswith("'") else name
    if base not in rho:
        return name
    return rho[base] + "'" if name.endswith("'") else rho[base]


def _rename(node: Node, rho: RenamingMap) -> Node:
    if isinstance(node, Var):
        return Var(_rn(node.name, rho))
    if isinstance(node, Const):
        return node
    if isinstance(node, (Plus, Minus, Times, Div)):
        return type(node)(_rename(node.left, rho), _rename(node.right, rho))
    if isinstance(node, (Neg, Sqrt)):
        return type(node)(_rename(node.operand, rho))
    if isinstance(node, Pow):
        return Pow(_rename(node.base, rho), node.exponent)
    if isinstance(node, (TrueF, FalseF)):
        return node
    if isinstance(node, Cmp):
        return Cmp(node.op, _rename(node.left, rho), _rename(node.right, rho))
    if isinstance(node, Not):
        return Not(_rename(node.operand, rho))
    if isinstance(node, (And, Or, Imply, Equiv)):
        return type(node)(_rename(node.left, rho), _rename(node.right, rho))
    if isinstance(node, (Forall, Exists)):
        if node.var not in rho:
            captured = sorted(
                v for v in free_vars(node.body)
                if v in rho and rho[v] == node.var)
            if captured:
                raise ImageCollision(
                    f"renaming {captured} to {node.var!r} would be captured "
                    f"by the quantifier binding {node.var!r}")
        return type(node)(_rn(node.var, rho), _rename(node.body, rho))
    if isinstance(node, (Box, Diamond, SP)):
        return type(node)(_rename(node.program, rho), _rename(node.body, rho))
    if isinstance(node, Assign):
        return Assign(_rn(node.var, rho), _rename(node.term, rho))
    if isinstance(node, AssignAny):
        return AssignAny(_rn(node.var, rho))
    if isinstance(node, Test):
        return Test(_rename(node.cond, rho))
    if isinstance(node, ODE):
        return ODE(
            tuple((_rn(x, rho), _rename(rhs, rho)) for x, rhs in node.eqs),
            _rename(node.domain, rho))
    if isinstance(node, Seq):
        return Seq(_rename(node.first, rho), _rename(node.second, rho))
    if isinstance(node, Choice):
        return Choice(_rename(node.left, rho), _rename(node.right, rho))
    if isinstance(node, Loop):
        return Loop(_rename(node.body, rho))
    raise TypeError(f"not an AST node: {node!r}")
