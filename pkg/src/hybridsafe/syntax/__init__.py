"""Syntax layer: AST nodes, parser, printer, and static analyses."""

from .nodes import (
    And, Assign, AssignAny, Box, Choice, Cmp, Const, Diamond, Div, Equiv,
    Exists, FalseF, Forall, Formula, Imply, Loop, Minus, Neg, Not, ODE, Or,
    Plus, Pow, Program, Seq, SP, Sqrt, Term, Test, Times, TrueF, Var, desugar,
)
from .parser import (
    ModelFile, ParseError, load_model, parse_formula, parse_model,
    parse_program, parse_term,
)
from .printer import format_fraction, print_formula, print_program, print_term
from .analysis import (
    ImageCollision, RenamingError, RenamingMap, RenamingNotInjective,
    all_vars, base_vars, bound_vars, free_vars, must_bound_vars, rename,
    term_vars,
)

__all__ = [
    "And", "Assign", "AssignAny", "Box", "Choice", "Cmp", "Const", "Diamond",
    "Div", "Equiv", "Exists", "FalseF", "Forall", "Formula", "Imply", "Loop",
    "Minus", "Neg", "Not", "ODE", "Or", "Plus", "Pow", "Program", "Seq", "SP",
    "Sqrt", "Term", "Test", "Times", "TrueF", "Var", "desugar",
    "ModelFile", "ParseError", "load_model", "parse_formula", "parse_model",
    "parse_program", "parse_term",
    "format_fraction", "print_formula", "print_program", "print_term",
    "ImageCollision", "RenamingError", "RenamingMap", "RenamingNotInjective",
    "all_vars", "base_vars", "bound_vars", "free_vars", "must_bound_vars",
    "rename", "term_vars",
]
