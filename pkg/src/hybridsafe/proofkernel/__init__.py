"""Sequent-calculus kernel for simulation-modality proofs.

Submodules: ``sequent`` (formulas, sequents, proof trees), ``rules``
(the rule registry and ``apply_rule``), ``oracle`` (numeric leaf
falsification), ``check`` (re-derivation and certificates), ``script``
(the line-oriented proof-script front end).
"""

from .sequent import (
    CaptureError, DModality, ProofNode, RenamingNotCovering, Sequent,
    d_free_vars, d_modality, fmt_formula, sequent_formula, subst_formula,
    subst_program, subst_term, unfold_dmodalities,
)
from .rules import (
    RuleFailure, RuleNotApplicable, SideConditionViolated, apply_rule,
    rule_names,
)
from .oracle import (
    Counterexample, NoCounterexampleFound, OracleConfig, UnboundedVariable,
    arith_oracle, emit_smtlib, external_check, falsify_sequent,
)
from .check import LeafFailed, Proved, RuleError, check_proof, path_str
from .script import (
    ProofScript, ScriptError, build_proof, load_proof, parse_dformula,
    parse_goal,
)

__all__ = [
    "CaptureError", "DModality", "ProofNode", "RenamingNotCovering",
    "Sequent", "d_free_vars", "d_modality", "fmt_formula", "sequent_formula",
    "subst_formula", "subst_program", "subst_term", "unfold_dmodalities",
    "RuleFailure", "RuleNotApplicable", "SideConditionViolated", "apply_rule",
    "rule_names",
    "Counterexample", "NoCounterexampleFound", "OracleConfig",
    "UnboundedVariable", "arith_oracle", "emit_smtlib", "external_check",
    "falsify_sequent",
    "LeafFailed", "Proved", "RuleError", "check_proof", "path_str",
    "ProofScript", "ScriptError", "build_proof", "load_proof",
    "parse_dformula", "parse_goal",
]
