"""Proof re-checking and certificate construction.

``check_proof`` trusts nothing recorded in a proof tree: every rule is
re-applied to its goal and the produced premises are compared against the
recorded children, in order. Leaves closed by the numeric oracle are
re-searched. The result is either a certificate (with every numeric
assumption spelled out), the first failing leaf with its counterexample,
or the first structural defect.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .oracle import (
    Counterexample, NoCounterexampleFound, OracleConfig, UnboundedVariable,
    contains_modality, falsify_sequent,
)
from .rules import RuleFailure, SOLVE_PROBES, SOLVE_TOL, apply_rule
from .sequent import ProofNode, Sequent, sequent_formula, unfold_dmodalities


@dataclass(frozen=True)
class Proved:
    certificate: Dict[str, object]


@dataclass(frozen=True)
class LeafFailed:
    path: Tuple[int, ...]
    sequent: Sequent
    counterexample: Counterexample
    message: str


@dataclass(frozen=True)
class RuleError:
    path: Tuple[int, ...]
    message: str


def path_str(path: Tuple[int, ...]) -> str:
    return "root" if not path else "root." + ".".join(str(i) for i in path)


_SOLVE_META = {"time", "on", "occ", "side"}


def check_proof(root: ProofNode, cfg: Optional[OracleConfig] = None):
    """Re-derive a proof tree bottom-up and certify it.

    Per-leaf ``box``/``budget`` entries in an oracle node's args override
    the config (the config box supplies missing variables).
    """
    cfg = cfg if cfg is not None else OracleConfig()
    assumptions: List[Dict[str, object]] = []
    solves: List[Dict[str, object]] = []
    nodes = 0
    stack: List[Tuple[ProofNode, Tuple[int, ...]]] = [(root, ())]
    while stack:
        node, path = stack.pop()
        nodes += 1
        if node.rule is None:
            return RuleError(path, "open goal (no rule applied)")
        try:
            premises = apply_rule(node.goal, node.rule, dict(node.args))
        except (RuleFailure, ValueError, TypeError) as e:
            return RuleError(path, f"{node.rule}: {e}")
        if len(premises) != len(node.children):
            return RuleError(
                path, f"{node.rule}: rule yields {len(premises)} premise(s) "
                      f"but {len(node.children)} are recorded")
        for i, (want, child) in enumerate(zip(premises, node.children)):
            if want != child.goal:
                return RuleError(
                    path, f"{node.rule}: premise {i} mismatch: derived "
                          f"{want.text()!r}, recorded {child.goal.text()!r}")
        if node.rule == "oracle":
            box = dict(cfg.box)
            box.update(node.args.get("box") or {})
            budget = int(node.args.get("budget") or cfg.budget)
            eff = OracleConfig(box=box, budget=budget, seed=cfg.seed,
                               sample=cfg.sample)
            try:
                res = falsify_sequent(node.goal, eff)
            except UnboundedVariable as e:
                return RuleError(path, f"oracle: {e}")
            if isinstance(res, Counterexample):
                return LeafFailed(path, node.goal, res,
                                  "numeric counterexample to leaf goal")
            assert isinstance(res, NoCounterexampleFound)
            assumptions.append({
                "path": path_str(path),
                "sequent": node.goal.text(),
                "box": {k: [float(lo), float(hi)]
                        for k, (lo, hi) in sorted(box.items())},
                "budget": budget,
                "evaluations": res.evaluations,
                "at_resolution": res.at_resolution,
                "modal": contains_modality(
                    unfold_dmodalities(sequent_formula(node.goal))),
            })
        elif node.rule in ("solve", "solved"):
            solves.append({
                "path": path_str(path),
                "rule": node.rule,
                "solutions": {k: str(v) for k, v in sorted(node.args.items())
                              if k not in _SOLVE_META},
                "probes": SOLVE_PROBES,
                "tolerance": SOLVE_TOL,
            })
        for i in range(len(node.children) - 1, -1, -1):
            stack.append((node.children[i], path + (i,)))
    return Proved(certificate={
        "result": "proved",
        "goal": root.goal.text(),
        "nodes": nodes,
        "oracle_assumptions": assumptions,
        "solve_validations": solves,
    })
