"""Simulation distances between a program and its sensor-attacked version.

Forward simulation distance d: every state reachable by the attacked
program from the precondition has a genuine reachable state within
H-distance d. Backward: every initial state from which the attacked
program can go unsafe has a genuine such state within d. Checking is by
falsification over the sampled sets: "holds" is at sampling resolution,
counterexamples come with replayable traces. The dL encodings of both
distances (quantifier-based over caller-supplied strongest-postcondition
or bad-initial formulas, and the self-contained modality form) are emitted
as formula ASTs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .attack import AttackSpec, apply_attack
from .metrics import HSet, nearest_dists
from .quantsafety import NotSafe, SafetyReport
from .semantics import SampleConfig, State, classify_initials, reach
from .syntax.analysis import base_vars, free_vars
from .syntax.nodes import (
    And, Box, Cmp, Const, Diamond, Exists, Formula, Imply, Minus, Not, Pow,
    Program, Sqrt, Var, Plus,
)


class FreshVariableCollision(ValueError):
    pass


@dataclass
class SimDistQuery:
    program: Program
    attack: AttackSpec
    anchor: Formula  # precondition (forward) or postcondition (backward)
    H: HSet
    d: float
    direction: str  # "Forward" | "Backward"

    def __post_init__(self):
        if not (math.isfinite(self.d) and self.d >= 0.0):
            raise ValueError("simulation distance d must be finite and >= 0")
        if len(self.H) == 0:
            raise ValueError("H must be nonempty")
        if self.direction not in ("Forward", "Backward"):
            raise ValueError(f"bad direction {self.direction!r}")


@dataclass
class SimDistVerdict:
    holds_at_resolution: bool
    counterexample: Optional[Tuple[State, float]]
    margin: float
    counterexample_trace: Optional[dict] = None

    def to_json(self) -> dict:
        out = {
            "holds": self.holds_at_resolution,
            "margin": float(self.margin) if math.isfinite(self.margin)
            else "Infinity",
        }
        if self.counterexample is not None:
            s, md = self.counterexample
            out["counterexample"] = {
                "state": s.to_dict(),
                "min_distance": float(md) if math.isfinite(md) else "Infinity",
            }
            if self.counterexample_trace is not None:
                out["counterexample"]["trace"] = self.counterexample_trace
        return out


_TOL = 1e-6


def check_forward_simdist(q: SimDistQuery, cfg: SampleConfig) -> SimDistVerdict:
    """Max over attacked-reachable states of the distance to the nearest
    genuine reachable state, compared against d."""
    assert q.direction == "Forward"
    attacked = apply_attack(q.program, q.attack)
    sample_a = reach(attacked, q.anchor, cfg)
    sample_g = reach(q.program, q.anchor, cfg)
    Hvars = sorted(q.H.vars)
    if len(sample_a) == 0:
        return SimDistVerdict(True, None, 0.0)
    pts_a = sample_a.project(Hvars)
    pts_g = sample_g.project(Hvars) if len(sample_g) else np.zeros((0, len(Hvars)))
    mins = nearest_dists(pts_a, pts_g)
    i = int(np.argmax(mins))
    margin = float(mins[i])
    if margin <= q.d + _TOL:
        return SimDistVerdict(True, None, margin)
    return SimDistVerdict(False, (sample_a.state(i), margin), margin,
                          counterexample_trace=sample_a.trace(i))


def check_backward_simdist(q: SimDistQuery, cfg: SampleConfig) -> SimDistVerdict:
    """Max over attacked bad-initial states of the distance to the nearest
    genuine bad-initial state, compared against d."""
    assert q.direction == "Backward"
    attacked = apply_attack(q.program, q.attack)
    cls_a = classify_initials(attacked, q.anchor, cfg)
    cls_g = classify_initials(q.program, q.anchor, cfg)
    Hvars = sorted(q.H.vars)
    cols = [cls_a.varnames.index(v) for v in Hvars]
    idx_a = np.nonzero(cls_a.violates)[0]
    if idx_a.size == 0:
        return SimDistVerdict(True, None, 0.0)
    pts_a = cls_a.initials[idx_a][:, cols]
    gsample = cls_g.bad_sample
    pts_g = gsample.project(Hvars) if len(gsample) else np.zeros((0, len(Hvars)))
    mins = nearest_dists(pts_a, pts_g)
    j = int(np.argmax(mins))
    margin = float(mins[j])
    orig = int(idx_a[j])
    if margin <= q.d + _TOL:
        return SimDistVerdict(True, None, margin)
    state = State(dict(zip(cls_a.varnames, cls_a.initials[orig])))
    return SimDistVerdict(False, (state, margin), margin,
                          counterexample_trace=cls_a.witness(orig))


# ---------------------------------------------------------------------------
# dL encodings
# ---------------------------------------------------------------------------

_FRESH_RE = re.compile(r"__f\d+$")


def fresh_vars(names: Sequence[str], avoid: set) -> Dict[str, str]:
    """name -> name__f<k> with k minimal per name, avoiding `avoid` and
    each other."""
    out: Dict[str, str] = {}
    taken = set(avoid)
    for name in names:
        k = 0
        while f"{name}__f{k}" in taken:
            k += 1
            if k > 1000:
                raise FreshVariableCollision(
                    f"no fresh variable available for {name!r}")
        out[name] = f"{name}__f{k}"
        taken.add(out[name])
    return out


def _conj(fs: List[Formula]) -> Formula:
    out = fs[0]
    for f in fs[1:]:
        out = And(out, f)
    return out


def _exists_chain(names: Sequence[str], body: Formula) -> Formula:
    for name in reversed(list(names)):
        body = Exists(name, body)
    return body


def _dist_le(pairs: List[Tuple[str, str]], d: float) -> Formula:
    sq = None
    for a, b in pairs:
        term = Pow(Minus(Var(a), Var(b)), 2)
        sq = term if sq is None else Plus(sq, term)
    return Cmp("<=", Sqrt(sq), Const(repr(float(d))))


@dataclass
class EncodedSimDist:
    """Both encodings of one simulation-distance assertion.

    modality: self-contained formula quantifying over program runs.
    sp_based: quantifier encoding over caller-supplied set formulas
    (strongest postconditions for forward, bad-initial sets for backward);
    None when those formulas were not supplied."""

    modality: Formula
    sp_based: Optional[Formula]


def encode_forward_simdist(q: SimDistQuery,
                           sp_attacked: Optional[Formula] = None,
                           sp_genuine: Optional[Formula] = None) -> EncodedSimDist:
    """Forward distance as dL formulas.

    Modality form: (pre ∧ <Pa>(ȳ = x̄)) → ∃x̄.(pre ∧ <P>(d_H(ȳ,x̄) ≤ d)).
    SP form: (ψa ∧ ȳ = x̄) → ∃x̄.(ψ ∧ d_H(ȳ,x̄) ≤ d) for supplied ψa, ψ."""
    assert q.direction == "Forward"
    attacked = apply_attack(q.program, q.attack)
    model_vars = sorted(base_vars(q.program) | free_vars(q.anchor))
    avoid = set(model_vars) | set(base_vars(attacked))
    if sp_attacked is not None:
        avoid |= set(free_vars(sp_attacked))
    if sp_genuine is not None:
        avoid |= set(free_vars(sp_genuine))
    fresh = fresh_vars(model_vars, avoid)
    Hvars = sorted(q.H.vars)
    pairs = [(fresh[v], v) for v in Hvars]
    copies_eq = _conj([Cmp("=", Var(fresh[v]), Var(v)) for v in model_vars])
    modality = Imply(
        And(q.anchor, Diamond(attacked, copies_eq)),
        _exists_chain(model_vars,
                      And(q.anchor, Diamond(q.program, _dist_le(pairs, q.d)))))
    sp_based = None
    if sp_attacked is not None and sp_genuine is not None:
        sp_vars = sorted(set(free_vars(sp_attacked)) | set(free_vars(sp_genuine))
                         | q.H.vars)
        freshs = fresh_vars(sp_vars, avoid)
        ps = [(freshs[v], v) for v in sorted(q.H.vars)]
        sp_based = Imply(
            And(sp_attacked,
                _conj([Cmp("=", Var(freshs[v]), Var(v)) for v in sp_vars])),
            _exists_chain(sp_vars, And(sp_genuine, _dist_le(ps, q.d))))
    return EncodedSimDist(modality=modality, sp_based=sp_based)


def encode_backward_simdist(q: SimDistQuery,
                            bad_attacked: Optional[Formula] = None,
                            bad_genuine: Optional[Formula] = None) -> EncodedSimDist:
    """Backward distance as dL formulas.

    Modality form: (ȳ = x̄ ∧ <Pa>¬post) → ∃x̄.(d_H(x̄,ȳ) ≤ d ∧ <P>¬post).
    Set form over supplied bad-initial formulas Ba, B:
    (Ba ∧ ȳ = x̄) → ∃x̄.(B ∧ d_H(x̄,ȳ) ≤ d)."""
    assert q.direction == "Backward"
    attacked = apply_attack(q.program, q.attack)
    model_vars = sorted(base_vars(q.program) | free_vars(q.anchor))
    avoid = set(model_vars) | set(base_vars(attacked))
    if bad_attacked is not None:
        avoid |= set(free_vars(bad_attacked))
    if bad_genuine is not None:
        avoid |= set(free_vars(bad_genuine))
    fresh = fresh_vars(model_vars, avoid)
    Hvars = sorted(q.H.vars)
    pairs = [(v, fresh[v]) for v in Hvars]
    copies_eq = _conj([Cmp("=", Var(fresh[v]), Var(v)) for v in model_vars])
    modality = Imply(
        And(copies_eq, Diamond(attacked, Not(q.anchor))),
        _exists_chain(model_vars,
                      And(_dist_le(pairs, q.d), Diamond(q.program, Not(q.anchor)))))
    sp_based = None
    if bad_attacked is not None and bad_genuine is not None:
        sp_vars = sorted(set(free_vars(bad_attacked)) | set(free_vars(bad_genuine))
                         | q.H.vars)
        freshs = fresh_vars(sp_vars, avoid)
        ps = [(v, freshs[v]) for v in sorted(q.H.vars)]
        sp_based = Imply(
            And(bad_attacked,
                _conj([Cmp("=", Var(freshs[v]), Var(v)) for v in sp_vars])),
            _exists_chain(sp_vars, And(bad_genuine, _dist_le(ps, q.d))))
    return EncodedSimDist(modality=modality, sp_based=sp_based)


def robustness_lower_bound(safety: SafetyReport, d: float) -> float:
    """(value - d)/value: how much safety an attack within simulation
    distance d can cost, at worst."""
    if not (safety.value > 0.0):
        raise NotSafe(
            f"lower bound needs a positive safety degree, got {safety.value:g}")
    if not (math.isfinite(d) and d >= 0.0):
        raise ValueError("d must be finite and >= 0")
    if math.isinf(safety.value):
        return 1.0
    return (safety.value - d) / safety.value
