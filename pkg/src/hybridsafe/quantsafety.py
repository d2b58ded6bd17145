"""Forward/backward quantitative safety and attack robustness.

Forward safety is the least signed distance from a reachable state to the
postcondition set: how much slack the system keeps while running.
Backward safety is the least signed distance from a precondition state to
the set of initial states all of whose runs stay safe: how far the initial
conditions sit from trouble. Robustness is the attacked-to-genuine ratio
of either quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attack import AttackSpec, apply_attack
from .metrics import HSet, inf_signed_dist, nearest_dists, _nnf, _sd_linear_vec, _NonLinear, _sd_grid
from .semantics import (
    SampleConfig, State, StateSample, classify_initials, pre_sample, reach,
)
from .syntax.analysis import free_vars
from .syntax.nodes import Formula, Program

_BOUNDARY_BAND = 0.02


class NotSafe(ValueError):
    pass


class NotForwardSafe(NotSafe):
    pass


class NotBackwardSafe(NotSafe):
    pass


@dataclass
class SafetyReport:
    value: float
    direction: str  # "Forward" | "Backward"
    exact: bool
    boundary: bool
    witness: Optional[State]
    caveat: str

    def to_json(self, cfg: Optional[SampleConfig] = None) -> dict:
        key = "iota" if self.direction == "Forward" else "rho"
        out = {
            "direction": self.direction,
            key: _json_real(self.value),
            "exact": self.exact,
            "boundary": self.boundary,
            "witness": dict(self.witness.to_dict()) if self.witness else None,
            "caveat": self.caveat,
        }
        if cfg is not None:
            out["config_echo"] = cfg.echo()
        return out


@dataclass
class RobustnessReport:
    delta: float
    genuine: SafetyReport
    attacked: SafetyReport
    classification: str  # "Unaffected" | "Degraded" | "Broken"

    def to_json(self, cfg: Optional[SampleConfig] = None) -> dict:
        out = {
            "direction": self.genuine.direction,
            "delta": _json_real(self.delta),
            "classification": self.classification,
            "genuine": self.genuine.to_json(),
            "attacked": self.attacked.to_json(),
        }
        if cfg is not None:
            out["config_echo"] = cfg.echo()
        return out


def _json_real(v: float):
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return float(v)


def _caveat(cfg: SampleConfig) -> str:
    return (f"at-resolution estimate: n_init={cfg.n_init}, "
            f"n_branch={cfg.n_branch}, loop_unroll={cfg.loop_unroll}; "
            f"runs beyond the unroll bound are not represented")


def forward_safety(p: Program, pre: Formula, post: Formula,
                   cfg: SampleConfig,
                   H_override: Optional[HSet] = None) -> SafetyReport:
    """Least signed distance from reach(p, pre) to the post set, measured
    over H (default: the variables of post)."""
    H = H_override if H_override is not None else HSet(free_vars(post))
    sample = reach(p, pre, cfg)
    sd, idx = _inf_signed_dist_argmin(sample, post, H, cfg)
    witness = sample.state(idx) if idx is not None else None
    return SafetyReport(
        value=sd.value, direction="Forward", exact=sd.exact,
        boundary=abs(sd.value) < _BOUNDARY_BAND if math.isfinite(sd.value) else False,
        witness=witness, caveat=_caveat(cfg))


def _inf_signed_dist_argmin(sample: StateSample, f: Formula, H: HSet,
                            cfg: SampleConfig):
    """inf_signed_dist plus the index of the minimizing state."""
    if len(sample) == 0:
        return inf_signed_dist(sample, f, H, cfg), None
    g = _nnf(f, False)
    n = len(sample)
    env = {v: sample.column(v) for v in sample.varnames}
    for v in free_vars(g):
        if v not in env:
            env[v] = np.zeros(n)
    try:
        vals, exact = _sd_linear_vec(g, env, n, H.vars)
    except _NonLinear:
        best = None
        best_i = 0
        for i in range(n):
            r = _sd_grid(sample.state(i), g, H, cfg)
            if best is None or r.value < best.value:
                best, best_i = r, i
        return best, best_i
    i = int(np.argmin(vals))
    sd = inf_signed_dist(sample, f, H, cfg)
    if not math.isfinite(sd.value):
        return sd, None if sd.value > 0 else i
    # recover the argmin index for the (possibly refined) minimum
    j = int(np.argmin(np.where(exact, vals, np.minimum(vals, sd.value))))
    return sd, j


def backward_safety(p: Program, pre: Formula, post: Formula,
                    cfg: SampleConfig,
                    H_override: Optional[HSet] = None) -> SafetyReport:
    """Least signed distance from a pre-state to the set of initial states
    whose runs all satisfy post, measured over H (default: the variables
    of pre).

    Both that set and its complement are represented by samples over
    init_box: initial states with no violating sampled run vs. those with
    at least one. Distances are nearest-neighbor distances to those
    samples."""
    H = H_override if H_override is not None else HSet(free_vars(pre))
    pres = pre_sample(p, pre, cfg)
    pre_init = {v: pres.column(v) for v in pres.varnames}
    pre_cls = classify_initials(p, post, cfg, initials=pre_init)
    box_cls = classify_initials(p, post, cfg)

    Hvars = sorted(H.vars)
    pre_pts = pres.project(Hvars)
    bad_pts = box_cls.bad_sample.project(Hvars) \
        if len(box_cls.bad_sample) else np.zeros((0, len(Hvars)))
    hold_pts = box_cls.holding_sample.project(Hvars) \
        if len(box_cls.holding_sample) else np.zeros((0, len(Hvars)))

    inside = ~pre_cls.violates
    values = np.empty(len(pres))
    values[inside] = nearest_dists(pre_pts[inside], bad_pts)
    values[~inside] = -nearest_dists(pre_pts[~inside], hold_pts)

    if len(pres) == 0:
        return SafetyReport(math.inf, "Backward", False, False, None,
                            _caveat(cfg))
    i = int(np.argmin(values))
    value = float(values[i])
    witness = pres.state(i) if math.isfinite(value) else None
    return SafetyReport(
        value=value, direction="Backward", exact=False,
        boundary=abs(value) < _BOUNDARY_BAND if math.isfinite(value) else False,
        witness=witness, caveat=_caveat(cfg))


def _classify(delta: float) -> str:
    if delta >= 1.0:
        return "Unaffected"
    if delta > 0.0:
        return "Degraded"
    return "Broken"


def _robustness(genuine: SafetyReport, attacked: SafetyReport,
                err_cls) -> RobustnessReport:
    if not (genuine.value > 0.0):
        raise err_cls(
            f"genuine safety is {genuine.value:g}; robustness needs a "
            f"positive baseline")
    if math.isinf(genuine.value):
        delta = 1.0 if math.isinf(attacked.value) else 0.0
    else:
        delta = attacked.value / genuine.value
    return RobustnessReport(delta=delta, genuine=genuine, attacked=attacked,
                            classification=_classify(delta))


def forward_robustness(p: Program, pre: Formula, post: Formula,
                       a: AttackSpec, cfg: SampleConfig,
                       H_override: Optional[HSet] = None) -> RobustnessReport:
    """delta = attacked iota / genuine iota. Raises NotForwardSafe when the
    genuine system is not forward safe to a positive degree."""
    genuine = forward_safety(p, pre, post, cfg, H_override)
    attacked = forward_safety(apply_attack(p, a), pre, post, cfg, H_override)
    return _robustness(genuine, attacked, NotForwardSafe)


def backward_robustness(p: Program, pre: Formula, post: Formula,
                        a: AttackSpec, cfg: SampleConfig,
                        H_override: Optional[HSet] = None) -> RobustnessReport:
    """delta = attacked rho / genuine rho."""
    genuine = backward_safety(p, pre, post, cfg, H_override)
    attacked = backward_safety(apply_attack(p, a), pre, post, cfg, H_override)
    return _robustness(genuine, attacked, NotBackwardSafe)
