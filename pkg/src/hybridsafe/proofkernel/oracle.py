"""Numeric falsification oracle for proof leaves.

Leaves that no structural rule closes are handed to ``arith_oracle``,
which searches a bounding box for a state falsifying the goal. A
returned counterexample is definite (the goal really is false there, up
to the sampling semantics of any modal subformulas); absence of a
counterexample is only evidence, and is recorded as an explicit
assumption in the proof certificate rather than as a proved fact.
"""

from __future__ import annotations

import hashlib
import subprocess
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..semantics import (
    EvaluationError, SampleConfig, State, Tri, UnboundedQuantifier,
    eval_formula, eval_formula_batch,
)
from ..syntax.analysis import free_vars
from ..syntax.nodes import (
    And, Box, Cmp, Const, Diamond, Div, Equiv, Exists, FalseF, Forall,
    Formula, Imply, Minus, Neg, Not, Or, Plus, Pow, Sqrt, Term, Times,
    TrueF, Var,
)
from .sequent import Sequent, fmt_formula, sequent_formula, unfold_dmodalities

_CHUNK = 256


class UnboundedVariable(ValueError):
    """A search or quantified variable has no bounding-box entry."""


@dataclass(frozen=True)
class Counterexample:
    """A state over the search variables at which the goal is false."""

    state: State

    def as_dict(self) -> Dict[str, float]:
        return {k: float(self.state[k]) for k in sorted(self.state.keys())}


@dataclass(frozen=True)
class NoCounterexampleFound:
    """The search exhausted its budget without falsifying the goal.

    ``at_resolution`` is True when any evaluation leaned on a grid or a
    bounded unrolling (inner quantifiers, loops, ODE horizons), i.e. the
    verdict is resolution-limited rather than exact arithmetic.
    """

    evaluations: int
    at_resolution: bool


@dataclass
class OracleConfig:
    box: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    budget: int = 4096
    seed: int = 0
    sample: SampleConfig = field(default_factory=SampleConfig)


def _strip_foralls(f: Formula) -> Tuple[List[str], Formula]:
    names: List[str] = []
    while isinstance(f, Forall):
        names.append(f.var)
        f = f.body
    # an inner rebinding shadows the outer one; search the name once
    return list(dict.fromkeys(names)), f


def contains_modality(f: Formula) -> bool:
    if isinstance(f, (Box, Diamond)):
        return True
    if isinstance(f, Not):
        return contains_modality(f.operand)
    if isinstance(f, (Forall, Exists)):
        return contains_modality(f.body)
    if isinstance(f, (And, Or, Imply, Equiv)):
        return contains_modality(f.left) or contains_modality(f.right)
    return False


def _candidate_matrix(names: List[str], box, budget: int, seed: int,
                      digest: int) -> np.ndarray:
    k = len(names)
    lo = np.array([float(box[v][0]) for v in names])
    hi = np.array([float(box[v][1]) for v in names])
    half = max(1, budget // 2)
    g = int(half ** (1.0 / k))
    while (g + 1) ** k <= half:
        g += 1
    grid_n = g ** k if g >= 2 else 0
    cols = []
    if grid_n:
        axes = [np.linspace(lo[i], hi[i], g) for i in range(k)]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([m.reshape(-1) for m in mesh], axis=1)
        cols.append(grid)
    n_rand = max(0, budget - grid_n)
    if n_rand:
        rng = np.random.default_rng(np.random.SeedSequence([seed, digest]))
        rand = lo + (hi - lo) * rng.random((n_rand, k))
        cols.append(rand)
    return np.concatenate(cols, axis=0) if cols else np.zeros((0, k))


def arith_oracle(goal: Formula, box: Dict[str, Tuple[float, float]],
                 budget: int = 4096, *, seed: int = 0,
                 sample: Optional[SampleConfig] = None):
    """Search ``box`` for a falsifying state of ``goal``.

    Leading universal quantifiers are stripped into search variables, so
    a closed forall-goal can still produce a concrete witness. Returns
    either a Counterexample or a NoCounterexampleFound summary.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    sample = sample if sample is not None else SampleConfig()
    f = unfold_dmodalities(goal)
    stripped, body = _strip_foralls(f)
    search = sorted(set(stripped) | set(free_vars(body)))
    missing = [v for v in search if v not in box]
    if missing:
        raise UnboundedVariable(
            "no bounding box for variable(s): " + ", ".join(missing))
    cfg = replace(sample, quant_box={**{k: tuple(v) for k, v in box.items()},
                                     **sample.quant_box})

    if not search:
        try:
            vals, taint = eval_formula_batch(body, {}, 1, cfg)
        except UnboundedQuantifier as e:
            raise UnboundedVariable(str(e)) from e
        if not bool(vals[0]):
            return Counterexample(State({}))
        return NoCounterexampleFound(evaluations=1, at_resolution=taint)

    digest = int.from_bytes(
        hashlib.sha256(fmt_formula(goal).encode()).digest()[:8], "big")
    cand = _candidate_matrix(search, box, budget, seed, digest)
    tainted = False
    errors = 0
    evaluated = 0
    for start in range(0, cand.shape[0], _CHUNK):
        chunk = cand[start:start + _CHUNK]
        n = chunk.shape[0]
        env = {v: np.ascontiguousarray(chunk[:, i])
               for i, v in enumerate(search)}
        try:
            vals, taint = eval_formula_batch(body, env, n, cfg)
        except UnboundedQuantifier as e:
            raise UnboundedVariable(str(e)) from e
        except EvaluationError:
            # fall back to one state at a time, skipping states the
            # bounded executor cannot handle (ODE blow-up etc.)
            for i in range(n):
                s = State({v: float(chunk[i, j])
                           for j, v in enumerate(search)})
                try:
                    r = eval_formula(s, body, cfg)
                except UnboundedQuantifier as e:
                    raise UnboundedVariable(str(e)) from e
                except EvaluationError:
                    errors += 1
                    continue
                evaluated += 1
                tainted = True  # mixed-path run; be conservative
                if r is Tri.FALSE:
                    return Counterexample(s)
            continue
        evaluated += n
        tainted = tainted or taint
        bad = np.nonzero(~vals)[0]
        if bad.size:
            i = int(bad[0])
            return Counterexample(State({v: float(chunk[i, j])
                                         for j, v in enumerate(search)}))
    return NoCounterexampleFound(evaluations=evaluated,
                                 at_resolution=tainted or errors > 0)


def falsify_sequent(seq: Sequent, cfg: OracleConfig):
    """Falsify the formula reading of a sequent (/\\ante -> \\/succ)."""
    return arith_oracle(sequent_formula(seq), cfg.box, cfg.budget,
                        seed=cfg.seed, sample=cfg.sample)


# ---------------------------------------------------------------------------
# SMT-LIB export (optional external cross-check)
# ---------------------------------------------------------------------------

def _smt_term(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Const):
        num, den = t.value.numerator, t.value.denominator
        core = str(abs(num)) if den == 1 else f"(/ {abs(num)} {den})"
        return f"(- {core})" if num < 0 else core
    if isinstance(t, Plus):
        return f"(+ {_smt_term(t.left)} {_smt_term(t.right)})"
    if isinstance(t, Minus):
        return f"(- {_smt_term(t.left)} {_smt_term(t.right)})"
    if isinstance(t, Times):
        return f"(* {_smt_term(t.left)} {_smt_term(t.right)})"
    if isinstance(t, Div):
        return f"(/ {_smt_term(t.left)} {_smt_term(t.right)})"
    if isinstance(t, Neg):
        return f"(- {_smt_term(t.operand)})"
    if isinstance(t, Pow):
        n = t.exponent
        if n < 0:
            raise ValueError("smtlib export: only nonnegative exponents")
        if n == 0:
            return "1"
        b = _smt_term(t.base)
        return b if n == 1 else "(* " + " ".join([b] * n) + ")"
    if isinstance(t, Sqrt):
        raise ValueError("smtlib export does not support sqrt")
    raise TypeError(f"not a term: {t!r}")


_SMT_CMP = {"<": "<", "<=": "<=", ">": ">", ">=": ">=", "=": "="}


def _smt_formula(f: Formula) -> str:
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Cmp):
        a, b = _smt_term(f.left), _smt_term(f.right)
        if f.op == "!=":
            return f"(not (= {a} {b}))"
        return f"({_SMT_CMP[f.op]} {a} {b})"
    if isinstance(f, Not):
        return f"(not {_smt_formula(f.operand)})"
    if isinstance(f, And):
        return f"(and {_smt_formula(f.left)} {_smt_formula(f.right)})"
    if isinstance(f, Or):
        return f"(or {_smt_formula(f.left)} {_smt_formula(f.right)})"
    if isinstance(f, Imply):
        return f"(=> {_smt_formula(f.left)} {_smt_formula(f.right)})"
    if isinstance(f, Equiv):
        return f"(= {_smt_formula(f.left)} {_smt_formula(f.right)})"
    if isinstance(f, Forall):
        return f"(forall (({f.var} Real)) {_smt_formula(f.body)})"
    if isinstance(f, Exists):
        return f"(exists (({f.var} Real)) {_smt_formula(f.body)})"
    raise ValueError(
        "smtlib export covers first-order arithmetic only; eliminate "
        "modalities first")


def emit_smtlib(goal: Formula) -> str:
    """Render the negation of a first-order goal as an SMT-LIB script.

    ``sat`` from a solver then means the goal has a counterexample,
    ``unsat`` means it is valid over the reals.
    """
    f = unfold_dmodalities(goal)
    fv = sorted(free_vars(f))
    lines = ["(set-logic ALL)"]
    lines += [f"(declare-const {v} Real)" for v in fv]
    lines.append(f"(assert (not {_smt_formula(f)}))")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


def external_check(goal: Formula, solver_cmd: List[str],
                   timeout: float = 30.0) -> str:
    """Pipe ``emit_smtlib(goal)`` into an SMT solver; return its verdict
    ('sat', 'unsat', or 'unknown')."""
    script = emit_smtlib(goal)
    proc = subprocess.run(solver_cmd, input=script.encode(),
                          capture_output=True, timeout=timeout)
    out = proc.stdout.decode().strip().splitlines()
    for line in out:
        if line.strip() in ("sat", "unsat", "unknown"):
            return line.strip()
    raise RuntimeError(
        f"solver produced no verdict (stdout={out!r}, "
        f"stderr={proc.stderr.decode()!r})")
