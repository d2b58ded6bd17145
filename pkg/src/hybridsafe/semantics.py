"""Sampling semantics for hybrid programs.

Scalar term/formula evaluation, an exhaustive relational ``step`` for small
programs, and a vectorized row engine behind ``reach``/``bad_initials``:
each of n_init rows follows one randomly resolved execution path, with
loop-boundary states collected for loops in tail position (matching the
reflexive-transitive closure of the loop at the sampled resolution).

Determinism: every nondeterminism site in the program tree draws from its
own generator seeded by (cfg.seed, site path, visit counter). Corresponding
sites of a program and its attacked counterpart share paths, so paired runs
stay aligned; a run of a sensor-attacked program is the union of a
"faithful" pass (every attacked read resolves to the true physical value)
and a "mixture" pass, which makes attacked samples supersets of genuine
ones row for row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .syntax.analysis import base_vars, free_vars
from .syntax.nodes import (
    And, Assign, AssignAny, Box, Choice, Cmp, Const, Diamond, Equiv, Exists,
    FalseF, Forall, Formula, Imply, Loop, Minus, Neg, Not, ODE, Or, Plus,
    Pow, Program, Seq, SP, Sqrt, Term, Test, Times, TrueF, Var, Div,
)

_ODE_STEP_CAP = 10_000


class EvaluationError(ValueError):
    pass


class DivisionByZero(EvaluationError):
    pass


class NegativeSqrt(EvaluationError):
    pass


class NonFiniteResult(EvaluationError):
    pass


class UnboundedQuantifier(EvaluationError):
    pass


class EmptyPrecondition(EvaluationError):
    pass


class ReplayError(EvaluationError):
    pass


# ---------------------------------------------------------------------------
# States and configuration
# ---------------------------------------------------------------------------

class State(Mapping):
    """Total map from variable names to binary64; absent names read as 0.0.

    All stored values must be finite. Equality and hashing ignore variables
    bound to exactly 0, matching the total-map semantics.
    """

    __slots__ = ("_b",)

    def __init__(self, bindings=()):
        b = {}
        for k, v in dict(bindings).items():
            v = float(v)
            if not math.isfinite(v):
                raise EvaluationError(f"non-finite value for {k!r}: {v}")
            b[k] = v
        self._b = b

    def __getitem__(self, name: str) -> float:
        return self._b.get(name, 0.0)

    def __iter__(self):
        return iter(self._b)

    def __len__(self):
        return len(self._b)

    def __contains__(self, name):
        return name in self._b

    def bind(self, name: str, value: float) -> "State":
        s = State.__new__(State)
        v = float(value)
        if not math.isfinite(v):
            raise EvaluationError(f"non-finite value for {name!r}: {v}")
        s._b = {**self._b, name: v}
        return s

    def _sig(self):
        return frozenset((k, v) for k, v in self._b.items() if v != 0.0)

    def __eq__(self, other):
        if not isinstance(other, (State, Mapping)):
            return NotImplemented
        if not isinstance(other, State):
            other = State(other)
        return self._sig() == other._sig()

    def __hash__(self):
        return hash(self._sig())

    def __repr__(self):
        inner = ", ".join(f"{k}={v:g}" for k, v in sorted(self._b.items()))
        return f"State({inner})"

    def to_dict(self) -> Dict[str, float]:
        return dict(self._b)


@dataclass
class SampleConfig:
    """Finite-approximation parameters for the sampling semantics."""

    init_box: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    n_init: int = 2000
    n_branch: int = 8
    ode_step: float = 0.01
    loop_unroll: int = 30
    seed: int = 0
    quant_box: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    quant_grid: int = 41
    # horizon (seconds) for bounded modal evaluation of ODEs whose domain
    # never closes (e.g. domain `true`); set-construction (reach) still
    # errors on such ODEs
    ode_time_horizon: float = 4.0

    def __post_init__(self):
        if self.n_init < 1 or self.n_branch < 1 or self.quant_grid < 1:
            raise ValueError("n_init, n_branch, quant_grid must be >= 1")
        if self.ode_step <= 0:
            raise ValueError("ode_step must be positive")
        if self.loop_unroll < 0:
            raise ValueError("loop_unroll must be nonnegative")
        for box in (self.init_box, self.quant_box):
            for k, (lo, hi) in box.items():
                if not (lo <= hi):
                    raise ValueError(f"box for {k!r} has lo > hi")

    def echo(self) -> dict:
        return {
            "init_box": {k: [float(lo), float(hi)]
                         for k, (lo, hi) in sorted(self.init_box.items())},
            "n_init": self.n_init,
            "n_branch": self.n_branch,
            "ode_step": float(self.ode_step),
            "loop_unroll": self.loop_unroll,
            "seed": self.seed,
            "quant_box": {k: [float(lo), float(hi)]
                          for k, (lo, hi) in sorted(self.quant_box.items())},
            "quant_grid": self.quant_grid,
            "ode_time_horizon": float(self.ode_time_horizon),
        }


class Tri(Enum):
    TRUE = "True"
    FALSE = "False"
    UNKNOWN = "Unknown"


@dataclass
class EvalOutcome:
    value: Tri
    at_resolution: bool  # True when grid/bounded approximation contributed


# ---------------------------------------------------------------------------
# Scalar term evaluation
# ---------------------------------------------------------------------------

def eval_term(s: State, t: Term) -> float:
    v = _eval_term(s, t)
    if not math.isfinite(v):
        raise NonFiniteResult(f"term evaluated to {v}")
    return v


def _eval_term(s: State, t: Term) -> float:
    if isinstance(t, Var):
        return s[t.name]
    if isinstance(t, Const):
        return float(t.value)
    if isinstance(t, Plus):
        return _eval_term(s, t.left) + _eval_term(s, t.right)
    if isinstance(t, Minus):
        return _eval_term(s, t.left) - _eval_term(s, t.right)
    if isinstance(t, Times):
        return _eval_term(s, t.left) * _eval_term(s, t.right)
    if isinstance(t, Div):
        denom = _eval_term(s, t.right)
        if denom == 0.0:
            raise DivisionByZero(f"division by zero in term evaluation")
        return _eval_term(s, t.left) / denom
    if isinstance(t, Neg):
        return -_eval_term(s, t.operand)
    if isinstance(t, Pow):
        try:
            return _eval_term(s, t.base) ** t.exponent
        except OverflowError:
            raise NonFiniteResult("overflow in power")
    if isinstance(t, Sqrt):
        v = _eval_term(s, t.operand)
        if v < 0.0:
            raise NegativeSqrt(f"sqrt of negative value {v}")
        return math.sqrt(v)
    raise TypeError(f"not a term: {t!r}")


# ---------------------------------------------------------------------------
# Vectorized term / quantifier-free formula evaluation
# ---------------------------------------------------------------------------

def _term_vec(t: Term, env: Dict[str, np.ndarray], n: int,
              active: Optional[np.ndarray] = None) -> np.ndarray:
    if isinstance(t, Var):
        arr = env.get(t.name)
        return arr if arr is not None else np.zeros(n)
    if isinstance(t, Const):
        return np.full(n, float(t.value))
    if isinstance(t, Plus):
        return _term_vec(t.left, env, n, active) + _term_vec(t.right, env, n, active)
    if isinstance(t, Minus):
        return _term_vec(t.left, env, n, active) - _term_vec(t.right, env, n, active)
    if isinstance(t, Times):
        return _term_vec(t.left, env, n, active) * _term_vec(t.right, env, n, active)
    if isinstance(t, Div):
        lo = _term_vec(t.left, env, n, active)
        hi = _term_vec(t.right, env, n, active)
        zero = hi == 0.0
        if active is not None:
            zero = zero & active
        if np.any(zero):
            raise DivisionByZero("division by zero in vectorized evaluation")
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(hi == 0.0, 0.0, lo / np.where(hi == 0.0, 1.0, hi))
    if isinstance(t, Neg):
        return -_term_vec(t.operand, env, n, active)
    if isinstance(t, Pow):
        return _term_vec(t.base, env, n, active) ** t.exponent
    if isinstance(t, Sqrt):
        v = _term_vec(t.operand, env, n, active)
        neg = v < 0.0
        if active is not None:
            neg = neg & active
        if np.any(neg):
            raise NegativeSqrt("sqrt of negative value in vectorized evaluation")
        return np.sqrt(np.maximum(v, 0.0))
    raise TypeError(f"not a term: {t!r}")


_CMP_FUNCS = {
    "=": np.equal, "<=": np.less_equal, "<": np.less,
    ">=": np.greater_equal, ">": np.greater,
}


def _formula_vec(f: Formula, env: Dict[str, np.ndarray], n: int,
                 active: Optional[np.ndarray] = None) -> np.ndarray:
    """Quantifier- and modality-free formulas only."""
    if isinstance(f, TrueF):
        return np.ones(n, dtype=bool)
    if isinstance(f, FalseF):
        return np.zeros(n, dtype=bool)
    if isinstance(f, Cmp):
        return _CMP_FUNCS[f.op](_term_vec(f.left, env, n, active),
                                _term_vec(f.right, env, n, active))
    if isinstance(f, Not):
        return ~_formula_vec(f.operand, env, n, active)
    if isinstance(f, And):
        return _formula_vec(f.left, env, n, active) & _formula_vec(f.right, env, n, active)
    if isinstance(f, Or):
        return _formula_vec(f.left, env, n, active) | _formula_vec(f.right, env, n, active)
    if isinstance(f, Imply):
        return ~_formula_vec(f.left, env, n, active) | _formula_vec(f.right, env, n, active)
    if isinstance(f, Equiv):
        return _formula_vec(f.left, env, n, active) == _formula_vec(f.right, env, n, active)
    raise EvaluationError(
        f"formula not quantifier-free: {type(f).__name__} in vectorized context")


def is_quantifier_free(f: Formula) -> bool:
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return True
    if isinstance(f, Not):
        return is_quantifier_free(f.operand)
    if isinstance(f, (And, Or, Imply, Equiv)):
        return is_quantifier_free(f.left) and is_quantifier_free(f.right)
    return False


# ---------------------------------------------------------------------------
# Deterministic per-site random streams
# ---------------------------------------------------------------------------

_K_INIT, _K_CHOICE, _K_DRAW_SEL, _K_DRAW_VAL, _K_ODE_SEL, _K_ODE_IDX, _K_EXIT = range(7)


class StreamBank:
    """One fresh generator per (site path, kind, visit index).

    Matching sites of two structurally aligned programs (e.g. a model and
    its attacked version) get identical streams, which keeps paired runs
    comparable row for row.
    """

    def __init__(self, seed: int, tag: int = 0):
        s = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._entropy = (s & 0xFFFFFFFF, s >> 32)
        self._tag = tag
        self._counts: Dict[tuple, int] = {}

    def gen(self, path: Tuple[int, ...], kind: int) -> np.random.Generator:
        key = (kind, path)
        c = self._counts.get(key, 0)
        self._counts[key] = c + 1
        ss = np.random.SeedSequence(
            [*self._entropy, self._tag, kind, c, len(path), *path])
        return np.random.Generator(np.random.PCG64(ss))

    def uniform(self, path, kind, n: int) -> np.ndarray:
        return self.gen(path, kind).random(n)

    def integers(self, path, kind, n: int, high: int) -> np.ndarray:
        # high inclusive
        return self.gen(path, kind).integers(0, high + 1, size=n)


# ---------------------------------------------------------------------------
# Action logs (for trace extraction and replay)
# ---------------------------------------------------------------------------

class _DrawLog:
    __slots__ = ("var", "values")

    def __init__(self, var, values):
        self.var = var
        self.values = values


class _ChoiceLog:
    __slots__ = ("branch", "left", "right")

    def __init__(self, branch, left, right):
        self.branch = branch
        self.left = left
        self.right = right


class _OdeLog:
    __slots__ = ("steps",)

    def __init__(self, steps):
        self.steps = steps


class _LoopLog:
    __slots__ = ("exit", "iters")

    def __init__(self, exit_arr, iters):
        self.exit = exit_arr  # None for the tail loop
        self.iters = iters


# ---------------------------------------------------------------------------
# The row engine
# ---------------------------------------------------------------------------

def _interval_test_parts(p: Program):
    """Destructure Seq(AssignAny(x), ?(x >= L & x <= H) ...) if present.

    Returns (x, L, H, test_node, rest) or None. ``rest`` is the remainder of
    the sequence after the test (or None)."""
    if not (isinstance(p, Seq) and isinstance(p.first, AssignAny)):
        return None
    x = p.first.var
    second = p.second
    rest = None
    if isinstance(second, Seq) and isinstance(second.first, Test):
        test_node = second.first
        rest = second.second
    elif isinstance(second, Test):
        test_node = second
    else:
        return None
    cond = test_node.cond
    if not isinstance(cond, And):
        return None
    a, b = cond.left, cond.right
    lo_cmp = hi_cmp = None
    for c in (a, b):
        if isinstance(c, Cmp) and isinstance(c.left, Var) and c.left.name == x:
            if c.op == ">=":
                lo_cmp = c
            elif c.op == "<=":
                hi_cmp = c
    if lo_cmp is None or hi_cmp is None:
        return None
    return x, lo_cmp.right, hi_cmp.right, test_node, rest


def contains_interval_pattern(p: Program) -> bool:
    if _interval_test_parts(p):
        return True
    if isinstance(p, Seq):
        return contains_interval_pattern(p.first) or contains_interval_pattern(p.second)
    if isinstance(p, Choice):
        return contains_interval_pattern(p.left) or contains_interval_pattern(p.right)
    if isinstance(p, Loop):
        return contains_interval_pattern(p.body)
    return False


def _midpoint_term(lo: Term, hi: Term) -> Optional[Term]:
    # the attack transformation emits q_p - o and q_p + o; recover q_p so
    # the faithful pass reproduces the genuine value bitwise
    if (isinstance(lo, Minus) and isinstance(hi, Plus)
            and lo.left == hi.left and lo.right == hi.right):
        return lo.left
    return None


class _Snapshot:
    __slots__ = ("k", "env", "active")

    def __init__(self, k, env, active):
        self.k = k
        self.env = env
        self.active = active


class _Engine:
    def __init__(self, cfg: SampleConfig, bank: StreamBank, n: int,
                 faithful: bool = False, strict_domain: bool = True):
        self.cfg = cfg
        self.bank = bank
        self.n = n
        self.faithful = faithful
        self.strict_domain = strict_domain
        self.snapshots: List[_Snapshot] = []
        self.logs: List[object] = []

    # masked update helper
    def _set(self, env, active, var, values):
        old = env.get(var)
        if old is None:
            old = np.zeros(self.n)
        return {**env, var: np.where(active, values, old)}

    def run(self, p: Program, env: Dict[str, np.ndarray],
            active: np.ndarray):
        env, active = self._exec(p, (), env, active, True, self.logs)
        self.snapshots.append(_Snapshot(None, env, active))
        return env, active

    def _exec(self, p, path, env, active, tail, logs):
        n = self.n
        cfg = self.cfg

        if isinstance(p, Assign):
            vals = _term_vec(p.term, env, n, active)
            self._check_finite(vals, active)
            return self._set(env, active, p.var, vals), active

        if isinstance(p, AssignAny):
            box = cfg.init_box.get(p.var)
            if box is None:
                raise EvaluationError(
                    f"nondeterministic assignment to {p.var!r} needs an "
                    f"init_box entry to sample from")
            lo = np.full(n, float(box[0]))
            hi = np.full(n, float(box[1]))
            vals = self._draw(path, lo, hi, None)
            logs.append(_DrawLog(p.var, vals))
            return self._set(env, active, p.var, vals), active

        if isinstance(p, Test):
            cond = _formula_vec(p.cond, env, n, active)
            return env, active & cond

        if isinstance(p, Seq):
            parts = _interval_test_parts(p)
            if parts is not None:
                x, lo_t, hi_t, test_node, rest = parts
                lo = _term_vec(lo_t, env, n, active)
                hi = _term_vec(hi_t, env, n, active)
                mid = _midpoint_term(lo_t, hi_t)
                mid_vals = _term_vec(mid, env, n, active) if mid is not None else None
                vals = self._draw(path, lo, hi, mid_vals)
                logs.append(_DrawLog(x, vals))
                env = self._set(env, active, x, vals)
                cond = _formula_vec(test_node.cond, env, n, active)
                active = active & cond
                if rest is None:
                    return env, active
                # the continuation sits where the un-attacked program's
                # Seq.second would: keep site paths aligned across the pair
                return self._exec(rest, path + (1,), env, active, tail, logs)
            env, active = self._exec(p.first, path + (0,), env, active, False, logs)
            return self._exec(p.second, path + (1,), env, active, tail, logs)

        if isinstance(p, Choice):
            logs_l: List[object] = []
            logs_r: List[object] = []
            env_l, act_l = self._exec(p.left, path + (0,), env, active, False, logs_l)
            env_r, act_r = self._exec(p.right, path + (1,), env, active, False, logs_r)
            u = self.bank.uniform(path, _K_CHOICE, n)
            pick_left = (act_l & ~act_r) | (act_l & act_r & (u < 0.5))
            merged = {}
            for v in set(env_l) | set(env_r):
                a = env_l.get(v)
                b = env_r.get(v)
                if a is None:
                    a = np.zeros(n)
                if b is None:
                    b = np.zeros(n)
                merged[v] = np.where(pick_left, a, b)
            new_active = pick_left | (act_r & ~act_l)
            logs.append(_ChoiceLog(np.where(pick_left, 0, 1), logs_l, logs_r))
            return merged, new_active

        if isinstance(p, ODE):
            return self._exec_ode(p, path, env, active, logs)

        if isinstance(p, Loop):
            if tail:
                self.snapshots.append(_Snapshot(0, dict(env), active))
                iters = []
                for k in range(1, cfg.loop_unroll + 1):
                    sub: List[object] = []
                    env, active = self._exec(p.body, path + (0,), env, active, False, sub)
                    iters.append(sub)
                    self.snapshots.append(_Snapshot(k, dict(env), active))
                logs.append(_LoopLog(None, iters))
                return env, active
            exit_arr = self.bank.integers(path, _K_EXIT, n, cfg.loop_unroll)
            alive = active
            iters = []
            for k in range(1, cfg.loop_unroll + 1):
                part = alive & (exit_arr >= k)
                if not np.any(part):
                    iters.append([])
                    continue
                sub: List[object] = []
                env, after = self._exec(p.body, path + (0,), env, part, False, sub)
                iters.append(sub)
                died = part & ~after
                alive = alive & ~died
            logs.append(_LoopLog(exit_arr, iters))
            return env, alive

        raise TypeError(f"not a program: {p!r}")

    def _draw(self, path, lo, hi, mid_vals):
        n = self.n
        if self.faithful:
            if mid_vals is not None:
                return mid_vals
            return (lo + hi) / 2.0
        w = 1.0 / (self.cfg.n_branch + 2)
        sel = self.bank.uniform(path, _K_DRAW_SEL, n)
        u = self.bank.uniform(path, _K_DRAW_VAL, n)
        vals = lo + u * (hi - lo)
        vals = np.where(sel < w, lo, vals)
        vals = np.where((sel >= w) & (sel < 2 * w), hi, vals)
        return vals

    def _check_finite(self, vals, active):
        bad = ~np.isfinite(vals) & active
        if np.any(bad):
            raise NonFiniteResult("non-finite value produced by assignment")

    def _exec_ode(self, p: ODE, path, env, active, logs):
        n = self.n
        cfg = self.cfg
        h = cfg.ode_step
        xs = [x for x, _ in p.eqs]
        rhss = [rhs for _, rhs in p.eqs]

        def deriv(ys: List[np.ndarray]) -> List[np.ndarray]:
            local = {**env, **{x: y for x, y in zip(xs, ys)}}
            return [_term_vec(r, local, n, active) for r in rhss]

        y = [env[x] if x in env else np.zeros(n) for x in xs]

        def dom_at(ys):
            local = {**env, **{x: v for x, v in zip(xs, ys)}}
            return _formula_vec(p.domain, local, n, active)

        dom0 = dom_at(y)
        # a zero-duration run still needs the domain to hold at entry
        active = active & dom0
        cont = active.copy()
        K = np.zeros(n, dtype=np.int64)
        traj = [y]
        max_steps = _ODE_STEP_CAP
        if not self.strict_domain:
            max_steps = min(max_steps, max(1, int(round(cfg.ode_time_horizon / h))))
        step_count = 0
        while np.any(cont):
            if step_count >= max_steps:
                if self.strict_domain:
                    raise EvaluationError(
                        f"evolution domain did not close within "
                        f"{_ODE_STEP_CAP} steps of size {h}")
                break
            k1 = deriv(y)
            y2 = [a + 0.5 * h * b for a, b in zip(y, k1)]
            k2 = deriv(y2)
            y3 = [a + 0.5 * h * b for a, b in zip(y, k2)]
            k3 = deriv(y3)
            y4 = [a + h * b for a, b in zip(y, k3)]
            k4 = deriv(y4)
            y_next = [a + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
                      for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]
            step_count += 1
            # freeze rows that already left the domain
            y = [np.where(cont, ynew, yold) for ynew, yold in zip(y_next, y)]
            d = dom_at(y)
            still = cont & d
            K = np.where(still, step_count, K)
            cont = still
            traj.append(y)

        idx = self._ode_duration_index(path, K)
        idx = np.minimum(idx, K)
        stacked = [np.stack([t[vi] for t in traj]) for vi in range(len(xs))]
        rows = np.arange(n)
        out_env = dict(env)
        for vi, x in enumerate(xs):
            chosen = stacked[vi][idx, rows]
            old = env.get(x)
            if old is None:
                old = np.zeros(n)
            out_env[x] = np.where(active, chosen, old)
        logs.append(_OdeLog(idx))
        return out_env, active

    def _ode_duration_index(self, path, K):
        n = self.n
        w = 1.0 / (self.cfg.n_branch + 2)
        sel = self.bank.uniform(path, _K_ODE_SEL, n)
        u = self.bank.uniform(path, _K_ODE_IDX, n)
        uniform_idx = np.floor(u * (K + 1)).astype(np.int64)
        uniform_idx = np.minimum(uniform_idx, K)
        idx = np.where(sel < w, 0, np.where(sel < 2 * w, K, uniform_idx))
        return idx


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------

class Provenance(Enum):
    Reachable = "Reachable"
    BadInitial = "BadInitial"
    PreSample = "PreSample"


class StateSample:
    """A finite, canonically ordered sample of states.

    Rows are unique; ordering is lexicographic in the (sorted) variable
    order, so serialization is byte-stable for a fixed seed. When produced
    by the engine, each state can be traced back to a replayable action log
    via ``trace(i)``.
    """

    def __init__(self, varnames: Sequence[str], array: np.ndarray,
                 provenance: Provenance, empty: Optional[bool] = None,
                 trace_refs=None, trace_ctx=None):
        self.varnames = tuple(varnames)
        self.array = array.reshape(-1, len(self.varnames))
        self.provenance = provenance
        self.empty = bool(self.array.shape[0] == 0) if empty is None else empty
        self._trace_refs = trace_refs
        self._trace_ctx = trace_ctx

    def __len__(self):
        return self.array.shape[0]

    @property
    def states(self) -> List[State]:
        return [State(dict(zip(self.varnames, row))) for row in self.array]

    def state(self, i: int) -> State:
        return State(dict(zip(self.varnames, self.array[i])))

    def column(self, var: str) -> np.ndarray:
        return self.array[:, self.varnames.index(var)]

    def project(self, H: Sequence[str]) -> np.ndarray:
        cols = [self.varnames.index(v) for v in H]
        return self.array[:, cols]

    def trace(self, i: int) -> Optional[dict]:
        if self._trace_refs is None or self._trace_ctx is None:
            return None
        ref = self._trace_refs[i]
        return self._trace_ctx.extract(ref)

    def to_json(self) -> dict:
        return {
            "provenance": self.provenance.value,
            "empty": self.empty,
            "states": [
                {v: float(x) for v, x in zip(self.varnames, row)}
                for row in self.array
            ],
        }


class _TraceContext:
    """Back-pointers from sample rows to engine logs."""

    def __init__(self, program: Program, cfg: SampleConfig):
        self.program = program
        self.cfg = cfg
        self.passes = []  # list of (logs, init_env)

    def add_pass(self, logs, init_env):
        self.passes.append((logs, init_env))

    def extract(self, ref) -> dict:
        pass_idx, row, upto = ref
        logs, init_env = self.passes[pass_idx]
        initial = {v: float(arr[row]) for v, arr in init_env.items()}
        actions: List[dict] = []
        it = iter(logs)
        _extract_actions(self.program, it, row, upto, actions, is_tail=True)
        return {"initial": initial, "actions": actions}


def _extract_actions(p: Program, logs_iter: Iterator, row: int,
                     upto: Optional[int], out: List[dict], is_tail: bool):
    if isinstance(p, (Assign, Test)):
        return
    if isinstance(p, AssignAny):
        log = next(logs_iter)
        out.append({"op": "draw", "var": log.var, "value": float(log.values[row])})
        return
    if isinstance(p, Seq):
        parts = _interval_test_parts(p)
        if parts is not None:
            x, _, _, _, rest = parts
            log = next(logs_iter)
            out.append({"op": "draw", "var": x, "value": float(log.values[row])})
            if rest is not None:
                _extract_actions(rest, logs_iter, row, upto, out, is_tail)
            return
        _extract_actions(p.first, logs_iter, row, None, out, False)
        _extract_actions(p.second, logs_iter, row, upto, out, is_tail)
        return
    if isinstance(p, Choice):
        log = next(logs_iter)
        b = int(log.branch[row])
        out.append({"op": "choice", "branch": b})
        side = p.left if b == 0 else p.right
        side_logs = log.left if b == 0 else log.right
        _extract_actions(side, iter(side_logs), row, None, out, False)
        return
    if isinstance(p, ODE):
        log = next(logs_iter)
        out.append({"op": "ode", "steps": int(log.steps[row])})
        return
    if isinstance(p, Loop):
        log = next(logs_iter)
        if log.exit is None:
            k = upto if (is_tail and upto is not None) else len(log.iters)
        else:
            k = int(log.exit[row])
        out.append({"op": "loop", "iterations": int(k)})
        for j in range(k):
            _extract_actions(p.body, iter(log.iters[j]), row, None, out, False)
        return
    raise TypeError(f"not a program: {p!r}")


# ---------------------------------------------------------------------------
# reach / bad_initials / wp_holds
# ---------------------------------------------------------------------------

def _collect_pins(pre: Formula) -> Dict[str, float]:
    """Top-level conjuncts of the form x = c pin x to c exactly."""
    pins: Dict[str, float] = {}

    def walk(f):
        if isinstance(f, And):
            walk(f.left)
            walk(f.right)
            return
        if isinstance(f, Cmp) and f.op == "=":
            for a, b in ((f.left, f.right), (f.right, f.left)):
                if isinstance(a, Var) and not free_vars(b):
                    pins[a.name] = eval_term(State(), b)
                    return

    walk(pre)
    return pins


def _model_varnames(p: Program, *formulas: Formula,
                    cfg: Optional[SampleConfig] = None) -> Tuple[str, ...]:
    vs = set(base_vars(p))
    for f in formulas:
        if f is not None:
            vs |= set(free_vars(f))
    if cfg is not None:
        vs |= set(cfg.init_box)
    return tuple(sorted(vs))


def _sample_initials(varnames, pre: Optional[Formula], cfg: SampleConfig,
                     bank: StreamBank, n: int) -> Dict[str, np.ndarray]:
    """Rejection-sample n initial states (uniform over init_box, variables
    pinned by equality conjuncts set exactly, others default 0)."""
    pins = _collect_pins(pre) if pre is not None else {}
    V = len(varnames)
    accepted: List[np.ndarray] = []
    got = 0
    drawn = 0
    batch = 0
    while got < n:
        u = bank.gen((), _K_INIT).random((n, V))
        cols = {}
        for j, v in enumerate(varnames):
            if v in pins:
                cols[v] = np.full(n, pins[v])
            elif v in cfg.init_box:
                lo, hi = cfg.init_box[v]
                cols[v] = lo + u[:, j] * (hi - lo)
            else:
                cols[v] = np.zeros(n)
        if pre is not None:
            ok = _formula_vec(pre, cols, n)
        else:
            ok = np.ones(n, dtype=bool)
        drawn += n
        got += int(ok.sum())
        accepted.append(np.stack([cols[v] for v in varnames], axis=1)[ok])
        batch += 1
        if got < n and drawn >= 50_000 and got / drawn < 0.001:
            raise EmptyPrecondition(
                f"precondition acceptance rate {got}/{drawn} is below the "
                f"0.1% floor; tighten init_box or the precondition")
        if batch > 5000:
            raise EmptyPrecondition(
                "could not sample the precondition after 5000 batches")
    mat = np.concatenate(accepted, axis=0)[:n]
    return {v: mat[:, j].copy() for j, v in enumerate(varnames)}


def _snapshots_to_sample(varnames, engines_snapshots, provenance,
                         trace_ctx=None) -> StateSample:
    """Stack snapshot states of one or more engine passes, dedupe, sort."""
    rows = []
    refs = []
    for pass_idx, snaps in enumerate(engines_snapshots):
        # the final (k=None) snapshot duplicates the last boundary snapshot
        # for tail-loop programs; dedupe below handles it
        for snap in snaps:
            act = snap.active
            if not np.any(act):
                continue
            mat = np.stack([snap.env.get(v, np.zeros(len(act)))[act]
                            for v in varnames], axis=1)
            rows.append(mat)
            idxs = np.nonzero(act)[0]
            for r in idxs:
                refs.append((pass_idx, int(r), snap.k))
    if not rows:
        return StateSample(varnames, np.zeros((0, len(varnames))), provenance,
                           empty=True)
    all_rows = np.concatenate(rows, axis=0)
    c = np.ascontiguousarray(all_rows)
    view = c.view([("", c.dtype)] * c.shape[1])
    _, first_idx = np.unique(view, return_index=True)
    first_idx.sort()
    uniq = c[first_idx]
    kept_refs = [refs[i] for i in first_idx]
    order = np.lexsort(uniq.T[::-1])
    final = uniq[order]
    final_refs = [kept_refs[i] for i in order]
    return StateSample(varnames, final, provenance,
                       trace_refs=final_refs, trace_ctx=trace_ctx)


def _run_passes(p: Program, init_env, cfg: SampleConfig, n: int,
                tag: int, strict_domain=True):
    """Run the engine once, or twice (faithful + mixture) for programs with
    sensor-attack interval patterns. Returns list of (engine, snapshots)."""
    modes = [False]
    if contains_interval_pattern(p):
        modes = [True, False]
    out = []
    for faithful in modes:
        bank = StreamBank(cfg.seed, tag)
        eng = _Engine(cfg, bank, n, faithful=faithful,
                      strict_domain=strict_domain)
        active = np.ones(n, dtype=bool)
        eng.run(p, dict(init_env), active)
        out.append(eng)
    return out


_TAG_REACH = 1
_TAG_BAD = 2
_TAG_MODAL = 3


def reach(p: Program, pre: Formula, cfg: SampleConfig) -> StateSample:
    """Finite approximation of the strongest postcondition: terminal states
    of sampled executions from pre-satisfying initials (loop-boundary states
    all emitted for top-level loops)."""
    varnames = _model_varnames(p, pre, cfg=cfg)
    bank = StreamBank(cfg.seed, _TAG_REACH)
    init_env = _sample_initials(varnames, pre, cfg, bank, cfg.n_init)
    engines = _run_passes(p, init_env, cfg, cfg.n_init, _TAG_REACH)
    ctx = _TraceContext(p, cfg)
    for eng in engines:
        ctx.add_pass(eng.logs, init_env)
    return _snapshots_to_sample(varnames, [e.snapshots for e in engines],
                                Provenance.Reachable, trace_ctx=ctx)


def pre_sample(p: Program, pre: Formula, cfg: SampleConfig) -> StateSample:
    """Sample of the precondition set itself (no execution)."""
    varnames = _model_varnames(p, pre, cfg=cfg)
    bank = StreamBank(cfg.seed, _TAG_REACH)
    init_env = _sample_initials(varnames, pre, cfg, bank, cfg.n_init)
    mat = np.stack([init_env[v] for v in varnames], axis=1)
    c = np.ascontiguousarray(mat)
    view = c.view([("", c.dtype)] * c.shape[1])
    _, first_idx = np.unique(view, return_index=True)
    first_idx.sort()
    uniq = c[first_idx]
    order = np.lexsort(uniq.T[::-1])
    return StateSample(varnames, uniq[order], Provenance.PreSample)


@dataclass
class InitialClassification:
    """Initial states split by whether some sampled run violates post."""

    varnames: Tuple[str, ...]
    initials: np.ndarray         # (n_init, V) the distinct sampled initials
    violates: np.ndarray         # bool (n_init,)
    bad_sample: StateSample      # initials with a violating run
    holding_sample: StateSample  # initials with no violating sampled run
    witness_refs: list           # per initial: trace ref or None
    trace_ctx: Optional[_TraceContext]

    def witness(self, i: int) -> Optional[dict]:
        ref = self.witness_refs[i]
        if ref is None or self.trace_ctx is None:
            return None
        return self.trace_ctx.extract(ref)


def classify_initials(p: Program, post: Formula, cfg: SampleConfig,
                      initials: Optional[Dict[str, np.ndarray]] = None,
                      pre: Optional[Formula] = None) -> InitialClassification:
    """Sample initial states over init_box (or take the given ones), run
    n_branch replicas of each, and split by reachability of ¬post."""
    varnames = _model_varnames(p, post, pre, cfg=cfg)
    bank = StreamBank(cfg.seed, _TAG_BAD)
    if initials is None:
        init_env = _sample_initials(varnames, pre, cfg, bank, cfg.n_init)
    else:
        n0 = len(next(iter(initials.values())))
        init_env = {v: np.asarray(initials.get(v, np.zeros(n0)), dtype=float)
                    for v in varnames}
    n0 = len(next(iter(init_env.values())))
    R = cfg.n_branch
    rep_env = {v: np.repeat(arr, R) for v, arr in init_env.items()}
    n = n0 * R
    engines = _run_passes(p, rep_env, cfg, n, _TAG_BAD)
    ctx = _TraceContext(p, cfg)
    for eng in engines:
        ctx.add_pass(eng.logs, rep_env)

    violates_row = np.zeros(n, dtype=bool)
    witness_row: List[Optional[tuple]] = [None] * n
    for pass_idx, eng in enumerate(engines):
        for snap in eng.snapshots:
            act = snap.active
            if not np.any(act):
                continue
            sat = _formula_vec(post, snap.env, n, act)
            bad = act & ~sat
            new = bad & ~violates_row
            violates_row = violates_row | bad
            for r in np.nonzero(new)[0]:
                witness_row[r] = (pass_idx, int(r), snap.k)

    violates = violates_row.reshape(n0, R).any(axis=1)
    witness_refs: List[Optional[tuple]] = []
    for i in range(n0):
        ref = None
        for j in range(R):
            if witness_row[i * R + j] is not None:
                ref = witness_row[i * R + j]
                break
        witness_refs.append(ref)

    init_mat = np.stack([init_env[v] for v in varnames], axis=1)

    def build(mask, prov):
        sel = init_mat[mask]
        if sel.shape[0] == 0:
            return StateSample(varnames, sel, prov, empty=True)
        c = np.ascontiguousarray(sel)
        view = c.view([("", c.dtype)] * c.shape[1])
        _, fi = np.unique(view, return_index=True)
        fi.sort()
        uniq = c[fi]
        order = np.lexsort(uniq.T[::-1])
        return StateSample(varnames, uniq[order], prov)

    return InitialClassification(
        varnames=varnames,
        initials=init_mat,
        violates=violates,
        bad_sample=build(violates, Provenance.BadInitial),
        holding_sample=build(~violates, Provenance.PreSample),
        witness_refs=witness_refs,
        trace_ctx=ctx,
    )


def bad_initials(p: Program, post: Formula, cfg: SampleConfig) -> StateSample:
    """Initial states (sampled over init_box) from which some sampled run
    ends in ¬post."""
    return classify_initials(p, post, cfg).bad_sample


@dataclass
class WpResult:
    holds: bool               # True-at-resolution when no violating run found
    witness: Optional[dict]   # replayable trace reaching ¬post


def wp_holds(s: State, p: Program, post: Formula, cfg: SampleConfig) -> WpResult:
    varnames = _model_varnames(p, post, cfg=cfg)
    initials = {v: np.array([s[v]]) for v in varnames}
    cls = classify_initials(p, post, cfg, initials=initials)
    if cls.violates[0]:
        return WpResult(holds=False, witness=cls.witness(0))
    return WpResult(holds=True, witness=None)


# ---------------------------------------------------------------------------
# Relational step (exhaustive, for small programs)
# ---------------------------------------------------------------------------

_STEP_FRONTIER_CAP = 4096


def step(s: State, p: Program, cfg: SampleConfig,
         rng: np.random.Generator) -> List[State]:
    """All sampled successors of s under p: n_branch samples per
    nondeterminism point, plus interval/duration endpoints. Exponential in
    program depth; meant for small programs and tests (reach uses the row
    engine instead)."""
    if isinstance(p, Assign):
        return [s.bind(p.var, eval_term(s, p.term))]
    if isinstance(p, AssignAny):
        box = cfg.init_box.get(p.var)
        if box is None:
            raise EvaluationError(
                f"nondeterministic assignment to {p.var!r} needs an init_box entry")
        lo, hi = float(box[0]), float(box[1])
        vals = [lo, hi] + [lo + u * (hi - lo) for u in rng.random(cfg.n_branch)]
        return [s.bind(p.var, v) for v in vals]
    if isinstance(p, Test):
        out = eval_formula_detailed(s, p.cond, cfg)
        return [s] if out.value is Tri.TRUE else []
    if isinstance(p, Seq):
        parts = _interval_test_parts(p)
        if parts is not None:
            x, lo_t, hi_t, test_node, rest = parts
            lo, hi = eval_term(s, lo_t), eval_term(s, hi_t)
            vals = [lo, hi] + [lo + u * (hi - lo) for u in rng.random(cfg.n_branch)]
            states = [s.bind(x, v) for v in vals]
            states = [q for q in states
                      if eval_formula_detailed(q, test_node.cond, cfg).value is Tri.TRUE]
            if rest is None:
                return states
            out = []
            for q in states:
                out.extend(step(q, rest, cfg, rng))
            return out
        out = []
        for q in step(s, p.first, cfg, rng):
            out.extend(step(q, p.second, cfg, rng))
        return out
    if isinstance(p, Choice):
        return step(s, p.left, cfg, rng) + step(s, p.right, cfg, rng)
    if isinstance(p, ODE):
        return _step_ode(s, p, cfg, rng)
    if isinstance(p, Loop):
        frontier = [s]
        emitted = [s]
        seen = {s}
        for _ in range(cfg.loop_unroll):
            nxt = []
            for q in frontier:
                nxt.extend(step(q, p.body, cfg, rng))
            fresh = []
            for q in nxt:
                if q not in seen:
                    seen.add(q)
                    fresh.append(q)
            if len(fresh) > _STEP_FRONTIER_CAP:
                keep = rng.choice(len(fresh), size=_STEP_FRONTIER_CAP,
                                  replace=False)
                fresh = [fresh[i] for i in sorted(keep)]
            emitted.extend(fresh)
            frontier = fresh
            if not frontier:
                break
        return emitted
    raise TypeError(f"not a program: {p!r}")


def _step_ode(s: State, p: ODE, cfg: SampleConfig,
              rng: np.random.Generator) -> List[State]:
    traj = integrate_ode(s, p, cfg)
    if not traj:
        return []
    K = len(traj) - 1
    idxs = {0, K}
    if K > 0:
        for u in rng.random(cfg.n_branch):
            idxs.add(int(math.floor(u * (K + 1))) if u < 1.0 else K)
    return [traj[i] for i in sorted(idxs)]


def integrate_ode(s: State, p: ODE, cfg: SampleConfig,
                  max_steps: Optional[int] = None,
                  require_close: bool = True) -> List[State]:
    """Scalar RK4 trajectory inside the evolution domain: states at
    t = 0, h, 2h, ... up to (and including) the last step where the domain
    still holds. Empty if the domain fails at entry."""
    h = cfg.ode_step
    xs = [x for x, _ in p.eqs]
    rhss = {x: r for x, r in p.eqs}
    if max_steps is None:
        max_steps = _ODE_STEP_CAP

    def dom(q: State) -> bool:
        return eval_formula_detailed(q, p.domain, cfg).value is Tri.TRUE

    if not dom(s):
        return []
    out = [s]
    cur = s
    for n in range(max_steps):
        def f(q: State) -> Dict[str, float]:
            return {x: eval_term(q, rhss[x]) for x in xs}

        def shift(q: State, k: Dict[str, float], scale: float) -> State:
            r = q
            for x in xs:
                r = r.bind(x, cur[x] + scale * k[x])
            return r

        k1 = f(cur)
        k2 = f(shift(cur, k1, h / 2))
        k3 = f(shift(cur, k2, h / 2))
        k4 = f(shift(cur, k3, h))
        nxt = cur
        for x in xs:
            nxt = nxt.bind(
                x, cur[x] + (h / 6.0) * (k1[x] + 2 * k2[x] + 2 * k3[x] + k4[x]))
        if not dom(nxt):
            return out
        out.append(nxt)
        cur = nxt
    if require_close:
        raise EvaluationError(
            f"evolution domain did not close within {max_steps} steps of size {h}")
    return out


# ---------------------------------------------------------------------------
# Formula evaluation (three-valued, bounded)
# ---------------------------------------------------------------------------

def eval_formula(s: State, f: Formula, cfg: SampleConfig) -> Tri:
    return eval_formula_detailed(s, f, cfg).value


def eval_formula_detailed(s: State, f: Formula, cfg: SampleConfig) -> EvalOutcome:
    """Comparisons and connectives exact; quantifiers over the quant_box
    lattice; modalities by bounded execution. True results that depended on
    a grid or bounded search carry at_resolution=True."""
    vs = sorted(set(free_vars(f)) | set(s.keys()))
    env = {v: np.array([s[v]]) for v in vs}
    vals, taint = _eval_batch(f, env, 1, cfg)
    return EvalOutcome(Tri.TRUE if bool(vals[0]) else Tri.FALSE, taint)


def eval_formula_batch(f: Formula, env: Dict[str, np.ndarray], n: int,
                       cfg: SampleConfig) -> Tuple[np.ndarray, bool]:
    """Vectorized bounded evaluation over n states (modal subformulas run
    through the row engine batch-wise). Returns (bool array, tainted)."""
    return _eval_batch(f, env, n, cfg)


def _eval_batch(f: Formula, env, n, cfg) -> Tuple[np.ndarray, bool]:
    if isinstance(f, TrueF):
        return np.ones(n, dtype=bool), False
    if isinstance(f, FalseF):
        return np.zeros(n, dtype=bool), False
    if isinstance(f, Cmp):
        return _formula_vec(f, env, n), False
    if isinstance(f, Not):
        v, t = _eval_batch(f.operand, env, n, cfg)
        return ~v, t
    if isinstance(f, And):
        a, ta = _eval_batch(f.left, env, n, cfg)
        b, tb = _eval_batch(f.right, env, n, cfg)
        return a & b, ta or tb
    if isinstance(f, Or):
        a, ta = _eval_batch(f.left, env, n, cfg)
        b, tb = _eval_batch(f.right, env, n, cfg)
        return a | b, ta or tb
    if isinstance(f, Imply):
        a, ta = _eval_batch(f.left, env, n, cfg)
        b, tb = _eval_batch(f.right, env, n, cfg)
        return ~a | b, ta or tb
    if isinstance(f, Equiv):
        a, ta = _eval_batch(f.left, env, n, cfg)
        b, tb = _eval_batch(f.right, env, n, cfg)
        return a == b, ta or tb
    if isinstance(f, (Forall, Exists)):
        box = cfg.quant_box.get(f.var)
        if box is None:
            raise UnboundedQuantifier(
                f"quantified variable {f.var!r} has no quant_box entry")
        g = cfg.quant_grid
        grid = np.linspace(float(box[0]), float(box[1]), g)
        env_x = {v: np.repeat(arr, g) for v, arr in env.items()}
        env_x[f.var] = np.tile(grid, n)
        vals, taint = _eval_batch(f.body, env_x, n * g, cfg)
        vals = vals.reshape(n, g)
        if isinstance(f, Forall):
            return vals.all(axis=1), True
        return vals.any(axis=1), True
    if isinstance(f, (Box, Diamond)):
        return _modal_batch(f, env, n, cfg)
    if isinstance(f, SP):
        raise EvaluationError(
            "sp(...) markers are not directly evaluable; use reach")
    raise TypeError(f"not a formula: {f!r}")


def _modal_batch(f, env, n, cfg) -> Tuple[np.ndarray, bool]:
    universal = isinstance(f, Box)
    prog = f.program
    body = f.body
    R = cfg.n_branch
    varnames = sorted(set(base_vars(prog)) | set(free_vars(body)) | set(env))
    rep = {v: np.repeat(env.get(v, np.zeros(n)), R) for v in varnames}
    m = n * R
    bank = StreamBank(cfg.seed, _TAG_MODAL)
    eng = _Engine(cfg, bank, m, strict_domain=False)
    active0 = np.ones(m, dtype=bool)
    eng.run(prog, dict(rep), active0)
    if universal:
        acc = np.ones(m, dtype=bool)
    else:
        acc = np.zeros(m, dtype=bool)
    taint = True  # bounded execution is inherently at-resolution
    for snap in eng.snapshots:
        act = snap.active
        if not np.any(act):
            continue
        vals, t = _eval_batch(body, snap.env, m, cfg)
        if universal:
            acc = acc & (vals | ~act)
        else:
            acc = acc | (vals & act)
    per_row = acc.reshape(n, R)
    if universal:
        return per_row.all(axis=1), taint
    return per_row.any(axis=1), taint


# ---------------------------------------------------------------------------
# Trace replay
# ---------------------------------------------------------------------------

def replay_trace(p: Program, trace: dict, cfg: SampleConfig) -> State:
    """Re-execute a recorded action log from its initial state with an
    independent scalar interpreter. Raises ReplayError if any recorded
    action is invalid (failed test, domain violation, malformed log)."""
    s = State(trace["initial"])
    actions = list(trace["actions"])
    it = iter(actions)
    s = _replay(p, s, it, cfg)
    try:
        extra = next(it)
    except StopIteration:
        return s
    raise ReplayError(f"unconsumed trace actions starting at {extra!r}")


def _take(it, op: str) -> dict:
    try:
        a = next(it)
    except StopIteration:
        raise ReplayError(f"trace ended while expecting a {op!r} action")
    if a.get("op") != op:
        raise ReplayError(f"expected {op!r} action, found {a!r}")
    return a


def _replay(p: Program, s: State, it, cfg: SampleConfig) -> State:
    if isinstance(p, Assign):
        return s.bind(p.var, eval_term(s, p.term))
    if isinstance(p, AssignAny):
        a = _take(it, "draw")
        if a.get("var") != p.var:
            raise ReplayError(f"draw for {a.get('var')!r}, expected {p.var!r}")
        return s.bind(p.var, float(a["value"]))
    if isinstance(p, Test):
        out = eval_formula_detailed(s, p.cond, cfg)
        if out.value is not Tri.TRUE:
            raise ReplayError("recorded run fails a test")
        return s
    if isinstance(p, Seq):
        s = _replay(p.first, s, it, cfg)
        return _replay(p.second, s, it, cfg)
    if isinstance(p, Choice):
        a = _take(it, "choice")
        b = int(a["branch"])
        if b not in (0, 1):
            raise ReplayError(f"bad branch index {b}")
        return _replay(p.left if b == 0 else p.right, s, it, cfg)
    if isinstance(p, ODE):
        a = _take(it, "ode")
        steps = int(a["steps"])
        traj = integrate_ode(s, p, cfg, max_steps=steps, require_close=False)
        if len(traj) <= steps:
            raise ReplayError(
                f"recorded ODE duration of {steps} steps leaves the domain")
        return traj[steps]
    if isinstance(p, Loop):
        a = _take(it, "loop")
        k = int(a["iterations"])
        if k < 0:
            raise ReplayError("negative loop iteration count")
        for _ in range(k):
            s = _replay(p.body, s, it, cfg)
        return s
    raise TypeError(f"not a program: {p!r}")
