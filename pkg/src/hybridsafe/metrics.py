"""State distances and signed distance to formula-defined sets.

Signed distance is positive depth inside the set, negative distance
outside, with inf over the empty set taken as +infinity. Single linear
atoms are solved exactly (point to hyperplane); boolean combinations use
min/max composition with a structural check for the configurations where
that composition is exact, and everything else falls back to a projected
grid search refined by Nelder-Mead, tagged approximate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .semantics import (
    SampleConfig, State, StateSample, UnboundedQuantifier, _formula_vec,
)
from .syntax.nodes import (
    And, Cmp, Const, Div, Equiv, FalseF, Formula, Imply, Minus, Neg, Not,
    Or, Plus, Pow, Sqrt, Term, Times, TrueF, Var,
)
from .syntax.analysis import free_vars


class MismatchedDomains(ValueError):
    pass


class UnsupportedAtom(ValueError):
    pass


@dataclass(frozen=True)
class HSet:
    """Projection set of variables distances are measured over."""

    vars: FrozenSet[str]

    def __init__(self, vars: Iterable[str]):
        object.__setattr__(self, "vars", frozenset(vars))

    def __iter__(self):
        return iter(sorted(self.vars))

    def __contains__(self, v):
        return v in self.vars

    def __len__(self):
        return len(self.vars)


def dist(s1: State, s2: State) -> float:
    if set(s1.keys()) != set(s2.keys()):
        raise MismatchedDomains(
            f"states bind different variables: "
            f"{sorted(set(s1.keys()) ^ set(s2.keys()))}")
    return math.sqrt(sum((s1[v] - s2[v]) ** 2 for v in s1.keys()))


def h_dist(s1: State, s2: State, H: HSet) -> float:
    shared = set(s1.keys()) & set(s2.keys())
    missing = set(H.vars) - shared
    if missing:
        raise MismatchedDomains(
            f"projection variables not bound in both states: {sorted(missing)}")
    return math.sqrt(sum((s1[v] - s2[v]) ** 2 for v in H.vars))


@dataclass
class SignedDist:
    value: float  # may be +-inf
    exact: bool
    boundary: bool

    def to_json(self) -> dict:
        if math.isinf(self.value):
            v = "Infinity" if self.value > 0 else "-Infinity"
        else:
            v = float(self.value)
        return {"value": v, "exact": self.exact, "boundary": self.boundary}


# ---------------------------------------------------------------------------
# Polynomial extraction (for the exact linear path)
# ---------------------------------------------------------------------------

# monomial: tuple of (var, power) sorted by var; () is the constant monomial
_Poly = Dict[Tuple[Tuple[str, int], ...], float]


def _poly_const(c: float) -> _Poly:
    return {(): c} if c != 0 else {}


def _poly_add(a: _Poly, b: _Poly) -> _Poly:
    out = dict(a)
    for m, c in b.items():
        out[m] = out.get(m, 0.0) + c
        if out[m] == 0.0:
            del out[m]
    return out


def _poly_scale(a: _Poly, k: float) -> _Poly:
    if k == 0:
        return {}
    return {m: c * k for m, c in a.items()}


def _mono_mul(m1, m2):
    d: Dict[str, int] = {}
    for v, p in itertools.chain(m1, m2):
        d[v] = d.get(v, 0) + p
    return tuple(sorted(d.items()))


def _poly_mul(a: _Poly, b: _Poly) -> _Poly:
    out: _Poly = {}
    for m1, c1 in a.items():
        for m2, c2 in b.items():
            m = _mono_mul(m1, m2)
            out[m] = out.get(m, 0.0) + c1 * c2
            if out[m] == 0.0:
                del out[m]
    return out


def term_poly(t: Term) -> _Poly:
    """Term as a polynomial over its variables.

    Raises UnsupportedAtom for non-polynomial structure (sqrt over
    variables, division by a non-constant)."""
    if isinstance(t, Var):
        return {((t.name, 1),): 1.0}
    if isinstance(t, Const):
        return _poly_const(float(t.value))
    if isinstance(t, Plus):
        return _poly_add(term_poly(t.left), term_poly(t.right))
    if isinstance(t, Minus):
        return _poly_add(term_poly(t.left), _poly_scale(term_poly(t.right), -1.0))
    if isinstance(t, Times):
        return _poly_mul(term_poly(t.left), term_poly(t.right))
    if isinstance(t, Neg):
        return _poly_scale(term_poly(t.operand), -1.0)
    if isinstance(t, Div):
        denom = term_poly(t.right)
        if any(m != () for m in denom):
            raise UnsupportedAtom("division by a non-constant term")
        d = denom.get((), 0.0)
        if d == 0.0:
            raise UnsupportedAtom("division by zero constant")
        return _poly_scale(term_poly(t.left), 1.0 / d)
    if isinstance(t, Pow):
        base = term_poly(t.base)
        out = _poly_const(1.0)
        for _ in range(t.exponent):
            out = _poly_mul(out, base)
        return out
    if isinstance(t, Sqrt):
        inner = term_poly(t.operand)
        if any(m != () for m in inner):
            raise UnsupportedAtom("sqrt over a variable term")
        c = inner.get((), 0.0)
        if c < 0:
            raise UnsupportedAtom("sqrt of a negative constant")
        return _poly_const(math.sqrt(c))
    raise TypeError(f"not a term: {t!r}")


def _poly_h_degree(p: _Poly, H: FrozenSet[str]) -> int:
    deg = 0
    for m in p:
        deg = max(deg, sum(pw for v, pw in m if v in H))
    return deg


# ---------------------------------------------------------------------------
# Negation normal form with sign-flipped comparison ops
# ---------------------------------------------------------------------------

_NEG_OP = {"<=": ">", "<": ">=", ">=": "<", ">": "<=", "=": "!=", "!=": "="}


def _nnf(f: Formula, neg: bool) -> Formula:
    if isinstance(f, TrueF):
        return FalseF() if neg else f
    if isinstance(f, FalseF):
        return TrueF() if neg else f
    if isinstance(f, Cmp):
        return Cmp(_NEG_OP[f.op], f.left, f.right) if neg else f
    if isinstance(f, Not):
        return _nnf(f.operand, not neg)
    if isinstance(f, And):
        l, r = _nnf(f.left, neg), _nnf(f.right, neg)
        return Or(l, r) if neg else And(l, r)
    if isinstance(f, Or):
        l, r = _nnf(f.left, neg), _nnf(f.right, neg)
        return And(l, r) if neg else Or(l, r)
    if isinstance(f, Imply):
        return _nnf(Or(Not(f.left), f.right), neg)
    if isinstance(f, Equiv):
        return _nnf(And(Imply(f.left, f.right), Imply(f.right, f.left)), neg)
    raise UnsupportedAtom(
        f"signed distance needs a quantifier- and modality-free formula, "
        f"got {type(f).__name__}")


class _NonLinear(Exception):
    pass


def _sd_linear_vec(f: Formula, env: Dict[str, np.ndarray], n: int,
                   H: FrozenSet[str]) -> Tuple[np.ndarray, np.ndarray]:
    """Signed distance per state via exact atom distances and min/max
    composition. Returns (values, exact mask). Raises _NonLinear if any
    atom is nonlinear in H (the caller then uses the grid path)."""
    if isinstance(f, TrueF):
        return np.full(n, np.inf), np.ones(n, dtype=bool)
    if isinstance(f, FalseF):
        return np.full(n, -np.inf), np.ones(n, dtype=bool)
    if isinstance(f, Cmp):
        p = _poly_add(term_poly(f.left), _poly_scale(term_poly(f.right), -1.0))
        hdeg = _poly_h_degree(p, H)
        if hdeg > 1:
            raise _NonLinear
        # split p = sum_x a_x(other vars) * x + b(other vars), x in H
        coeff_vecs = {}
        const_vec = np.zeros(n)
        for m, c in p.items():
            hpart = [(v, pw) for v, pw in m if v in H]
            rest = tuple((v, pw) for v, pw in m if v not in H)
            restval = np.full(n, c)
            for v, pw in rest:
                base = env.get(v)
                if base is None:
                    base = np.zeros(n)
                restval = restval * base ** pw
            if hpart:
                x = hpart[0][0]
                coeff_vecs[x] = coeff_vecs.get(x, np.zeros(n)) + restval
            else:
                const_vec = const_vec + restval
        # p(s) OP 0 with OP from f.op; value/||a|| is the signed distance
        pval = const_vec.copy()
        for x, a in coeff_vecs.items():
            xv = env.get(x)
            if xv is None:
                xv = np.zeros(n)
            pval = pval + a * xv
        norm = np.sqrt(sum(a * a for a in coeff_vecs.values())) \
            if coeff_vecs else np.zeros(n)
        degenerate = norm == 0.0  # no H dependence (possibly per-state)
        safe = np.where(degenerate, 1.0, norm)
        op = f.op
        if op in ("<=", "<"):
            v = -pval / safe
            sat = pval <= 0 if op == "<=" else pval < 0
        elif op in (">=", ">"):
            v = pval / safe
            sat = pval >= 0 if op == ">=" else pval > 0
        elif op == "=":
            v = -np.abs(pval) / safe
            sat = pval == 0
        elif op == "!=":
            v = np.abs(pval) / safe
            sat = pval != 0
        else:  # pragma: no cover
            raise UnsupportedAtom(f"comparison op {op!r}")
        v = np.where(degenerate, np.where(sat, np.inf, -np.inf), v)
        return v, np.ones(n, dtype=bool)
    if isinstance(f, And):
        vl, el = _sd_linear_vec(f.left, env, n, H)
        vr, er = _sd_linear_vec(f.right, env, n, H)
        v = np.minimum(vl, vr)
        both_in = (vl > 0) & (vr > 0)
        only_l = (vl <= 0) & (vr == np.inf)
        only_r = (vr <= 0) & (vl == np.inf)
        exact = el & er & (both_in | only_l | only_r)
        return v, exact
    if isinstance(f, Or):
        vl, el = _sd_linear_vec(f.left, env, n, H)
        vr, er = _sd_linear_vec(f.right, env, n, H)
        v = np.maximum(vl, vr)
        both_out = (vl <= 0) & (vr <= 0)
        only_l = (vl > 0) & (vr == -np.inf)
        only_r = (vr > 0) & (vl == -np.inf)
        exact = el & er & (both_out | only_l | only_r)
        return v, exact
    raise UnsupportedAtom(f"unexpected connective {type(f).__name__} after NNF")


# ---------------------------------------------------------------------------
# Grid + local-refinement fallback
# ---------------------------------------------------------------------------

def _sd_grid(s: State, f: Formula, H: HSet, cfg: SampleConfig) -> SignedDist:
    dims = sorted(set(free_vars(f)) & set(H.vars))
    if not dims:
        sat = _truth(s, f)
        return SignedDist(math.inf if sat else -math.inf, True, False)
    for d in dims:
        if d not in cfg.quant_box:
            raise UnboundedQuantifier(
                f"grid signed distance needs a quant_box entry for {d!r}")
    sat0 = _truth(s, f)
    axes = [np.linspace(float(cfg.quant_box[d][0]), float(cfg.quant_box[d][1]),
                        cfg.quant_grid) for d in dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    m = pts.shape[0]
    env = {v: np.full(m, s[v]) for v in set(s.keys()) | set(free_vars(f))}
    for j, d in enumerate(dims):
        env[d] = pts[:, j]
    sat = _formula_vec(f, env, m)
    target = ~sat if sat0 else sat
    here = np.array([s[d] for d in dims])
    if not np.any(target):
        return SignedDist(math.inf if sat0 else -math.inf, False, False)
    dists = np.sqrt(((pts[target] - here) ** 2).sum(axis=1))
    best = float(dists.min())
    x0 = pts[target][int(dists.argmin())]

    def objective(x):
        q = s
        for j, d in enumerate(dims):
            q = q.bind(d, float(x[j]))
        wrong = _truth(q, f) == sat0  # still on the starting side
        base = math.sqrt(float(((x - here) ** 2).sum()))
        return base + (1e6 if wrong else 0.0)

    try:
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 400})
        if res.fun < best:
            best = float(res.fun)
    except Exception:
        pass
    value = best if sat0 else -best
    return SignedDist(value, False, abs(value) < 1e-9)


def _truth(s: State, f: Formula) -> bool:
    env = {v: np.array([s[v]]) for v in set(s.keys()) | set(free_vars(f))}
    return bool(_formula_vec(f, env, 1)[0])


# ---------------------------------------------------------------------------
# Public signed distance
# ---------------------------------------------------------------------------

def signed_dist(s: State, f: Formula, H: HSet, cfg: SampleConfig) -> SignedDist:
    """Signed distance from s to the set defined by f, measured over the
    variables in H. Positive means depth inside, negative means distance
    to the set, zero is flagged as boundary."""
    if len(H) == 0:
        raise MismatchedDomains("signed distance needs a nonempty H")
    g = _nnf(f, False)
    env = {v: np.array([s[v]]) for v in set(s.keys()) | set(free_vars(f))}
    try:
        vals, exact = _sd_linear_vec(g, env, 1, H.vars)
    except _NonLinear:
        return _sd_grid(s, g, H, cfg)
    v = float(vals[0])
    if bool(exact[0]):
        return SignedDist(v, True, v == 0.0)
    approx = _sd_grid(s, g, H, cfg)
    # min/max composition bounds the true value from above when outside
    if math.isfinite(approx.value) and math.isfinite(v):
        value = min(v, approx.value) if v <= 0 else approx.value
        return SignedDist(value, False, abs(value) < 1e-9)
    return approx


def inf_signed_dist(sample: StateSample, f: Formula, H: HSet,
                    cfg: SampleConfig) -> SignedDist:
    """Minimum signed distance over the sample; +inf on an empty sample."""
    if len(sample) == 0:
        return SignedDist(math.inf, True, False)
    g = _nnf(f, False)
    n = len(sample)
    env = {v: sample.column(v) for v in sample.varnames}
    for v in free_vars(g):
        if v not in env:
            env[v] = np.zeros(n)
    try:
        vals, exact = _sd_linear_vec(g, env, n, H.vars)
    except _NonLinear:
        vals = None
    if vals is not None:
        i = int(np.argmin(vals))
        if bool(exact.all()):
            v = float(vals[i])
            return SignedDist(v, True, v == 0.0)
        # composed values are exact for inside states whose flag is set and
        # upper bounds for outside states whose flag is not; only the
        # latter can undercut the composed minimum, so refine just those
        best = float(vals[i])
        best_exact = bool(exact[i])
        for j in np.nonzero(~exact & (vals <= 0))[0]:
            r = _sd_grid(sample.state(int(j)), g, H, cfg)
            v_j = min(r.value, float(vals[j]))
            if v_j < best:
                best = v_j
                best_exact = False
        return SignedDist(best, best_exact, abs(best) < 1e-9)
    best: Optional[SignedDist] = None
    for i in range(n):
        r = _sd_grid(sample.state(i), g, H, cfg)
        if best is None or r.value < best.value:
            best = r
    assert best is not None
    return best


# ---------------------------------------------------------------------------
# Sample-to-sample nearest distances (used by the safety analyses)
# ---------------------------------------------------------------------------

def nearest_dists(from_pts: np.ndarray, to_pts: np.ndarray) -> np.ndarray:
    """For each row of from_pts, Euclidean distance to the nearest row of
    to_pts. Empty to_pts gives +inf everywhere."""
    from_pts = np.atleast_2d(from_pts)
    if to_pts.size == 0:
        return np.full(from_pts.shape[0], np.inf)
    to_pts = np.atleast_2d(to_pts)
    tree = cKDTree(to_pts)
    d, _ = tree.query(from_pts)
    return np.asarray(d, dtype=float).reshape(-1)
