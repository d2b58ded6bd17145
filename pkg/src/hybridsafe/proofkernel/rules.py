"""Rule schemata of the sequent calculus.

Three families share one dispatch table:

* equivalence axioms (assignment, test, choice, composition, iteration,
  duality, solving, the simulation-modality definition) act as rewrites:
  they replace one redex occurrence anywhere inside one formula of the
  goal, on either side of the turnstile, which is sound by congruence;
* structural rules (propositional rules, cut, weakening) and
  implication-style rules (loop induction, monotonicity, the simulation
  rules) consume a principal formula at the top level of one side and
  emit premise sequents;
* ``oracle`` closes a leaf and defers it to the numeric falsifier.

``apply_rule`` is deterministic: when a rule could attach to several
formulas it refuses and asks for ``on=`` (and ``occ=`` for several
redexes inside one formula) instead of guessing.
"""

from __future__ import annotations

import random
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from ..attack import AttackSpec, apply_attack
from ..semantics import EvaluationError, State, eval_term
from ..syntax.analysis import (
    RenamingError, RenamingMap, base_vars, bound_vars, free_vars, rename,
    term_vars,
)
from ..syntax.nodes import (
    And, Assign, AssignAny, Box, Choice, Cmp, Const, Diamond, Equiv, Exists,
    Forall, Formula, Imply, Loop, Not, ODE, Or, Program, Seq, SP, Term, Test,
    TrueF, Var,
)
from .sequent import (
    CaptureError, DModality, Sequent, d_free_vars, fmt_formula,
    subst_formula, unfold_dmodalities,
)


class RuleFailure(ValueError):
    """Base class for rule application failures."""


class RuleNotApplicable(RuleFailure):
    """The rule does not match the goal (or matches ambiguously)."""


class SideConditionViolated(RuleFailure):
    """The rule matches but a side condition fails; the message names it."""


Args = Mapping[str, object]
Handler = Callable[[Sequent, Dict[str, object]], List[Sequent]]

SOLVE_PROBES = 10
SOLVE_TOL = 1e-6
_SOLVE_H = 1e-4


# -- argument access --------------------------------------------------------

def _need_formula(args: Args, key: str, rule: str) -> Formula:
    v = args.get(key)
    if not isinstance(v, Formula):
        raise RuleNotApplicable(f"{rule} needs {key}=<formula>")
    return v


def _opt_formula(args: Args, key: str, rule: str) -> Optional[Formula]:
    v = args.get(key)
    if v is None:
        return None
    if not isinstance(v, Formula):
        raise RuleNotApplicable(f"{rule}: {key}= must be a formula")
    return v


def _opt_int(args: Args, key: str, rule: str) -> Optional[int]:
    v = args.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise RuleNotApplicable(f"{rule}: {key}= must be an integer")
    return v


# -- principal formula selection -------------------------------------------

def _principal(goal: Sequent, args: Args, rule: str, side: str,
               want: Callable[[Formula], bool], desc: str) -> Formula:
    members = getattr(goal, side)
    on = args.get("on")
    if on is not None:
        if not isinstance(on, Formula):
            raise RuleNotApplicable(f"{rule}: on= must be a formula")
        if on not in members or not want(on):
            raise RuleNotApplicable(
                f"{rule}: on= does not name a matching formula in the "
                + ("antecedent" if side == "ante" else "succedent"))
        return on
    cands = [f for f in members if want(f)]
    if not cands:
        raise RuleNotApplicable(
            f"{rule}: no {desc} in the "
            + ("antecedent" if side == "ante" else "succedent"))
    if len(cands) > 1:
        raise RuleNotApplicable(f"{rule}: several candidates; pass on=")
    return cands[0]


# -- rewrite machinery ------------------------------------------------------

def _children(f: Formula) -> Tuple[Formula, ...]:
    if isinstance(f, Not):
        return (f.operand,)
    if isinstance(f, (And, Or, Imply, Equiv)):
        return (f.left, f.right)
    if isinstance(f, (Forall, Exists, Box, Diamond, SP, DModality)):
        return (f.body,)
    return ()


def _with_children(f: Formula, new: List[Formula]) -> Formula:
    if isinstance(f, Not):
        return Not(new[0])
    if isinstance(f, (And, Or, Imply, Equiv)):
        return type(f)(new[0], new[1])
    if isinstance(f, (Forall, Exists)):
        return type(f)(f.var, new[0])
    if isinstance(f, (Box, Diamond, SP)):
        return type(f)(f.program, new[0])
    if isinstance(f, DModality):
        return DModality(f.program, f.attack, f.renaming, new[0])
    raise TypeError(f"not a composite formula: {f!r}")


def _count(f: Formula, match: Callable[[Formula], bool]) -> int:
    n = 1 if match(f) else 0
    for kid in _children(f):
        n += _count(kid, match)
    return n


def _replace_nth(f: Formula, match, build, target: int, counter: List[int]):
    if match(f):
        counter[0] += 1
        if counter[0] == target:
            return build(f)
    kids = _children(f)
    if not kids:
        return f
    new = [_replace_nth(k, match, build, target, counter) for k in kids]
    if all(a is b for a, b in zip(new, kids)):
        return f
    return _with_children(f, new)


def _rewrite(goal: Sequent, args: Dict[str, object], rule: str,
             match: Callable[[Formula], bool],
             build: Callable[[Formula], Formula]) -> List[Sequent]:
    on = args.get("on")
    occ = _opt_int(args, "occ", rule)
    side_arg = args.get("side")
    if side_arg not in (None, "ante", "succ"):
        raise RuleNotApplicable(f'{rule}: side= must be "ante" or "succ"')
    cands = []
    for side in ("ante", "succ"):
        if side_arg and side != side_arg:
            continue
        for f in getattr(goal, side):
            c = _count(f, match)
            if c:
                cands.append((side, f, c))
    if on is not None:
        if not isinstance(on, Formula):
            raise RuleNotApplicable(f"{rule}: on= must be a formula")
        cands = [t for t in cands if t[1] == on]
    if not cands:
        raise RuleNotApplicable(f"{rule}: no applicable occurrence")
    if len(cands) > 1:
        raise RuleNotApplicable(
            f"{rule}: several formulas contain a redex; pass on= "
            "(and side= if the formula appears on both sides)")
    side, f, c = cands[0]
    if occ is None:
        if c > 1:
            raise RuleNotApplicable(
                f"{rule}: {c} redexes inside the formula; pass occ=")
        occ = 1
    if not 1 <= occ <= c:
        raise RuleNotApplicable(f"{rule}: occ={occ} out of range 1..{c}")
    counter = [0]
    new_f = _replace_nth(f, match, build, occ, counter)
    members = set(getattr(goal, side))
    members.discard(f)
    members.add(new_f)
    return [goal.replace(**{side: members})]


def _rewrite_rule(rule: str, match, build) -> Handler:
    def handler(goal: Sequent, args: Dict[str, object]) -> List[Sequent]:
        return _rewrite(goal, args, rule,
                        lambda f: match(f, args), lambda f: build(f, args))
    return handler


# -- equivalence rewrites ---------------------------------------------------

def _subst_or_fail(rule: str, f: Formula, sub: Mapping[str, Term]) -> Formula:
    try:
        return subst_formula(f, sub)
    except CaptureError as e:
        raise SideConditionViolated(f"{rule}: {e}")


def _m_box_assign(f, args):
    return isinstance(f, Box) and isinstance(f.program, Assign)


def _b_box_assign(f, args):
    return _subst_or_fail("assignb", f.body, {f.program.var: f.program.term})


def _m_dia_assign(f, args):
    return isinstance(f, Diamond) and isinstance(f.program, Assign)


def _b_dia_assign(f, args):
    return _subst_or_fail("assignd", f.body, {f.program.var: f.program.term})


def _m_box_any(f, args):
    return isinstance(f, Box) and isinstance(f.program, AssignAny)


def _m_dia_any(f, args):
    return isinstance(f, Diamond) and isinstance(f.program, AssignAny)


def _m_box_test(f, args):
    return isinstance(f, Box) and isinstance(f.program, Test)


def _m_dia_test(f, args):
    return isinstance(f, Diamond) and isinstance(f.program, Test)


def _m_box_choice(f, args):
    return isinstance(f, Box) and isinstance(f.program, Choice)


def _m_dia_choice(f, args):
    return isinstance(f, Diamond) and isinstance(f.program, Choice)


def _m_box_seq(f, args):
    return isinstance(f, Box) and isinstance(f.program, Seq)


def _m_dia_seq(f, args):
    return isinstance(f, Diamond) and isinstance(f.program, Seq)


def _m_box_loop(f, args):
    return isinstance(f, Box) and isinstance(f.program, Loop)


def _m_dia_loop(f, args):
    return isinstance(f, Diamond) and isinstance(f.program, Loop)


def _m_dual(f, args):
    return isinstance(f, Not) and isinstance(f.operand, (Box, Diamond))


def _b_dual(f, args):
    inner = f.operand
    wrap = Diamond if isinstance(inner, Box) else Box
    return wrap(inner.program, Not(inner.body))


def _m_boxand(f, args):
    return isinstance(f, Box) and isinstance(f.body, And)


def _b_boxand(f, args):
    return And(Box(f.program, f.body.left), Box(f.program, f.body.right))


def _m_fdef(f, args):
    if isinstance(f, DModality):
        return True
    return _refold(f, args) is not None


def _b_fdef(f, args):
    if isinstance(f, DModality):
        return f.unfold_one()
    refolded = _refold(f, args)
    if refolded is None:
        raise RuleNotApplicable("F-def: occurrence vanished")
    return refolded


def _refold(f: Formula, args: Args) -> Optional[DModality]:
    """Recognize [attacked(P)]<renamed(P)>phi and fold it back, given the
    ambient attack and renaming."""
    attack = args.get("attack")
    rho = args.get("renaming")
    if not (isinstance(attack, AttackSpec) and isinstance(rho, RenamingMap)):
        return None
    if not (isinstance(f, Box) and isinstance(f.body, Diamond)):
        return None
    ghost = f.body.program
    try:
        program = rename(ghost, rho.inverse())
        cand = DModality(program, attack, rho, f.body.body)
    except (RenamingError, ValueError):
        return None
    if cand.unfold_one() == f:
        return cand
    return None


def _m_ftest(f, args):
    return isinstance(f, DModality) and isinstance(f.program, Test)


def _b_ftest(f, args):
    cond = f.program.cond
    try:
        ghost_cond = rename(cond, f.renaming)
    except RenamingError as e:
        raise SideConditionViolated(f"F-test: {e}")
    return Imply(cond, And(ghost_cond, f.body))


def _b_box_iterate(f, args):
    inner = f.program.body
    return And(f.body, Box(inner, Box(f.program, f.body)))


def _b_dia_iterate(f, args):
    inner = f.program.body
    return Or(f.body, Diamond(inner, Diamond(f.program, f.body)))


def _b_induction(f, args):
    inner = f.program.body
    return And(f.body, Box(f.program, Imply(f.body, Box(inner, f.body))))


# -- the solve rewrite ------------------------------------------------------

def _fresh_name(base: str, avoid: set) -> str:
    if base not in avoid:
        return base
    k = 0
    while f"{base}{k}" in avoid:
        k += 1
    return f"{base}{k}"


def _m_solve_box(f, args):
    return isinstance(f, Box) and isinstance(f.program, ODE)


def _m_solve_dia(f, args):
    return isinstance(f, Diamond) and isinstance(f.program, ODE)


def _validate_solution(ode: ODE, sols: Dict[str, Term], tname: str):
    """Numerically check that the provided closed forms solve the ODE:
    the anchor sol_x(0) = x and the derivative d/dt sol_x(t) = f(sol(t))
    at randomly probed states and times. Deterministic seed, so rule
    application is reproducible."""
    names = sorted(set().union(*(term_vars(rhs) for _, rhs in ode.eqs),
                               {x for x, _ in ode.eqs},
                               *(term_vars(s) for s in sols.values())))
    names = [n for n in names if n != tname]
    rng = random.Random(20240917)
    for _ in range(SOLVE_PROBES):
        base = {n: rng.uniform(-2.0, 2.0) for n in names}
        t0 = rng.uniform(0.0, 2.0)
        try:
            for x, _ in ode.eqs:
                at0 = eval_term(State({**base, tname: 0.0}), sols[x])
                if abs(at0 - base[x]) > SOLVE_TOL:
                    raise SideConditionViolated(
                        f"solve: solution for {x!r} does not start at {x!r} "
                        f"(off by {abs(at0 - base[x]):.3g} at a probe point)")
            plus = {x: eval_term(State({**base, tname: t0 + _SOLVE_H}), sols[x])
                    for x, _ in ode.eqs}
            minus = {x: eval_term(State({**base, tname: t0 - _SOLVE_H}), sols[x])
                     for x, _ in ode.eqs}
            here = {x: eval_term(State({**base, tname: t0}), sols[x])
                    for x, _ in ode.eqs}
            for x, rhs in ode.eqs:
                deriv = (plus[x] - minus[x]) / (2.0 * _SOLVE_H)
                want = eval_term(State({**base, **here}), rhs)
                if abs(deriv - want) > SOLVE_TOL:
                    raise SideConditionViolated(
                        f"solve: closed form for {x!r} does not satisfy its "
                        f"equation (residual {abs(deriv - want):.3g} at a "
                        "probe point)")
        except EvaluationError as e:
            raise SideConditionViolated(
                f"solve: could not validate the solution numerically: {e}")


def _build_solve(f, args, diamond: bool):
    rule = "solved" if diamond else "solve"
    ode: ODE = f.program
    sols: Dict[str, Term] = {}
    for x, _ in ode.eqs:
        v = args.get(x)
        if not isinstance(v, Term):
            raise RuleNotApplicable(
                f"{rule} needs a closed-form solution {x}=<term> "
                "for every evolved variable")
        sols[x] = v
    tname = args.get("time")
    avoid = set(base_vars(unfold_dmodalities(f))) | set(
        n for s in sols.values() for n in term_vars(s))
    if tname is None:
        tname = _fresh_name("tau", avoid)
    elif not isinstance(tname, str):
        raise RuleNotApplicable(f"{rule}: time= must be a variable name")
    elif tname in set(base_vars(unfold_dmodalities(f))):
        raise SideConditionViolated(
            f"{rule}: time variable {tname!r} already occurs in the formula")
    _validate_solution(ode, sols, tname)

    # value of each evolved variable at a given time term
    def at(time_term: Term) -> Dict[str, Term]:
        out = {}
        for x, s in sols.items():
            out[x] = _term_subst(s, tname, time_term)
        return out

    end = at(Var(tname))
    try:
        post = subst_formula(f.body, end)
    except CaptureError as e:
        raise SideConditionViolated(f"{rule}: {e}")
    zero = Const(0)
    tvar = Var(tname)
    if isinstance(ode.domain, TrueF):
        guard = None
    else:
        sname = _fresh_name("sigma", avoid | {tname})
        svar = Var(sname)
        try:
            dom_s = subst_formula(ode.domain, at(svar))
        except CaptureError as e:
            raise SideConditionViolated(f"{rule}: {e}")
        guard = Forall(sname, Imply(
            And(Cmp("<=", zero, svar), Cmp("<=", svar, tvar)), dom_s))
    if diamond:
        body = post if guard is None else And(guard, post)
        return Exists(tname, And(Cmp("<=", zero, tvar), body))
    body = post if guard is None else Imply(guard, post)
    return Forall(tname, Imply(Cmp("<=", zero, tvar), body))


def _term_subst(s: Term, name: str, value: Term) -> Term:
    from .sequent import subst_term
    return subst_term(s, {name: value})


# -- structural / propositional rules ---------------------------------------

def _h_id(goal, args):
    on = args.get("on")
    if on is not None:
        if on in goal.ante and on in goal.succ:
            return []
        raise RuleNotApplicable("id: on= is not on both sides")
    if goal.ante & goal.succ:
        return []
    raise RuleNotApplicable("id: no formula occurs on both sides")


def _h_trueR(goal, args):
    if any(isinstance(f, TrueF) for f in goal.succ):
        return []
    raise RuleNotApplicable("trueR: succedent does not contain true")


def _h_falseL(goal, args):
    if any(isinstance(f, FalseF) for f in goal.ante):
        return []
    raise RuleNotApplicable("falseL: antecedent does not contain false")


def _h_notR(goal, args):
    f = _principal(goal, args, "notR", "succ",
                   lambda g: isinstance(g, Not), "negation")
    return [Sequent(goal.ante | {f.operand}, goal.succ - {f})]


def _h_notL(goal, args):
    f = _principal(goal, args, "notL", "ante",
                   lambda g: isinstance(g, Not), "negation")
    return [Sequent(goal.ante - {f}, goal.succ | {f.operand})]


def _h_andR(goal, args):
    f = _principal(goal, args, "andR", "succ",
                   lambda g: isinstance(g, And), "conjunction")
    rest = goal.succ - {f}
    return [Sequent(goal.ante, rest | {f.left}),
            Sequent(goal.ante, rest | {f.right})]


def _h_andL(goal, args):
    f = _principal(goal, args, "andL", "ante",
                   lambda g: isinstance(g, And), "conjunction")
    return [Sequent((goal.ante - {f}) | {f.left, f.right}, goal.succ)]


def _h_orR(goal, args):
    f = _principal(goal, args, "orR", "succ",
                   lambda g: isinstance(g, Or), "disjunction")
    return [Sequent(goal.ante, (goal.succ - {f}) | {f.left, f.right})]


def _h_orL(goal, args):
    f = _principal(goal, args, "orL", "ante",
                   lambda g: isinstance(g, Or), "disjunction")
    rest = goal.ante - {f}
    return [Sequent(rest | {f.left}, goal.succ),
            Sequent(rest | {f.right}, goal.succ)]


def _h_implyR(goal, args):
    f = _principal(goal, args, "implyR", "succ",
                   lambda g: isinstance(g, Imply), "implication")
    return [Sequent(goal.ante | {f.left}, (goal.succ - {f}) | {f.right})]


def _h_implyL(goal, args):
    f = _principal(goal, args, "implyL", "ante",
                   lambda g: isinstance(g, Imply), "implication")
    rest = goal.ante - {f}
    return [Sequent(rest, goal.succ | {f.left}),
            Sequent(rest | {f.right}, goal.succ)]


def _h_equivR(goal, args):
    f = _principal(goal, args, "equivR", "succ",
                   lambda g: isinstance(g, Equiv), "equivalence")
    rest = goal.succ - {f}
    return [Sequent(goal.ante | {f.left}, rest | {f.right}),
            Sequent(goal.ante | {f.right}, rest | {f.left})]


def _h_equivL(goal, args):
    f = _principal(goal, args, "equivL", "ante",
                   lambda g: isinstance(g, Equiv), "equivalence")
    rest = goal.ante - {f}
    return [Sequent(rest | {And(f.left, f.right)}, goal.succ),
            Sequent(rest | {And(Not(f.left), Not(f.right))}, goal.succ)]


def _h_cut(goal, args):
    c = _need_formula(args, "fml", "cut")
    return [Sequent(goal.ante | {c}, goal.succ),
            Sequent(goal.ante, goal.succ | {c})]


def _h_cutR(goal, args):
    phi = _principal(goal, args, "cutR", "succ", lambda g: True, "formula")
    psi = _need_formula(args, "fml", "cutR")
    rest = goal.succ - {phi}
    return [Sequent(goal.ante, rest | {psi}),
            Sequent(goal.ante, rest | {Imply(psi, phi)})]


def _h_cutL(goal, args):
    phi = _principal(goal, args, "cutL", "ante", lambda g: True, "formula")
    psi = _need_formula(args, "fml", "cutL")
    rest = goal.ante - {phi}
    return [Sequent(rest | {psi}, goal.succ),
            Sequent(rest, goal.succ | {Imply(phi, psi)})]


def _h_wr(goal, args):
    f = _principal(goal, args, "wr", "succ", lambda g: True, "formula")
    return [Sequent(goal.ante, goal.succ - {f})]


def _h_wl(goal, args):
    f = _principal(goal, args, "wl", "ante", lambda g: True, "formula")
    return [Sequent(goal.ante - {f}, goal.succ)]


# -- modal implication-style rules ------------------------------------------

def _bound_base_vars(p: Program) -> frozenset:
    return frozenset(v[:-1] if v.endswith("'") else v for v in bound_vars(p))


def _h_V(goal, args):
    f = _principal(goal, args, "V", "succ",
                   lambda g: isinstance(g, Box), "box modality")
    clash = d_free_vars(f.body) & _bound_base_vars(f.program)
    if clash:
        raise SideConditionViolated(
            "V: the postcondition reads variables the program writes: "
            + ", ".join(sorted(clash)))
    return [Sequent(goal.ante, (goal.succ - {f}) | {f.body})]


def _h_K(goal, args):
    f = _principal(goal, args, "K", "succ",
                   lambda g: isinstance(g, Box), "box modality")
    phi = _need_formula(args, "fml", "K")
    rest = goal.succ - {f}
    return [Sequent(goal.ante, rest | {Box(f.program, Imply(phi, f.body))}),
            Sequent(goal.ante, rest | {Box(f.program, phi)})]


def _h_loop(goal, args):
    f = _principal(
        goal, args, "loop", "succ",
        lambda g: isinstance(g, Box) and isinstance(g.program, Loop),
        "box over a loop")
    inv = _need_formula(args, "inv", "loop")
    rest = goal.succ - {f}
    return [Sequent(goal.ante, rest | {inv}),
            Sequent({inv}, {f.body}),
            Sequent({inv}, {Box(f.program.body, inv)})]


def _h_mrb(goal, args):
    f = _principal(goal, args, "mrb", "succ",
                   lambda g: isinstance(g, Box), "box modality")
    phi = _need_formula(args, "fml", "mrb")
    rest = goal.succ - {f}
    return [Sequent(goal.ante, rest | {Box(f.program, phi)}),
            Sequent({phi}, {f.body})]


def _h_monob(goal, args):
    def want(g):
        return (isinstance(g, Imply) and isinstance(g.left, Box)
                and isinstance(g.right, Box)
                and g.left.program == g.right.program)
    f = _principal(goal, args, "monob", "succ", want,
                   "implication between boxes of one program")
    prem = Imply(f.left.body, f.right.body)
    return [Sequent(goal.ante, (goal.succ - {f}) | {prem})]


def _h_monod(goal, args):
    def want(g):
        return (isinstance(g, Imply) and isinstance(g.left, Diamond)
                and isinstance(g.right, Diamond)
                and g.left.program == g.right.program)
    f = _principal(goal, args, "monod", "succ", want,
                   "implication between diamonds of one program")
    prem = Imply(f.left.body, f.right.body)
    return [Sequent(goal.ante, (goal.succ - {f}) | {prem})]


# -- simulation-modality rules ----------------------------------------------

def _is_d(g) -> bool:
    return isinstance(g, DModality)


def _h_fseq(goal, args):
    f = _principal(
        goal, args, "F-seq", "succ",
        lambda g: _is_d(g) and isinstance(g.program, Seq),
        "simulation modality over a composition")
    inner = DModality(f.program.second, f.attack, f.renaming, f.body)
    outer = DModality(f.program.first, f.attack, f.renaming, inner)
    return [Sequent(goal.ante, (goal.succ - {f}) | {outer})]


def _h_fmr(goal, args):
    f = _principal(goal, args, "F-mr", "succ", _is_d, "simulation modality")
    phi = _need_formula(args, "fml", "F-mr")
    rest = goal.succ - {f}
    stronger = DModality(f.program, f.attack, f.renaming, phi)
    return [Sequent(goal.ante, rest | {stronger}),
            Sequent({phi}, {f.body})]


def _h_fand(goal, args):
    def want(g):
        return (isinstance(g, And) and _is_d(g.left) and _is_d(g.right)
                and g.left.program == g.right.program
                and g.left.attack == g.right.attack
                and g.left.renaming == g.right.renaming)
    f = _principal(goal, args, "F-and", "succ", want,
                   "conjunction of two simulation modalities of one program")
    joint = DModality(f.left.program, f.left.attack, f.left.renaming,
                      And(f.left.body, f.right.body))
    return [Sequent(goal.ante, (goal.succ - {f}) | {joint})]


def _h_for(goal, args):
    f = _principal(
        goal, args, "F-or", "succ",
        lambda g: _is_d(g) and isinstance(g.body, Or),
        "simulation modality over a disjunction")
    split = Or(DModality(f.program, f.attack, f.renaming, f.body.left),
               DModality(f.program, f.attack, f.renaming, f.body.right))
    return [Sequent(goal.ante, (goal.succ - {f}) | {split})]


def _h_fchoice(goal, args):
    f = _principal(
        goal, args, "F-choice", "succ",
        lambda g: _is_d(g) and isinstance(g.program, Choice),
        "simulation modality over a choice")
    rest = goal.succ - {f}
    left = DModality(f.program.left, f.attack, f.renaming, f.body)
    right = DModality(f.program.right, f.attack, f.renaming, f.body)
    return [Sequent(goal.ante, rest | {left}),
            Sequent(goal.ante, rest | {right})]


def _h_finv(goal, args):
    f = _principal(
        goal, args, "F-inv", "succ",
        lambda g: _is_d(g) and isinstance(g.program, Loop),
        "simulation modality over a loop")
    inv = _need_formula(args, "inv", "F-inv")
    rest = goal.succ - {f}
    step = DModality(f.program.body, f.attack, f.renaming, inv)
    return [Sequent(goal.ante, rest | {inv}),
            Sequent({inv}, {step}),
            Sequent({inv}, {f.body})]


def _h_fv(goal, args):
    f = _principal(
        goal, args, "F-v", "succ",
        lambda g: _is_d(g) and isinstance(g.body, And),
        "simulation modality over a conjunction")
    pvars = base_vars(f.program)
    rvars = frozenset(f.renaming[v] for v in pvars)
    phi1, phi1g = f.body.left, f.body.right
    left_grp, right_grp = [], []
    for g in goal.ante:
        gv = d_free_vars(g)
        if gv & rvars and gv & pvars:
            raise SideConditionViolated(
                "F-v: an antecedent formula mixes program variables with "
                "renamed copies; split it first: " + fmt_formula(g))
        (right_grp if gv & rvars else left_grp).append(g)
    lvars = d_free_vars(phi1)
    for g in left_grp:
        lvars = lvars | d_free_vars(g)
    bad = lvars & rvars
    if bad:
        raise SideConditionViolated(
            "F-v: the original-side formulas mention renamed variables: "
            + ", ".join(sorted(bad)))
    rbad = d_free_vars(phi1g)
    for g in right_grp:
        rbad = rbad | d_free_vars(g)
    rbad = rbad & pvars
    if rbad:
        raise SideConditionViolated(
            "F-v: the renamed-side formulas mention program variables: "
            + ", ".join(sorted(rbad)))
    attacked = apply_attack(f.program, f.attack, warn=False)
    ghost = rename(f.program, f.renaming)
    return [Sequent(left_grp, {Box(attacked, phi1)}),
            Sequent(right_grp, {Diamond(ghost, phi1g)})]


def _clock_of(ode: ODE, args, rule: str) -> Optional[str]:
    named = args.get("clock")
    ticking = [x for x, rhs in ode.eqs
               if isinstance(rhs, Const) and rhs.value == 1]
    if named is not None:
        if named not in ticking:
            raise RuleNotApplicable(
                f"{rule}: clock= must name a variable evolving at rate 1")
        return named
    if len(ticking) == 1:
        return ticking[0]
    if not ticking:
        return None
    raise RuleNotApplicable(
        f"{rule}: several rate-1 variables ({', '.join(ticking)}); "
        "pass clock=")


def _h_fode_all(goal, args):
    f = _principal(
        goal, args, "F-ode-all", "succ",
        lambda g: _is_d(g) and isinstance(g.program, ODE)
        and isinstance(g.program.domain, TrueF),
        "simulation modality over an unconstrained flow")
    ode: ODE = f.program
    clock = _clock_of(ode, args, "F-ode-all")
    if clock is None:
        raise RuleNotApplicable(
            "F-ode-all needs a clock variable evolving at rate 1")
    rclock = f.renaming[clock]
    timing = _opt_formula(args, "fml", "F-ode-all")
    if timing is None:
        timing = Cmp("=", Var(rclock), Var(clock))
    else:
        ok = timing in (Cmp("=", Var(rclock), Var(clock)),
                        Cmp("=", Var(clock), Var(rclock)))
        if not ok:
            raise SideConditionViolated(
                "F-ode-all: the timing condition must equate the clock "
                f"with its renamed copy ({rclock} = {clock})")
    ghost = rename(ode, f.renaming)
    prem = Box(ode, Box(ghost, Imply(timing, f.body)))
    return [Sequent(goal.ante, (goal.succ - {f}) | {prem})]


def _h_fode_merge(goal, args):
    f = _principal(
        goal, args, "F-ode-merge", "succ",
        lambda g: _is_d(g) and isinstance(g.program, ODE),
        "simulation modality over a flow")
    ode: ODE = f.program
    dom = ode.domain
    rest = goal.succ - {f}
    if isinstance(dom, TrueF):
        merged = ODE(ode.eqs + rename(ode, f.renaming).eqs, TrueF())
        return [Sequent(goal.ante, rest | {Box(merged, f.body)})]
    clock = _clock_of(ode, args, "F-ode-merge")
    if not (clock is not None and isinstance(dom, Cmp) and dom.op == "<="
            and dom.left == Var(clock)):
        raise RuleNotApplicable(
            "F-ode-merge: the domain must be true or a clock bound "
            "c <= e with c evolving at rate 1")
    evolved = {x for x, _ in ode.eqs}
    bound_vars_of_e = term_vars(dom.right)
    if bound_vars_of_e & evolved:
        raise SideConditionViolated(
            "F-ode-merge: the clock bound must not read evolved variables: "
            + ", ".join(sorted(bound_vars_of_e & evolved)))
    rclock = f.renaming[clock]
    body_vars = d_free_vars(f.body)
    if body_vars & {clock, rclock}:
        raise SideConditionViolated(
            "F-ode-merge: the postcondition must not mention the clock "
            f"or its renamed copy ({clock}, {rclock})")
    keep = tuple((x, rhs) for x, rhs in ode.eqs if x != clock)
    ghost_keep = rename(ODE(keep, TrueF()), f.renaming).eqs
    merged = ODE(keep + ghost_keep, TrueF())
    sync = Cmp("=", Var(rclock), Var(clock))
    return [Sequent(goal.ante, rest | {Box(merged, f.body)}),
            Sequent(goal.ante, rest | {sync})]


def _h_oracle(goal, args):
    return []


# -- registry ---------------------------------------------------------------

RULES: Dict[str, Handler] = {
    # propositional
    "id": _h_id, "trueR": _h_trueR, "falseL": _h_falseL,
    "notR": _h_notR, "notL": _h_notL,
    "andR": _h_andR, "andL": _h_andL,
    "orR": _h_orR, "orL": _h_orL,
    "implyR": _h_implyR, "implyL": _h_implyL,
    "equivR": _h_equivR, "equivL": _h_equivL,
    "cut": _h_cut, "cutR": _h_cutR, "cutL": _h_cutL,
    "wr": _h_wr, "wl": _h_wl,
    # equivalence rewrites
    "assignb": _rewrite_rule("assignb", _m_box_assign, _b_box_assign),
    "assignd": _rewrite_rule("assignd", _m_dia_assign, _b_dia_assign),
    "randomb": _rewrite_rule(
        "randomb", _m_box_any,
        lambda f, a: Forall(f.program.var, f.body)),
    "randomd": _rewrite_rule(
        "randomd", _m_dia_any,
        lambda f, a: Exists(f.program.var, f.body)),
    "testb": _rewrite_rule(
        "testb", _m_box_test, lambda f, a: Imply(f.program.cond, f.body)),
    "testd": _rewrite_rule(
        "testd", _m_dia_test, lambda f, a: And(f.program.cond, f.body)),
    "choiceb": _rewrite_rule(
        "choiceb", _m_box_choice,
        lambda f, a: And(Box(f.program.left, f.body),
                         Box(f.program.right, f.body))),
    "choiced": _rewrite_rule(
        "choiced", _m_dia_choice,
        lambda f, a: Or(Diamond(f.program.left, f.body),
                        Diamond(f.program.right, f.body))),
    "composeb": _rewrite_rule(
        "composeb", _m_box_seq,
        lambda f, a: Box(f.program.first, Box(f.program.second, f.body))),
    "composed": _rewrite_rule(
        "composed", _m_dia_seq,
        lambda f, a: Diamond(f.program.first,
                             Diamond(f.program.second, f.body))),
    "iterateb": _rewrite_rule("iterateb", _m_box_loop, _b_box_iterate),
    "iterated": _rewrite_rule("iterated", _m_dia_loop, _b_dia_iterate),
    "I": _rewrite_rule("I", _m_box_loop, _b_induction),
    "dual": _rewrite_rule("dual", _m_dual, _b_dual),
    "boxand": _rewrite_rule("boxand", _m_boxand, _b_boxand),
    "solve": _rewrite_rule("solve", _m_solve_box,
                           lambda f, a: _build_solve(f, a, diamond=False)),
    "solved": _rewrite_rule("solved", _m_solve_dia,
                            lambda f, a: _build_solve(f, a, diamond=True)),
    "F-def": _rewrite_rule("F-def", _m_fdef, _b_fdef),
    "F-test": _rewrite_rule("F-test", _m_ftest, _b_ftest),
    # modal implication-style rules
    "V": _h_V, "K": _h_K, "loop": _h_loop, "mrb": _h_mrb,
    "monob": _h_monob, "monod": _h_monod,
    # simulation rules
    "F-seq": _h_fseq, "F-mr": _h_fmr, "F-and": _h_fand, "F-or": _h_for,
    "F-choice": _h_fchoice, "F-inv": _h_finv, "F-v": _h_fv,
    "F-ode-all": _h_fode_all, "F-ode-merge": _h_fode_merge,
    # numeric leaf
    "oracle": _h_oracle,
}


def rule_names() -> List[str]:
    return sorted(RULES)


def apply_rule(goal: Sequent, rule: str,
               args: Optional[Args] = None) -> List[Sequent]:
    """Premise sequents of applying `rule` to `goal`. Raises
    RuleNotApplicable when the rule does not fit the goal (or fits in
    more than one way and no on=/occ= narrows it down) and
    SideConditionViolated when a side condition fails."""
    if rule not in RULES:
        raise RuleNotApplicable(
            f"unknown rule {rule!r}; known rules: " + ", ".join(rule_names()))
    return RULES[rule](goal, dict(args or {}))
