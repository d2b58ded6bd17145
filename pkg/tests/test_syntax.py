"""Parser/printer round-trip, variable analyses vs a naive reference,
renaming laws, and parse-error reporting."""

from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from hybridsafe.syntax import Test as PTest
from hybridsafe.syntax import (
    And, Assign, AssignAny, Box, Choice, Cmp, Const, Diamond, Div, Equiv,
    Exists, FalseF, Forall, ImageCollision, Imply, Loop, Minus, Neg, Not,
    ODE, Or, ParseError, Plus, Pow, RenamingMap, RenamingNotInjective, SP,
    Seq, Sqrt, Times, TrueF, Var, all_vars, base_vars, bound_vars,
    desugar, free_vars, load_model, must_bound_vars, parse_formula,
    parse_program, parse_term, print_formula, print_program, print_term,
    rename,
)

from conftest import MODELS

# ---------------------------------------------------------------------------
# AST generators
# ---------------------------------------------------------------------------

_NAMES = st.sampled_from(
    ["x", "y", "z", "u", "w", "q1", "v2", "temp_p", "Q_s"])

# Canonical constants: nonnegative (the grammar has no signed literal, so
# negative values are Neg nodes) and decimal-representable (other
# denominators print as a division expression and reparse as Div).
_CONSTS = st.builds(
    lambda n, k: Const(Fraction(n, 10 ** k)),
    st.integers(0, 999), st.integers(0, 3))


def _terms(depth=6):
    leaf = st.one_of(st.builds(Var, _NAMES), _CONSTS)
    return st.recursive(
        leaf,
        lambda sub: st.one_of(
            st.builds(Plus, sub, sub),
            st.builds(Minus, sub, sub),
            st.builds(Times, sub, sub),
            st.builds(Div, sub, sub),
            st.builds(Neg, sub),
            st.builds(Pow, sub, st.integers(0, 3)),
            st.builds(Sqrt, sub),
        ),
        max_leaves=depth)


_CMPS = st.builds(Cmp, st.sampled_from(["=", "<=", "<", ">=", ">"]),
                  _terms(3), _terms(3))


def _flat_formulas(depth=4):
    """Quantified propositional formulas over arithmetic atoms; no
    modalities, usable inside programs."""
    leaf = st.one_of(st.just(TrueF()), st.just(FalseF()), _CMPS)
    return st.recursive(
        leaf,
        lambda sub: st.one_of(
            st.builds(Not, sub),
            st.builds(And, sub, sub),
            st.builds(Or, sub, sub),
            st.builds(Imply, sub, sub),
            st.builds(Equiv, sub, sub),
            st.builds(Forall, _NAMES, sub),
            st.builds(Exists, _NAMES, sub),
        ),
        max_leaves=depth)


def _odes():
    pair = st.tuples(_NAMES, _terms(2))
    return st.builds(
        ODE,
        st.lists(pair, min_size=1, max_size=3,
                 unique_by=lambda p: p[0]).map(tuple),
        st.one_of(st.just(TrueF()), _CMPS))


def _programs(depth=5):
    leaf = st.one_of(
        st.builds(Assign, _NAMES, _terms(3)),
        st.builds(AssignAny, _NAMES),
        st.builds(PTest, _flat_formulas(3)),
        _odes())
    return st.recursive(
        leaf,
        lambda sub: st.one_of(
            st.builds(Seq, sub, sub),
            st.builds(Choice, sub, sub),
            st.builds(Loop, sub),
        ),
        max_leaves=depth)


def _formulas(depth=5):
    """Full formula space including modalities and sp()."""
    leaf = st.one_of(st.just(TrueF()), st.just(FalseF()), _CMPS,
                     st.builds(Box, _programs(3), _flat_formulas(2)),
                     st.builds(Diamond, _programs(3), _flat_formulas(2)),
                     st.builds(SP, _programs(3), _flat_formulas(2)))
    return st.recursive(
        leaf,
        lambda sub: st.one_of(
            st.builds(Not, sub),
            st.builds(And, sub, sub),
            st.builds(Or, sub, sub),
            st.builds(Imply, sub, sub),
            st.builds(Equiv, sub, sub),
            st.builds(Forall, _NAMES, sub),
            st.builds(Exists, _NAMES, sub),
        ),
        max_leaves=depth)


# ---------------------------------------------------------------------------
# Round-trip law
# ---------------------------------------------------------------------------

@settings(max_examples=250, deadline=None)
@given(_terms())
def test_term_round_trip(t):
    assert parse_term(print_term(t)) == t


@settings(max_examples=250, deadline=None)
@given(_formulas())
def test_formula_round_trip(f):
    assert parse_formula(print_formula(f)) == f


@settings(max_examples=250, deadline=None)
@given(_programs())
def test_program_round_trip(p):
    assert parse_program(print_program(p)) == p


@pytest.mark.parametrize("name", ["cooling.hp", "watertank.hp", "vehicle.hp"])
def test_model_file_round_trip(name):
    m = load_model(str(MODELS / name))
    assert parse_formula(print_formula(m.pre)) == m.pre
    assert parse_formula(print_formula(m.post)) == m.post
    assert parse_program(print_program(m.program)) == m.program


def test_nondecimal_rational_prints_as_division():
    s = print_term(Const(Fraction(1, 3)))
    assert s == "1/3"
    assert parse_term(s) == Div(Const(Fraction(1)), Const(Fraction(3)))


# ---------------------------------------------------------------------------
# Grammar spot checks
# ---------------------------------------------------------------------------

def test_assign_fragment():
    assert parse_program("temp := 100") == Assign("temp", Const(Fraction(100)))


def test_plant_fragment_is_ode():
    p = parse_program("{temp_p' = delta, t' = 1 & temp_p >= 0 & t <= 1}")
    assert isinstance(p, ODE)
    assert [v for v, _ in p.eqs] == ["temp_p", "t"]


def test_ctrl_fragment_is_choice_of_seqs():
    p = parse_program(
        "?temp_s > 100; delta := -0.5 ++ ?temp_s <= 100; delta := 1")
    assert isinstance(p, Choice)
    assert isinstance(p.left, Seq) and isinstance(p.right, Seq)
    assert isinstance(p.left.first, PTest)


def test_box_of_loop():
    f = parse_formula("[ {a := 1}* ] a >= 1")
    assert isinstance(f, Box) and isinstance(f.program, Loop)


def test_vehicle_precondition_shape():
    f = parse_formula("2*B*d_p > v_p^2 & v_p >= 0")
    assert isinstance(f, And)
    assert isinstance(f.left, Cmp) and f.left.op == ">"


def test_duplicate_ode_variable_rejected():
    with pytest.raises((ParseError, ValueError)):
        parse_program("{x' = 1, x' = 2 & true}")


def test_parse_error_carries_position_and_expected():
    with pytest.raises(ParseError) as exc:
        parse_formula("x >=")
    err = exc.value
    assert err.line == 1
    assert err.column >= 4
    assert "expected" in str(err)


def test_parse_error_line_number_multiline():
    with pytest.raises(ParseError) as exc:
        parse_program("x := 1;\ny := ")
    assert exc.value.line == 2


# ---------------------------------------------------------------------------
# Variable analyses vs naive reference (Appendix-style inductive defs)
# ---------------------------------------------------------------------------

def ref_fv_term(t):
    if isinstance(t, Var):
        return {t.name}
    if isinstance(t, Const):
        return set()
    if isinstance(t, (Plus, Minus, Times, Div)):
        return ref_fv_term(t.left) | ref_fv_term(t.right)
    if isinstance(t, Neg):
        return ref_fv_term(t.operand)
    if isinstance(t, Pow):
        return ref_fv_term(t.base)
    if isinstance(t, Sqrt):
        return ref_fv_term(t.operand)
    raise TypeError(t)


def ref_bv_formula(f):
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return set()
    if isinstance(f, Not):
        return ref_bv_formula(f.operand)
    if isinstance(f, (And, Or, Imply, Equiv)):
        return ref_bv_formula(f.left) | ref_bv_formula(f.right)
    if isinstance(f, (Forall, Exists)):
        return {f.var} | ref_bv_formula(f.body)
    if isinstance(f, (Box, Diamond, SP)):
        return ref_bv_program(f.program) | ref_bv_formula(f.body)
    raise TypeError(f)


def ref_bv_program(p):
    if isinstance(p, (Assign, AssignAny)):
        return {p.var}
    if isinstance(p, PTest):
        return set()
    if isinstance(p, ODE):
        return {v for v, _ in p.eqs} | {v + "'" for v, _ in p.eqs}
    if isinstance(p, (Seq, Choice)):
        return ref_bv_program(_first(p)) | ref_bv_program(_second(p))
    if isinstance(p, Loop):
        return ref_bv_program(p.body)
    raise TypeError(p)


def ref_mbv(p):
    if isinstance(p, (Assign, AssignAny)):
        return {p.var}
    if isinstance(p, PTest):
        return set()
    if isinstance(p, ODE):
        return {v for v, _ in p.eqs} | {v + "'" for v, _ in p.eqs}
    if isinstance(p, Choice):
        return ref_mbv(p.left) & ref_mbv(p.right)
    if isinstance(p, Seq):
        return ref_mbv(p.first) | ref_mbv(p.second)
    if isinstance(p, Loop):
        return set()
    raise TypeError(p)


def ref_fv_formula(f):
    if isinstance(f, (TrueF, FalseF)):
        return set()
    if isinstance(f, Cmp):
        return ref_fv_term(f.left) | ref_fv_term(f.right)
    if isinstance(f, Not):
        return ref_fv_formula(f.operand)
    if isinstance(f, (And, Or, Imply, Equiv)):
        return ref_fv_formula(f.left) | ref_fv_formula(f.right)
    if isinstance(f, (Forall, Exists)):
        return ref_fv_formula(f.body) - {f.var}
    if isinstance(f, (Box, Diamond)):
        return ref_fv_program(f.program) | (
            ref_fv_formula(f.body) - ref_mbv(f.program))
    if isinstance(f, SP):
        # Reachable-set membership depends on the program's writes as well
        # as its reads (SP(x := y, true) holds exactly where x = y), so the
        # box-modality clause would under-report.
        return (ref_fv_program(f.program) | ref_bv_program(f.program)
                | ref_fv_formula(f.body))
    raise TypeError(f)


def ref_fv_program(p):
    if isinstance(p, Assign):
        return ref_fv_term(p.term)
    if isinstance(p, AssignAny):
        return set()
    if isinstance(p, PTest):
        return ref_fv_formula(p.cond)
    if isinstance(p, ODE):
        out = {v for v, _ in p.eqs}
        for _, rhs in p.eqs:
            out |= ref_fv_term(rhs)
        return out | ref_fv_formula(p.domain)
    if isinstance(p, Choice):
        return ref_fv_program(p.left) | ref_fv_program(p.right)
    if isinstance(p, Seq):
        return ref_fv_program(p.first) | (
            ref_fv_program(p.second) - ref_mbv(p.first))
    if isinstance(p, Loop):
        return ref_fv_program(p.body)
    raise TypeError(p)


def _first(p):
    return p.first if isinstance(p, Seq) else p.left


def _second(p):
    return p.second if isinstance(p, Seq) else p.right


@settings(max_examples=250, deadline=None)
@given(_programs())
def test_program_analyses_match_reference(p):
    assert set(free_vars(p)) == ref_fv_program(p)
    assert set(bound_vars(p)) == ref_bv_program(p)
    assert set(must_bound_vars(p)) == ref_mbv(p)
    assert set(all_vars(p)) == ref_fv_program(p) | ref_bv_program(p)


@settings(max_examples=250, deadline=None)
@given(_formulas())
def test_formula_analyses_match_reference(f):
    assert set(free_vars(f)) == ref_fv_formula(f)
    assert set(bound_vars(f)) == ref_bv_formula(f)
    assert set(all_vars(f)) == ref_fv_formula(f) | ref_bv_formula(f)


def test_mbv_choice_intersection():
    p = Choice(Assign("x", Const(Fraction(1))), Assign("y", Const(Fraction(1))))
    assert set(must_bound_vars(p)) == set()


def test_fv_seq_must_bound_shadowing():
    p = parse_program("x := 1; ?x > 0")
    assert set(free_vars(p)) == set()


def test_bv_ode_includes_primes():
    p = parse_program("{x' = y & true}")
    assert set(bound_vars(p)) == {"x", "x'"}


# ---------------------------------------------------------------------------
# desugar and rename laws
# ---------------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(_programs(3), _flat_formulas(3))
def test_desugar_diamond_literal(p, f):
    assert desugar(Diamond(p, f)) == Not(Box(p, Not(desugar(f))))


@settings(max_examples=200, deadline=None)
@given(_programs())
def test_rename_round_trip_and_cardinality(p):
    vs = sorted(set(base_vars(p)))
    if not vs:
        return
    rho = RenamingMap({v: v + "__r" for v in vs})
    q = rename(p, rho)
    assert len(all_vars(q)) == len(all_vars(p))
    inv = RenamingMap({v + "__r": v for v in vs})
    assert rename(q, inv) == p


def test_rename_formula_partial():
    f = parse_formula("temp_p <= 105")
    g = rename(f, RenamingMap({"temp_p": "temp_p2"}))
    assert g == parse_formula("temp_p2 <= 105")


def test_rename_not_injective_rejected():
    with pytest.raises(RenamingNotInjective):
        RenamingMap({"x": "z", "y": "z"})


def test_rename_image_collision_rejected():
    with pytest.raises(ImageCollision):
        rename(parse_formula("x + y > 0"), RenamingMap({"x": "y"}))
