import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sosreach.poly import (ContextMismatch, ParseError, Polynomial, PowerCache, UnrepresentableTerm, Variables,
                           compose, monomials_up_to, parse)

C11 = Variables(1, 1)
C22 = Variables(2, 2)


def P(text, ctx=C11):
    return parse(text, ctx)


def test_parse_case_map_terms():
    p = parse("0.3*x1 + 0.5*x2^3 + w1", C22)
    assert p.terms == {(1, 0, 0, 0): 0.3, (0, 3, 0, 0): 0.5, (0, 0, 1, 0): 1.0}


def test_parse_expands_powers():
    assert P("(x1+1)^2") == P("x1^2 + 2*x1 + 1")


@pytest.mark.parametrize("text", ["x1^-2", "x1^1.5", "x1 +", "x3", "x1/2", "sin(x1)", "(x1"])
def test_parse_rejects(text):
    with pytest.raises(ParseError):
        P(text)


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as info:
        P("x1 + * 2")
    assert info.value.position == 5


def test_arith_examples():
    assert P("x1^2 + 1") + (-1) == P("x1^2")
    assert P("x1 + 1") * P("x1 - 1") == P("x1^2 - 1")
    assert P("0.5*x1").scale(2) == P("x1")
    assert P("x1 + w1") ** 0 == P("1")


def test_context_mismatch():
    with pytest.raises(ContextMismatch):
        P("x1") + parse("x1", C22)


def test_prune_small_coefficients():
    p = P("x1") + Polynomial.monomial(C11, (2, 0), 1e-13)
    assert p == P("x1")


def test_compose_examples():
    assert compose(P("x1^2"), [P("0.5*x1 + w1")]) == P("0.25*x1^2 + x1*w1 + w1^2")
    assert compose(P("x1^2 - 1"), [P("x1 + x1^2*w1")]) == P("x1^4*w1^2 + 2*x1^3*w1 + x1^2 - 1")
    q = parse("x1^3*x2 - 2*x2 + 4", C22)
    assert compose(q, [parse("x1", C22), parse("x2", C22)]) == q


def test_compose_arity():
    with pytest.raises(ValueError):
        compose(parse("x1", C22), [parse("x1", C22)])


def test_evaluate_and_degree():
    assert P("x1^2 - 1")([2.0, 0.0]) == 3.0
    assert P("x1^4*w1^2 + 2*x1^3*w1 + x1^2 - 1").degree() == 6
    assert Polynomial.zero(C11).degree() == 0
    f = [parse("0.3*x1 + 0.5*x2^3 + w1", C22), parse("0.8*x2 + w2", C22)]
    assert [fi([1, 1, 0, 0]) for fi in f] == pytest.approx([0.8, 0.8])


def test_evaluate_dimension_mismatch():
    with pytest.raises(ValueError):
        P("x1")([1.0])


def test_extract_coeffs():
    basis = [(0, 0), (1, 0), (2, 0)]
    assert P("x1^2 + 2*x1 + 1").extract_coeffs(basis).tolist() == [1, 2, 1]
    assert Polynomial.zero(C11).extract_coeffs(basis).tolist() == [0, 0, 0]
    with pytest.raises(UnrepresentableTerm) as info:
        P("x1^3").extract_coeffs(basis)
    assert info.value.monomial == (3, 0)


def test_monomials_up_to_is_graded():
    monos = monomials_up_to(2, 2)
    assert len(monos) == 6
    assert [sum(m) for m in monos] == sorted(sum(m) for m in monos)


# --- properties -------------------------------------------------------------

coef = st.floats(-5, 5, allow_nan=False).filter(lambda c: abs(c) > 1e-6)


@st.composite
def polys(draw, ctx=C22, max_deg=3, x_only=False):
    monos = [m for m in monomials_up_to(ctx.arity, max_deg) if not (x_only and any(m[ctx.n:]))]
    chosen = draw(st.lists(st.sampled_from(monos), min_size=0, max_size=6, unique=True))
    return Polynomial(ctx, {m: draw(coef) for m in chosen})


@given(polys())
@settings(max_examples=60, deadline=None)
def test_print_parse_round_trip(p):
    assert parse(str(p), p.ctx) == p


@given(polys(), polys())
@settings(max_examples=40, deadline=None)
def test_ring_laws_at_points(p, q):
    pts = np.random.default_rng(0).uniform(-2, 2, size=(100, C22.arity))
    vp, vq = p.evaluate_many(pts), q.evaluate_many(pts)
    prod = (p * q).evaluate_many(pts)
    assert np.all(np.abs(prod - vp * vq) <= 1e-9 * (1 + np.abs(vp * vq)))
    s = (p + q).evaluate_many(pts)
    assert np.all(np.abs(s - (vp + vq)) <= 1e-9 * (1 + np.abs(vp + vq)))


@given(polys(max_deg=3, x_only=True), polys(max_deg=2), polys(max_deg=2))
@settings(max_examples=30, deadline=None)
def test_compose_commutes_with_evaluation(p, f1, f2):
    pts = np.random.default_rng(1).uniform(-1.5, 1.5, size=(50, C22.arity))
    lhs = compose(p, [f1, f2]).evaluate_many(pts)
    inner = np.column_stack([f1.evaluate_many(pts), f2.evaluate_many(pts), pts[:, 2:]])
    rhs = p.evaluate_many(inner)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


def test_power_cache_matches_plain_compose():
    f = [parse("0.3*x1 + 0.5*x2^3 + w1", C22), parse("0.8*x2 + w2", C22)]
    p = parse("x1^2*x2^2 + x2^4 - x1", C22)
    assert compose(p, f, PowerCache(f)) == compose(p, f)


@given(polys())
@settings(max_examples=30, deadline=None)
def test_extract_then_rebuild(p):
    basis = monomials_up_to(C22.arity, 3)
    assert Polynomial.from_coeffs(C22, basis, p.extract_coeffs(basis)) == p
