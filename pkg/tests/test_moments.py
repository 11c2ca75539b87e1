import math

import numpy as np
import pytest

from sosreach.moments import DisturbanceModel, expect_w, moment, prob_ball, prob_ball_mc
from conftest import _quadrature_expectation_reference as _quadrature_expectation
from sosreach.poly import Polynomial, Variables, monomials_up_to, parse

U1 = DisturbanceModel.uniform(1.0)


def test_moment_examples():
    assert moment(U1, 0, 2) == pytest.approx(1 / 3)
    assert moment(U1, 0, 3) == 0.0
    assert moment(DisturbanceModel.uniform(0.5), 0, 2) == pytest.approx(1 / 12)
    assert moment(DisturbanceModel.gaussian(1.0), 0, 4) == pytest.approx(3.0)
    assert moment(DisturbanceModel.gaussian(2.0), 0, 0) == 1.0


def test_invalid_models():
    with pytest.raises(ValueError):
        DisturbanceModel.uniform(0.0)
    with pytest.raises(ValueError):
        DisturbanceModel.gaussian(-1.0)


def test_expect_examples():
    ctx = Variables(1, 1)
    assert expect_w(parse("x1^2 + 2*x1^3*w1 + x1^4*w1^2", ctx), U1) == parse("x1^2 + 0.3333333333333333*x1^4", ctx)
    p = parse("x1^3 - 2", ctx)
    assert expect_w(p, U1) == p
    c2 = Variables(1, 2)
    assert expect_w(parse("x1*w1*w2", c2), DisturbanceModel.gaussian(1, 2)).is_zero()


def test_expect_is_linear():
    ctx = Variables(2, 2)
    d = DisturbanceModel.uniform(1.0, 0.5)
    p = parse("x1*w1^2 + w2^4 - x2*w1*w2", ctx)
    q = parse("x2^2*w2^2 + 3*w1^4 + x1", ctx)
    lhs = expect_w(p * 2.0 - q * 3.0, d)
    rhs = expect_w(p, d) * 2.0 - expect_w(q, d) * 3.0
    assert set(lhs.support()) == set(rhs.support())
    assert all(abs(lhs.coeff(k) - rhs.coeff(k)) <= 1e-12 for k in lhs.support())


def test_expect_matches_quadrature_on_random_polys():
    rng = np.random.default_rng(7)
    ctx = Variables(2, 2)
    d = DisturbanceModel.uniform(1.0, 0.5)
    monos = monomials_up_to(ctx.arity, 6)
    worst = 0.0
    for _ in range(100):
        chosen = rng.choice(len(monos), size=12, replace=False)
        p = Polynomial(ctx, {monos[i]: rng.normal() for i in chosen})
        got = expect_w(p, d)
        ref = _quadrature_expectation(p, d)
        for key in set(ref) | set(got.terms):
            worst = max(worst, abs(got.coeff(key) - ref.get(key, 0.0)))
    assert worst <= 1e-9


def test_prob_ball_closed_forms():
    box = DisturbanceModel.uniform(1, 1)
    assert prob_ball(box, 1.0).estimate == pytest.approx(math.pi / 4)
    assert prob_ball(box, 2.0).estimate == pytest.approx(1.0)
    assert prob_ball(DisturbanceModel.gaussian(1, 1), 1.0).estimate == pytest.approx(1 - math.exp(-0.5))
    with pytest.raises(ValueError):
        prob_ball(box, 0.0)


@pytest.mark.parametrize("d,rho", [
    (DisturbanceModel.uniform(1, 1), 0.5),
    (DisturbanceModel.uniform(1, 1), 1.5),  # partial disk/box overlap
    (DisturbanceModel.uniform(0.5, 0.5), 0.125),
    (DisturbanceModel.uniform(1, 2), 2.0),
    (DisturbanceModel.gaussian(1, 1), 1.0),
    (DisturbanceModel.uniform(1.0), 0.3),
])
def test_prob_ball_closed_form_vs_mc(d, rho):
    exact = prob_ball(d, rho)
    assert exact.method.startswith("closed_form")
    hits, n = prob_ball_mc(d, rho, samples=400_000, seed=3)
    p = hits / n
    sigma = math.sqrt(exact.estimate * (1 - exact.estimate) / n)
    assert abs(p - exact.estimate) <= 3 * sigma + 1e-12


def test_prob_ball_monotone_and_positive():
    d = DisturbanceModel.uniform(1, 0.5, 2)
    vals = [prob_ball(d, r, samples=20_000).lower for r in (0.01, 0.1, 0.5, 1.0)]
    assert all(v > 0 for v in vals)
    exact = [prob_ball(DisturbanceModel.uniform(1, 1), r).estimate for r in np.linspace(0.05, 2.5, 30)]
    assert np.all(np.diff(exact) >= 0)


def test_prob_ball_mc_deterministic():
    d = DisturbanceModel.uniform(1, 0.5, 2)
    a = prob_ball(d, 0.4, samples=50_000, seed=11)
    b = prob_ball(d, 0.4, samples=50_000, seed=11)
    assert a == b and a.method == "monte_carlo" and 0 < a.lower <= a.estimate


def test_sample_support():
    d = DisturbanceModel.uniform(1, 0.5)
    w = d.sample(np.random.default_rng(0), 1000)
    assert w.shape == (1000, 2) and np.all(np.abs(w) <= [1, 0.5])
    assert d.max_inscribed_rho() == 0.25
