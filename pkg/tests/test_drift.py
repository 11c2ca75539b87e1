import numpy as np
import pytest

from sosreach.drift import DriftCertificate, build_delta_v, drift_program, synthesize_drift
from sosreach.moments import DisturbanceModel
from sosreach.poly import Polynomial, parse
from sosreach.sdp import Status
from sosreach.sosc import validate_gram
from sosreach.system import SystemModel, eval_x

from conftest import example1_system


def linear_system():
    return SystemModel.from_strings(["0.5*x1 + w1"], DisturbanceModel.uniform(1.0), ["x1^2 - 1"])


def test_delta_v_linear():
    s = linear_system()
    dv = build_delta_v(s, parse("x1^2", s.ctx))
    assert dv.coeff((2, 0)) == pytest.approx(-0.75)
    assert dv.coeff((0, 0)) == pytest.approx(1 / 3)
    assert len(dv) == 2


def test_delta_v_example1_is_exact_quartic(example1):
    dv = build_delta_v(example1, parse("x1^2", example1.ctx))
    assert dv == Polynomial(example1.ctx, {(4, 0): 1 / 3})


def test_delta_v_identity_map():
    s = SystemModel.from_strings(["x1", "x2 + 0*w1"], DisturbanceModel.uniform(1.0), ["x1^2 - 1"], n=2)
    assert build_delta_v(s, parse("x1^4 + x1*x2 + 3", s.ctx)).is_zero()


def test_delta_v_matches_quadrature():
    s = linear_system()
    V = parse("x1^4 - x1^2", s.ctx)
    dv = build_delta_v(s, V)
    nodes, weights = np.polynomial.legendre.leggauss(10)
    for x in (-1.3, 0.2, 2.5):
        pts = (0.5 * x + nodes)[:, None]
        ref = float(np.sum(weights / 2 * eval_x(V, pts))) - V([x, 0.0])
        assert dv([x, 0.0]) == pytest.approx(ref, abs=1e-10)


def test_delta_v_rejects_w_dependence():
    s = linear_system()
    with pytest.raises(ValueError):
        build_delta_v(s, parse("x1*w1", s.ctx))


def test_degree_must_be_even():
    with pytest.raises(ValueError):
        drift_program(linear_system(), 3)


def test_linear_system_degree2():
    s = linear_system()
    res = synthesize_drift(s, 2)
    assert res.feasible
    c = res.certificate
    assert c.gamma0 >= 1e-3 - 1e-9 and c.gamma1 >= 1e-3 - 1e-9
    for name, (r, e) in c.residuals.items():
        assert r <= 1e-6 and e >= -1e-6, name


def test_example1_infeasible_on_ladder(example1):
    res = synthesize_drift(example1)
    assert not res.feasible
    assert [a.degree for a in res.attempts] == [2, 4, 6]
    assert all(a.status == Status.PRIMAL_INFEASIBLE.value for a in res.attempts)
    assert "does not prove" in res.summary()


def test_case1_certificate_properties(case1, case1_drift):
    c = case1_drift
    assert c.gamma0 >= 1e-3 - 1e-9
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, (10_000, 2))
    pts *= (10 * rng.random(10_000) ** 0.5 / np.linalg.norm(pts, axis=1))[:, None]
    ex = c.expressions(case1)
    xx = np.sum(pts ** 2, axis=1)
    z2 = sum(xx ** k for k in range(c.degree // 2 + 1))  # |z(x)|^2 bound for the Gram basis
    radial = eval_x(ex["radial"], pts)
    assert np.all(radial >= -1e-6 * (1 + z2))
    dv = eval_x(build_delta_v(case1, c.V), pts)
    r2 = c.compact_set_radius_sq
    outside = xx > (r2 if r2 is not None else -1)
    assert np.all(dv[outside] <= 1e-6 * (1 + z2[outside]))


def test_scaling_closure(case1, case1_drift):
    scaled = case1_drift.scaled(2.0)
    for name, p in scaled.expressions(case1).items():
        r, e = validate_gram(p, scaled.grams[name])
        assert r <= 2e-6 and e >= -2e-6, name


def test_certificate_json_round_trip(case1, case1_drift):
    d = case1_drift.to_dict()
    again = DriftCertificate.from_dict(case1.ctx, d)
    assert again.V == case1_drift.V
    assert again.lambda1 == case1_drift.lambda1
    assert d["compact_set_radius_sq"] == pytest.approx(case1_drift.lambda1 / case1_drift.gamma1)


def test_empty_compact_set_reported():
    c = DriftCertificate(Polynomial.zero(linear_system().ctx), 1e-3, 0.0, 1e-3, -0.5, {}, 2)
    assert c.compact_set_radius_sq is None
    assert c.to_dict()["compact_set_radius_sq"] == "empty"
