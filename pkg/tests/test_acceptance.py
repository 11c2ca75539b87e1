"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line and the lines are repeated in the terminal summary.
Criteria 2 and 3 are expected to fail: see README (known limitations).
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import _quadrature_expectation_reference as quad_reference
from conftest import case1_system, example1_system
from sosreach.cli import EXIT_OK, run
from sosreach.config import load_config
from sosreach.drift import build_delta_v, synthesize_drift
from sosreach.moments import DisturbanceModel, expect_w, prob_ball, prob_ball_mc
from sosreach.poly import Polynomial, Variables, monomials_up_to, parse
from sosreach.sdp import SdpProblem, Status, solve
from sosreach.sosc import GramCertificate, SosProgram, gram_basis, validate_gram
from sosreach.system import SystemModel
from sosreach.variant import VariantParams, shrink_rho, synthesize_variant, validate_certificate
from sosreach.verify import estimate_decrease_prob, verify_containment, verify_drift, verify_variant

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TOL = 1e-6


def test_case1_drift(criterion):
    rec = criterion(1, "case 1 drift at degree 6, grid check on [-3, 3]^2 at 101^2")
    t0 = time.perf_counter()
    system = case1_system()
    res = synthesize_drift(system, 6)
    assert res.feasible, res.summary()
    cert = res.certificate
    assert cert.degree == 6 and cert.gamma0 >= 1e-3
    rep = verify_drift(system, cert, (-3, 3), 101, abs_tol=TOL, rel_tol=TOL)
    elapsed = time.perf_counter() - t0
    rec.detail = f"gamma0={cert.gamma0:.3g}, C radius^2={cert.compact_set_radius_sq:.3g}, {elapsed:.1f}s"
    assert rep.passed, rep.summary()
    assert elapsed < 120


def test_case1_variant(criterion):
    rec = criterion(2, "case 1 variant, degree_U 6, degree-2 multipliers, alpha 0.9, 50 iterations")
    system = case1_system()
    t0 = time.perf_counter()
    out = synthesize_variant(system, VariantParams(degree_U=6, degree_multipliers=2, alpha=0.9, max_iter=50))
    rec.detail = f"{out.reason} after {len(out.trace)} iterations, {time.perf_counter() - t0:.1f}s"
    assert out.success, out.reason
    c = out.certificate
    assert c.epsilon_slack > 1e-6 and c.rho_star > 0
    assert verify_variant(system, c).passed
    assert verify_containment(c.U, system.target, alphas=c.alphas).passed


def test_case2_pipeline(criterion, tmp_path):
    rec = criterion(3, "case 2 drift + variant + verification end to end")
    cfg = load_config(CONFIGS / "case2.ini").with_overrides(out=tmp_path)
    t0 = time.perf_counter()
    code = run("all", cfg)
    rec.detail = f"exit code {code}, {time.perf_counter() - t0:.1f}s"
    assert code == EXIT_OK, (tmp_path / "summary.txt").read_text()


def test_example1_oracles(criterion):
    rec = criterion(4, "example 1: exact drift increment, infeasible ladder, decrease probability")
    system = example1_system()
    dv = build_delta_v(system, parse("x1^2", system.ctx))
    assert dv.terms == (parse("x1^4", system.ctx) * (1.0 / 3.0)).terms
    res = synthesize_drift(system)
    assert [a.degree for a in res.attempts][:3] == [2, 4, 6]
    assert not res.feasible
    U = parse("x1^2 - 1", system.ctx)
    worst = 0.0
    for x in (2.0, 3.0):
        est = estimate_decrease_prob(system, U, 0.5, [x], n_samples=1_000_000, seed=17)
        exact = math.sqrt(x * x - 0.5) / (x * x)
        z = abs(est.probability - exact) / math.sqrt(exact * (1 - exact) / est.samples)
        worst = max(worst, z)
    rec.detail = f"worst deviation {worst:.2f} sigma"
    assert worst <= 3.0


def test_sos_round_trip(criterion):
    rec = criterion(5, "100 random Gram round trips and the Motzkin polynomial")
    rng = np.random.default_rng(2024)
    worst_r, worst_e = 0.0, 0.0
    for _ in range(100):
        n = int(rng.integers(1, 4))
        degree = int(rng.choice([2, 4, 6]))
        ctx = Variables(n)
        basis = gram_basis(ctx, degree)
        A = rng.standard_normal((len(basis), int(rng.integers(1, len(basis) + 1))))
        p = GramCertificate(ctx, basis, A @ A.T).polynomial()
        prog = SosProgram(ctx)
        prog.add_sos("p", p)
        res = prog.solve()
        assert res.ok, (n, degree, res.status)
        r, e = validate_gram(p, res.grams["p"])
        worst_r, worst_e = max(worst_r, r), min(worst_e, e)
    ctx = Variables(2)
    prog = SosProgram(ctx)
    prog.add_sos("m", parse("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", ctx))
    motzkin = prog.solve().status
    rec.detail = f"max residual {worst_r:.1e}, min eigenvalue {worst_e:.1e}, Motzkin {motzkin.value}"
    assert worst_r <= 1e-8 and worst_e >= -1e-8
    assert motzkin == Status.PRIMAL_INFEASIBLE


def _sdp_examples():
    fixed = SdpProblem([1], 0, 1, b=[2, 0], psd=[[0, 0, 0, 0, 1], [1, 0, 0, 0, -1]], nonneg=[],
                       free=[[1, 0, 1]], c_free=[-1])
    eig = SdpProblem([2], 0, 1, b=[0, 0, 1], psd=[[0, 0, 0, 0, 1], [1, 0, 1, 1, 1], [2, 0, 0, 1, 1]], nonneg=[],
                     free=[[0, 0, -1], [1, 0, -1]], c_free=[-1])
    infeasible = SdpProblem([2], 0, 0, b=[1, 1, 2], psd=[[0, 0, 0, 0, 1], [1, 0, 1, 1, 1], [2, 0, 0, 1, 1]],
                            nonneg=[], free=[])
    return [(fixed, Status.OPTIMAL, -2.0), (eig, Status.OPTIMAL, -1.0), (infeasible, Status.PRIMAL_INFEASIBLE, None)]


def test_sdp_examples(criterion):
    rec = criterion(6, "SDP examples: statuses, relative gap, residuals")
    worst_gap, worst_res = 0.0, 0.0
    for prob, status, objective in _sdp_examples():
        sol = solve(prob)
        assert sol.status == status
        if status != Status.OPTIMAL:
            continue
        assert sol.objective == pytest.approx(objective, abs=1e-6)
        gap = abs(sol.objective - sol.dual_objective) / (1 + abs(sol.objective))
        res = prob.apply(sol.X, sol.x_nonneg, sol.u) - prob.b
        worst_gap = max(worst_gap, gap)
        worst_res = max(worst_res, float(np.max(np.abs(res))))
        assert all(np.linalg.eigvalsh(X).min() >= -1e-8 for X in sol.X)
    rec.detail = f"max gap {worst_gap:.1e}, max residual {worst_res:.1e}"
    assert worst_gap <= 1e-6 and worst_res <= 1e-8


def test_rho_shrink(criterion):
    rec = criterion(7, "radius shrink to 0.9 rho* re-validates without re-solving")
    system = SystemModel.from_strings(["0", "0"], DisturbanceModel.uniform(1, 1), ["x1^2 + x2^2 - 1"], n=2)
    out = synthesize_variant(system, VariantParams(max_iter=5))
    assert out.success
    c = out.certificate
    rho = 0.9 * c.rho_star
    checks = validate_certificate(system, c, rho=rho, grams=shrink_rho(system, c, rho))
    worst = max(r for r, _, _ in checks.values())
    rec.detail = f"rho*={c.rho_star:.3g}, worst residual {worst:.1e}"
    assert all(ok for *_, ok in checks.values()), checks
    # on f = 0 the multiplier on the radius vanishes, so also shrink a certificate where it does not
    noisy = SystemModel.from_strings(["0.5*x1 + 0.2*w1", "0.5*x2 + 0.2*w2"], DisturbanceModel.uniform(1, 1),
                                     ["x1^2 + x2^2 - 1"])
    out = synthesize_variant(noisy, VariantParams(max_iter=5, degree_U=2))
    assert out.success and not out.certificate.Lambda.is_zero()
    c = out.certificate
    rho = 0.9 * c.rho_star
    checks = validate_certificate(noisy, c, rho=rho, grams=shrink_rho(noisy, c, rho))
    assert all(ok for *_, ok in checks.values()), checks


def test_moment_engine(criterion):
    rec = criterion(8, "expectations against quadrature, ball probabilities against Monte Carlo")
    rng = np.random.default_rng(8)
    ctx = Variables(2, 2)
    d = DisturbanceModel.uniform(1.0, 0.5)
    monos = monomials_up_to(ctx.arity, 6)
    worst = 0.0
    for _ in range(100):
        chosen = rng.choice(len(monos), size=12, replace=False)
        p = Polynomial(ctx, {monos[i]: rng.normal() for i in chosen})
        got = expect_w(p, d)
        ref = quad_reference(p, d)
        for key in set(ref) | set(got.terms):
            worst = max(worst, abs(got.coeff(key) - ref.get(key, 0.0)))
    zmax = 0.0
    for model, rho in [(DisturbanceModel.uniform(1, 1), 0.5), (DisturbanceModel.uniform(1, 1), 1.5),
                       (DisturbanceModel.uniform(0.5, 0.5), 0.125), (DisturbanceModel.gaussian(1, 1), 1.0),
                       (DisturbanceModel.uniform(1.0), 0.3)]:
        exact = prob_ball(model, rho)
        assert exact.method.startswith("closed_form")
        hits, n = prob_ball_mc(model, rho, samples=400_000, seed=5)
        zmax = max(zmax, abs(hits / n - exact.estimate) / math.sqrt(exact.estimate * (1 - exact.estimate) / n))
    rec.detail = f"max expectation error {worst:.1e}, worst ball deviation {zmax:.2f} sigma"
    assert worst <= 1e-9 and zmax <= 3.0
