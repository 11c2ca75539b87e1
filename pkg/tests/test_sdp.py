import numpy as np
import pytest
from scipy.optimize import linprog

from sosreach.sdp import SdpError, SdpProblem, Settings, Status, elastic_problem, solve


def fixed_value():
    """maximize -t with a 1x1 block X = 2 and t = X."""
    return SdpProblem([1], 0, 1, b=[2, 0], psd=[[0, 0, 0, 0, 1], [1, 0, 0, 0, -1]], nonneg=[],
                      free=[[1, 0, 1]], c_free=[-1])


def min_eig_bound():
    """minimize x subject to [[x, 1], [1, x]] PSD."""
    return SdpProblem([2], 0, 1, b=[0, 0, 1], psd=[[0, 0, 0, 0, 1], [1, 0, 1, 1, 1], [2, 0, 0, 1, 1]], nonneg=[],
                      free=[[0, 0, -1], [1, 0, -1]], c_free=[-1])


def cauchy_schwarz_violation():
    """X11 = 1, X22 = 1, X12 = 2 cannot be PSD."""
    return SdpProblem([2], 0, 0, b=[1, 1, 2], psd=[[0, 0, 0, 0, 1], [1, 0, 1, 1, 1], [2, 0, 0, 1, 1]], nonneg=[],
                      free=[])


def lambda_max(A):
    """maximize -t subject to t I - A = X PSD; optimum -lambda_max(A)."""
    n = len(A)
    psd, free, b = [], [], []
    r = 0
    for p in range(n):
        for q in range(p, n):
            psd.append([r, 0, p, q, 1.0])
            if p == q:
                free.append([r, 0, -1.0])
            b.append(-A[p, q])
            r += 1
    return SdpProblem([n], 0, 1, b=b, psd=psd, nonneg=[], free=free, c_free=[-1.0])


def _check_optimal(prob, sol):
    assert sol.status == Status.OPTIMAL
    rel_gap = abs(sol.objective - sol.dual_objective) / (1 + abs(sol.objective))
    assert rel_gap <= 1e-8
    res = prob.apply(sol.X, sol.x_nonneg, sol.u) - prob.b
    assert np.max(np.abs(res), initial=0.0) <= 1e-8 * (1 + np.max(np.abs(prob.b)))
    for X in sol.X:
        assert np.linalg.eigvalsh(X).min() >= -1e-8


def test_fixed_value():
    prob = fixed_value()
    sol = solve(prob)
    _check_optimal(prob, sol)
    assert sol.objective == pytest.approx(-2.0, abs=1e-7)
    assert sol.X[0][0, 0] == pytest.approx(2.0, abs=1e-7)


def test_min_eig_bound():
    prob = min_eig_bound()
    sol = solve(prob)
    _check_optimal(prob, sol)
    assert sol.u[0] == pytest.approx(1.0, abs=1e-6)


def test_cauchy_schwarz_infeasible():
    assert solve(cauchy_schwarz_violation()).status == Status.PRIMAL_INFEASIBLE


def test_infeasible_without_presolve():
    sol = solve(cauchy_schwarz_violation(), facial_reduction=False)
    assert sol.status == Status.PRIMAL_INFEASIBLE


def test_structurally_empty():
    with pytest.raises(SdpError):
        SdpProblem([], 0, 0, b=[], psd=[], nonneg=[], free=[])


def test_row_without_variables_rejected():
    with pytest.raises(SdpError):
        SdpProblem([1], 0, 0, b=[1, 1], psd=[[0, 0, 0, 0, 1]], nonneg=[], free=[])


@pytest.mark.parametrize("seed", range(5))
def test_lambda_max_against_eigvalsh(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    B = rng.standard_normal((n, n))
    A = (B + B.T) / 2
    prob = lambda_max(A)
    sol = solve(prob)
    _check_optimal(prob, sol)
    assert -sol.objective == pytest.approx(np.linalg.eigvalsh(A).max(), abs=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_lp_against_linprog(seed):
    rng = np.random.default_rng(100 + seed)
    m, k = 4, 9
    A = rng.standard_normal((m, k))
    x0 = rng.random(k) + 0.1
    b = A @ x0
    c = -rng.random(k)  # maximize c'x with c < 0 keeps the problem bounded
    nonneg = [[i, j, A[i, j]] for i in range(m) for j in range(k)]
    prob = SdpProblem([], k, 0, b=b, psd=[], nonneg=nonneg, free=[], c_nonneg=c)
    sol = solve(prob)
    ref = linprog(-c, A_eq=A, b_eq=b, bounds=[(0, None)] * k, method="highs")
    assert sol.status == Status.OPTIMAL
    assert sol.objective == pytest.approx(-ref.fun, rel=1e-6, abs=1e-7)


def test_weak_duality_and_determinism():
    rng = np.random.default_rng(1)
    n1, n2, m = 5, 3, 10
    X0 = [(lambda B: B @ B.T)(rng.normal(size=(n, n))) for n in (n1, n2)]
    ent = [[r, k, p, q, rng.normal()] for r in range(m) for k, n in enumerate((n1, n2))
           for p in range(n) for q in range(p, n) if rng.random() < 0.4]
    b = np.zeros(m)
    for r, k, p, q, v in ent:
        b[r] += v * X0[k][p, q]
    c = [[0, p, p, -1.0] for p in range(n1)] + [[1, p, p, -1.0] for p in range(n2)]
    prob = SdpProblem([n1, n2], 0, 0, b=b, psd=ent, nonneg=[], free=[], c_psd=c)
    a, bsol = solve(prob), solve(prob)
    _check_optimal(prob, a)
    assert abs(a.objective - a.dual_objective) <= 1e-8 * (1 + abs(a.objective))
    assert a.iterations == bsol.iterations and a.objective == bsol.objective


def test_numpy_backend_matches_default():
    prob = min_eig_bound()
    a = solve(prob, backend="numpy")
    b = solve(prob)
    assert a.status == b.status == Status.OPTIMAL
    assert a.objective == pytest.approx(b.objective, abs=1e-9)


def test_serialization_round_trip(tmp_path):
    prob = min_eig_bound()
    prob.dump(tmp_path / "p.json")
    import json

    again = SdpProblem.from_dict(json.loads((tmp_path / "p.json").read_text()))
    assert solve(again).objective == pytest.approx(solve(prob).objective)


def test_elastic_problem_measures_violation():
    ela = elastic_problem(cauchy_schwarz_violation())
    sol = solve(ela, Settings(phase1=False))
    assert sol.status == Status.OPTIMAL
    assert -sol.objective > 0.5  # |X12| <= 1 forces at least one unit of violation
