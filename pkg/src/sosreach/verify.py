"""Sampling-based checks of certificates, independent of the SOS/SDP machinery.

Everything here evaluates the certificate polynomials on grids or Monte-Carlo
samples; nothing is taken from Gram matrices or solver output.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .moments import prob_ball
from .poly import Polynomial
from .system import SystemModel, eval_x

DEFAULT_BOX = (-3.0, 3.0)
DEFAULT_RESOLUTION = 101
ABS_TOL = 1e-6
REL_TOL = 1e-6
VERIFY_SEED = 20240607
DEFAULT_W_SAMPLES = 1000
CHUNK = 256
FAR_FIELD_FACTORS = (2.0, 5.0, 10.0)


class VerificationError(ValueError):
    pass


def box_bounds(box, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Accept (lo, hi) scalars or per-axis sequences."""
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    if np.any(hi <= lo):
        raise VerificationError(f"empty box {box}")
    return lo, hi


def grid_points(box, n: int, resolution: int) -> np.ndarray:
    """Row-major grid (last coordinate varies fastest), ``resolution`` points per axis."""
    if resolution < 2:
        raise VerificationError(f"grid resolution must be >= 2, got {resolution}")
    lo, hi = box_bounds(box, n)
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(n)]
    return np.array(list(itertools.product(*axes))) if n > 1 else axes[0][:, None]


@dataclass
class Check:
    name: str
    passed: bool
    margin: float  # worst (smallest) margin; negative means violated
    witness: list[float] | None
    count: int = 0  # number of points the check was evaluated on
    note: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst_margin": self.margin,
                "witness": self.witness, "points": self.count, "note": self.note}


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)
    sampling: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def merge(self, other: "VerificationReport") -> "VerificationReport":
        return VerificationReport(self.checks + other.checks, {**self.sampling, **other.sampling},
                                  {**self.tolerances, **other.tolerances})

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks],
                "sampling": self.sampling, "tolerances": self.tolerances}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            where = "" if c.witness is None else f" at {np.round(c.witness, 6).tolist()}"
            lines.append(f"{flag} {c.name}: worst margin {c.margin:.3e}{where}" + (f" ({c.note})" if c.note else ""))
        return "\n".join(lines)


def _tol(values: np.ndarray, abs_tol: float, rel_tol: float) -> float:
    scale = float(np.max(np.abs(values), initial=0.0))
    return abs_tol + rel_tol * scale


def _worst(name: str, margins: np.ndarray, pts: np.ndarray, tol: float, note: str = "") -> Check:
    if margins.size == 0:
        return Check(name, True, math.inf, None, 0, note or "no points to check")
    i = int(np.argmin(margins))
    return Check(name, bool(margins[i] >= -tol), float(margins[i]), pts[i].tolist(), int(margins.size), note)


def _sampling(box, n, resolution, **extra) -> dict:
    lo, hi = box_bounds(box, n)
    return {"box_lo": lo.tolist(), "box_hi": hi.tolist(), "resolution": resolution, **extra}


def sphere_points(n: int, radius: float, count: int = 720, seed: int = VERIFY_SEED) -> np.ndarray:
    """Evenly spaced points on a circle for n = 2, both signs for n = 1, seeded samples otherwise."""
    if n == 1:
        return np.array([[-radius], [radius]])
    if n == 2:
        th = 2 * np.pi * np.arange(count) / count
        return radius * np.column_stack([np.cos(th), np.sin(th)])
    d = np.random.default_rng(seed).standard_normal((count, n))
    return radius * d / np.linalg.norm(d, axis=1, keepdims=True)


def verify_drift(system: SystemModel, cert, box=DEFAULT_BOX, resolution: int = DEFAULT_RESOLUTION,
                 abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL,
                 far_field: Sequence[float] = FAR_FIELD_FACTORS) -> VerificationReport:
    """Grid check of the radial bound and of E[V(f)] - V <= 0 outside the ball C.

    The decrease is also sampled on spheres whose radii are ``far_field`` multiples of
    the box radius: a drift condition must hold globally, and a numerically accepted
    certificate whose leading coefficients are solver noise typically breaks there.
    """
    from .drift import build_delta_v

    n = system.n
    lo, hi = box_bounds(box, n)
    r2 = cert.compact_set_radius_sq
    if r2 is not None:
        r = math.sqrt(r2)
        if np.any(lo > -r) or np.any(hi < r):
            raise VerificationError(f"box does not contain the compact set C (radius {r:.4g})")
    pts = grid_points(box, n, resolution)
    xx = np.sum(pts ** 2, axis=1)
    V = eval_x(cert.V, pts)
    dV = eval_x(build_delta_v(system, cert.V), pts)
    tol_r = _tol(V, abs_tol, rel_tol)
    tol_d = _tol(dV, abs_tol, rel_tol)
    radial = V - cert.gamma0 * xx + cert.lambda0
    outside = np.ones(len(pts), bool) if r2 is None else xx > r2
    note = "C is empty; decrease required everywhere" if r2 is None else f"outside x'x > {r2:.6g}"
    checks = [
        _worst("radial_bound", radial, pts, tol_r),
        _worst("expected_decrease", -dV[outside], pts[outside], tol_d, note),
    ]
    if far_field:
        radius = float(np.max(np.abs(np.concatenate([lo, hi]))))
        dv_poly = build_delta_v(system, cert.V)
        far = np.vstack([sphere_points(n, f * radius) for f in far_field])
        far = far[np.sum(far ** 2, axis=1) > (r2 or 0.0)]
        vals = eval_x(dv_poly, far)
        checks.append(_worst("far_field_decrease", -vals, far, _tol(vals, abs_tol, rel_tol),
                             f"spheres at {list(far_field)} x box radius"))
    return VerificationReport(checks, _sampling(box, n, resolution),
                              {"abs": abs_tol, "rel": rel_tol, "radial": tol_r, "decrease": tol_d})


def verify_containment(U: Polynomial, target: Sequence[Polynomial], box=DEFAULT_BOX,
                       resolution: int = DEFAULT_RESOLUTION, alphas: Sequence[float] | None = None,
                       abs_tol: float = ABS_TOL) -> VerificationReport:
    """Every grid point with U(x) <= 0 must satisfy g_i(x) < 0 (or g_i <= -alpha_i + tol if given)."""
    n = U.ctx.n
    pts = grid_points(box, n, resolution)
    inside = eval_x(U, pts) <= 0
    sub = pts[inside]
    checks = []
    if not inside.any():
        checks.append(Check("containment", True, math.inf, None, 0, "empty sublevel set"))
    else:
        g = np.array([eval_x(gi, sub) for gi in target])
        margin = -np.max(g, axis=0)
        i = int(np.argmin(margin))
        checks.append(Check("containment", bool(margin[i] > 0), float(margin[i]), sub[i].tolist(), len(sub)))
        if alphas is not None:
            m2 = np.min(-g - np.asarray(alphas, dtype=float)[:, None], axis=0)
            checks.append(_worst("containment_margin", m2, sub, abs_tol))
    return VerificationReport(checks, _sampling(box, n, resolution), {"abs": abs_tol})


def ball_samples(m: int, rho: float, n_samples: int, seed: int = VERIFY_SEED) -> np.ndarray:
    """Uniform samples of the ball w'w <= rho, as many on its boundary sphere, and w = 0."""
    rng = np.random.default_rng(seed)
    r = math.sqrt(rho)
    d = rng.standard_normal((2 * n_samples, m))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    radii = r * rng.random(n_samples) ** (1.0 / m)
    interior = d[:n_samples] * radii[:, None]
    sphere = d[n_samples:] * r
    return np.vstack([np.zeros((1, m)), interior, sphere])


def robust_decrease_min(system: SystemModel, U: Polynomial, delta: float, rho: float, pts: np.ndarray,
                        w_samples: int = DEFAULT_W_SAMPLES, seed: int = VERIFY_SEED
                        ) -> tuple[np.ndarray, np.ndarray]:
    """min over sampled w of U(x) - U(f(x, w)) - delta, and the minimizing w, per point."""
    W = ball_samples(system.m, rho, w_samples, seed)
    nw = len(W)
    Ux = eval_x(U, pts)
    out = np.empty(len(pts))
    arg = np.empty((len(pts), system.m))
    for s in range(0, len(pts), CHUNK):
        xs = pts[s:s + CHUNK]
        X = np.repeat(xs, nw, axis=0)
        WW = np.tile(W, (len(xs), 1))
        vals = eval_x(U, system.step(X, WW)).reshape(len(xs), nw)
        j = np.argmin(-vals, axis=1)
        worst = vals[np.arange(len(xs)), j]
        out[s:s + CHUNK] = Ux[s:s + CHUNK] - worst - delta
        arg[s:s + CHUNK] = W[j]
    return out, arg


def verify_variant(system: SystemModel, cert, box=DEFAULT_BOX, resolution: int = DEFAULT_RESOLUTION,
                   w_samples: int = DEFAULT_W_SAMPLES, seed: int = VERIFY_SEED,
                   abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL) -> VerificationReport:
    """Robust one-step decrease on the ball w'w <= rho* for grid points with U(x) > 0,
    and a positive probability for that ball."""
    n = system.n
    pts = grid_points(box, n, resolution)
    Ux = eval_x(cert.U, pts)
    tol = _tol(Ux, abs_tol, rel_tol)
    pos = Ux > 0
    checks = []
    if cert.rho_star <= 0:
        checks.append(Check("robust_decrease", False, -math.inf, None, 0, "rho* must be positive"))
    else:
        margin, wmin = robust_decrease_min(system, cert.U, cert.delta, cert.rho_star, pts[pos], w_samples, seed)
        chk = _worst("robust_decrease", margin, pts[pos], tol)
        if margin.size:
            i = int(np.argmin(margin))
            chk.note = f"worst w {np.round(wmin[i], 6).tolist()}"
        checks.append(chk)
    pb = prob_ball(system.disturbance, max(cert.rho_star, 0.0)) if cert.rho_star > 0 else None
    lower = pb.lower if pb else 0.0
    checks.append(Check("ball_probability", lower > 0, lower, None, pb.samples if pb else 0,
                        f"method {pb.method}" if pb else "rho* not positive"))
    samp = _sampling(box, n, resolution, w_samples=w_samples, seed=seed, rho_star=cert.rho_star)
    return VerificationReport(checks, samp, {"abs": abs_tol, "rel": rel_tol, "decrease": tol})


@dataclass
class DecreaseEstimate:
    probability: float
    lower: float
    upper: float
    sigma: float
    hits: int
    samples: int
    seed: int


def estimate_decrease_prob(system: SystemModel, U: Polynomial, delta: float, x, n_samples: int = 100_000,
                           seed: int = VERIFY_SEED, confidence: float = 0.95) -> DecreaseEstimate:
    """Monte-Carlo estimate of P_w(U(f(x, w)) - U(x) <= -delta) with a Clopper-Pearson interval."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    Ux = float(eval_x(U, x)[0])
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_samples:
        k = min(200_000, n_samples - done)
        w = system.disturbance.sample(rng, k)
        fx = system.step(np.repeat(x, k, axis=0), w)
        hits += int(np.count_nonzero(eval_x(U, fx) - Ux <= -delta))
        done += k
    p = hits / n_samples
    ci = stats.binomtest(hits, n_samples).proportion_ci(confidence, method="exact")
    return DecreaseEstimate(p, float(ci.low), float(ci.high), math.sqrt(p * (1 - p) / n_samples),
                            hits, n_samples, seed)


@dataclass
class HEstimate:
    value: float
    point: list[float]
    box: tuple[list[float], list[float]]
    note: str = "sampled lower estimate of the supremum, not a certified bound"


def estimate_H(V: Polynomial, U: Polynomial, r: float, box=DEFAULT_BOX, resolution: int = 201,
               refine: bool = True) -> HEstimate:
    """Maximize U over {V <= r} by grid search plus a constrained local polish."""
    if r <= 0:
        raise ValueError("r must be positive")
    n = V.ctx.n
    lo, hi = box_bounds(box, n)
    pts = grid_points(box, n, resolution)
    Vv = eval_x(V, pts)
    on_edge = np.any(np.isclose(pts, lo) | np.isclose(pts, hi), axis=1)
    if np.min(Vv[on_edge]) <= r:
        raise VerificationError("sublevel set {V <= r} reaches the search box boundary; enlarge the box")
    feas = Vv <= r
    if not feas.any():
        raise VerificationError("no grid point satisfies V <= r; refine the grid")
    Uv = eval_x(U, pts)
    cand = np.flatnonzero(feas)
    i = cand[int(np.argmax(Uv[cand]))]
    best_x, best = pts[i], float(Uv[i])
    if refine:
        res = optimize.minimize(lambda z: -eval_x(U, z)[0], best_x, method="SLSQP",
                                bounds=list(zip(lo, hi)),
                                constraints=[{"type": "ineq", "fun": lambda z: r - eval_x(V, z)[0]}])
        z = _pull_inside(V, r, best_x, res.x)
        uz = float(eval_x(U, z)[0])
        if uz > best:
            best_x, best = z, uz
    return HEstimate(best, np.asarray(best_x).tolist(), (lo.tolist(), hi.tolist()))


def _pull_inside(V: Polynomial, r: float, a: np.ndarray, b: np.ndarray, steps: int = 60) -> np.ndarray:
    """Point on [a, b] closest to b with V <= r; a must be feasible."""
    if eval_x(V, b)[0] <= r:
        return b
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if eval_x(V, a + mid * (b - a))[0] <= r:
            lo = mid
        else:
            hi = mid
    return a + lo * (b - a)
