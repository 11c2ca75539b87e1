"""Variant functions: U with {U <= 0} inside the target and a robust one-step decrease
on a disturbance ball, found by alternating two convex SOS programs.

The decrease condition must hold as an SOS in (x, w):

    U(x) - U(f(x, w)) - delta - Lambda(x, w) (rho - w'w) - M(x, w) U(x)

and containment as an SOS in x for each target polynomial g_i:

    -g_i(x) + S_i(x) U(x) - alpha_i

with Lambda, M, S_i themselves SOS and delta, alpha_i >= eps; eps is maximized.  The
multiplier step fixes U and solves for (Lambda, M, S, delta, alpha, eps); the variant
step fixes the multipliers and solves for (U, delta, alpha, eps).  The radius rho of
the disturbance ball shrinks geometrically between rounds.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .moments import BallProbability, prob_ball
from .poly import Monomial, Polynomial, PowerCache, Variables, compose, embed, monomials_up_to, w_dot_w, x_dot_x
from .sdp import Settings, Status
from .sosc import GramCertificate, SosProgram, SosResult, validate_gram
from .system import SystemModel, eval_x

log = logging.getLogger(__name__)

SUCCESS_EPS = 1e-6
GRAM_TOL = 1e-6
C_MAX = 1e4
STAGNATION_ROUNDS = 5
INIT_SEED = 12345


class VariantError(ValueError):
    pass


@dataclass
class VariantParams:
    degree_U: int = 6
    degree_multipliers: int = 2
    rho0: float | None = None
    alpha: float = 0.9
    max_iter: int = 50
    C_max: float = C_MAX
    success_eps: float = SUCCESS_EPS
    gram_tol: float = GRAM_TOL
    initial: str = "auto"  # "ball", "drift" or "auto" (drift when a drift certificate is given)
    sdp: Settings = field(default_factory=Settings)

    def check(self):
        if not 0.0 < self.alpha < 1.0:
            raise VariantError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.rho0 is not None and not self.rho0 > 0:
            raise VariantError(f"rho0 must be positive, got {self.rho0}")
        if self.degree_U < 0 or self.degree_multipliers < 0 or self.degree_multipliers % 2:
            raise VariantError("degrees must be nonnegative and multiplier degree even")
        if self.max_iter < 1:
            raise VariantError("max_iter must be at least 1")
        if self.initial not in ("auto", "ball", "drift"):
            raise VariantError(f"unknown initial variant strategy {self.initial!r}")


def default_rho0(system: SystemModel) -> float:
    d = system.disturbance
    return min(d.params) ** 2 / 2 if d.bounded else 1.0


# --- initial guess -----------------------------------------------------------------


def _largest_ball(system: SystemModel, rng: np.random.Generator, samples: int = 4000):
    """Sampled center and radius of the largest ball inside G, searching growing boxes."""
    n = system.n
    for half in (1.0, 2.0, 4.0, 8.0, 16.0, 64.0):
        pts = rng.uniform(-half, half, size=(samples, n))
        inside = system.in_target(pts)
        if not inside.any():
            continue
        outside = pts[~inside]
        cand = pts[inside]
        if len(outside) == 0:
            # the box is entirely inside G; its inscribed ball is safe on the sample
            return np.zeros(n), half
        d2 = ((cand[:, None, :] - outside[None, :, :]) ** 2).sum(axis=2) if len(cand) * len(outside) < 4e7 else None
        if d2 is None:
            dist = np.array([np.sqrt(((outside - c) ** 2).sum(axis=1).min()) for c in cand])
        else:
            dist = np.sqrt(d2.min(axis=1))
        # the box edge also bounds what the sample can certify
        dist = np.minimum(dist, (half - np.abs(cand)).min(axis=1))
        best = int(np.argmax(dist))
        return cand[best], float(dist[best])
    raise VariantError("no interior point of the target set found by sampling")


def _ray_radius(system: SystemModel, center: np.ndarray, rng: np.random.Generator, n_dirs: int = 720,
                limit: float = 1e3) -> float:
    """Distance from ``center`` to the boundary of G, minimized over sampled directions."""
    n = system.n
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif n == 2:
        t = np.linspace(0, 2 * np.pi, n_dirs, endpoint=False)
        dirs = np.column_stack([np.cos(t), np.sin(t)])
    else:
        dirs = rng.standard_normal((n_dirs, n))
        dirs = np.vstack([dirs / np.linalg.norm(dirs, axis=1, keepdims=True), np.eye(n), -np.eye(n)])
    lo = np.zeros(len(dirs))
    hi = np.full(len(dirs), limit)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = system.in_target(center + mid[:, None] * dirs)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return float(lo.min())


def initial_variant(system: SystemModel, degree: int = 2, seed: int = INIT_SEED) -> Polynomial:
    """U0 = |x - c|^2 - r0^2 with r0 half the sampled inscribed radius of G around c.

    Candidate centers are the origin, the centroid of sampled interior points and the
    best sampled point; the radius around each is found by bisection along rays.
    """
    if degree < 2:
        raise VariantError("the initial variant needs degree >= 2")
    rng = np.random.default_rng(seed)
    center, _ = _largest_ball(system, rng)
    pts = rng.uniform(-1, 1, size=(4000, system.n)) * max(1.0, float(np.abs(center).max()) * 2)
    inner = pts[system.in_target(pts)]
    cands = [np.zeros(system.n), center] + ([inner.mean(axis=0)] if len(inner) else [])
    best_c, best_r = None, 0.0
    for c in cands:
        if not system.in_target(c[None, :])[0]:
            continue
        r = _ray_radius(system, c, rng)
        if r > best_r:
            best_c, best_r = c, r
    if best_c is None or best_r <= 0:
        raise VariantError("no interior point of the target set found by sampling")
    r0 = round(best_r, 9) / 2
    ctx = system.ctx
    U = Polynomial.constant(ctx, -r0 * r0)
    for i in range(system.n):
        xi = Polynomial.var(ctx, ctx.names[i]) - float(best_c[i])
        U = U + xi * xi
    return U


def initial_variant_from_drift(system: SystemModel, V: Polynomial, seed: int = INIT_SEED) -> Polynomial:
    """U0 = (V - c) / scale with c just below the smallest value of V outside G (sampled)."""
    rng = np.random.default_rng(seed)
    n = system.n
    # boundary of G found by sampling rays around the sampled center
    center, radius = _largest_ball(system, rng)
    dirs = rng.standard_normal((2000, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.linspace(radius * 0.5, 20.0, 400)
    lowest = math.inf
    for r in radii:
        pts = center + r * dirs
        out = ~system.in_target(pts)
        if out.any():
            lowest = min(lowest, float(eval_x(V, pts[out]).min()))
    v_center = float(eval_x(V, center[None, :])[0])
    if not math.isfinite(lowest) or lowest <= v_center:
        raise VariantError("drift function does not separate the target set from its complement")
    level = v_center + 0.5 * (lowest - v_center)
    U = V - level
    scale = max(abs(c) for _, c in U.items())
    return U.scale(1.0 / scale)


# --- the two convex steps ------------------------------------------------------------


def _joint_basis(ctx: Variables, degree: int) -> list[Monomial]:
    return embed(monomials_up_to(ctx.arity, degree), ctx, list(range(ctx.arity)))


def _x_basis(ctx: Variables, degree: int) -> list[Monomial]:
    return embed(monomials_up_to(ctx.n, degree), ctx, list(range(ctx.n)))


@dataclass
class StepResult:
    name: str
    status: Status
    epsilon: float | None = None
    U: Polynomial | None = None
    Lambda: Polynomial | None = None
    M: Polynomial | None = None
    S: list[Polynomial] = field(default_factory=list)
    delta: float | None = None
    alphas: list[float] = field(default_factory=list)
    grams: dict[str, GramCertificate] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status.usable and self.epsilon is not None


CHOP_REL = 1e-7


def _chop_all(polys: list[Polynomial], rel: float = CHOP_REL) -> list[Polynomial]:
    """Zero coefficients at solver-noise level, judged against the largest coefficient of the group."""
    big = max([1.0] + [abs(c) for p in polys for _, c in p.items()])
    return [Polynomial(p.ctx, {m: c for m, c in p.items() if abs(c) > rel * big}) for p in polys]


def _decrease_expr(system, U, Lambda, M, delta, rho, cache=None):
    ctx = system.ctx
    UF = U.compose(system.f, cache) if hasattr(U, "images") else compose(U, system.f, cache)
    ball = Polynomial.constant(ctx, rho) - w_dot_w(ctx)
    return U - UF - delta - Lambda * ball - M * U


def _containment_expr(g, S, U, alpha):
    return -g + S * U - alpha


def multiplier_step(system: SystemModel, U: Polynomial, rho: float, degree_multipliers: int = 2,
                    settings: Settings | None = None) -> StepResult:
    """Fix U and rho; find SOS multipliers and margins maximizing eps."""
    if not rho > 0:
        raise VariantError("rho must be positive")
    if U.depends_on_w():
        raise VariantError("U must depend on x only")
    t0 = time.perf_counter()
    ctx = system.ctx
    prog = SosProgram(ctx)
    Lam = prog.poly("Lambda", _joint_basis(ctx, degree_multipliers), sos=True)
    M = prog.poly("M", _joint_basis(ctx, degree_multipliers), sos=True)
    S = [prog.poly(f"S{i + 1}", _x_basis(ctx, degree_multipliers), sos=True) for i in range(len(system.target))]
    eps = prog.scalar("eps")
    delta = prog.scalar("delta")
    alphas = [prog.scalar(f"alpha{i + 1}") for i in range(len(system.target))]
    prog.add_sos("decrease", _decrease_expr(system, U, Lam, M, delta, rho))
    for i, g in enumerate(system.target):
        prog.add_sos(f"containment{i + 1}", _containment_expr(g, S[i], U, alphas[i]))
        prog.add_sos(f"alpha{i + 1}_margin", alphas[i] - eps)
    prog.add_sos("delta_margin", delta - eps)
    prog.maximize(eps)
    res = prog.solve(settings)
    out = StepResult("multiplier", res.status, notes=list(res.notes), U=U)
    if res.ok:
        v = res.values
        out.epsilon = v["eps"]
        chopped = _chop_all([v["Lambda"], v["M"]] + [v[f"S{i + 1}"] for i in range(len(system.target))])
        out.Lambda, out.M, out.S = chopped[0], chopped[1], chopped[2:]
        out.delta = v["delta"]
        out.alphas = [v[f"alpha{i + 1}"] for i in range(len(system.target))]
        out.grams = dict(res.grams)
    out.seconds = time.perf_counter() - t0
    return out


def variant_step(system: SystemModel, Lambda: Polynomial, M: Polynomial, S: list[Polynomial], rho: float,
                 degree_U: int = 6, C_max: float = C_MAX, settings: Settings | None = None) -> StepResult:
    """Fix the multipliers and rho; find U (coefficients boxed by C_max) and margins maximizing eps."""
    if not rho > 0:
        raise VariantError("rho must be positive")
    if len(S) != len(system.target):
        raise VariantError("need one containment multiplier per target polynomial")
    t0 = time.perf_counter()
    ctx = system.ctx
    prog = SosProgram(ctx)
    U = prog.poly("U", _x_basis(ctx, degree_U), bound=C_max)
    eps = prog.scalar("eps")
    delta = prog.scalar("delta")
    alphas = [prog.scalar(f"alpha{i + 1}") for i in range(len(system.target))]
    prog.add_sos("decrease", _decrease_expr(system, U, Lambda, M, delta, rho, PowerCache(system.f)))
    for i, g in enumerate(system.target):
        prog.add_sos(f"containment{i + 1}", _containment_expr(g, S[i], U, alphas[i]))
        prog.add_sos(f"alpha{i + 1}_margin", alphas[i] - eps)
    prog.add_sos("delta_margin", delta - eps)
    prog.maximize(eps)
    res = prog.solve(settings)
    out = StepResult("variant", res.status, notes=list(res.notes), Lambda=Lambda, M=M, S=list(S))
    if res.ok:
        v = res.values
        out.epsilon = v["eps"]
        out.U = v["U"]
        out.delta = v["delta"]
        out.alphas = [v[f"alpha{i + 1}"] for i in range(len(system.target))]
        out.grams = dict(res.grams)
    out.seconds = time.perf_counter() - t0
    return out


# --- certificates ------------------------------------------------------------------


@dataclass
class VariantCertificate:
    U: Polynomial
    Lambda: Polynomial
    M: Polynomial
    S: list[Polynomial]
    delta: float
    alphas: list[float]
    rho_star: float
    epsilon_slack: float
    grams: dict[str, GramCertificate]
    prob: BallProbability | None = None
    source_step: str = ""
    trace: list[dict] = field(default_factory=list)
    residuals: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def prob_lower_bound(self) -> float:
        return self.prob.lower if self.prob else 0.0

    def expressions(self, system: SystemModel, rho: float | None = None) -> dict[str, Polynomial]:
        rho = self.rho_star if rho is None else rho
        out = {"Lambda": self.Lambda, "M": self.M,
               "decrease": _decrease_expr(system, self.U, self.Lambda, self.M, self.delta, rho)}
        for i, g in enumerate(system.target):
            out[f"S{i + 1}"] = self.S[i]
            out[f"containment{i + 1}"] = _containment_expr(g, self.S[i], self.U, self.alphas[i])
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "variant",
            "U": {"text": str(self.U), "terms": _terms(self.U)},
            "Lambda": {"text": str(self.Lambda), "terms": _terms(self.Lambda)},
            "M": {"text": str(self.M), "terms": _terms(self.M)},
            "S": [{"text": str(s), "terms": _terms(s)} for s in self.S],
            "delta": self.delta,
            "alphas": list(self.alphas),
            "rho_star": self.rho_star,
            "epsilon_slack": self.epsilon_slack,
            "source_step": self.source_step,
            "decrease_probability": None if self.prob is None else self.prob.to_dict(),
            # constant margins: one-step decrease of at least delta with probability at least the bound
            "margins": {"delta": self.delta, "epsilon": self.prob_lower_bound},
            "grams": {k: g.to_dict() for k, g in self.grams.items()},
            "residuals": {k: {"coefficient_residual": r, "min_eigenvalue": e} for k, (r, e) in self.residuals.items()},
            # wall-clock timings are kept out so reruns serialize identically
            "trace": [{k: v for k, v in row.items() if k != "seconds"} for row in self.trace],
        }

    @classmethod
    def from_dict(cls, ctx: Variables, d: dict) -> "VariantCertificate":
        prob = None
        if d.get("decrease_probability"):
            p = d["decrease_probability"]
            prob = BallProbability(p["estimate"], p["lower_bound"], p["method"], p.get("samples", 0), p.get("seed"))
        return cls(_poly(ctx, d["U"]["terms"]), _poly(ctx, d["Lambda"]["terms"]), _poly(ctx, d["M"]["terms"]),
                   [_poly(ctx, s["terms"]) for s in d["S"]], d["delta"], list(d["alphas"]), d["rho_star"],
                   d["epsilon_slack"], {k: GramCertificate.from_dict(ctx, g) for k, g in d["grams"].items()},
                   prob, d.get("source_step", ""), list(d.get("trace", [])))


def _terms(p: Polynomial) -> list:
    return [[list(m), c] for m, c in p.items()]


def _poly(ctx: Variables, terms) -> Polynomial:
    return Polynomial(ctx, {tuple(m): float(c) for m, c in terms})


def validate_certificate(system: SystemModel, cert: VariantCertificate, rho: float | None = None,
                         tol: float = GRAM_TOL, grams: dict[str, GramCertificate] | None = None
                         ) -> dict[str, tuple[float, float, bool]]:
    """validate_gram on every SOS condition; residual tolerance is tol * (1 + coefficient scale)."""
    grams = cert.grams if grams is None else grams
    out = {}
    for name, p in cert.expressions(system, rho).items():
        r, e = validate_gram(p, grams[name])
        scale = max((abs(c) for _, c in p.items()), default=0.0)
        out[name] = (r, e, r <= tol * (1.0 + scale) and e >= -tol)
    return out


def _embed_gram(g: GramCertificate, basis: list[Monomial]) -> np.ndarray:
    pos = {m: i for i, m in enumerate(basis)}
    out = np.zeros((len(basis), len(basis)))
    idx = [pos[m] for m in g.basis]
    out[np.ix_(idx, idx)] = g.matrix
    return out


def shrink_rho(system: SystemModel, cert: VariantCertificate, rho_new: float) -> dict[str, GramCertificate]:
    """Grams certifying the same certificate at a smaller radius, without solving anything.

    Shrinking rho adds (rho - rho_new) * Lambda to the decrease expression, so its Gram
    gains (rho - rho_new) times Lambda's Gram (embedded in the union basis).
    """
    if not 0 < rho_new <= cert.rho_star:
        raise VariantError("the new radius must lie in (0, rho_star]")
    dec, lam = cert.grams["decrease"], cert.grams["Lambda"]
    basis = sorted(set(dec.basis) | set(lam.basis), key=lambda m: (sum(m), tuple(-e for e in m)))
    Q = _embed_gram(dec, basis) + (cert.rho_star - rho_new) * _embed_gram(lam, basis)
    grams = dict(cert.grams)
    grams["decrease"] = GramCertificate(system.ctx, basis, Q)
    return grams


# --- the alternating loop --------------------------------------------------------------


@dataclass
class VariantOutcome:
    certificate: VariantCertificate | None
    trace: list[dict]
    reason: str
    recommend_higher_degree: bool = False

    @property
    def success(self) -> bool:
        return self.certificate is not None


def _to_certificate(system, step: StepResult, mult: StepResult, rho: float, eps: float) -> VariantCertificate:
    """Assemble one consistent certificate from the step that achieved the slack."""
    grams = dict(step.grams)
    # the variant step does not re-certify the fixed multipliers; reuse the multiplier-step Grams
    for key in ["Lambda", "M"] + [f"S{i + 1}" for i in range(len(system.target))]:
        if key not in grams:
            grams[key] = mult.grams[key]
    return VariantCertificate(step.U, mult.Lambda, mult.M, list(mult.S), step.delta, list(step.alphas), rho, eps,
                              grams, source_step=step.name)


def synthesize_variant(system: SystemModel, params: VariantParams | None = None,
                       drift_V: Polynomial | None = None, U0: Polynomial | None = None,
                       prob_method: str = "auto", prob_seed: int | None = None) -> VariantOutcome:
    params = params or VariantParams()
    params.check()
    rho = params.rho0 if params.rho0 is not None else default_rho0(system)
    limit = system.disturbance.max_inscribed_rho()
    if rho > limit:
        log.warning("rho0 %.4g exceeds the disturbance support; clipped to %.4g", rho, limit)
        rho = limit
    if U0 is None:
        use_drift = params.initial == "drift" or (params.initial == "auto" and drift_V is not None)
        if use_drift:
            if drift_V is None:
                raise VariantError("initial='drift' needs a drift function")
            U0 = initial_variant_from_drift(system, drift_V)
        else:
            U0 = initial_variant(system, 2)
    if U0.degree() > params.degree_U:
        raise VariantError(f"initial variant has degree {U0.degree()} > degree_U = {params.degree_U}")
    U = U0
    rho0 = rho
    trace: list[dict] = []
    stuck = 0
    last_mult: StepResult | None = None
    for k in range(params.max_iter):
        rho = rho0 * params.alpha**k
        mult = multiplier_step(system, U, rho, params.degree_multipliers, params.sdp)
        if mult.ok:
            last_mult = mult
        var = None
        if last_mult is not None:
            var = variant_step(system, last_mult.Lambda, last_mult.M, last_mult.S, rho, params.degree_U,
                               params.C_max, params.sdp)
        e1 = mult.epsilon if mult.ok else None
        e2 = var.epsilon if var is not None and var.ok else None
        eps_k = max([e for e in (e1, e2) if e is not None], default=None)
        row = {"iteration": k, "rho": rho, "eps_multiplier": e1, "eps_variant": e2, "eps": eps_k,
               "status_multiplier": mult.status.value,
               "status_variant": None if var is None else var.status.value,
               "seconds": mult.seconds + (var.seconds if var is not None else 0.0)}
        trace.append(row)
        log.info("variant iteration %d: rho=%.4g eps1=%s eps2=%s", k, rho, e1, e2)
        if eps_k is not None and eps_k > params.success_eps:
            best = var if (e2 is not None and e2 >= (e1 if e1 is not None else -math.inf)) else mult
            cert = _to_certificate(system, best, last_mult, rho, eps_k)
            checks = validate_certificate(system, cert, tol=params.gram_tol)
            cert.residuals = {n: (r, e) for n, (r, e, _) in checks.items()}
            failed = [n for n, (_, _, ok) in checks.items() if not ok]
            if failed and best is var and e1 is not None and e1 > params.success_eps:
                # fall back to the other step's variables if they form a valid certificate
                alt = _to_certificate(system, mult, last_mult, rho, e1)
                checks = validate_certificate(system, alt, tol=params.gram_tol)
                alt.residuals = {n: (r, e) for n, (r, e, _) in checks.items()}
                if all(ok for *_, ok in checks.values()):
                    cert, failed = alt, []
            if not failed:
                cert.prob = prob_ball(system.disturbance, rho, method=prob_method,
                                      **({"seed": prob_seed} if prob_seed is not None else {}))
                cert.trace = trace
                return VariantOutcome(cert, trace, "positive slack")
            row["validation_failed"] = failed
            log.warning("iteration %d: slack positive but validation failed for %s", k, failed)
        if var is not None and var.ok:
            U = var.U
        if not mult.ok and (var is None or not var.ok):
            stuck += 1
            if stuck >= STAGNATION_ROUNDS:
                return VariantOutcome(None, trace, "stagnation: both steps infeasible", True)
        else:
            stuck = 0
    return VariantOutcome(None, trace, "iteration limit reached", True)
