"""Drift functions: radially unbounded V >= 0 whose expected increment is nonpositive
outside a compact set, found by SOS programming."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .moments import expect_w
from .poly import Polynomial, PowerCache, Variables, compose, x_dot_x
from .sdp import Settings, Status
from .sosc import GramCertificate, SosProgram, SosResult
from .system import SystemModel

log = logging.getLogger(__name__)

GAMMA_MIN = 1e-3
GRAM_TOL = 1e-6
DEFAULT_LADDER = (2, 4, 6)

NONEXISTENCE_NOTE = ("SOS infeasibility at a fixed degree does not prove that no drift function exists; "
                     "it only rules out certificates of this degree")


def build_delta_v(system: SystemModel, V: Polynomial) -> Polynomial:
    """Expected one-step increment E_w[V(f(x, w))] - V(x)."""
    if V.depends_on_w():
        raise ValueError("V must depend on x only")
    return expect_w(compose(V, system.f), system.disturbance) - V


@dataclass
class DriftSettings:
    gamma_min: float = GAMMA_MIN
    gram_tol: float = GRAM_TOL
    sdp: Settings = field(default_factory=Settings)


@dataclass
class DriftCertificate:
    V: Polynomial
    gamma0: float
    lambda0: float
    gamma1: float
    lambda1: float
    grams: dict[str, GramCertificate]
    degree: int
    residuals: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def compact_set_radius_sq(self) -> float | None:
        """Squared radius of the ball C outside which the drift is certified; None means C is empty."""
        return self.lambda1 / self.gamma1 if self.lambda1 > 0 else None

    def expressions(self, system: SystemModel) -> dict[str, Polynomial]:
        """The three polynomials that must be SOS, rebuilt from the certificate."""
        xx = x_dot_x(self.V.ctx)
        dv = build_delta_v(system, self.V)
        return {
            "V": self.V,
            "radial": self.V - xx * self.gamma0 + self.lambda0,
            "decrease": -dv - xx * self.gamma1 + self.lambda1,
        }

    def scaled(self, c: float) -> "DriftCertificate":
        return DriftCertificate(self.V * c, c * self.gamma0, c * self.lambda0, c * self.gamma1, c * self.lambda1,
                                {k: g.scaled(c) for k, g in self.grams.items()}, self.degree)

    def to_dict(self) -> dict:
        r2 = self.compact_set_radius_sq
        return {
            "kind": "drift",
            "degree": self.degree,
            "V": {"text": str(self.V), "terms": _terms(self.V)},
            "gamma0": self.gamma0,
            "lambda0": self.lambda0,
            "gamma1": self.gamma1,
            "lambda1": self.lambda1,
            "compact_set_radius_sq": "empty" if r2 is None else r2,
            "grams": {k: g.to_dict() for k, g in self.grams.items()},
            "residuals": {k: {"coefficient_residual": r, "min_eigenvalue": e} for k, (r, e) in self.residuals.items()},
            "objective": "maximize -lambda1",
        }

    @classmethod
    def from_dict(cls, ctx: Variables, d: dict) -> "DriftCertificate":
        return cls(_poly(ctx, d["V"]["terms"]), d["gamma0"], d["lambda0"], d["gamma1"], d["lambda1"],
                   {k: GramCertificate.from_dict(ctx, g) for k, g in d["grams"].items()}, d["degree"])


def _terms(p: Polynomial) -> list:
    return [[list(m), c] for m, c in p.items()]


def _poly(ctx: Variables, terms) -> Polynomial:
    return Polynomial(ctx, {tuple(m): float(c) for m, c in terms})


@dataclass
class DriftAttempt:
    degree: int
    status: str
    notes: list[str] = field(default_factory=list)


@dataclass
class DriftResult:
    certificate: DriftCertificate | None
    attempts: list[DriftAttempt]

    @property
    def feasible(self) -> bool:
        return self.certificate is not None

    def summary(self) -> str:
        lines = [f"degree {a.degree}: {a.status}" + (f" ({'; '.join(a.notes)})" if a.notes else "")
                 for a in self.attempts]
        if not self.feasible:
            lines.append(NONEXISTENCE_NOTE)
        return "\n".join(lines)


def drift_program(system: SystemModel, degree: int, gamma_min: float = GAMMA_MIN) -> SosProgram:
    if degree < 2 or degree % 2:
        raise ValueError(f"drift degree must be even and >= 2, got {degree}")
    ctx = system.ctx
    prog = SosProgram(ctx)
    V = prog.sos_poly("V", degree)
    g0 = prog.scalar("gamma0", lower=gamma_min)
    l0 = prog.scalar("lambda0")
    g1 = prog.scalar("gamma1", lower=gamma_min)
    l1 = prog.scalar("lambda1")
    xx = x_dot_x(ctx)
    cache = PowerCache(system.f)
    dv = V.compose(system.f, cache).expect(system.disturbance) - V
    prog.add_sos("radial", V - g0 * xx + l0)
    prog.add_sos("decrease", -dv - g1 * xx + l1)
    prog.maximize(-l1)
    return prog


def _certificate(res: SosResult, degree: int) -> DriftCertificate:
    v = res.values
    return DriftCertificate(v["V"], v["gamma0"], v["lambda0"], v["gamma1"], v["lambda1"], dict(res.grams), degree)


def synthesize_drift_at(system: SystemModel, degree: int, settings: DriftSettings | None = None
                        ) -> tuple[DriftCertificate | None, DriftAttempt]:
    settings = settings or DriftSettings()
    prog = drift_program(system, degree, settings.gamma_min)
    res = prog.solve(settings.sdp)
    if not res.ok:
        return None, DriftAttempt(degree, res.status.value, res.notes)
    cert = _certificate(res, degree)
    cert.residuals = res.constraint_residuals()
    bad = {k: rv for k, rv in cert.residuals.items()
           if rv[0] > settings.gram_tol * max(1.0, _scale(cert)) or rv[1] < -settings.gram_tol}
    if bad:
        notes = [f"{k}: residual {r:.2e}, min eig {e:.2e}" for k, (r, e) in bad.items()]
        return None, DriftAttempt(degree, "numerical certificate failure", notes)
    status = res.status.value
    log.info("drift degree %d: %s, gamma0=%.3g lambda1=%.3g", degree, status, cert.gamma0, cert.lambda1)
    return cert, DriftAttempt(degree, status)


def _scale(cert: DriftCertificate) -> float:
    return max((abs(c) for _, c in cert.V.items()), default=1.0)


def synthesize_drift(system: SystemModel, degree: int | None = None, settings: DriftSettings | None = None
                     ) -> DriftResult:
    """Search for a drift certificate at ``degree``, or along the ladder 2, 4, 6 when None."""
    ladder = (degree,) if degree is not None else DEFAULT_LADDER
    attempts = []
    for d in ladder:
        cert, attempt = synthesize_drift_at(system, d, settings)
        attempts.append(attempt)
        if cert is not None:
            return DriftResult(cert, attempts)
    return DriftResult(None, attempts)


INFEASIBLE_STATUSES = (Status.PRIMAL_INFEASIBLE.value, Status.DUAL_INFEASIBLE.value)
