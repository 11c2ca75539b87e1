"""Zero-mean disturbance models, closed-form moments, and the expectation over w."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .poly import Polynomial

UNIFORM_BOX = "uniform_box"
GAUSSIAN_DIAG = "gaussian_diag"

MC_SAMPLES = 1_000_000
MC_SEED = 20240601


@dataclass(frozen=True)
class DisturbanceModel:
    """Independent zero-mean coordinates: uniform on [-c_j, c_j] or N(0, sigma_j^2)."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in (UNIFORM_BOX, GAUSSIAN_DIAG):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(c) for c in self.params))
        if not self.params:
            raise ValueError("disturbance needs at least one coordinate")
        if any(not (c > 0 and math.isfinite(c)) for c in self.params):
            raise ValueError("half-widths / standard deviations must be positive and finite")

    @classmethod
    def uniform(cls, *half_widths: float) -> "DisturbanceModel":
        return cls(UNIFORM_BOX, half_widths)

    @classmethod
    def gaussian(cls, *sigmas: float) -> "DisturbanceModel":
        return cls(GAUSSIAN_DIAG, sigmas)

    @property
    def dimension(self) -> int:
        return len(self.params)

    @property
    def bounded(self) -> bool:
        return self.kind == UNIFORM_BOX

    def max_inscribed_rho(self) -> float:
        """Largest rho with {w'w <= rho} inside the support (inf for unbounded support)."""
        return min(self.params) ** 2 if self.bounded else math.inf

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        c = np.array(self.params)
        if self.kind == UNIFORM_BOX:
            return rng.uniform(-1.0, 1.0, size=(size, self.dimension)) * c
        return rng.standard_normal(size=(size, self.dimension)) * c

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}


def moment(d: DisturbanceModel, coordinate: int, k: int) -> float:
    """E[w_j^k] in closed form."""
    if k < 0:
        raise ValueError("moment order must be nonnegative")
    if k % 2:
        return 0.0
    c = d.params[coordinate]
    if d.kind == UNIFORM_BOX:
        return c**k / (k + 1)
    # (k-1)!! for even k
    return c**k * float(special.factorial2(k - 1, exact=True)) if k else 1.0


def expect_w(p: Polynomial, d: DisturbanceModel) -> Polynomial:
    """Integrate out the disturbance: x^a w^g  ->  x^a * prod_j E[w_j^g_j]."""
    n, m = p.ctx.n, p.ctx.m
    if m != d.dimension:
        raise ValueError(f"polynomial has {m} disturbance variables, model has {d.dimension}")
    out: dict[tuple[int, ...], float] = {}
    cache: dict[tuple[int, int], float] = {}
    for mono, c in p.items():
        factor = 1.0
        for j, k in enumerate(mono[n:]):
            if k:
                if (j, k) not in cache:
                    cache[j, k] = moment(d, j, k)
                factor *= cache[j, k]
                if factor == 0.0:
                    break
        if factor != 0.0:
            key = mono[:n] + (0,) * m
            out[key] = out.get(key, 0.0) + c * factor
    return Polynomial(p.ctx, out)


@dataclass(frozen=True)
class BallProbability:
    """P(w'w <= rho): point value (exact or Monte-Carlo) and a certified lower bound."""

    estimate: float
    lower: float
    method: str
    samples: int = 0
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "lower_bound": self.lower,
            "method": self.method,
            "samples": self.samples,
            "seed": self.seed,
        }


def _ball_volume(m: int, r: float) -> float:
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1) * r**m


def _disk_rect_area(r: float, a: float, b: float) -> float:
    """Area of {x^2 + y^2 <= r^2} intersected with [-a, a] x [-b, b]."""

    def F(x):
        x = min(x, r)
        return 0.5 * (x * math.sqrt(max(r * r - x * x, 0.0)) + r * r * math.asin(x / r))

    x0 = math.sqrt(max(r * r - b * b, 0.0))
    xa = min(a, r)
    if xa <= x0:
        quarter = b * xa
    else:
        quarter = b * x0 + F(xa) - F(x0)
    return 4.0 * quarter


def _analytic_lower(d: DisturbanceModel, rho: float) -> float:
    """Closed-form lower bound valid for every model: a dominated isotropic case."""
    m = d.dimension
    if d.kind == UNIFORM_BOX:
        r = min(math.sqrt(rho), min(d.params))
        return _ball_volume(m, r) / math.prod(2 * c for c in d.params)
    smax = max(d.params)
    return float(stats.chi2.cdf(rho / smax**2, m))


def _closed_form(d: DisturbanceModel, rho: float):
    m = d.dimension
    r = math.sqrt(rho)
    if d.kind == UNIFORM_BOX:
        c = d.params
        box = math.prod(2 * cj for cj in c)
        if r <= min(c):
            return _ball_volume(m, r) / box, "closed_form:ball_in_box"
        if rho >= sum(cj * cj for cj in c):
            return 1.0, "closed_form:box_in_ball"
        if m == 1:
            return min(r, c[0]) / c[0], "closed_form:interval"
        if m == 2:
            return _disk_rect_area(r, c[0], c[1]) / box, "closed_form:disk_box"
        return None
    if len(set(d.params)) == 1:
        return float(stats.chi2.cdf(rho / d.params[0] ** 2, m)), "closed_form:chi2"
    return None


def prob_ball_mc(d: DisturbanceModel, rho: float, samples: int = MC_SAMPLES, seed: int = MC_SEED,
                 chunk: int = 200_000) -> tuple[int, int]:
    """Count hits of {w'w <= rho}; chunks use seeds spawned from ``seed``."""
    hits = 0
    n_chunks = -(-samples // chunk)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    done = 0
    for ss in children:
        size = min(chunk, samples - done)
        w = d.sample(np.random.default_rng(ss), size)
        hits += int(np.count_nonzero(np.einsum("ij,ij->i", w, w) <= rho))
        done += size
    return hits, samples


def clopper_pearson_lower(hits: int, n: int, confidence: float = 0.99) -> float:
    if hits == 0:
        return 0.0
    return float(stats.beta.ppf(1.0 - confidence, hits, n - hits + 1))


def prob_ball(d: DisturbanceModel, rho: float, method: str = "auto", samples: int = MC_SAMPLES,
              seed: int = MC_SEED) -> BallProbability:
    """Probability that the disturbance lies in the ball {w'w <= rho}.

    ``method="auto"`` uses a closed form where one exists and Monte Carlo otherwise;
    ``method="mc"`` forces sampling.  The lower bound is never below the analytic bound
    from the inscribed (uniform) or dominating isotropic (Gaussian) case, so it is
    strictly positive for every rho > 0.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    analytic = _analytic_lower(d, rho)
    if method == "auto":
        cf = _closed_form(d, rho)
        if cf is not None:
            value, how = cf
            return BallProbability(value, value, how)
    elif method != "mc":
        raise ValueError(f"unknown method {method!r}")
    hits, n = prob_ball_mc(d, rho, samples, seed)
    lower = max(clopper_pearson_lower(hits, n), analytic)
    return BallProbability(hits / n, lower, "monte_carlo", samples=n, seed=seed)
