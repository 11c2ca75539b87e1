"""Discrete-time polynomial stochastic systems x+ = f(x, w) with a polynomial target set."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .moments import DisturbanceModel
from .poly import Polynomial, Variables, parse


@dataclass
class SystemModel:
    """State map ``f`` (n polynomials in (x, w)), disturbance law, and target
    G = {x : g_i(x) < 0 for all i}."""

    ctx: Variables
    f: list[Polynomial]
    disturbance: DisturbanceModel
    target: list[Polynomial]

    def __post_init__(self):
        self.f = list(self.f)
        self.target = list(self.target)
        if len(self.f) != self.ctx.n:
            raise ValueError(f"need {self.ctx.n} components of f, got {len(self.f)}")
        if self.disturbance.dimension != self.ctx.m:
            raise ValueError(f"disturbance has dimension {self.disturbance.dimension}, expected {self.ctx.m}")
        for p in self.f + self.target:
            if p.ctx != self.ctx:
                raise ValueError("all polynomials must share the system's variable context")
        if not self.target:
            raise ValueError("target set needs at least one polynomial")
        for g in self.target:
            if g.depends_on_w():
                raise ValueError("target polynomials may only depend on x")

    @property
    def n(self) -> int:
        return self.ctx.n

    @property
    def m(self) -> int:
        return self.ctx.m

    @classmethod
    def from_strings(cls, f: Sequence[str], disturbance: DisturbanceModel, target: Sequence[str],
                     n: int | None = None) -> "SystemModel":
        ctx = Variables(n if n is not None else len(f), disturbance.dimension)
        return cls(ctx, [parse(s, ctx) for s in f], disturbance, [parse(s, ctx) for s in target])

    def step(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Apply f row-wise to states ``x`` (N x n) and disturbances ``w`` (N x m)."""
        pts = np.hstack([np.atleast_2d(x), np.atleast_2d(w)])
        return np.column_stack([fi.evaluate_many(pts) for fi in self.f])

    def in_target(self, x: np.ndarray) -> np.ndarray:
        pts = _pad(np.atleast_2d(x), self.m)
        return np.all([g.evaluate_many(pts) < 0 for g in self.target], axis=0)

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "f": [str(p) for p in self.f],
                "disturbance": self.disturbance.to_dict(), "target": [str(g) for g in self.target]}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemModel":
        dist = DisturbanceModel(d["disturbance"]["kind"], d["disturbance"]["params"])
        return cls.from_strings(d["f"], dist, d["target"], n=d["n"])


def _pad(x: np.ndarray, m: int) -> np.ndarray:
    """Append zero disturbance columns so x-only polynomials can be evaluated."""
    return np.hstack([x, np.zeros((x.shape[0], m))])


def eval_x(p: Polynomial, x: np.ndarray) -> np.ndarray:
    return p.evaluate_many(_pad(np.atleast_2d(np.asarray(x, dtype=float)), p.ctx.m))
