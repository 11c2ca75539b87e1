"""Run configuration read from an INI file.

Schema (keys not listed are rejected)::

    [system]
    n = 2                          ; state dimension
    f1 = 0.3*x1 + 0.5*x2^3 + w1    ; one line per state component, in x1..xn and w1..wm
    f2 = 0.8*x2 + w2
    disturbance = uniform          ; uniform (params: half-widths) or gaussian (params: std devs)
    disturbance_params = 1, 1
    target1 = x1^2 + x2^2 - 1      ; target set is {x : target_i(x) < 0 for all i}

    [drift]
    degrees = 2, 4, 6              ; ladder tried in order (a single value fixes the degree)
    gamma_min = 1e-3

    [variant]
    degree_u = 6
    degree_multipliers = 2
    rho0 = auto                    ; auto = (smallest half-width)^2 / 2, or 1 when unbounded
    alpha = 0.9
    max_iter = 50
    c_max = 1e4
    initial = auto                 ; auto, ball or drift

    [verify]
    box = -3, 3
    resolution = 101
    w_samples = 1000
    seed = 20240607

    [output]
    dir = out
    grids = V, deltaV, U, robust_decrease_min
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .drift import DEFAULT_LADDER, GAMMA_MIN
from .moments import DisturbanceModel
from .poly import ParseError
from .system import SystemModel
from .variant import C_MAX, VariantParams
from .verify import DEFAULT_RESOLUTION, DEFAULT_W_SAMPLES, VERIFY_SEED

GRID_QUANTITIES = ("V", "deltaV", "U", "robust_decrease_min")

_KNOWN = {
    "system": {"n", "disturbance", "disturbance_params"},
    "drift": {"degrees", "gamma_min"},
    "variant": {"degree_u", "degree_multipliers", "rho0", "alpha", "max_iter", "c_max", "initial"},
    "verify": {"box", "resolution", "w_samples", "seed"},
    "output": {"dir", "grids"},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    system: SystemModel
    drift_degrees: tuple[int, ...] = DEFAULT_LADDER
    gamma_min: float = GAMMA_MIN
    variant: VariantParams = field(default_factory=VariantParams)
    box: tuple[float, float] = (-3.0, 3.0)
    resolution: int = DEFAULT_RESOLUTION
    w_samples: int = DEFAULT_W_SAMPLES
    seed: int = VERIFY_SEED
    out_dir: Path = Path("out")
    grids: tuple[str, ...] = GRID_QUANTITIES
    source: str = ""

    def with_overrides(self, degree=None, rho0=None, alpha=None, max_iter=None, seed=None, out=None,
                       grid_box=None, grid_res=None) -> "RunConfig":
        cfg = replace(self, variant=replace(self.variant))
        if degree is not None:
            cfg.drift_degrees = (degree,)
        if rho0 is not None:
            cfg.variant.rho0 = rho0
        if alpha is not None:
            cfg.variant.alpha = alpha
        if max_iter is not None:
            cfg.variant.max_iter = max_iter
        if seed is not None:
            cfg.seed = seed
        if out is not None:
            cfg.out_dir = Path(out)
        if grid_box is not None:
            cfg.box = tuple(grid_box)
        if grid_res is not None:
            cfg.resolution = grid_res
        cfg.validate()
        return cfg

    def validate(self):
        for d in self.drift_degrees:
            if d < 2 or d % 2:
                raise ConfigError(f"drift degrees must be even and >= 2, got {d}")
        try:
            self.variant.check()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.variant.degree_U % 2:
            raise ConfigError(f"degree_u must be even, got {self.variant.degree_U}")
        if self.resolution < 2:
            raise ConfigError(f"resolution must be >= 2, got {self.resolution}")
        if not self.box[0] < self.box[1]:
            raise ConfigError(f"box must satisfy lo < hi, got {self.box}")
        if self.w_samples < 1:
            raise ConfigError("w_samples must be >= 1")
        bad = [g for g in self.grids if g not in GRID_QUANTITIES]
        if bad:
            raise ConfigError(f"unknown grid quantities {bad}; choose from {GRID_QUANTITIES}")

    def to_dict(self) -> dict:
        v = self.variant
        return {
            "system": self.system.to_dict(),
            "drift": {"degrees": list(self.drift_degrees), "gamma_min": self.gamma_min},
            "variant": {"degree_U": v.degree_U, "degree_multipliers": v.degree_multipliers, "rho0": v.rho0,
                        "alpha": v.alpha, "max_iter": v.max_iter, "C_max": v.C_max, "initial": v.initial},
            "verify": {"box": list(self.box), "resolution": self.resolution, "w_samples": self.w_samples,
                       "seed": self.seed},
        }


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None


def _get(sec, key, conv, default, what):
    if key not in sec:
        return default
    try:
        return conv(sec[key])
    except ValueError:
        raise ConfigError(f"{what}: cannot read {sec[key]!r}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str.lower
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for name in cp.sections():
        if name not in _KNOWN:
            raise ConfigError(f"unknown section [{name}]")
        for key in cp[name]:
            ok = key in _KNOWN[name] or (name == "system" and (key[:1] == "f" or key.startswith("target")))
            if not ok:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
    if "system" not in cp:
        raise ConfigError("missing [system] section")
    sec = cp["system"]
    system = _system(sec)

    cfg = RunConfig(system, source=str(path))
    if "drift" in cp:
        d = cp["drift"]
        if "degrees" in d:
            cfg.drift_degrees = tuple(int(v) for v in _floats(d["degrees"], "drift.degrees"))
        cfg.gamma_min = _get(d, "gamma_min", float, GAMMA_MIN, "drift.gamma_min")
    if "variant" in cp:
        v = cp["variant"]
        rho0 = v.get("rho0", "auto").strip()
        cfg.variant = VariantParams(
            degree_U=_get(v, "degree_u", int, 6, "variant.degree_u"),
            degree_multipliers=_get(v, "degree_multipliers", int, 2, "variant.degree_multipliers"),
            rho0=None if rho0 == "auto" else _get(v, "rho0", float, None, "variant.rho0"),
            alpha=_get(v, "alpha", float, 0.9, "variant.alpha"),
            max_iter=_get(v, "max_iter", int, 50, "variant.max_iter"),
            C_max=_get(v, "c_max", float, C_MAX, "variant.c_max"),
            initial=v.get("initial", "auto").strip(),
        )
    if "verify" in cp:
        v = cp["verify"]
        if "box" in v:
            box = _floats(v["box"], "verify.box")
            if len(box) != 2:
                raise ConfigError("verify.box needs two numbers: lo, hi")
            cfg.box = (box[0], box[1])
        cfg.resolution = _get(v, "resolution", int, DEFAULT_RESOLUTION, "verify.resolution")
        cfg.w_samples = _get(v, "w_samples", int, DEFAULT_W_SAMPLES, "verify.w_samples")
        cfg.seed = _get(v, "seed", int, VERIFY_SEED, "verify.seed")
    if "output" in cp:
        o = cp["output"]
        if "dir" in o:
            cfg.out_dir = Path(o["dir"])
        if "grids" in o:
            cfg.grids = tuple(t.strip() for t in o["grids"].split(",") if t.strip())
    cfg.validate()
    return cfg


def _system(sec) -> SystemModel:
    n = _get(sec, "n", int, None, "system.n")
    if n is None or n < 1:
        raise ConfigError("system.n must be a positive integer")
    kind = sec.get("disturbance", "").strip().lower()
    params = _floats(sec.get("disturbance_params", ""), "system.disturbance_params")
    if not params:
        raise ConfigError("system.disturbance_params is required")
    try:
        if kind == "uniform":
            dist = DisturbanceModel.uniform(*params)
        elif kind == "gaussian":
            dist = DisturbanceModel.gaussian(*params)
        else:
            raise ConfigError(f"system.disturbance must be 'uniform' or 'gaussian', got {kind!r}")
    except ValueError as exc:
        raise ConfigError(f"disturbance: {exc}") from None
    f = []
    for i in range(1, n + 1):
        if f"f{i}" not in sec:
            raise ConfigError(f"missing system.f{i}")
        f.append(sec[f"f{i}"])
    extra = [k for k in sec if k[:1] == "f" and k not in {f"f{i}" for i in range(1, n + 1)}]
    if extra:
        raise ConfigError(f"unexpected keys {extra} in [system]")
    targets = [sec[k] for k in sorted((k for k in sec if k.startswith("target")),
                                      key=lambda k: int(k[6:] or 0) if k[6:].isdigit() or not k[6:] else -1)]
    if not targets:
        raise ConfigError("system needs at least one target polynomial (target1 = ...)")
    try:
        return SystemModel.from_strings(f, dist, targets, n=n)
    except (ParseError, ValueError) as exc:
        raise ConfigError(f"system: {exc}") from None
