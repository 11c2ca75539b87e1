"""Command line front end: synthesize, verify and export certificates for a configured system."""
from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .drift import DriftCertificate, DriftSettings, build_delta_v, synthesize_drift
from .serialize import certificate_document, load_certificate, write_grid_csv, write_json
from .system import SystemModel, eval_x
from .variant import VariantCertificate, VariantError, synthesize_variant
from .verify import VerificationError, VerificationReport, grid_points, robust_decrease_min, verify_containment, \
    verify_drift, verify_variant

log = logging.getLogger("sosreach")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SYNTHESIS = 2
EXIT_VERIFY = 3

DRIFT_FILE = "drift_certificate.json"
VARIANT_FILE = "variant_certificate.json"


def emit_grid(quantity: str, system: SystemModel, box, resolution: int, drift: DriftCertificate | None = None,
              variant: VariantCertificate | None = None, w_samples: int = 1000, seed: int = 0
              ) -> tuple[np.ndarray, np.ndarray]:
    """Grid values of V, deltaV, U or the sampled robust-decrease minimum (row-major)."""
    pts = grid_points(box, system.n, resolution)
    if quantity in ("V", "deltaV"):
        if drift is None:
            raise ValueError(f"grid {quantity} needs a drift certificate")
        p = drift.V if quantity == "V" else build_delta_v(system, drift.V)
        return pts, eval_x(p, pts)
    if quantity in ("U", "robust_decrease_min"):
        if variant is None:
            raise ValueError(f"grid {quantity} needs a variant certificate")
        if quantity == "U":
            return pts, eval_x(variant.U, pts)
        vals, _ = robust_decrease_min(system, variant.U, variant.delta, variant.rho_star, pts, w_samples, seed)
        return pts, vals
    raise ValueError(f"unknown grid quantity {quantity!r}")


@dataclass
class Run:
    cfg: RunConfig
    summary: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    files: list[str] = field(default_factory=list)
    synthesis_failed: bool = False
    verification_failed: bool = False
    drift: DriftCertificate | None = None
    variant: VariantCertificate | None = None

    @property
    def out(self) -> Path:
        return self.cfg.out_dir

    def write(self, name: str, obj) -> None:
        write_json(self.out / name, obj)
        self.files.append(name)

    def say(self, text: str) -> None:
        print(text)
        self.summary.append(text)


def _do_drift(run: Run) -> None:
    cfg = run.cfg
    t0 = time.perf_counter()
    ladder = cfg.drift_degrees
    res = None
    attempts = []
    for d in ladder:
        res = synthesize_drift(cfg.system, d, DriftSettings(gamma_min=cfg.gamma_min))
        attempts += res.attempts
        if res.feasible:
            break
    run.timings["drift_synthesis"] = time.perf_counter() - t0
    trace = [{"degree": a.degree, "status": a.status, "notes": a.notes} for a in attempts]
    for a in attempts:
        run.say(f"drift degree {a.degree}: {a.status}" + (f" ({'; '.join(a.notes)})" if a.notes else ""))
    if not res.feasible:
        run.synthesis_failed = True
        run.write("drift_trace.json", {"attempts": trace, "result": "no drift certificate found",
                                       "note": res.summary().splitlines()[-1]})
        run.say("drift: no certificate at the tried degrees (this does not rule out higher degrees)")
        return
    run.drift = res.certificate
    doc = certificate_document(cfg.system, res.certificate)
    doc["attempts"] = trace
    run.write(DRIFT_FILE, doc)
    c = res.certificate
    r2 = c.compact_set_radius_sq
    run.say(f"drift: V of degree {c.degree}, gamma0={c.gamma0:.4g}, gamma1={c.gamma1:.4g}, lambda1={c.lambda1:.4g}, "
            f"C = " + ("empty" if r2 is None else f"ball of radius {np.sqrt(r2):.4g}"))


def _do_variant(run: Run) -> None:
    cfg = run.cfg
    t0 = time.perf_counter()
    params = cfg.variant
    drift_V = run.drift.V if run.drift is not None else None
    if params.initial == "drift" and drift_V is None:
        run.synthesis_failed = True
        run.say("variant: initial = drift needs a drift certificate, none available")
        return
    out = synthesize_variant(cfg.system, params, drift_V=drift_V, prob_seed=cfg.seed)
    run.timings["variant_synthesis"] = time.perf_counter() - t0
    run.timings["variant_iterations"] = [row.get("seconds") for row in out.trace]
    trace = [{k: v for k, v in row.items() if k != "seconds"} for row in out.trace]
    if not out.success:
        run.synthesis_failed = True
        run.write("variant_trace.json", {"trace": trace, "result": out.reason,
                                         "recommend_higher_degree": out.recommend_higher_degree})
        run.say(f"variant: failed after {len(trace)} iterations ({out.reason})")
        if out.recommend_higher_degree:
            run.say("variant: consider higher degrees for U or the multipliers, or another initial guess")
        return
    run.variant = out.certificate
    run.write(VARIANT_FILE, certificate_document(cfg.system, out.certificate))
    c = out.certificate
    run.say(f"variant: success at iteration {len(trace) - 1}, eps={c.epsilon_slack:.4g}, delta={c.delta:.4g}, "
            f"rho*={c.rho_star:.4g}, P(w'w <= rho*) >= {c.prob_lower_bound:.4g}")


def _verify(run: Run) -> None:
    cfg = run.cfg
    t0 = time.perf_counter()
    if run.drift is not None:
        try:
            rep = verify_drift(cfg.system, run.drift, cfg.box, cfg.resolution)
        except VerificationError as exc:
            rep = VerificationReport(sampling={"error": str(exc)})
            run.verification_failed = True
            run.say(f"drift verification: {exc}")
        run.write("drift_report.json", rep.to_dict())
        run.verification_failed |= not rep.passed
        if rep.checks:
            run.say("drift verification:\n" + rep.summary())
    if run.variant is not None:
        rep = verify_variant(cfg.system, run.variant, cfg.box, cfg.resolution, cfg.w_samples, cfg.seed)
        rep = rep.merge(verify_containment(run.variant.U, cfg.system.target, cfg.box, cfg.resolution,
                                           alphas=run.variant.alphas))
        run.write("variant_report.json", rep.to_dict())
        run.verification_failed |= not rep.passed
        run.say("variant verification:\n" + rep.summary())
    run.timings["verification"] = time.perf_counter() - t0


def _grids(run: Run) -> None:
    cfg = run.cfg
    for q in cfg.grids:
        need_drift = q in ("V", "deltaV")
        if (need_drift and run.drift is None) or (not need_drift and run.variant is None):
            continue
        pts, vals = emit_grid(q, cfg.system, cfg.box, cfg.resolution, run.drift, run.variant, cfg.w_samples, cfg.seed)
        name = f"grid_{q}.csv"
        write_grid_csv(run.out / name, pts, vals)
        run.files.append(name)


def _load_existing(run: Run) -> bool:
    found = False
    for name in (DRIFT_FILE, VARIANT_FILE):
        path = run.out / name
        if path.is_file():
            _, cert = load_certificate(path)
            if isinstance(cert, DriftCertificate):
                run.drift = cert
            else:
                run.variant = cert
            found = True
    return found


def run(subcommand: str, cfg: RunConfig) -> int:
    r = Run(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if subcommand in ("drift", "all"):
        _do_drift(r)
    if subcommand in ("variant", "all"):
        _do_variant(r)
    if subcommand == "verify" and not _load_existing(r):
        print(f"error: no certificates found in {cfg.out_dir}", file=sys.stderr)
        return EXIT_USAGE
    _verify(r)
    _grids(r)
    r.timings["total"] = time.perf_counter() - t0
    code = EXIT_SYNTHESIS if r.synthesis_failed else EXIT_VERIFY if r.verification_failed else EXIT_OK
    r.say(f"exit code {code}")
    (cfg.out_dir / "summary.txt").write_text("\n".join(r.summary) + "\n", encoding="utf-8")
    r.write("run.json", {"subcommand": subcommand, "config": cfg.to_dict(), "exit_code": code,
                         "files": sorted(r.files + ["summary.txt"])})
    write_json(cfg.out_dir / "metadata.json", {
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "timings_seconds": r.timings,
        "version": __version__, "python": platform.python_version(), "numpy": np.__version__,
        "config_path": cfg.source})
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sosreach", description=__doc__)
    p.add_argument("subcommand", choices=["drift", "variant", "verify", "all"])
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--degree", type=int, metavar="N", help="drift degree (replaces the ladder)")
    p.add_argument("--rho0", type=float, metavar="R")
    p.add_argument("--alpha", type=float, metavar="A")
    p.add_argument("--max-iter", type=int, metavar="K")
    p.add_argument("--seed", type=int, metavar="S")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--grid-box", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--grid-res", type=int, metavar="N")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(
            degree=args.degree, rho0=args.rho0, alpha=args.alpha, max_iter=args.max_iter, seed=args.seed,
            out=args.out, grid_box=args.grid_box, grid_res=args.grid_res)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(args.subcommand, cfg)
    except (VariantError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
