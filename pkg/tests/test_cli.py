import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from sosreach.cli import EXIT_OK, EXIT_SYNTHESIS, EXIT_USAGE, emit_grid, main
from sosreach.config import ConfigError, load_config
from sosreach.drift import build_delta_v
from sosreach.serialize import load_certificate, read_grid_csv, read_json
from sosreach.system import eval_x

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TOY_INI = """
[system]
n = 2
f1 = 0
f2 = 0
disturbance = uniform
disturbance_params = 1, 1
target1 = x1^2 + x2^2 - 1

[drift]
degrees = 2

[variant]
degree_u = 2
max_iter = 3

[verify]
resolution = 21
w_samples = 50

[output]
grids = U, robust_decrease_min
"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.fixture(scope="module")
def case1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("case1")
    code = main(["drift", "--config", str(CONFIGS / "case1.ini"), "--out", str(out)])
    return code, out


def test_case1_drift_writes_artifacts(case1_run):
    code, out = case1_run
    assert code == EXIT_OK
    for name in ("drift_certificate.json", "drift_report.json", "summary.txt", "run.json", "metadata.json",
                 "grid_V.csv", "grid_deltaV.csv"):
        assert (out / name).is_file(), name
    header, rows = read_grid_csv(out / "grid_V.csv")
    assert header == ["x1", "x2", "value"]
    assert rows.shape == (101 * 101, 3)
    assert read_json(out / "run.json")["exit_code"] == 0


def test_case1_grid_decrease_outside_compact_set(case1_run):
    _, out = case1_run
    system, cert = load_certificate(out / "drift_certificate.json")
    _, rows = read_grid_csv(out / "grid_deltaV.csv")
    outside = np.sum(rows[:, :2] ** 2, axis=1) > cert.compact_set_radius_sq
    tol = 1e-6 * (1 + np.max(np.abs(rows[:, 2])))
    assert np.all(rows[outside, 2] <= tol)
    again = eval_x(build_delta_v(system, cert.V), rows[:, :2])
    assert np.allclose(again, rows[:, 2], rtol=0, atol=1e-12)


def test_rerun_is_byte_identical(case1_run, tmp_path):
    _, out = case1_run
    assert main(["drift", "--config", str(CONFIGS / "case1.ini"), "--out", str(tmp_path)]) == EXIT_OK
    for name in ("drift_certificate.json", "drift_report.json", "run.json", "summary.txt", "grid_deltaV.csv"):
        if name == "run.json":
            a, b = read_json(out / name), read_json(tmp_path / name)
            assert a["config"] == b["config"] and a["files"] == b["files"]
        else:
            assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_verify_subcommand(case1_run):
    _, out = case1_run
    assert main(["verify", "--config", str(CONFIGS / "case1.ini"), "--out", str(out)]) == EXIT_OK


def test_verify_without_certificates(tmp_path):
    assert main(["verify", "--config", str(CONFIGS / "case1.ini"), "--out", str(tmp_path)]) == EXIT_USAGE


def test_example1_reports_synthesis_failure(tmp_path):
    code = main(["drift", "--config", str(CONFIGS / "example1.ini"), "--out", str(tmp_path)])
    assert code == EXIT_SYNTHESIS
    trace = read_json(tmp_path / "drift_trace.json")
    assert [a["degree"] for a in trace["attempts"]][:3] == [2, 4, 6]
    assert not (tmp_path / "drift_certificate.json").exists()


def test_toy_variant_end_to_end(tmp_path):
    cfg = _write(tmp_path, TOY_INI)
    code = main(["variant", "--config", cfg, "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    out = tmp_path / "out"
    _, cert = load_certificate(out / "variant_certificate.json")
    assert cert.rho_star > 0 and cert.prob_lower_bound > 0
    assert read_json(out / "variant_report.json")["passed"]
    header, rows = read_grid_csv(out / "grid_robust_decrease_min.csv")
    assert rows.shape == (21 * 21, 3)


@pytest.mark.parametrize("argv", [[], ["drift"], ["bogus", "--config", "x.ini"], ["drift", "--config"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_missing_config(tmp_path):
    assert main(["drift", "--config", str(tmp_path / "nope.ini")]) == EXIT_USAGE


@pytest.mark.parametrize("patch", [
    ("[drift]\ndegrees = 2", "[drift]\ndegrees = 3"),
    ("[drift]", "[drifty]"),
    ("max_iter = 3", "max_iter = 3\nspeed = 9"),
    ("f2 = 0", "f2 = 0 +"),
    ("disturbance = uniform", "disturbance = cauchy"),
    ("resolution = 21", "resolution = 1"),
    ("grids = U, robust_decrease_min", "grids = U, W"),
    ("target1 = x1^2 + x2^2 - 1", ""),
])
def test_bad_config(tmp_path, patch):
    text = TOY_INI.replace(*patch)
    assert text != TOY_INI
    path = _write(tmp_path, text)
    with pytest.raises(ConfigError):
        load_config(path)
    assert main(["drift", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_bad_override(tmp_path):
    path = _write(tmp_path, TOY_INI)
    assert main(["variant", "--config", path, "--alpha", "1.5"]) == EXIT_USAGE
    assert main(["drift", "--config", path, "--grid-res", "1"]) == EXIT_USAGE


def test_config_round_trip(tmp_path):
    cfg = load_config(_write(tmp_path, TOY_INI))
    assert cfg.drift_degrees == (2,) and cfg.variant.degree_U == 2 and cfg.variant.rho0 is None
    assert cfg.resolution == 21 and cfg.box == (-3.0, 3.0)
    new = cfg.with_overrides(degree=4, rho0=0.1, seed=7, grid_box=(-2, 2))
    assert new.drift_degrees == (4,) and new.variant.rho0 == 0.1 and new.seed == 7 and new.box == (-2, 2)
    assert cfg.variant.rho0 is None  # overrides do not leak into the original


def test_emit_grid_errors(case1, case1_drift):
    with pytest.raises(ValueError):
        emit_grid("W", case1, (-1, 1), 5, drift=case1_drift)
    with pytest.raises(ValueError):
        emit_grid("U", case1, (-1, 1), 5, drift=case1_drift)
    with pytest.raises(ValueError):
        emit_grid("V", case1, (-1, 1), 1, drift=case1_drift)
    pts, vals = emit_grid("V", case1, (-1, 1), 5, drift=case1_drift)
    assert pts.shape == (25, 2) and vals.shape == (25,)


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sosreach.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "--config" in r.stdout
