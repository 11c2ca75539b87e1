"""JSON and CSV artifacts.  Output is deterministic: sorted keys, fixed float repr, no timestamps."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .drift import DriftCertificate
from .system import SystemModel
from .variant import VariantCertificate

SCHEMA_VERSION = 1


def _clean(obj):
    """Make numpy scalars/arrays and non-finite floats JSON-safe."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def certificate_document(system: SystemModel, cert) -> dict:
    return {"schema": SCHEMA_VERSION, "system": system.to_dict(), "certificate": cert.to_dict()}


def load_certificate(path) -> tuple[SystemModel, DriftCertificate | VariantCertificate]:
    doc = read_json(path)
    if doc.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema {doc.get('schema')!r}")
    system = SystemModel.from_dict(doc["system"])
    body = doc["certificate"]
    kind = body.get("kind")
    if kind == "drift":
        return system, DriftCertificate.from_dict(system.ctx, body)
    if kind == "variant":
        return system, VariantCertificate.from_dict(system.ctx, body)
    raise ValueError(f"{path}: unknown certificate kind {kind!r}")


def write_grid_csv(path, points: np.ndarray, values: np.ndarray) -> Path:
    """Header x1..xn,value; one row per grid point in the order given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = points.shape[1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(n)] + ["value"])
        for p, v in zip(points, values):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
    return path


def read_grid_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)
