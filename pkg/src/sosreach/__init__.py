"""SOS drift and variant certificates for almost-sure reachability of polynomial stochastic systems."""
__version__ = "0.1.0"

from .drift import DriftCertificate, build_delta_v, synthesize_drift
from .moments import DisturbanceModel, expect_w, prob_ball
from .poly import Polynomial, Variables, parse
from .system import SystemModel
from .variant import VariantCertificate, VariantParams, synthesize_variant
from .verify import estimate_decrease_prob, estimate_H, verify_containment, verify_drift, verify_variant

__all__ = [
    "DisturbanceModel", "DriftCertificate", "Polynomial", "SystemModel", "VariantCertificate", "VariantParams",
    "Variables", "build_delta_v", "estimate_H", "estimate_decrease_prob", "expect_w", "parse", "prob_ball",
    "synthesize_drift", "synthesize_variant", "verify_containment", "verify_drift", "verify_variant",
]
