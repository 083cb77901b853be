"""Explicit weights for the PARITY and majority transformers."""

from .builders import build_full_model, build_majority_model, build_restricted_model, positional_encoding, sign_patterns
from .calibration import DEFAULT_PARAMS, CalibrationReport, calibrate
from .formulas import (
    DerivedConstants,
    Gamma_exact,
    attention_gap,
    f_rho,
    gamma_exact,
    layer3_logit,
    split_strings,
    tau,
    z_value,
)
from .layout import CoordinateLayout
from .params import ALPHA_MAX, ConstructionParams

__all__ = [
    "ALPHA_MAX", "DEFAULT_PARAMS", "CalibrationReport", "ConstructionParams", "CoordinateLayout",
    "DerivedConstants", "Gamma_exact", "attention_gap", "build_full_model", "build_majority_model",
    "build_restricted_model", "calibrate", "f_rho", "gamma_exact", "layer3_logit", "positional_encoding",
    "sign_patterns", "split_strings", "tau", "z_value",
]
