"""Halton designs, Gaussian process surrogates and the per-node surrogate bank."""
from __future__ import annotations

from .bank import (
    BankConfig,
    SurrogateBank,
    bank_predict,
    build_bank,
    heldout_errors,
    reduce_observation,
    run_samples,
)
from .design import KSI, PARAM_NAMES, ParameterBounds, halton_samples
from .gp import GpModel, GpSettings, gp_predict_mean, gp_predict_var, load_gp, save_gp, train_gp

__all__ = [
    "KSI",
    "PARAM_NAMES",
    "BankConfig",
    "GpModel",
    "GpSettings",
    "ParameterBounds",
    "SurrogateBank",
    "bank_predict",
    "build_bank",
    "gp_predict_mean",
    "gp_predict_var",
    "halton_samples",
    "heldout_errors",
    "load_gp",
    "reduce_observation",
    "run_samples",
    "save_gp",
    "train_gp",
]
