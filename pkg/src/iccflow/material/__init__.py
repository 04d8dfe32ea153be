"""Hosford-Voce elastoplastic constitutive model."""
from __future__ import annotations

from .model import (
    VOIGT_ORDER,
    MaterialParams,
    MaterialState,
    StressUpdateResult,
    Tolerances,
    flow_stress,
    hosford_effective_stress,
    plane_stress_batch,
    plane_stress_update,
    principal_stresses,
    stress_update,
    voigt_to_matrix,
    yield_function,
)

__all__ = [
    "VOIGT_ORDER",
    "MaterialParams",
    "MaterialState",
    "StressUpdateResult",
    "Tolerances",
    "flow_stress",
    "hosford_effective_stress",
    "plane_stress_batch",
    "plane_stress_update",
    "principal_stresses",
    "stress_update",
    "voigt_to_matrix",
    "yield_function",
]
