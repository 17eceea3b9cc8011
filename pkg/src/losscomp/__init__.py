"""Photon-loss compensation for Fock-basis density matrices and homodyne tomography."""
from .fock import (
    DensityMatrix,
    FockMatrix,
    NumericalError,
    ValidationReport,
    coherent_state,
    fock_state,
    max_abs_diff,
    thermal_state,
    validate,
)
from .loss import (
    CompensationPlan,
    DimensionError,
    EstimateWithError,
    apply_loss,
    bernoulli_coefficient,
    coefficient_growth,
    compensate,
    compensate_multistep,
    compensate_with_errors,
    default_plan,
    thermal_convergence_ratio,
)

__version__ = "0.1.0"

__all__ = [
    "DensityMatrix", "FockMatrix", "NumericalError", "ValidationReport", "coherent_state",
    "fock_state", "max_abs_diff", "thermal_state", "validate", "CompensationPlan",
    "DimensionError", "EstimateWithError", "apply_loss", "bernoulli_coefficient",
    "coefficient_growth", "compensate", "compensate_multistep", "compensate_with_errors",
    "default_plan", "thermal_convergence_ratio",
]
