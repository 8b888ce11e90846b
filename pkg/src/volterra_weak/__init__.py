"""Weak errors of integrated Volterra processes under kernel approximation."""

from .kernels import Family, Kernel, bound_quantity, l1_diff, l1_sqdiff, l2_norm_sq
from .markovian import build_rule, ladder_rule, to_kernel
from .models import ModelSpec, dissipation, rough_bergomi, validate_hypotheses
from .sampler import TimeGrid, sample_exact, sample_markovian
from .weakerror import (
    coupled_weak_error,
    gaussian_expectation,
    gaussian_moment,
    gaussian_w1,
    rate_study,
    volterra_weak_error_exact,
)

__all__ = [
    "Family",
    "Kernel",
    "ModelSpec",
    "TimeGrid",
    "bound_quantity",
    "build_rule",
    "coupled_weak_error",
    "dissipation",
    "gaussian_expectation",
    "gaussian_moment",
    "gaussian_w1",
    "l1_diff",
    "l1_sqdiff",
    "l2_norm_sq",
    "ladder_rule",
    "rate_study",
    "rough_bergomi",
    "sample_exact",
    "sample_markovian",
    "to_kernel",
    "validate_hypotheses",
    "volterra_weak_error_exact",
]
