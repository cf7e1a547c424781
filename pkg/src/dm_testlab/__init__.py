"""Likelihood-ratio, Wald, score and gradient tests in dispersion models.

Fitting, the four test statistics for coefficient-subset and precision
hypotheses, local power expansions to order n^{-1/2}, and a seedable Monte
Carlo harness.
"""

from .design import RegressionSpec, evaluate
from .errors import (
    ContractError,
    ConvergenceError,
    DomainError,
    PhiEquationError,
    RankError,
    UnsupportedFamilyError,
)
from .expansion import (
    CoefficientTable,
    ExpansionInputs,
    PowerComparison,
    local_power,
    power_differences,
    precision_coefficients,
    precision_power_differences,
    subset_coefficients,
    subset_inputs,
)
from .family import FAMILY_NAMES, builtin_family, builtin_link, mean_link, resolve_link
from .fit import FitResult, fit_beta, fit_full, fit_nested, fit_phi, fit_restricted
from .sim import SimConfig, SimReport, moments_experiment, power_experiment, rejection_experiment, sample
from .teststats import TestQuartet, precision_tests, subset_tests

__all__ = [
    "CoefficientTable",
    "ContractError",
    "ConvergenceError",
    "DomainError",
    "ExpansionInputs",
    "FAMILY_NAMES",
    "FitResult",
    "PhiEquationError",
    "PowerComparison",
    "RankError",
    "RegressionSpec",
    "SimConfig",
    "SimReport",
    "TestQuartet",
    "UnsupportedFamilyError",
    "builtin_family",
    "builtin_link",
    "evaluate",
    "fit_beta",
    "fit_full",
    "fit_nested",
    "fit_phi",
    "fit_restricted",
    "local_power",
    "mean_link",
    "moments_experiment",
    "power_differences",
    "power_experiment",
    "precision_coefficients",
    "precision_power_differences",
    "precision_tests",
    "rejection_experiment",
    "resolve_link",
    "sample",
    "subset_coefficients",
    "subset_inputs",
    "subset_tests",
]
