"""Exception types raised across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class RankError(ValueError):
    """The local derivative matrix is numerically rank deficient."""


class ContractError(ValueError):
    """Inputs violate a structural precondition (shapes, pairing of fits)."""


class UnsupportedFamilyError(ValueError):
    """The family lacks the structure an operation needs."""


class PhiEquationError(DomainError):
    """The precision-parameter likelihood equation has no root."""


class ConvergenceError(RuntimeError):
    """An iterative fit failed; ``trace`` holds the iteration history."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
