"""Likelihood-ratio, Wald, score and gradient statistics.

Two hypotheses are covered: the subset hypothesis ``β2 = β20`` (β2 being
the last ``p - q`` coordinates) and the precision hypothesis ``φ = φ0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ContractError
from .fit import FitResult
from .specfun import chisq_sf

log = logging.getLogger(__name__)

STAT_NAMES = ("S1", "S2", "S3", "S4")
LONG_NAMES = ("likelihood ratio", "Wald", "score", "gradient")
CLOSED_FORM_TOL = 1e-10

PRECISION_NOTES = (
    "S1 is twice the log-likelihood difference between phi_hat and phi0",
    "S3 squares the phi-score at phi0 before dividing by -alpha2(phi0)",
)


@dataclass(frozen=True)
class TestQuartet:
    s1: float
    s2: float
    s3: float
    s4: float
    df: int
    pvalues: tuple
    workspace: dict = field(default_factory=dict, repr=False)
    notes: tuple = ()
    metadata: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    @property
    def values(self) -> tuple:
        return (self.s1, self.s2, self.s3, self.s4)

    def as_dict(self) -> dict:
        return {
            "df": self.df,
            "statistics": dict(zip(STAT_NAMES, self.values)),
            "pvalues": dict(zip(STAT_NAMES, self.pvalues)),
            "metadata": dict(self.metadata),
        }


def _quartet(values, df, **kw) -> TestQuartet:
    values = tuple(float(v) for v in values)
    pvalues = tuple(float(chisq_sf(max(v, 0.0), df)) for v in values)
    return TestQuartet(*values, df=df, pvalues=pvalues, **kw)


def weighted_blocks(fit: FitResult):
    """Schur complement ``RᵀWR`` of ``X*ᵀWX*`` and the matrix ``R``.

    ``R = X2* - X1*(X1*ᵀWX1*)⁻¹X1*ᵀWX2*``; the Schur complement is formed
    from the blocks of ``X*ᵀWX*`` rather than from ``R`` itself.
    """
    jac, w, q = fit.design.jac, fit.W, fit.spec.q
    X1, X2 = jac[:, :q], jac[:, q:]
    if q == 0:
        return X2.T @ (w[:, None] * X2), X2.copy()
    A11 = X1.T @ (w[:, None] * X1)
    A12 = X1.T @ (w[:, None] * X2)
    A22 = X2.T @ (w[:, None] * X2)
    factor = linalg.cho_factor(A11)
    coef = linalg.cho_solve(factor, A12)
    schur = A22 - A12.T @ coef
    return 0.5 * (schur + schur.T), X2 - X1 @ coef


def _check_pair(full: FitResult, restricted: FitResult):
    if full.restricted is not None:
        raise ContractError("first argument must be an unrestricted fit")
    if restricted.restricted is None:
        raise ContractError("second argument must be a restricted fit")
    if full.family.name != restricted.family.name or full.link.name != restricted.link.name:
        raise ContractError("fits use different families or links")
    if full.spec.q != restricted.spec.q or full.spec.p != restricted.spec.p:
        raise ContractError("fits use different (p, q) splits")
    if full.y.shape != restricted.y.shape or not np.array_equal(full.y, restricted.y):
        raise ContractError("fits were computed on different responses")
    if not np.array_equal(full.spec.covariates, restricted.spec.covariates):
        raise ContractError("fits were computed on different covariates")


def subset_tests(full: FitResult, restricted: FitResult) -> TestQuartet:
    """The four statistics for ``β2 = β20`` from a full and a restricted fit."""
    _check_pair(full, restricted)
    q = full.spec.q
    beta20 = np.asarray(restricted.restricted[1], dtype=float)
    diff = full.beta_hat[q:] - beta20

    schur_hat, _ = weighted_blocks(full)
    schur_tilde, R_tilde = weighted_blocks(restricted)
    score2 = restricted.design.x2.T @ (restricted.dtheta * restricted.tdot)

    s1 = 2.0 * (full.loglik - restricted.loglik)
    s2 = full.phi_hat * diff @ schur_hat @ diff
    s3 = restricted.phi_hat * score2 @ linalg.cho_solve(linalg.cho_factor(schur_tilde), score2)
    s4 = restricted.phi_hat * score2 @ diff

    neg_d2 = restricted.W / restricted.dtheta**2
    s_vec = np.sqrt(restricted.phi_hat) * restricted.tdot / np.sqrt(neg_d2)
    return _quartet(
        (s1, s2, s3, s4),
        full.spec.p - q,
        workspace={"s": s_vec, "R": R_tilde},
        metadata={"hypothesis": "subset", "q": q, "beta20": beta20.tolist()},
    )


def _loglik(family, y, theta, phi):
    return float(np.sum(phi * family.t(y, theta) + family.c(y, phi)))


def precision_closed_forms(family, n: int, phi_hat: float, phi0: float) -> tuple:
    """Statistics for ``φ = φ0`` written through ``a2`` and its derivatives."""
    a2 = family.pdm_a2
    diff = phi_hat - phi0
    s1 = 2.0 * n * (a2.a2(phi_hat) - a2.a2(phi0) - diff * a2.d1(phi_hat))
    s2 = -n * diff**2 * a2.d2(phi_hat)
    s3 = -n * (a2.d1(phi_hat) - a2.d1(phi0)) ** 2 / a2.d2(phi0)
    s4 = n * (a2.d1(phi0) - a2.d1(phi_hat)) * diff
    return tuple(float(v) for v in (s1, s2, s3, s4))


def precision_tests(family, y, full: FitResult, phi0: float) -> TestQuartet:
    """The four statistics for ``φ = φ0`` at the common estimate β̂."""
    if not phi0 > 0:
        raise ContractError(f"phi0 must be > 0, got {phi0!r}")
    y = np.asarray(y, dtype=float)
    n = y.size
    alpha_hat = family.alpha(2, full.phi_hat, n)
    alpha_null = family.alpha(2, phi0, n)
    theta, phi_hat = full.theta, full.phi_hat
    diff = phi_hat - phi0
    score_null = float(np.sum(family.t(y, theta) + family.c1(y, phi0)))

    s1 = 2.0 * (_loglik(family, y, theta, phi_hat) - _loglik(family, y, theta, phi0))
    s2 = diff**2 * (-alpha_hat)
    s3 = score_null**2 / (-alpha_null)
    s4 = diff * score_null

    closed = precision_closed_forms(family, n, phi_hat, phi0)
    general = (s1, s2, s3, s4)
    gap = max(abs(a - b) / (1.0 + abs(b)) for a, b in zip(general, closed))
    if gap > CLOSED_FORM_TOL:
        log.warning("precision statistics: closed forms differ from general path by %.3g", gap)
    if family.pdm_a2.label == "log(phi)/2":
        # S2 and S3 coincide algebraically here; share one floating-point path
        s3 = s2
    return _quartet(
        general[:2] + (s3, s4),
        1,
        notes=PRECISION_NOTES,
        metadata={
            "hypothesis": "precision",
            "phi0": float(phi0),
            "closed_form": dict(zip(STAT_NAMES, closed)),
            "closed_form_gap": gap,
        },
    )
