"""Regression structures ``η = f(x; β)`` and their derivative arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, RankError

PREDICTORS = ("linear", "expcurve", "custom")
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class RegressionSpec:
    """Predictor kind, covariates and the (β1, β2) split.

    ``q`` is the size of the nuisance block β1, which occupies the first
    ``q`` coordinates of β.  ``custom`` predictors take callables
    ``eta_fn(X, beta)``, ``jac_fn(X, beta)`` and ``hess_fn(X, beta)``.
    """

    predictor: str
    covariates: np.ndarray
    p: int
    q: int = 0
    eta_fn: Callable | None = None
    jac_fn: Callable | None = None
    hess_fn: Callable | None = None

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        if self.predictor not in PREDICTORS:
            raise ContractError(f"unknown predictor {self.predictor!r}; choose from {PREDICTORS}")
        if not 0 <= self.q < self.p:
            raise ContractError(f"need 0 <= q < p, got q={self.q}, p={self.p}")
        if self.predictor == "linear" and X.shape[1] != self.p:
            raise ContractError(f"linear predictor needs p == covariate columns ({X.shape[1]}), got {self.p}")
        if self.predictor == "expcurve" and (self.p != 3 or X.shape[1] != 1):
            raise ContractError("expcurve needs p = 3 and a single covariate column")
        if self.predictor == "custom" and None in (self.eta_fn, self.jac_fn, self.hess_fn):
            raise ContractError("custom predictor needs eta_fn, jac_fn and hess_fn")

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def is_linear(self) -> bool:
        return self.predictor == "linear"

    def with_q(self, q: int) -> "RegressionSpec":
        return RegressionSpec(self.predictor, self.covariates, self.p, q, self.eta_fn, self.jac_fn, self.hess_fn)


@dataclass(frozen=True)
class DesignEval:
    eta: np.ndarray
    jac: np.ndarray
    hess: np.ndarray
    q: int
    linear: bool = field(default=False)

    @property
    def x1(self) -> np.ndarray:
        return self.jac[:, : self.q]

    @property
    def x2(self) -> np.ndarray:
        return self.jac[:, self.q :]

    @property
    def hess11(self) -> np.ndarray:
        return self.hess[:, : self.q, : self.q]


def _expcurve(x, beta):
    b1, b2, b3 = beta
    ex = np.exp(b3 * x)
    eta = b1 + b2 * ex
    jac = np.column_stack([np.ones_like(x), ex, b2 * x * ex])
    hess = np.zeros((x.size, 3, 3))
    hess[:, 1, 2] = hess[:, 2, 1] = x * ex
    hess[:, 2, 2] = b2 * x**2 * ex
    return eta, jac, hess


def check_rank(jac: np.ndarray) -> None:
    if jac.size == 0:
        raise RankError(f"local derivative matrix has shape {jac.shape}")
    sv = np.linalg.svd(jac, compute_uv=False)
    if jac.shape[0] < jac.shape[1] or sv[-1] < RANK_RTOL * sv[0]:
        raise RankError(
            f"local derivative matrix is rank deficient (singular values {sv[0]:.3g} .. {sv[-1]:.3g})"
        )


def evaluate(spec: RegressionSpec, beta, *, rank_check: bool = True) -> DesignEval:
    """η, Jacobian and per-observation Hessians of the predictor at ``beta``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.p,):
        raise ContractError(f"beta must have shape ({spec.p},), got {beta.shape}")
    X = spec.covariates
    if spec.predictor == "linear":
        eta = X @ beta
        jac = X
        hess = np.zeros((spec.n, spec.p, spec.p))
    elif spec.predictor == "expcurve":
        eta, jac, hess = _expcurve(X[:, 0], beta)
    else:
        eta = np.asarray(spec.eta_fn(X, beta), dtype=float)
        jac = np.asarray(spec.jac_fn(X, beta), dtype=float)
        hess = np.asarray(spec.hess_fn(X, beta), dtype=float)
        if jac.shape != (spec.n, spec.p) or hess.shape != (spec.n, spec.p, spec.p):
            raise ContractError("custom predictor returned arrays of the wrong shape")
        hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
    if rank_check:
        check_rank(jac)
    return DesignEval(eta=eta, jac=jac, hess=hess, q=spec.q, linear=spec.is_linear)
