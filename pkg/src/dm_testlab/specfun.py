"""Special functions and chi-square distribution machinery.

Gamma-family functions and the modified Bessel functions delegate to
``scipy.special``.  The noncentral chi-square law is evaluated here as a
Poisson mixture of central laws, truncated once the neglected Poisson
mass drops below :data:`POISSON_TAIL_TOL`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError

POISSON_TAIL_TOL = 1e-12


def _positive(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be finite and > 0, got {x!r}")
    return arr


def _scalar_or_array(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def ln_gamma(x):
    """Natural log of the gamma function for ``x > 0``."""
    return _scalar_or_array(special.gammaln(_positive(x)))


def digamma(x):
    return _scalar_or_array(special.digamma(_positive(x)))


def trigamma(x):
    return _scalar_or_array(special.polygamma(1, _positive(x)))


def tetragamma(x):
    return _scalar_or_array(special.polygamma(2, _positive(x)))


def bessel_i(order: int, x):
    """Modified Bessel function of the first kind, order 0 or 1."""
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError(f"bessel_i needs x >= 0, got {x!r}")
    if order == 0:
        return _scalar_or_array(special.i0(arr))
    if order == 1:
        return _scalar_or_array(special.i1(arr))
    raise DomainError(f"only orders 0 and 1 are available, got {order}")


def bessel_ie(order: int, x):
    """Exponentially scaled ``exp(-x) * I_order(x)``; safe for large ``x``."""
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError(f"bessel_ie needs x >= 0, got {x!r}")
    if order == 0:
        return _scalar_or_array(special.i0e(arr))
    if order == 1:
        return _scalar_or_array(special.i1e(arr))
    raise DomainError(f"only orders 0 and 1 are available, got {order}")


def bessel_ratio(x):
    """Mean resultant length ``I1(x)/I0(x)`` of the von Mises law."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise DomainError("bessel_ratio needs x >= 0")
    return _scalar_or_array(special.i1e(arr) / special.i0e(arr))


@dataclass(frozen=True)
class ChiSquareSpec:
    """Degrees of freedom and noncentrality of a chi-square law.

    The noncentrality follows the usual convention: the law of
    ``sum (Z_i + mu_i)^2`` has noncentrality ``sum mu_i^2`` and mean
    ``df + noncentrality``.
    """

    df: int
    noncentrality: float = 0.0

    def __post_init__(self):
        if int(self.df) != self.df or self.df < 1:
            raise DomainError(f"df must be a positive integer, got {self.df!r}")
        if not np.isfinite(self.noncentrality) or self.noncentrality < 0:
            raise DomainError(
                f"noncentrality must be finite and >= 0, got {self.noncentrality!r}"
            )


def _as_spec(spec, noncentrality=None) -> ChiSquareSpec:
    if isinstance(spec, ChiSquareSpec):
        return spec
    return ChiSquareSpec(int(spec), 0.0 if noncentrality is None else float(noncentrality))


def poisson_terms(noncentrality: float, tol: float = POISSON_TAIL_TOL, min_terms: int = 1):
    """Poisson(λ/2) mixing weights kept by the series and the dropped mass.

    At least ``min_terms`` weights are kept even when the tail is already
    below ``tol``; far in the upper tail of ``x`` the high-order central
    terms dominate and need to stay in the sum.
    """
    half = 0.5 * noncentrality
    if half == 0.0:
        return np.ones(1), 0.0
    # mode-centred window would be cheaper for huge λ; the acceptance range is λ < 100
    jmax = max(int(half + 10.0 * np.sqrt(half) + 40.0), min_terms)
    while special.pdtrc(jmax, half) >= tol:
        jmax *= 2
    j = np.arange(jmax + 1)
    weights = np.exp(-half + j * np.log(half) - special.gammaln(j + 1.0))
    tail = float(special.pdtrc(jmax, half))
    keep = np.nonzero((special.pdtrc(j, half) < tol) & (j >= min_terms - 1))[0]
    if keep.size:
        cut = int(keep[0])
        weights = weights[: cut + 1]
        tail = float(special.pdtrc(cut, half))
    return weights, tail


def _terms_for(x, noncentrality):
    # the central term of order df + 2j peaks near j = x/2
    top = float(np.max(x, initial=0.0))
    return int(0.5 * top + 5.0 * np.sqrt(0.5 * top) + 1.0) if noncentrality > 0 else 1


def _central_cdf(x, df):
    return special.gammainc(0.5 * df, 0.5 * np.maximum(x, 0.0))


def _central_pdf(x, df):
    k = 0.5 * df
    with np.errstate(divide="ignore"):
        logpdf = (k - 1.0) * np.log(x) - 0.5 * x - k * np.log(2.0) - special.gammaln(k)
    return np.exp(logpdf)


def chisq_cdf(x, spec, noncentrality=None, *, return_bound=False):
    """Distribution function ``G_{df,λ}(x)``.

    ``spec`` is a :class:`ChiSquareSpec` or an integer df (with optional
    ``noncentrality``).  With ``return_bound=True`` the neglected Poisson
    mass is returned alongside the value.
    """
    spec = _as_spec(spec, noncentrality)
    x = np.asarray(x, dtype=float)
    weights, tail = poisson_terms(spec.noncentrality, min_terms=_terms_for(x, spec.noncentrality))
    dfs = spec.df + 2 * np.arange(weights.size)
    xs = x[..., None]
    value = np.sum(weights * _central_cdf(xs, dfs), axis=-1)
    value = np.where(x <= 0, 0.0, np.clip(value, 0.0, 1.0))
    value = _scalar_or_array(value)
    return (value, tail) if return_bound else value


def chisq_sf(x, spec, noncentrality=None):
    """Upper tail ``1 - G_{df,λ}(x)``, accurate in the far tail for λ = 0."""
    spec = _as_spec(spec, noncentrality)
    x = np.asarray(x, dtype=float)
    if spec.noncentrality == 0.0:
        value = np.where(x <= 0, 1.0, special.gammaincc(0.5 * spec.df, 0.5 * np.maximum(x, 0)))
        return _scalar_or_array(value)
    return _scalar_or_array(1.0 - np.asarray(chisq_cdf(x, spec)))


def noncentral_chisq_pdf(x, spec, noncentrality=None):
    """Density ``g_{df,λ}(x)`` for ``x > 0``."""
    spec = _as_spec(spec, noncentrality)
    x = _positive(x)
    weights, _ = poisson_terms(spec.noncentrality, min_terms=_terms_for(x, spec.noncentrality))
    dfs = spec.df + 2 * np.arange(weights.size)
    return _scalar_or_array(np.sum(weights * _central_pdf(x[..., None], dfs), axis=-1))


def chisq_quantile(p, df: int) -> float:
    """Central chi-square quantile: ``x`` with ``G_{df}(x) = p``."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p!r}")
    ChiSquareSpec(df)
    a = 0.5 * df
    if p > 0.5:
        return float(2.0 * special.gammainccinv(a, 1.0 - p))
    return float(2.0 * special.gammaincinv(a, p))
