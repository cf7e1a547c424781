"""Dispersion-model families and link functions.

A family is described by the kernel ``t(y, θ)`` and normaliser
``c(y, φ)`` of the density ``exp{φ t(y, θ) + c(y, φ)}`` together with
the expected derivatives ``D2 = E[∂²t/∂θ²]``, ``D3 = E[∂³t/∂θ³]`` and
``D2' = dD2/dθ`` that drive estimation and the local power expansions.

Links map the position parameter to the linear predictor,
``η = d(θ)``.  Links listed by :func:`builtin_link` act on θ directly;
:func:`mean_link` composes a link on the mean with an exponential
dispersion family's θ ↔ μ map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import special

from .errors import DomainError, UnsupportedFamilyError
from .specfun import bessel_ie, bessel_ratio

Fn = Callable[..., np.ndarray]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PdmA2:
    """``a2(φ)`` and its first three derivatives for a proper dispersion model."""

    label: str
    a2: Fn
    d1: Fn
    d2: Fn
    d3: Fn


@dataclass(frozen=True)
class MeanVariance:
    """θ ↔ μ map and variance function of an exponential dispersion model."""

    mean: Fn
    theta_of_mean: Fn
    variance: Fn
    dvariance: Fn


@dataclass(frozen=True)
class FamilyDescriptor:
    name: str
    t: Fn
    dt_dtheta: Fn
    d2t_dtheta2: Fn
    d2: Fn
    d3: Fn
    d2_prime: Fn
    c: Fn
    c1: Fn
    theta_domain: tuple[float, float]
    y_domain: tuple[float, float]
    theta_of_y: Fn
    pdm_a2: PdmA2 | None = None
    edm_mean_variance: MeanVariance | None = None
    d2_depends_on_phi: bool = False
    circular: bool = False
    notes: tuple[str, ...] = field(default=())

    def alpha(self, order: int, phi: float, n: int) -> float:
        """``α_order = n a2^{(order)}(φ)``; defined only for proper dispersion models."""
        if self.pdm_a2 is None:
            raise UnsupportedFamilyError(
                f"family {self.name!r} has no a2(phi); precision-parameter inference unavailable"
            )
        fn = {1: self.pdm_a2.d1, 2: self.pdm_a2.d2, 3: self.pdm_a2.d3}[order]
        return n * float(fn(phi))

    def wrap_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.circular:
            return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)
        return theta

    def theta_in_domain(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.circular:
            return np.isfinite(theta)
        lo, hi = self.theta_domain
        return np.isfinite(theta) & (theta > lo) & (theta < hi)

    def y_in_support(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        lo, hi = self.y_domain
        if self.circular:
            return np.isfinite(y) & (y > lo) & (y <= hi)
        return np.isfinite(y) & (y > lo) & (y < hi)


# --------------------------------------------------------------------------- #
# a2(φ) catalogue
# --------------------------------------------------------------------------- #

_HALF_LOG = PdmA2(
    "log(phi)/2",
    a2=lambda phi: 0.5 * np.log(phi),
    d1=lambda phi: 0.5 / phi,
    d2=lambda phi: -0.5 / phi**2,
    d3=lambda phi: 1.0 / phi**3,
)

_GAMMA_A2 = PdmA2(
    "phi*log(phi) - lgamma(phi)",
    a2=lambda phi: phi * np.log(phi) - special.gammaln(phi),
    d1=lambda phi: np.log(phi) + 1.0 - special.digamma(phi),
    d2=lambda phi: 1.0 / phi - special.polygamma(1, phi),
    d3=lambda phi: -1.0 / phi**2 - special.polygamma(2, phi),
)


def _vm_a2(phi):
    phi = np.asarray(phi, dtype=float)
    return -(np.log(bessel_ie(0, phi)) + phi)


def _vm_d1(phi):
    return -bessel_ratio(phi)


def _vm_d2(phi):
    r = bessel_ratio(phi)
    return r * r + r / phi - 1.0


def _vm_d3(phi):
    r = bessel_ratio(phi)
    dr = 1.0 - r / phi - r * r
    return 2.0 * r * dr + dr / phi - r / phi**2


_VM_A2 = PdmA2("-log(I0(phi))", a2=_vm_a2, d1=_vm_d1, d2=_vm_d2, d3=_vm_d3)


def _zeros_like(theta, phi=None):
    return np.zeros_like(np.asarray(theta, dtype=float))


def _const(value):
    def fn(theta, phi=None):
        return np.full_like(np.asarray(theta, dtype=float), value)

    return fn


# --------------------------------------------------------------------------- #
# Families
# --------------------------------------------------------------------------- #


def _normal() -> FamilyDescriptor:
    return FamilyDescriptor(
        name="normal",
        t=lambda y, th: -0.5 * (y - th) ** 2,
        dt_dtheta=lambda y, th: y - th,
        d2t_dtheta2=lambda y, th: -np.ones_like(np.asarray(y - th, dtype=float)),
        d2=_const(-1.0),
        d3=_zeros_like,
        d2_prime=_zeros_like,
        c=lambda y, phi: np.zeros_like(np.asarray(y, dtype=float)) + 0.5 * (np.log(phi) - LOG_2PI),
        c1=lambda y, phi: np.zeros_like(np.asarray(y, dtype=float)) + 0.5 / phi,
        theta_domain=(-np.inf, np.inf),
        y_domain=(-np.inf, np.inf),
        theta_of_y=lambda y: np.asarray(y, dtype=float),
        pdm_a2=_HALF_LOG,
        edm_mean_variance=MeanVariance(
            mean=lambda th: np.asarray(th, dtype=float),
            theta_of_mean=lambda mu: np.asarray(mu, dtype=float),
            variance=lambda mu: np.ones_like(np.asarray(mu, dtype=float)),
            dvariance=lambda mu: np.zeros_like(np.asarray(mu, dtype=float)),
        ),
    )


def _inverse_gaussian() -> FamilyDescriptor:
    return FamilyDescriptor(
        name="inverse-gaussian",
        t=lambda y, th: y * th + np.sqrt(-2.0 * th) - 0.5 / y,
        dt_dtheta=lambda y, th: y - (-2.0 * th) ** -0.5,
        d2t_dtheta2=lambda y, th: -(-2.0 * th) ** -1.5 + 0.0 * y,
        d2=lambda th, phi=None: -(-2.0 * th) ** -1.5,
        d3=lambda th, phi=None: -3.0 * (-2.0 * th) ** -2.5,
        d2_prime=lambda th, phi=None: -3.0 * (-2.0 * th) ** -2.5,
        c=lambda y, phi: 0.5 * np.log(phi) - 0.5 * (LOG_2PI + 3.0 * np.log(y)),
        c1=lambda y, phi: np.zeros_like(np.asarray(y, dtype=float)) + 0.5 / phi,
        theta_domain=(-np.inf, 0.0),
        y_domain=(0.0, np.inf),
        theta_of_y=lambda y: -0.5 / np.asarray(y, dtype=float) ** 2,
        pdm_a2=_HALF_LOG,
        edm_mean_variance=MeanVariance(
            mean=lambda th: (-2.0 * np.asarray(th, dtype=float)) ** -0.5,
            theta_of_mean=lambda mu: -0.5 / np.asarray(mu, dtype=float) ** 2,
            variance=lambda mu: np.asarray(mu, dtype=float) ** 3,
            dvariance=lambda mu: 3.0 * np.asarray(mu, dtype=float) ** 2,
        ),
    )


def _reciprocal_inverse_gaussian() -> FamilyDescriptor:
    # Y = 1/X with X inverse Gaussian of mean 1/θ
    return FamilyDescriptor(
        name="reciprocal-inverse-gaussian",
        t=lambda y, th: -((y - th) ** 2) / (2.0 * y),
        dt_dtheta=lambda y, th: 1.0 - th / y,
        d2t_dtheta2=lambda y, th: -1.0 / y + 0.0 * th,
        d2=lambda th, phi=None: -1.0 / np.asarray(th, dtype=float),
        d3=_zeros_like,
        d2_prime=lambda th, phi=None: 1.0 / np.asarray(th, dtype=float) ** 2,
        c=lambda y, phi: 0.5 * np.log(phi) - 0.5 * (LOG_2PI + np.log(y)),
        c1=lambda y, phi: np.zeros_like(np.asarray(y, dtype=float)) + 0.5 / phi,
        theta_domain=(0.0, np.inf),
        y_domain=(0.0, np.inf),
        theta_of_y=lambda y: np.asarray(y, dtype=float),
        pdm_a2=_HALF_LOG,
    )


def _gamma() -> FamilyDescriptor:
    return FamilyDescriptor(
        name="gamma",
        t=lambda y, th: y * th + np.log(-th) + np.log(y),
        dt_dtheta=lambda y, th: y + 1.0 / th,
        d2t_dtheta2=lambda y, th: -1.0 / th**2 + 0.0 * y,
        d2=lambda th, phi=None: -1.0 / np.asarray(th, dtype=float) ** 2,
        d3=lambda th, phi=None: 2.0 / np.asarray(th, dtype=float) ** 3,
        d2_prime=lambda th, phi=None: 2.0 / np.asarray(th, dtype=float) ** 3,
        c=lambda y, phi: -np.log(y) + _GAMMA_A2.a2(phi),
        c1=lambda y, phi: np.zeros_like(np.asarray(y, dtype=float)) + _GAMMA_A2.d1(phi),
        theta_domain=(-np.inf, 0.0),
        y_domain=(0.0, np.inf),
        theta_of_y=lambda y: -1.0 / np.asarray(y, dtype=float),
        pdm_a2=_GAMMA_A2,
        edm_mean_variance=MeanVariance(
            mean=lambda th: -1.0 / np.asarray(th, dtype=float),
            theta_of_mean=lambda mu: -1.0 / np.asarray(mu, dtype=float),
            variance=lambda mu: np.asarray(mu, dtype=float) ** 2,
            dvariance=lambda mu: 2.0 * np.asarray(mu, dtype=float),
        ),
    )


def _reciprocal_gamma() -> FamilyDescriptor:
    # Y = 1/X with X gamma of mean -1/θ; c(y, φ) keeps the gamma a2
    return FamilyDescriptor(
        name="reciprocal-gamma",
        t=lambda y, th: th / y + np.log(-th) - np.log(y),
        dt_dtheta=lambda y, th: 1.0 / y + 1.0 / th,
        d2t_dtheta2=lambda y, th: -1.0 / th**2 + 0.0 * y,
        d2=lambda th, phi=None: -1.0 / np.asarray(th, dtype=float) ** 2,
        d3=lambda th, phi=None: 2.0 / np.asarray(th, dtype=float) ** 3,
        d2_prime=lambda th, phi=None: 2.0 / np.asarray(th, dtype=float) ** 3,
        c=lambda y, phi: -np.log(y) + _GAMMA_A2.a2(phi),
        c1=lambda y, phi: np.zeros_like(np.asarray(y, dtype=float)) + _GAMMA_A2.d1(phi),
        theta_domain=(-np.inf, 0.0),
        y_domain=(0.0, np.inf),
        theta_of_y=lambda y: -np.asarray(y, dtype=float),
        pdm_a2=_GAMMA_A2,
    )


def _log_gamma() -> FamilyDescriptor:
    # Y = θ + log X with X gamma of shape φ and unit mean
    return FamilyDescriptor(
        name="log-gamma",
        t=lambda y, th: y - th - np.exp(y - th),
        dt_dtheta=lambda y, th: np.exp(y - th) - 1.0,
        d2t_dtheta2=lambda y, th: -np.exp(y - th),
        d2=_const(-1.0),
        d3=_const(1.0),
        d2_prime=_zeros_like,
        c=lambda y, phi: np.zeros_like(np.asarray(y, dtype=float)) + _GAMMA_A2.a2(phi),
        c1=lambda y, phi: np.zeros_like(np.asarray(y, dtype=float)) + _GAMMA_A2.d1(phi),
        theta_domain=(-np.inf, np.inf),
        y_domain=(-np.inf, np.inf),
        theta_of_y=lambda y: np.asarray(y, dtype=float),
        pdm_a2=_GAMMA_A2,
    )


def _von_mises() -> FamilyDescriptor:
    def d2(th, phi):
        return np.full_like(np.asarray(th, dtype=float), -bessel_ratio(phi))

    return FamilyDescriptor(
        name="von-mises",
        t=lambda y, th: np.cos(y - th),
        dt_dtheta=lambda y, th: np.sin(y - th),
        d2t_dtheta2=lambda y, th: -np.cos(y - th),
        d2=d2,
        d3=_zeros_like,
        d2_prime=_zeros_like,
        c=lambda y, phi: np.zeros_like(np.asarray(y, dtype=float)) - LOG_2PI + _vm_a2(phi),
        c1=lambda y, phi: np.zeros_like(np.asarray(y, dtype=float)) + _vm_d1(phi),
        theta_domain=(-np.pi, np.pi),
        y_domain=(-np.pi, np.pi),
        theta_of_y=lambda y: np.asarray(y, dtype=float),
        pdm_a2=_VM_A2,
        d2_depends_on_phi=True,
        circular=True,
    )


def _ghs_c(y, phi):
    y = np.asarray(y, dtype=float)
    z = 0.5 * phi * (1.0 + 1j * y)
    return (
        np.log(phi)
        + (phi - 2.0) * math.log(2.0)
        - math.log(math.pi)
        - special.gammaln(phi)
        + 2.0 * special.loggamma(z).real
    )


def _ghs_c1(y, phi):
    y = np.asarray(y, dtype=float)
    z = 0.5 * phi * (1.0 + 1j * y)
    return (
        1.0 / phi
        + math.log(2.0)
        - special.digamma(phi)
        + (special.digamma(z) * (1.0 + 1j * y)).real
    )


def _generalized_hyperbolic_secant() -> FamilyDescriptor:
    # mean-parameterised: t = y·arctan θ − log(1 + θ²)/2, E[Y] = θ
    return FamilyDescriptor(
        name="generalized-hyperbolic-secant",
        t=lambda y, th: y * np.arctan(th) - 0.5 * np.log1p(th**2),
        dt_dtheta=lambda y, th: (y - th) / (1.0 + th**2),
        d2t_dtheta2=lambda y, th: (th**2 - 2.0 * th * y - 1.0) / (1.0 + th**2) ** 2,
        d2=lambda th, phi=None: -1.0 / (1.0 + np.asarray(th, dtype=float) ** 2),
        d3=lambda th, phi=None: 4.0 * np.asarray(th, dtype=float) / (1.0 + np.asarray(th, dtype=float) ** 2) ** 2,
        d2_prime=lambda th, phi=None: 2.0 * np.asarray(th, dtype=float) / (1.0 + np.asarray(th, dtype=float) ** 2) ** 2,
        c=_ghs_c,
        c1=_ghs_c1,
        theta_domain=(-np.inf, np.inf),
        y_domain=(-np.inf, np.inf),
        theta_of_y=lambda y: np.asarray(y, dtype=float),
        notes=("no a2(phi): subset-of-beta inference only",),
    )


_FAMILIES = {
    "normal": _normal,
    "inverse-gaussian": _inverse_gaussian,
    "reciprocal-inverse-gaussian": _reciprocal_inverse_gaussian,
    "gamma": _gamma,
    "reciprocal-gamma": _reciprocal_gamma,
    "log-gamma": _log_gamma,
    "von-mises": _von_mises,
    "generalized-hyperbolic-secant": _generalized_hyperbolic_secant,
}

FAMILY_NAMES = tuple(_FAMILIES)


def builtin_family(name: str) -> FamilyDescriptor:
    try:
        return _FAMILIES[name]()
    except KeyError:
        raise ValueError(
            f"unknown family {name!r}; available: {', '.join(FAMILY_NAMES)}"
        ) from None


# --------------------------------------------------------------------------- #
# Links
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class LinkDescriptor:
    name: str
    eta_of_theta: Fn
    theta_of_eta: Fn
    dtheta_deta: Fn
    d2theta_deta2: Fn


def _identity() -> LinkDescriptor:
    return LinkDescriptor(
        "identity",
        eta_of_theta=lambda th: np.asarray(th, dtype=float),
        theta_of_eta=lambda eta: np.asarray(eta, dtype=float),
        dtheta_deta=lambda eta: np.ones_like(np.asarray(eta, dtype=float)),
        d2theta_deta2=lambda eta: np.zeros_like(np.asarray(eta, dtype=float)),
    )


def _log() -> LinkDescriptor:
    return LinkDescriptor(
        "log",
        eta_of_theta=lambda th: np.log(th),
        theta_of_eta=lambda eta: np.exp(eta),
        dtheta_deta=lambda eta: np.exp(eta),
        d2theta_deta2=lambda eta: np.exp(eta),
    )


def _reciprocal() -> LinkDescriptor:
    return LinkDescriptor(
        "reciprocal",
        eta_of_theta=lambda th: 1.0 / np.asarray(th, dtype=float),
        theta_of_eta=lambda eta: 1.0 / np.asarray(eta, dtype=float),
        dtheta_deta=lambda eta: -1.0 / np.asarray(eta, dtype=float) ** 2,
        d2theta_deta2=lambda eta: 2.0 / np.asarray(eta, dtype=float) ** 3,
    )


def _tan_half() -> LinkDescriptor:
    return LinkDescriptor(
        "tan-half",
        eta_of_theta=lambda th: np.tan(0.5 * np.asarray(th, dtype=float)),
        theta_of_eta=lambda eta: 2.0 * np.arctan(eta),
        dtheta_deta=lambda eta: 2.0 / (1.0 + np.asarray(eta, dtype=float) ** 2),
        d2theta_deta2=lambda eta: -4.0 * np.asarray(eta, dtype=float) / (1.0 + np.asarray(eta, dtype=float) ** 2) ** 2,
    )


def power_link(exponent) -> LinkDescriptor:
    """``η = θ^c`` for a nonzero rational ``c``; defined for θ, η > 0."""
    c = Fraction(exponent).limit_denominator(1000)
    if c == 0:
        raise DomainError("power link exponent must be nonzero; use 'log'")
    inv = 1.0 / float(c)
    return LinkDescriptor(
        f"power({c})",
        eta_of_theta=lambda th: np.asarray(th, dtype=float) ** float(c),
        theta_of_eta=lambda eta: np.asarray(eta, dtype=float) ** inv,
        dtheta_deta=lambda eta: inv * np.asarray(eta, dtype=float) ** (inv - 1.0),
        d2theta_deta2=lambda eta: inv * (inv - 1.0) * np.asarray(eta, dtype=float) ** (inv - 2.0),
    )


_LINKS = {"identity": _identity, "log": _log, "reciprocal": _reciprocal, "tan-half": _tan_half}

LINK_NAMES = tuple(_LINKS) + ("power(c)",)


def builtin_link(name: str) -> LinkDescriptor:
    name = name.strip()
    if name in _LINKS:
        return _LINKS[name]()
    if name.startswith("power(") and name.endswith(")"):
        try:
            exponent = Fraction(name[6:-1].replace(" ", ""))
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"cannot parse power link exponent in {name!r}") from None
        return power_link(exponent)
    raise ValueError(f"unknown link {name!r}; available: {', '.join(LINK_NAMES)}")


def mean_link(family: FamilyDescriptor, link: LinkDescriptor | str) -> LinkDescriptor:
    """Compose a link on the mean, ``η = d(μ)``, into a link on θ.

    Only exponential dispersion families carry the θ ↔ μ map needed.
    """
    if isinstance(link, str):
        link = builtin_link(link)
    mv = family.edm_mean_variance
    if mv is None:
        raise ValueError(f"family {family.name!r} has no mean/variance map; mean links unavailable")

    def theta_of_eta(eta):
        return mv.theta_of_mean(link.theta_of_eta(eta))

    def dtheta_deta(eta):
        mu = link.theta_of_eta(eta)
        return link.dtheta_deta(eta) / mv.variance(mu)

    def d2theta_deta2(eta):
        mu = link.theta_of_eta(eta)
        v = mv.variance(mu)
        dmu = link.dtheta_deta(eta)
        return link.d2theta_deta2(eta) / v - mv.dvariance(mu) * dmu**2 / v**2

    return LinkDescriptor(
        f"mean:{link.name}",
        eta_of_theta=lambda th: link.eta_of_theta(mv.mean(th)),
        theta_of_eta=theta_of_eta,
        dtheta_deta=dtheta_deta,
        d2theta_deta2=d2theta_deta2,
    )


def resolve_link(family: FamilyDescriptor, name: str, scale: str = "theta") -> LinkDescriptor:
    """Link by name, acting on θ (``scale='theta'``) or on the mean (``'mean'``)."""
    if scale == "theta":
        return builtin_link(name)
    if scale == "mean":
        return mean_link(family, name)
    raise ValueError(f"link scale must be 'theta' or 'mean', got {scale!r}")


# --------------------------------------------------------------------------- #
# Derived quantities
# --------------------------------------------------------------------------- #


def _check_theta(family: FamilyDescriptor, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    ok = family.theta_in_domain(theta)
    if not np.all(ok):
        bad = int(np.flatnonzero(~np.atleast_1d(ok))[0])
        value = np.atleast_1d(theta)[bad]
        raise DomainError(
            f"theta[{bad}] = {value!r} outside the {family.name} domain {family.theta_domain}"
        )
    return theta


def fge_weights(family: FamilyDescriptor, link: LinkDescriptor, theta, phi: float):
    """Per-observation ``(w, f, g, e)`` entering information and expansions.

    ``w = -D2 θ'^2``, ``f = -θ'θ''D2 - θ'^3 D3``, ``g = -θ'θ''D2`` and
    ``e = -θ'^3 D2'`` with θ-derivatives taken in η at ``η = d(θ)``.
    """
    theta = _check_theta(family, theta)
    eta = link.eta_of_theta(theta)
    d1 = link.dtheta_deta(eta)
    d2l = link.d2theta_deta2(eta)
    D2 = family.d2(theta, phi)
    D3 = family.d3(theta, phi)
    D2p = family.d2_prime(theta, phi)
    w = -D2 * d1**2
    g = -d1 * d2l * D2
    f = g - d1**3 * D3
    e = -(d1**3) * D2p
    return w, f, g, e


def log_density(family: FamilyDescriptor, y, theta, phi: float):
    """``φ t(y, θ) + c(y, φ)``, elementwise."""
    y = np.asarray(y, dtype=float)
    if not np.all(family.y_in_support(y)):
        bad = int(np.flatnonzero(~np.atleast_1d(family.y_in_support(y)))[0])
        raise DomainError(f"y[{bad}] = {np.atleast_1d(y)[bad]!r} outside the {family.name} support")
    if not phi > 0:
        raise DomainError(f"phi must be > 0, got {phi!r}")
    theta = _check_theta(family, family.wrap_theta(theta))
    out = phi * family.t(y, theta) + family.c(y, phi)
    return float(out) if np.ndim(out) == 0 else out
