import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from dm_testlab.errors import DomainError, UnsupportedFamilyError
from dm_testlab.family import (
    FAMILY_NAMES,
    builtin_family,
    builtin_link,
    fge_weights,
    log_density,
    mean_link,
    resolve_link,
)

# (family, θ, φ) points inside each domain
POINTS = {
    "normal": (0.4, 1.7),
    "inverse-gaussian": (-0.8, 2.2),
    "reciprocal-inverse-gaussian": (1.3, 2.5),
    "gamma": (-1.5, 3.0),
    "reciprocal-gamma": (-0.7, 4.0),
    "log-gamma": (0.3, 2.0),
    "von-mises": (0.9, 2.5),
    "generalized-hyperbolic-secant": (0.6, 1.8),
}


def expect(family, theta, phi, fn):
    """E[fn(Y)] by quadrature over the support."""
    lo, hi = family.y_domain

    def integrand(y):
        return fn(y) * np.exp(log_density(family, y, theta, phi))

    if family.circular:
        return integrate.quad(integrand, -np.pi, np.pi, limit=200, epsabs=1e-13)[0]
    if lo == 0.0:
        return integrate.quad(integrand, 0.0, 1.0, limit=400, epsabs=1e-13)[0] + integrate.quad(
            integrand, 1.0, np.inf, limit=400, epsabs=1e-13
        )[0]
    # the real-line families all carry negligible mass outside ±60
    return integrate.quad(integrand, -60.0, 60.0, points=[theta], limit=400, epsabs=1e-13)[0]


def central_diff(fn, x, h=1e-5):
    return (fn(x + h) - fn(x - h)) / (2 * h)


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_density_integrates_to_one(name):
    fam = builtin_family(name)
    theta, phi = POINTS[name]
    assert expect(fam, theta, phi, lambda y: 1.0) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_score_has_zero_mean(name):
    fam = builtin_family(name)
    theta, phi = POINTS[name]
    assert expect(fam, theta, phi, lambda y: fam.dt_dtheta(y, theta)) == pytest.approx(0.0, abs=1e-7)


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_d2_is_expected_second_derivative(name):
    fam = builtin_family(name)
    theta, phi = POINTS[name]
    expected = expect(fam, theta, phi, lambda y: fam.d2t_dtheta2(y, theta))
    assert float(fam.d2(theta, phi)) == pytest.approx(expected, rel=1e-7, abs=1e-9)


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_d3_is_expected_third_derivative(name):
    fam = builtin_family(name)
    theta, phi = POINTS[name]
    expected = expect(fam, theta, phi, lambda y: central_diff(lambda th: fam.d2t_dtheta2(y, th), theta))
    assert float(fam.d3(theta, phi)) == pytest.approx(expected, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_d2_prime_is_theta_derivative_of_d2(name):
    fam = builtin_family(name)
    theta, phi = POINTS[name]
    fd = central_diff(lambda th: float(fam.d2(th, phi)), theta)
    assert float(fam.d2_prime(theta, phi)) == pytest.approx(fd, rel=1e-7, abs=1e-9)


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_kernel_derivatives_match_finite_differences(name):
    fam = builtin_family(name)
    theta, phi = POINTS[name]
    for y in (0.3, 0.9, 1.7):
        if fam.circular:
            y = y - 1.0
        fd1 = central_diff(lambda th: fam.t(y, th), theta)
        fd2 = central_diff(lambda th: fam.dt_dtheta(y, th), theta)
        assert float(fam.dt_dtheta(y, theta)) == pytest.approx(fd1, rel=1e-7, abs=1e-9)
        assert float(fam.d2t_dtheta2(y, theta)) == pytest.approx(fd2, rel=1e-7, abs=1e-9)


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_c1_is_phi_derivative_of_c(name):
    fam = builtin_family(name)
    _, phi = POINTS[name]
    for y in (0.4, 1.1):
        fd = central_diff(lambda ph: float(fam.c(y, ph)), phi)
        assert float(fam.c1(y, phi)) == pytest.approx(fd, rel=1e-7)


@pytest.mark.parametrize("name", [n for n in FAMILY_NAMES if n != "generalized-hyperbolic-secant"])
def test_a2_derivative_chain(name):
    a2 = builtin_family(name).pdm_a2
    for phi in (0.3, 1.0, 2.5, 9.0):
        h = 1e-5 * phi
        assert float(a2.d1(phi)) == pytest.approx((a2.a2(phi + h) - a2.a2(phi - h)) / (2 * h), rel=1e-7)
        assert float(a2.d2(phi)) == pytest.approx((a2.d1(phi + h) - a2.d1(phi - h)) / (2 * h), rel=1e-7)
        assert float(a2.d3(phi)) == pytest.approx((a2.d2(phi + h) - a2.d2(phi - h)) / (2 * h), rel=1e-6)


@pytest.mark.parametrize("name", [n for n in FAMILY_NAMES if n != "generalized-hyperbolic-secant"])
def test_a2_matches_normaliser_split(name):
    # c(y, φ) - c(y, 1) depends on φ only through a2(φ) - a2(1)
    fam = builtin_family(name)
    y = 0.6
    for phi in (0.5, 3.0):
        assert float(fam.c(y, phi) - fam.c(y, 1.0)) == pytest.approx(
            float(fam.pdm_a2.a2(phi) - fam.pdm_a2.a2(1.0)), rel=1e-12, abs=1e-14
        )


def test_von_mises_d2_is_minus_bessel_ratio():
    fam = builtin_family("von-mises")
    from scipy.special import i0, i1

    assert float(fam.d2(0.3, 2.0)) == pytest.approx(-i1(2.0) / i0(2.0), rel=1e-14)


def test_ghs_has_no_a2():
    fam = builtin_family("generalized-hyperbolic-secant")
    with pytest.raises(UnsupportedFamilyError):
        fam.alpha(2, 1.0, 10)


@pytest.mark.parametrize("name", ["identity", "log", "reciprocal", "tan-half", "power(1/3)", "power(-2)"])
def test_link_derivatives(name):
    link = builtin_link(name)
    for eta in (0.4, 1.3):
        fd1 = central_diff(lambda e: float(link.theta_of_eta(e)), eta)
        fd2 = central_diff(lambda e: float(link.dtheta_deta(e)), eta)
        assert float(link.dtheta_deta(eta)) == pytest.approx(fd1, rel=1e-8)
        assert float(link.d2theta_deta2(eta)) == pytest.approx(fd2, rel=1e-6, abs=1e-9)
        assert float(link.eta_of_theta(link.theta_of_eta(eta))) == pytest.approx(eta, rel=1e-13)


@pytest.mark.parametrize("family,link", [("gamma", "log"), ("inverse-gaussian", "log"), ("normal", "identity"), ("gamma", "identity")])
def test_mean_link_composition(family, link):
    fam = builtin_family(family)
    composed = mean_link(fam, link)
    inner = builtin_link(link)
    for eta in (0.5, 1.2):
        mu = float(inner.theta_of_eta(eta))
        assert float(composed.theta_of_eta(eta)) == pytest.approx(float(fam.edm_mean_variance.theta_of_mean(mu)), rel=1e-13)
        fd1 = central_diff(lambda e: float(composed.theta_of_eta(e)), eta)
        fd2 = central_diff(lambda e: float(composed.dtheta_deta(e)), eta)
        assert float(composed.dtheta_deta(eta)) == pytest.approx(fd1, rel=1e-7)
        assert float(composed.d2theta_deta2(eta)) == pytest.approx(fd2, rel=1e-6)


def test_mean_link_needs_edm():
    with pytest.raises(ValueError):
        resolve_link(builtin_family("von-mises"), "identity", "mean")


@pytest.mark.parametrize("name", ["normal", "gamma", "inverse-gaussian"])
def test_edm_variance_function_matches_second_moment(name):
    fam = builtin_family(name)
    theta, phi = POINTS[name]
    mv = fam.edm_mean_variance
    mu = float(mv.mean(theta))
    assert expect(fam, theta, phi, lambda y: y) == pytest.approx(mu, rel=1e-8)
    var = expect(fam, theta, phi, lambda y: (y - mu) ** 2)
    assert var == pytest.approx(float(mv.variance(mu)) / phi, rel=1e-7)


@settings(max_examples=40, deadline=None)
@given(
    name=st.sampled_from(["gamma", "inverse-gaussian", "normal", "von-mises", "log-gamma"]),
    link=st.sampled_from(["identity", "log", "tan-half"]),
    phi=st.floats(0.2, 20.0),
)
def test_fge_relations(name, link, phi):
    fam = builtin_family(name)
    theta = {"gamma": -1.2, "inverse-gaussian": -0.6, "normal": 0.4, "von-mises": 0.8, "log-gamma": 0.5}[name]
    lk = builtin_link(link)
    if not np.isfinite(lk.eta_of_theta(theta)):
        return
    w, f, g, e = fge_weights(fam, lk, np.array([theta]), phi)
    assert w[0] > 0
    if fam.edm_mean_variance is not None:
        assert e[0] == pytest.approx(f[0] - g[0], rel=1e-12, abs=1e-14)


def test_fge_rejects_theta_outside_domain():
    with pytest.raises(DomainError):
        fge_weights(builtin_family("gamma"), builtin_link("identity"), np.array([0.5]), 1.0)


def test_unknown_names():
    with pytest.raises(ValueError):
        builtin_family("poisson")
    with pytest.raises(ValueError):
        builtin_link("logit")
    with pytest.raises(DomainError):
        builtin_link("power(0)")
