import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dm_testlab.design import RegressionSpec, evaluate
from dm_testlab.errors import ContractError, DomainError, UnsupportedFamilyError
from dm_testlab.expansion import (
    PAIR_K,
    compare_powers,
    local_power,
    power_differences,
    precision_coefficients,
    precision_k,
    precision_power_differences,
    precision_table_general,
    precision_table_pdm,
    subset_coefficients,
    subset_inputs,
    subset_k,
)
from dm_testlab.family import builtin_family, builtin_link
from dm_testlab.specfun import chisq_cdf, chisq_quantile
from oracles import (
    expansion_parts,
    glm_fg,
    glm_forms,
    identity_q0_forms,
    log_gamma_forms,
    loop_coefficients,
    loop_k,
    loop_quantities,
    make_instance,
    random_instances,
    von_mises_forms,
)


def inputs_of(inst):
    return subset_inputs(inst.family, inst.link, inst.spec, inst.beta, inst.phi, inst.epsilon)


def close(a, b, tol=1e-12):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
    return np.max(np.abs(a - b), initial=0.0) <= tol * scale


INSTANCES = random_instances(60, seed=2024)


@pytest.mark.parametrize("inst", INSTANCES, ids=lambda i: i.label)
def test_structural_identities(inst):
    inp = inputs_of(inst)
    b = subset_coefficients(inp).b
    k = subset_k(inp)
    scale = max(1.0, np.max(np.abs(b)))
    assert np.all(np.abs(b.sum(axis=1)) <= 1e-12 * scale)
    assert b[0, 3] == 0.0
    assert abs(b[1, 3] + 2 * b[3, 3]) <= 1e-12 * scale
    assert np.allclose(b[:, 0], b[0, 0], rtol=0, atol=1e-12 * scale)
    kscale = max(1.0, max(abs(v) for v in k))
    assert abs(k[2] - 3 * k[0]) <= 1e-12 * kscale and abs(k[3] - 3 * k[1]) <= 1e-12 * kscale
    assert abs(k[6] + 2 * k[0]) <= 1e-12 * kscale and abs(k[7] + 2 * k[1]) <= 1e-12 * kscale
    assert abs(k[8] - (k[0] - k[4])) <= 1e-12 * kscale


@pytest.mark.parametrize("inst", INSTANCES[:30], ids=lambda i: i.label)
def test_k_matches_differences_of_b_rows(inst):
    # Π_i - Π_j = Σ_k (b_jk - b_ik) G_{m+2k} must equal k g_{m+4} + k' g_{m+6}
    inp = inputs_of(inst)
    b = subset_coefficients(inp).b
    comparison = power_differences(inp, 0.05)
    x = chisq_quantile(0.95, inp.df)
    G = np.array([chisq_cdf(x, inp.df + 2 * k, inp.noncentrality) for k in range(4)])
    scale = max(1.0, np.max(np.abs(b)))
    for (i, j) in PAIR_K:
        direct = float((b[j - 1] - b[i - 1]) @ G)
        assert comparison.differences[f"Pi{i}-Pi{j}"] == pytest.approx(direct, abs=1e-10 * scale)


@pytest.mark.parametrize("inst", random_instances(25, seed=77), ids=lambda i: i.label)
def test_matrix_form_matches_loop_reference(inst):
    qty = loop_quantities(inst)
    inp = inputs_of(inst)
    assert inp.noncentrality == pytest.approx(qty["noncentrality"], rel=1e-10, abs=1e-14)
    for name, ref in (("t_vec", "t"), ("b_vec", "b"), ("C", "c"), ("P", "p"), ("H", "h"), ("U", "u"), ("J", "j"), ("Zd", "zd"), ("Z1d", "z1d")):
        assert close(getattr(inp, name), qty[ref], 1e-10), name
    assert close(subset_coefficients(inp).b, loop_coefficients(qty))
    assert close(subset_k(inp), loop_k(qty))


def test_linear_predictors_have_no_curvature_terms():
    inst = make_instance(np.random.default_rng(3), family="gamma", predictor="linear", q=1)
    inp = inputs_of(inst)
    for name in ("C", "P", "H", "J", "U"):
        assert not np.any(getattr(inp, name))


@pytest.mark.parametrize("family", ["von-mises", "normal"])
@pytest.mark.parametrize("q", [0, 1, 2])
def test_all_coefficients_vanish_for_identity_link_linear_models(family, q):
    rng = np.random.default_rng(q)
    X = np.column_stack([np.ones(20), rng.uniform(size=(20, 2))])
    spec = RegressionSpec("linear", X, 3, q)
    inp = subset_inputs(builtin_family(family), builtin_link("identity"), spec, np.array([0.1, 0.2, -0.3]), 2.0, np.full(3 - q, 0.2))
    assert not np.any(subset_coefficients(inp).b)
    assert not np.any(subset_k(inp))


# --------------------------------------------------------------------------- #
# Closed-form special cases
# --------------------------------------------------------------------------- #


IDENTITY_Q0 = [
    inst
    for fam in ("normal", "log-gamma", "gamma", "inverse-gaussian", "reciprocal-inverse-gaussian", "von-mises", "generalized-hyperbolic-secant")
    for inst in random_instances(3, seed=len(fam), family=fam, q=0, link_choice=("identity", "theta", {"gamma": (-2, -0.5), "inverse-gaussian": (-2, -0.5), "reciprocal-inverse-gaussian": (0.5, 2)}.get(fam, (-1, 1))))
]


@pytest.mark.parametrize("inst", IDENTITY_Q0, ids=lambda i: i.label)
def test_identity_link_full_hypothesis_forms(inst):
    inp = inputs_of(inst)
    assert not np.any(inp.G)
    theta = inst.link.theta_of_eta(evaluate(inst.spec, inst.beta).eta)
    assert np.allclose(inp.F, -inst.family.d3(theta, inst.phi), rtol=1e-14)
    assert np.allclose(inp.E, -inst.family.d2_prime(theta, inst.phi), rtol=1e-14)
    assert close(subset_coefficients(inp).b, identity_q0_forms(expansion_parts(inp)))
    if inst.family.name == "log-gamma":
        assert close(subset_coefficients(inp).b, log_gamma_forms(expansion_parts(inp)))
    if inst.family.name == "von-mises":
        assert close(subset_coefficients(inp).b, von_mises_forms(expansion_parts(inp)))


GLM_CASES = [
    (fam, link, interval, q)
    for fam, link, interval in [
        ("normal", "log", (-1, 1)), ("normal", "power(1/2)", (0.5, 1.5)), ("gamma", "log", (-0.5, 0.5)),
        ("gamma", "identity", (0.5, 2)), ("gamma", "power(-1/3)", (0.6, 1.4)), ("gamma", "reciprocal", (0.5, 2)),
        ("inverse-gaussian", "log", (-0.5, 0.5)), ("inverse-gaussian", "identity", (0.5, 2)),
        ("inverse-gaussian", "power(-2)", (0.5, 2)),
    ]
    for q in (0, 1, 2)
]


@pytest.mark.parametrize("fam,link,interval,q", GLM_CASES)
def test_generalized_linear_model_forms(fam, link, interval, q):
    inst = random_instances(1, seed=q + 10 * len(link), family=fam, predictor="linear", link_choice=(link, "mean", interval), q=q, p=4)[0]
    inp = inputs_of(inst)
    eta = evaluate(inst.spec, inst.beta).eta
    f, g = glm_fg(inst.family, link, eta)
    assert close(inp.F, f, 1e-12) and close(inp.G, g, 1e-12)
    assert close(inp.E, inp.F - inp.G, 1e-12)
    b = subset_coefficients(inp).b
    assert close(b, glm_forms(expansion_parts(inp), f, g))
    k = subset_k(inp)
    dz = inp.Zd - inp.Z1d
    t = inp.t_vec
    phi = inp.phi
    glm_k = {
        0: -0.5 * np.sum((f + 2 * g) * dz * t),
        1: -phi / 6 * np.sum((f + 2 * g) * t**3),
        4: -0.5 * np.sum((f + 2 * g) * dz * t) - np.sum((f - g) * dz * t),
        5: -phi / 2 * np.sum(f * t**3),
        9: phi / 3 * np.sum((f - g) * t**3),
        10: -3 * np.sum(g * dz * t),
        11: -phi * np.sum(g * t**3),
    }
    for idx, val in glm_k.items():
        assert k[idx] == pytest.approx(val, abs=1e-12 * max(1.0, abs(val)))
    if link == "identity":
        s12 = b[0, 2]
        s32 = b[2, 2]
        assert b[1, 1] == pytest.approx(b[0, 1] + 2 * s32, abs=1e-12)
        assert b[2, 1] == pytest.approx(b[0, 1] - s32, abs=1e-12)
        assert b[3, 1] == pytest.approx(b[0, 1] - s32, abs=1e-12)
        assert b[1, 2] == pytest.approx(3 * s12 - 2 * s32, abs=1e-12)
        assert b[3, 2] == pytest.approx(s32, abs=1e-12)
        assert b[1, 3] == pytest.approx(-2 * s12, abs=1e-12)
        assert k[4] == pytest.approx(0.0, abs=1e-14) and k[5] == pytest.approx(0.0, abs=1e-14)


def test_canonical_link_makes_wald_and_score_agree():
    # gamma with η = θ: G = 0
    inst = random_instances(1, seed=5, family="gamma", predictor="linear", link_choice=("identity", "theta", (-2, -0.5)), q=1)[0]
    k = subset_k(inputs_of(inst))
    assert k[10] == 0.0 and k[11] == 0.0


def test_cube_root_mean_link_equalises_lr_wald_gradient_for_gamma():
    inst = random_instances(1, seed=6, family="gamma", predictor="linear", link_choice=("power(-1/3)", "mean", (0.6, 1.4)), q=1)[0]
    inp = inputs_of(inst)
    assert close(inp.F, -2 * inp.G, 1e-13)
    k = subset_k(inp)
    assert abs(k[0]) < 1e-13 and abs(k[1]) < 1e-13 and abs(k[6]) < 1e-13 and abs(k[7]) < 1e-13


@pytest.mark.parametrize("family,link", [("von-mises", "tan-half"), ("normal", "log"), ("von-mises", "identity"), ("normal", "tan-half")])
def test_lr_and_score_agree_when_f_equals_g_and_e_vanishes(family, link):
    interval = (0.2, 1.0) if link == "log" else (-1, 1)
    for inst in random_instances(4, seed=8, family=family, link_choice=(link, "theta", interval)):
        inp = inputs_of(inst)
        k = subset_k(inp)
        assert abs(k[8]) <= 1e-14 * max(1.0, abs(k[0])) and abs(k[9]) <= 1e-14


def test_noncentrality_is_quadratic_form_in_schur_complement():
    inst = random_instances(1, seed=9, family="von-mises", predictor="linear", q=1)[0]
    inp = inputs_of(inst)
    X = inst.spec.covariates
    K = inst.phi * X.T @ (inp.W[:, None] * X)
    q = inst.spec.q
    schur = K[q:, q:] - K[q:, :q] @ np.linalg.solve(K[:q, :q], K[:q, q:])
    assert inp.noncentrality == pytest.approx(inst.epsilon @ schur @ inst.epsilon, rel=1e-12)
    assert "noncentrality_convention" in inp.metadata


def test_epsilon_length_checked():
    inst = random_instances(1, seed=9, family="normal", predictor="linear", q=1)[0]
    with pytest.raises(ContractError):
        subset_inputs(inst.family, inst.link, inst.spec, inst.beta, 1.0, np.zeros(inst.spec.p))
    with pytest.raises(DomainError):
        subset_inputs(inst.family, inst.link, inst.spec, inst.beta, 0.0, inst.epsilon)


# --------------------------------------------------------------------------- #
# Local power
# --------------------------------------------------------------------------- #


@pytest.mark.parametrize("inst", INSTANCES[:10], ids=lambda i: i.label)
@pytest.mark.parametrize("gamma", [0.1, 0.05, 0.01])
def test_zero_offset_gives_nominal_level(inst, gamma):
    inp = subset_inputs(inst.family, inst.link, inst.spec, inst.beta, inst.phi, np.zeros_like(inst.epsilon))
    table = subset_coefficients(inp)
    assert not np.any(table.b) and table.noncentrality == 0.0
    power = local_power(table, gamma)
    assert np.allclose(power.values, gamma, atol=1e-14)
    assert not power.clamped


def test_clamp_is_flagged():
    from dm_testlab.expansion import CoefficientTable

    table = CoefficientTable(b=np.array([[-5.0, 5.0, 0, 0]] * 4), noncentrality=1.0, df=1)
    power = local_power(table, 0.05)
    assert power.clamped
    assert all(0.0 <= v <= 1.0 for v in power.values)
    assert any(not 0.0 <= v <= 1.0 for v in power.raw)


@settings(max_examples=40, deadline=None)
@given(lam=st.floats(0.0, 30.0), df=st.integers(1, 6), gamma=st.sampled_from([0.1, 0.05, 0.01]))
def test_first_order_power_is_noncentral_tail(lam, df, gamma):
    from dm_testlab.expansion import CoefficientTable

    table = CoefficientTable(b=np.zeros((4, 4)), noncentrality=lam, df=df)
    x = chisq_quantile(1 - gamma, df)
    assert local_power(table, gamma).values[0] == pytest.approx(1 - chisq_cdf(x, df, lam), abs=1e-12)


def test_verdicts_and_ordering():
    # k chosen so that Π2 = Π3 < Π1 < Π4
    k = (-1.0, -1.0, -3.0, -3.0, -3.0, -3.0, 2.0, 2.0, 2.0, 2.0, 0.0, 0.0)
    cmp = compare_powers(k, 1, 2.0, 0.05)
    assert cmp.verdicts["Pi1-Pi4"] == "less"
    assert cmp.verdicts["Pi2-Pi3"] == "equal"
    assert cmp.ordering == "Pi2 = Pi3 < Pi1 < Pi4"
    mixed = compare_powers((1.0, -1.0) + (0.0,) * 10, 1, 2.0, 0.05)
    assert mixed.verdicts["Pi1-Pi4"] == "indeterminate"
    assert mixed.ordering is None


# --------------------------------------------------------------------------- #
# Precision hypothesis
# --------------------------------------------------------------------------- #

PDM = ["normal", "inverse-gaussian", "gamma", "von-mises", "log-gamma", "reciprocal-gamma", "reciprocal-inverse-gaussian"]


@pytest.mark.parametrize("family", PDM)
@pytest.mark.parametrize("phi,eps", [(0.7, 0.05), (2.0, -0.3), (6.0, 0.4)])
def test_precision_pdm_forms_match_general(family, phi, eps):
    fam = builtin_family(family)
    n, p = 40, 3
    a2, a3 = fam.alpha(2, phi, n), fam.alpha(3, phi, n)
    general = precision_table_general(a2, a3, a3, eps, p, phi)
    pdm = precision_table_pdm(fam, n, eps, p, phi)
    assert np.allclose(general, pdm, rtol=1e-14, atol=1e-14 * np.max(np.abs(general)))
    table = precision_coefficients(fam, p, phi, eps, n)
    assert table.b[0, 1] == pytest.approx(p * eps / (2 * phi), rel=1e-14)
    assert table.noncentrality == pytest.approx(-a2 * eps**2, rel=1e-14)
    assert table.df == 1
    assert np.allclose(table.b.sum(axis=1), 0.0, atol=1e-15)


@pytest.mark.parametrize("family", ["normal", "inverse-gaussian"])
def test_precision_wald_and_score_rows_coincide_for_half_log(family):
    table = precision_coefficients(builtin_family(family), 3, 1.7, 0.2, 30)
    assert table.b[1, 1:] == pytest.approx(table.b[2, 1:], rel=1e-14)


@pytest.mark.parametrize("family", PDM)
def test_precision_k_matches_b_rows(family):
    fam = builtin_family(family)
    phi0, eps, n = 1.5, 0.3, 50
    table = precision_coefficients(fam, 2, phi0, eps, n)
    k = precision_k(fam, phi0, eps, n)
    b = table.b
    for (i, j), (a, c) in PAIR_K.items():
        d = b[i - 1] - b[j - 1]
        assert k[a] == pytest.approx(2 * (d[2] + d[3]), abs=1e-12)
        assert k[c] == pytest.approx(2 * d[3], abs=1e-12)
    assert k[8] == pytest.approx(k[0] - k[4], abs=1e-13)
    assert k[10] == pytest.approx(k[2] - k[4], abs=1e-13)


@pytest.mark.parametrize("family", ["normal", "inverse-gaussian"])
def test_precision_ordering_for_half_log_families(family):
    fam = builtin_family(family)
    above = precision_power_differences(fam, 1.2, 1.0, 0.05, 40)
    below = precision_power_differences(fam, 0.8, 1.0, 0.05, 40)
    assert above.ordering == "Pi2 = Pi3 < Pi1 < Pi4"
    assert below.ordering == "Pi4 < Pi1 < Pi2 = Pi3"


def test_precision_equal_phi_gives_no_differences():
    cmp = precision_power_differences(builtin_family("gamma"), 2.0, 2.0, 0.05, 30)
    assert all(v == 0.0 for v in cmp.differences.values())
    assert cmp.noncentrality == 0.0


def test_precision_needs_a2():
    with pytest.raises(UnsupportedFamilyError):
        precision_coefficients(builtin_family("generalized-hyperbolic-secant"), 2, 1.0, 0.1, 20)
