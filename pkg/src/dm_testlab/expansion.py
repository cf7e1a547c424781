"""Local power expansions to order n^{-1/2} and the pairwise power comparisons.

The distribution of each statistic under a Pitman alternative is written as

    Pr(S_i <= x) = G_{m,λ}(x) + Σ_k b_ik G_{m+2k,λ}(x) + o(n^{-1/2}),

with ``G_{m,λ}`` the noncentral chi-square distribution function,
``m`` the number of restrictions and ``i`` running over the
likelihood-ratio, Wald, score and gradient statistics.  Every trace of a
product of diagonal matrices is evaluated as an O(n) sum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .design import RegressionSpec, evaluate
from .errors import ContractError, DomainError
from .family import FamilyDescriptor, LinkDescriptor, fge_weights
from .specfun import ChiSquareSpec, chisq_cdf, chisq_quantile, noncentral_chisq_pdf

STATISTICS = ("LR", "Wald", "score", "gradient")

# (i, j) pair of statistic numbers -> indices of (g_{m+4}, g_{m+6}) coefficients in k
PAIR_K = {
    (1, 4): (0, 1),
    (2, 4): (2, 3),
    (3, 4): (4, 5),
    (1, 2): (6, 7),
    (1, 3): (8, 9),
    (2, 3): (10, 11),
}
ZERO_RTOL = 1e-10


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ExpansionInputs:
    """Null-point quantities feeding the subset-hypothesis expansion.

    Arrays named like diagonal matrices (``W``, ``F``, ``Zd`` ...) hold the
    diagonals only.  ``t_vec = X* ε*`` and ``b_vec = X2* ε``.
    """

    epsilon: np.ndarray
    epsilon_star: np.ndarray
    delta: np.ndarray
    A: np.ndarray
    M: np.ndarray
    Zd: np.ndarray
    Z1d: np.ndarray
    W: np.ndarray
    F: np.ndarray
    G: np.ndarray
    E: np.ndarray
    t_vec: np.ndarray
    b_vec: np.ndarray
    C: np.ndarray
    P: np.ndarray
    H: np.ndarray
    J: np.ndarray
    U: np.ndarray
    noncentrality: float
    phi: float
    df: int
    n: int
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CoefficientTable:
    """``b[i, k]``: rows LR, Wald, score, gradient; columns k = 0..3."""

    b: np.ndarray
    noncentrality: float
    df: int
    metadata: dict = field(default_factory=dict)

    def row(self, statistic: str) -> np.ndarray:
        return self.b[STATISTICS.index(statistic)]


@dataclass(frozen=True)
class LocalPower:
    values: tuple
    raw: tuple
    clamped: bool
    critical_value: float
    gamma: float


@dataclass(frozen=True)
class PowerComparison:
    """Pairwise local power differences ``Π_i - Π_j = k g_{m+4,λ} + k' g_{m+6,λ}``.

    ``verdicts`` maps ``"Pi1-Pi2"``-style keys to ``greater``, ``less``,
    ``equal`` or ``indeterminate``; ``ordering`` is a chain such as
    ``"Pi2 = Pi3 < Pi1 < Pi4"`` when the verdicts determine one.
    """

    k: tuple
    differences: dict
    verdicts: dict
    ordering: str | None
    density_values: tuple
    noncentrality: float
    gamma: float


# --------------------------------------------------------------------------- #
# Subset hypothesis
# --------------------------------------------------------------------------- #


def _spd_inverse(mat: np.ndarray) -> np.ndarray:
    factor = linalg.cho_factor(mat)
    inv = linalg.cho_solve(factor, np.eye(mat.shape[0]))
    return 0.5 * (inv + inv.T)


def subset_inputs(
    family: FamilyDescriptor,
    link: LinkDescriptor,
    spec: RegressionSpec,
    beta_true,
    phi: float,
    epsilon,
) -> ExpansionInputs:
    """Assemble the expansion inputs at the null point ``beta_true``.

    ``epsilon`` is the offset ``β2 - β20`` of the alternative; the
    noncentrality is ``εᵀ K22.1 ε`` with ``K22.1`` the Schur complement of
    the φ-scaled information, so that the limiting law is χ²(m, λ) with mean
    ``m + λ``.
    """
    if not phi > 0:
        raise DomainError(f"phi must be > 0, got {phi!r}")
    q, p = spec.q, spec.p
    epsilon = np.atleast_1d(np.asarray(epsilon, dtype=float))
    if epsilon.shape != (p - q,):
        raise ContractError(f"epsilon must have length p - q = {p - q}, got {epsilon.size}")
    ev = evaluate(spec, beta_true)
    theta = link.theta_of_eta(ev.eta)
    w, f, g, e = fge_weights(family, link, theta, phi)
    X, H_obs = ev.jac, ev.hess
    X1, X2 = X[:, :q], X[:, q:]

    info_inv = _spd_inverse(X.T @ (w[:, None] * X))  # (X*ᵀWX*)⁻¹, φ-free
    zd = np.einsum("li,ij,lj->l", X, info_inv, X)
    A = np.zeros((p, p))
    if q:
        info11_inv = _spd_inverse(X1.T @ (w[:, None] * X1))
        z1d = np.einsum("li,ij,lj->l", X1, info11_inv, X1)
        regress = info11_inv @ (X1.T @ (w[:, None] * X2))
        A[:q, :q] = info11_inv / phi
        j_vec = np.einsum("lij,ji->l", H_obs[:, :q, :q], info11_inv)
    else:
        z1d = np.zeros(spec.n)
        regress = np.zeros((0, p - q))
        j_vec = np.zeros(spec.n)
    M = info_inv / phi - A

    eps_star = np.concatenate([regress @ epsilon, -epsilon])
    delta = np.concatenate([np.zeros(q), epsilon])
    t_vec = X @ eps_star
    b_vec = X2 @ epsilon
    hess_eps = H_obs @ eps_star  # rows X_l ε*
    c_vec = hess_eps @ eps_star
    p_vec = hess_eps @ delta
    h_vec = phi * np.einsum("li,ij,lj->l", X, M, hess_eps)
    u_vec = np.einsum("lij,ji->l", H_obs, info_inv)

    # Schur complement of X*ᵀWX*: (RᵀWR) with R = X2 - X1 regress
    R = X2 - X1 @ regress
    noncentrality = float(phi * epsilon @ (R.T @ (w[:, None] * R)) @ epsilon)

    return ExpansionInputs(
        epsilon=_frozen(epsilon),
        epsilon_star=_frozen(eps_star),
        delta=_frozen(delta),
        A=_frozen(A),
        M=_frozen(M),
        Zd=_frozen(zd),
        Z1d=_frozen(z1d),
        W=_frozen(w),
        F=_frozen(f),
        G=_frozen(g),
        E=_frozen(e),
        t_vec=_frozen(t_vec),
        b_vec=_frozen(b_vec),
        C=_frozen(c_vec),
        P=_frozen(p_vec),
        H=_frozen(h_vec),
        J=_frozen(j_vec),
        U=_frozen(u_vec),
        noncentrality=max(noncentrality, 0.0),
        phi=float(phi),
        df=p - q,
        n=spec.n,
        metadata={
            "family": family.name,
            "link": link.name,
            "noncentrality_convention": "eps' K22.1 eps (mean df + lambda)",
        },
    )


def subset_coefficients(inputs: ExpansionInputs) -> CoefficientTable:
    """The sixteen ``b_ik`` for the subset hypothesis."""
    phi = inputs.phi
    w, f, g, e = inputs.W, inputs.F, inputs.G, inputs.E
    t, b = inputs.t_vec, inputs.b_vec
    c, pv, h, j, u = inputs.C, inputs.P, inputs.H, inputs.J, inputs.U
    zd, z1d = inputs.Zd, inputs.Z1d
    dz = zd - z1d
    t3 = t**3
    wt = w * t

    def s(x):
        return float(np.sum(x))

    a1 = phi / 2 * s((e + 2 * g) * b * t**2 + (2 * e - f + 2 * g) * t3 + wt * (c + 2 * pv))
    fg = f + 2 * g
    m3 = 3 * e - 2 * f + 2 * g
    m2 = 2 * e - f + 2 * g

    b11 = a1 + 0.5 * s(m2 * z1d * t + wt * j)
    b12 = -phi / 6 * s(m3 * t3)
    b13 = 0.0

    b21 = a1 + 0.5 * s(m2 * zd * t + 2 * (f - e) * dz * t + w * (u * t + 2 * h))
    b22 = phi / 2 * s((f - e) * t3 + wt * c) - 0.5 * s(fg * dz * t + wt * (u - j) + 2 * w * h)
    b23 = -phi / 6 * s(fg * t3 + 3 * wt * c)

    b31 = a1 + 0.5 * s(m2 * z1d * t + m3 * dz * t + wt * j)
    b32 = -0.5 * s(m3 * dz * t)
    b33 = -phi / 6 * s(m3 * t3)

    b41 = a1 + 0.25 * s((6 * g - f + 4 * e) * z1d * t - fg * zd * t + wt * (3 * j - u) - 2 * w * h)
    b42 = -phi / 4 * s(m2 * t3 + wt * c) + 0.25 * s(fg * dz * t + wt * (u - j) + 2 * w * h)
    b43 = phi / 12 * s(fg * t3 + 3 * wt * c)

    rest = np.array(
        [[b11, b12, b13], [b21, b22, b23], [b31, b32, b33], [b41, b42, b43]], dtype=float
    )
    table = np.column_stack([-rest.sum(axis=1), rest])
    return CoefficientTable(
        b=_frozen(table),
        noncentrality=inputs.noncentrality,
        df=inputs.df,
        metadata=dict(inputs.metadata),
    )


def subset_k(inputs: ExpansionInputs) -> tuple:
    """``k1 … k12`` for the subset hypothesis."""
    phi = inputs.phi
    w, f, g, e = inputs.W, inputs.F, inputs.G, inputs.E
    t, c, h, j, u = inputs.t_vec, inputs.C, inputs.H, inputs.J, inputs.U
    dz = inputs.Zd - inputs.Z1d
    t3 = t**3
    wt = w * t
    fg = f + 2 * g

    def s(x):
        return float(np.sum(x))

    k1 = -0.5 * s(fg * dz * t) + 0.5 * s(wt * (j - u) - 2 * w * h)
    k2 = -phi / 6 * s(fg * t3) - phi / 2 * s(wt * c)
    k5 = k1 - s((3 * e - 2 * f + 2 * g) * dz * t)
    k6 = -phi / 2 * s((2 * e - f + 2 * g) * t3) - phi / 2 * s(wt * c)
    k10 = phi / 3 * s((3 * e - 2 * f + 2 * g) * t3)
    k11 = -3 * s((f - e) * dz * t) - s(wt * (u - j) + 2 * w * h)
    k12 = -phi * s((f - e) * t3) - phi * s(wt * c)
    return (k1, k2, 3 * k1, 3 * k2, k5, k6, -2 * k1, -2 * k2, k1 - k5, k10, k11, k12)


# --------------------------------------------------------------------------- #
# Power and comparisons
# --------------------------------------------------------------------------- #


def local_power(table: CoefficientTable, gamma: float) -> LocalPower:
    """``Π_i = 1 - Pr(S_i <= x_γ)`` from the expansion, clamped into [0, 1]."""
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma!r}")
    x = chisq_quantile(1.0 - gamma, table.df)
    lam = table.noncentrality
    cdfs = np.array([chisq_cdf(x, ChiSquareSpec(table.df + 2 * k, lam)) for k in range(4)])
    raw = 1.0 - (cdfs[0] + table.b @ cdfs)
    clipped = np.clip(raw, 0.0, 1.0)
    return LocalPower(
        values=tuple(float(v) for v in clipped),
        raw=tuple(float(v) for v in raw),
        clamped=bool(np.any(clipped != raw)),
        critical_value=x,
        gamma=float(gamma),
    )


def _verdict(ka: float, kb: float, tol: float) -> str:
    za, zb = abs(ka) <= tol, abs(kb) <= tol
    if za and zb:
        return "equal"
    if (ka >= 0 or za) and (kb >= 0 or zb):
        return "greater"
    if (ka <= 0 or za) and (kb <= 0 or zb):
        return "less"
    return "indeterminate"


def _ordering(verdicts: dict) -> str | None:
    """Chain like ``Pi2 = Pi3 < Pi1 < Pi4`` if the pairwise verdicts fix one."""
    above = {i: 0 for i in range(1, 5)}
    for (i, j), v in verdicts.items():
        if v == "indeterminate":
            return None
        if v == "greater":
            above[i] += 1
        elif v == "less":
            above[j] += 1
    for (i, j), v in verdicts.items():
        expected = {"greater": above[i] > above[j], "less": above[i] < above[j], "equal": above[i] == above[j]}
        if not expected[v]:
            return None
    ranked = sorted(above, key=lambda i: (above[i], i))
    out = f"Pi{ranked[0]}"
    for prev, cur in itertools.pairwise(ranked):
        out += (" = " if above[prev] == above[cur] else " < ") + f"Pi{cur}"
    return out


def compare_powers(k, df: int, noncentrality: float, gamma: float) -> PowerComparison:
    """Evaluate the pairwise differences and their sign verdicts from ``k``."""
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma!r}")
    k = tuple(float(v) for v in k)
    x = chisq_quantile(1.0 - gamma, df)
    g4 = float(noncentral_chisq_pdf(x, ChiSquareSpec(df + 4, noncentrality)))
    g6 = float(noncentral_chisq_pdf(x, ChiSquareSpec(df + 6, noncentrality)))
    tol = ZERO_RTOL * max((abs(v) for v in k), default=0.0)
    differences, pair_verdicts = {}, {}
    for (i, j), (a, b) in PAIR_K.items():
        differences[f"Pi{i}-Pi{j}"] = k[a] * g4 + k[b] * g6
        pair_verdicts[(i, j)] = _verdict(k[a], k[b], tol)
    return PowerComparison(
        k=k,
        differences=differences,
        verdicts={f"Pi{i}-Pi{j}": v for (i, j), v in pair_verdicts.items()},
        ordering=_ordering(pair_verdicts),
        density_values=(g4, g6),
        noncentrality=float(noncentrality),
        gamma=float(gamma),
    )


def power_differences(inputs: ExpansionInputs, gamma: float) -> PowerComparison:
    """``k1 … k12`` with the pairwise differences and verdicts at level ``gamma``."""
    return compare_powers(subset_k(inputs), inputs.df, inputs.noncentrality, gamma)


# --------------------------------------------------------------------------- #
# Precision hypothesis
# --------------------------------------------------------------------------- #


def precision_alphas(family: FamilyDescriptor, phi: float, n: int):
    """``(α2, α2', α3)`` at ``phi``; for proper dispersion models α2' = α3."""
    alpha2 = family.alpha(2, phi, n)
    alpha3 = family.alpha(3, phi, n)
    return alpha2, alpha3, alpha3


def precision_table_general(alpha2, alpha2p, alpha3, epsilon, p, phi) -> np.ndarray:
    """4×3 array of ``b_ik`` (k = 1..3) written in ``α2, α2', α3``."""
    eps = epsilon
    lead = (alpha2p - alpha3) * eps**3 / 2 + p * eps / (2 * phi)
    return np.array(
        [
            [lead, (2 * alpha3 - 3 * alpha2p) * eps**3 / 6, 0.0],
            [
                lead - alpha3 * eps / (2 * alpha2),
                -(alpha2p - alpha3) * eps**3 / 2 + alpha3 * eps / (2 * alpha2),
                -alpha3 * eps**3 / 6,
            ],
            [
                lead + (2 * alpha3 - 3 * alpha2p) * eps / (2 * alpha2),
                -(2 * alpha3 - 3 * alpha2p) * eps / (2 * alpha2),
                (2 * alpha3 - 3 * alpha2p) * eps**3 / 6,
            ],
            [
                lead + alpha3 * eps / (4 * alpha2),
                -(2 * alpha2p - alpha3) * eps**3 / 4 - alpha3 * eps / (4 * alpha2),
                alpha3 * eps**3 / 12,
            ],
        ],
        dtype=float,
    )


def precision_table_pdm(family: FamilyDescriptor, n: int, epsilon, p, phi) -> np.ndarray:
    """Same table with ``α2' = α3 = n a2'''`` substituted by hand."""
    a2 = family.pdm_a2
    ratio = float(a2.d3(phi) / a2.d2(phi))  # α3/α2
    cubic = n * float(a2.d3(phi)) * epsilon**3
    eps = epsilon
    base = p * eps / (2 * phi)
    return np.array(
        [
            [base, -cubic / 6, 0.0],
            [base - ratio * eps / 2, ratio * eps / 2, -cubic / 6],
            [base - ratio * eps / 2, ratio * eps / 2, -cubic / 6],
            [base + ratio * eps / 4, -cubic / 4 - ratio * eps / 4, cubic / 12],
        ],
        dtype=float,
    )


def precision_coefficients(family: FamilyDescriptor, p: int, phi: float, epsilon: float, n: int) -> CoefficientTable:
    """``b_ik`` for ``φ = φ0`` at null value ``phi`` and offset ``epsilon``.

    ``p`` is the rank of the local derivative matrix and ``n`` the sample
    size; the noncentrality is ``-α2 ε²``.
    """
    if not phi > 0:
        raise DomainError(f"phi must be > 0, got {phi!r}")
    alpha2, alpha2p, alpha3 = precision_alphas(family, phi, n)
    rest = precision_table_general(alpha2, alpha2p, alpha3, float(epsilon), p, phi)
    table = np.column_stack([-rest.sum(axis=1), rest])
    return CoefficientTable(
        b=_frozen(table),
        noncentrality=float(-alpha2 * epsilon**2),
        df=1,
        metadata={"family": family.name, "hypothesis": "precision"},
    )


def precision_k(family: FamilyDescriptor, phi0: float, epsilon: float, n: int) -> tuple:
    """``k1 … k12`` for ``φ = φ0`` in the same pair layout as the subset case."""
    alpha2, alpha2p, alpha3 = precision_alphas(family, phi0, n)
    eps = float(epsilon)
    k1, k2 = alpha3 * eps / (2 * alpha2), -alpha3 * eps**3 / 6
    k5, k6 = -3 * (alpha3 - 2 * alpha2p) * eps / (2 * alpha2), (alpha3 - 2 * alpha2p) * eps**3 / 2
    return (
        k1,
        k2,
        3 * alpha3 * eps / (2 * alpha2),
        -alpha3 * eps**3 / 2,
        k5,
        k6,
        -alpha3 * eps / alpha2,
        alpha3 * eps**3 / 3,
        (2 * alpha3 - 3 * alpha2p) * eps / alpha2,
        -(2 * alpha3 - 3 * alpha2p) * eps**3 / 3,
        3 * (alpha3 - alpha2p) * eps / alpha2,
        -(alpha3 - alpha2p) * eps**3,
    )


def precision_power_differences(
    family: FamilyDescriptor, phi: float, phi0: float, gamma: float, n: int
) -> PowerComparison:
    """Pairwise power differences and verdicts for ``φ = φ0`` when the truth is ``phi``."""
    if not (phi > 0 and phi0 > 0):
        raise DomainError("phi and phi0 must be > 0")
    eps = phi - phi0
    lam = -family.alpha(2, phi0, n) * eps**2
    return compare_powers(precision_k(family, phi0, eps, n), 1, lam, gamma)
