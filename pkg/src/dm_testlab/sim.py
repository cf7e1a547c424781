"""Seedable Monte Carlo experiments: null rejection rates, moments and power.

Each replication draws its responses from its own counter-based stream
(Philox keyed by ``(master_seed, 1, replication)``) and covariates come from
the stream keyed by ``(master_seed, 0)``.  Replications are processed in
fixed chunks and merged by index, so results do not depend on the number
of worker processes.
"""

from __future__ import annotations

import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _batch
from .design import RegressionSpec, evaluate
from .errors import ContractError, DomainError, UnsupportedFamilyError
from .expansion import (
    local_power,
    power_differences,
    precision_coefficients,
    precision_power_differences,
    subset_inputs,
    subset_coefficients,
)
from .family import FamilyDescriptor, builtin_family, resolve_link
from .fit import NESTED_SLACK, fit_full, fit_nested
from .specfun import chisq_quantile
from .teststats import STAT_NAMES, precision_tests, subset_tests

log = logging.getLogger(__name__)

CHUNK = 1000
FAILURE_LIMIT = 0.01
GENERATOR_NAME = "numpy Philox (4x64) keyed by SeedSequence(master_seed, spawn_key)"
COVARIATE_RULES = ("uniform01-fixed", "user-matrix")


# --------------------------------------------------------------------------- #
# Streams and samplers
# --------------------------------------------------------------------------- #


def stream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=key)))


def replication_stream(master_seed: int, replication: int) -> np.random.Generator:
    return stream(master_seed, 1, replication)


def uniform_covariates(n: int, p: int, master_seed: int) -> np.ndarray:
    """Intercept column followed by ``p - 1`` columns of U(0, 1) draws."""
    rng = stream(master_seed, 0)
    return np.column_stack([np.ones(n), rng.uniform(size=(n, p - 1))])


def _von_mises(mu, kappa, rng):
    """Best and Fisher's wrapped-Cauchy envelope rejection sampler."""
    mu = np.asarray(mu, dtype=float)
    out = np.empty(mu.shape)
    flat = out.reshape(-1)
    if kappa < 1e-8:
        flat[:] = rng.uniform(-np.pi, np.pi, size=flat.size)
    else:
        tau = 1.0 + np.sqrt(1.0 + 4.0 * kappa**2)
        rho = (tau - np.sqrt(2.0 * tau)) / (2.0 * kappa)
        r = (1.0 + rho**2) / (2.0 * rho)
        todo = np.arange(flat.size)
        while todo.size:
            u1, u2, u3 = rng.uniform(size=(3, todo.size))
            z = np.cos(np.pi * u1)
            f = (1.0 + r * z) / (r + z)
            c = kappa * (r - f)
            with np.errstate(divide="ignore"):
                accept = (c * (2.0 - c) - u2 > 0) | (np.log(c / u2) + 1.0 - c >= 0)
            angle = np.sign(u3 - 0.5) * np.arccos(np.clip(f, -1.0, 1.0))
            flat[todo[accept]] = angle[accept]
            todo = todo[~accept]
    y = mu + out
    return np.pi - np.mod(np.pi - y, 2.0 * np.pi)


def sample(family: FamilyDescriptor, theta, phi: float, rng: np.random.Generator) -> np.ndarray:
    """One draw per entry of ``theta`` from the family at precision ``phi``."""
    theta = np.asarray(theta, dtype=float)
    if not phi > 0:
        raise DomainError(f"phi must be > 0, got {phi!r}")
    if not np.all(family.theta_in_domain(theta)):
        raise DomainError(f"theta outside the {family.name} domain")
    name = family.name
    if name == "normal":
        return theta + rng.standard_normal(theta.shape) / np.sqrt(phi)
    if name == "gamma":
        return rng.gamma(phi, 1.0 / (-phi * theta))
    if name == "reciprocal-gamma":
        return 1.0 / rng.gamma(phi, 1.0 / (-phi * theta))
    if name == "log-gamma":
        return theta + np.log(rng.gamma(phi, 1.0 / phi, size=theta.shape))
    if name == "inverse-gaussian":
        return rng.wald(1.0 / np.sqrt(-2.0 * theta), phi)
    if name == "von-mises":
        return _von_mises(theta, phi, rng)
    raise UnsupportedFamilyError(f"no sampler for family {name!r}")


# --------------------------------------------------------------------------- #
# Configuration and report
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class SimConfig:
    """One Monte Carlo configuration.

    ``beta`` is the true coefficient vector.  For the subset hypothesis
    ``beta20`` defaults to ``beta[q:]`` (a size study); for the precision
    hypothesis ``phi0`` defaults to ``phi``.
    """

    family: str
    link: str
    n: int
    p: int
    q: int
    beta: tuple
    phi: float
    hypothesis: str = "subset"
    beta20: tuple | None = None
    phi0: float | None = None
    nominal_levels: tuple = (0.10, 0.05, 0.01)
    replications: int = 1000
    master_seed: int = 0
    link_scale: str = "theta"
    predictor: str = "linear"
    covariate_rule: str = "uniform01-fixed"
    covariates: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "nominal_levels", tuple(float(g) for g in self.nominal_levels))
        if self.beta20 is not None:
            object.__setattr__(self, "beta20", tuple(float(b) for b in np.atleast_1d(self.beta20)))
        if self.covariates is not None:
            object.__setattr__(self, "covariates", tuple(tuple(float(v) for v in row) for row in self.covariates))
        if self.replications < 1:
            raise ContractError("replications must be >= 1")
        if len(self.beta) != self.p:
            raise ContractError(f"beta must have length p = {self.p}")
        if self.hypothesis not in ("subset", "precision"):
            raise ContractError(f"hypothesis must be 'subset' or 'precision', got {self.hypothesis!r}")
        if self.hypothesis == "subset" and self.beta20 is not None and len(self.beta20) != self.p - self.q:
            raise ContractError("beta20 must have length p - q")
        if not self.phi > 0 or (self.phi0 is not None and not self.phi0 > 0):
            raise ContractError("phi and phi0 must be > 0")
        if any(not 0 < g < 1 for g in self.nominal_levels):
            raise ContractError("nominal levels must lie in (0, 1)")
        if self.covariate_rule not in COVARIATE_RULES:
            raise ContractError(f"covariate_rule must be one of {COVARIATE_RULES}")
        if self.covariate_rule == "user-matrix" and self.covariates is None:
            raise ContractError("covariate_rule 'user-matrix' needs covariates")
        if not 0 <= self.master_seed < 2**64:
            raise ContractError("master_seed must be an unsigned 64-bit integer")

    @property
    def null_beta20(self) -> np.ndarray:
        if self.beta20 is not None:
            return np.array(self.beta20)
        return np.array(self.beta[self.q :])

    @property
    def null_phi(self) -> float:
        return self.phi if self.phi0 is None else float(self.phi0)

    @property
    def df(self) -> int:
        return self.p - self.q if self.hypothesis == "subset" else 1

    def model(self):
        family = builtin_family(self.family)
        link = resolve_link(family, self.link, self.link_scale)
        if self.covariate_rule == "user-matrix":
            X = np.array(self.covariates, dtype=float)
        elif self.predictor == "expcurve":
            X = stream(self.master_seed, 0).uniform(size=(self.n, 1))
        else:
            X = uniform_covariates(self.n, self.p, self.master_seed)
        spec = RegressionSpec(self.predictor, X, self.p, self.q)
        return family, link, spec

    def to_dict(self) -> dict:
        out = asdict(self)
        out["beta"] = list(self.beta)
        out["nominal_levels"] = list(self.nominal_levels)
        if self.beta20 is not None:
            out["beta20"] = list(self.beta20)
        if self.covariates is not None:
            out["covariates"] = [list(r) for r in self.covariates]
        return out


@dataclass(frozen=True)
class SimReport:
    """Aggregated experiment output; rates and their standard errors are in percent."""

    statistics: np.ndarray = field(repr=False)
    rejection_rates: dict
    mc_standard_errors: dict
    moments: dict
    reference_moments: dict
    replication_failures: dict
    unreliable: bool
    metadata: dict
    analytic: dict | None = None

    def as_dict(self) -> dict:
        return {
            "rejection_rates": self.rejection_rates,
            "mc_standard_errors": self.mc_standard_errors,
            "moments": self.moments,
            "reference_moments": self.reference_moments,
            "replication_failures": self.replication_failures,
            "unreliable": self.unreliable,
            "metadata": self.metadata,
            "analytic": self.analytic,
        }


# --------------------------------------------------------------------------- #
# Replication engine
# --------------------------------------------------------------------------- #


def _solve_rows(A, B):
    """Row-wise ``solve(A[r], B[r])``; rows with a singular ``A`` come back as NaN."""
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError:
        out = np.full(B.shape, np.nan)
        for r in range(A.shape[0]):
            try:
                out[r] = np.linalg.solve(A[r], B[r])
            except np.linalg.LinAlgError:
                pass
        return out


def _schur(w, X, q):
    A = np.einsum("rl,li,lj->rij", w, X, X)
    if q == 0:
        return A
    A11, A12, A22 = A[:, :q, :q], A[:, :q, q:], A[:, q:, q:]
    return A22 - np.swapaxes(A12, 1, 2) @ _solve_rows(A11, A12)


def _subset_rows(family, link, X, Y, q, beta20):
    full = _batch.fit_rows(family, link, X, Y, X.shape[1])
    restricted = _batch.fit_rows(family, link, X, Y, q, beta20)
    ok = full.ok & restricted.ok
    # a full fit below the restricted one stopped at a worse local maximum; the single path refits it
    with np.errstate(invalid="ignore"):
        ok &= ~(restricted.loglik > full.loglik + NESTED_SLACK * (1.0 + np.abs(full.loglik)))
    stats = np.full((Y.shape[0], 4), np.nan)
    if ok.any():
        d = full.beta[ok, q:] - beta20
        schur_hat = _schur(full.w[ok], X, q)
        schur_tilde = _schur(restricted.w[ok], X, q)
        u = (restricted.dtheta[ok] * restricted.tdot[ok]) @ X[:, q:]
        stats[ok, 0] = 2.0 * (full.loglik[ok] - restricted.loglik[ok])
        stats[ok, 1] = full.phi[ok] * np.einsum("ri,rij,rj->r", d, schur_hat, d)
        stats[ok, 2] = restricted.phi[ok] * np.einsum("ri,ri->r", u, _solve_rows(schur_tilde, u[..., None])[..., 0])
        stats[ok, 3] = restricted.phi[ok] * np.einsum("ri,ri->r", u, d)
        # singular blocks leave NaN; those rows go through the single-fit path
        ok[ok] = np.all(np.isfinite(stats[ok]), axis=1)
    return stats, ok


def _precision_rows(family, link, X, Y, phi0):
    full = _batch.fit_rows(family, link, X, Y, X.shape[1])
    ok = full.ok.copy()
    stats = np.full((Y.shape[0], 4), np.nan)
    if ok.any():
        n = Y.shape[1]
        a2 = family.pdm_a2
        Yo, th, phi = Y[ok], full.theta[ok], full.phi[ok]
        tsum = np.sum(family.t(Yo, th), axis=1)
        diff = phi - phi0
        c_hat = np.sum(family.c(Yo, phi[:, None]), axis=1)
        c_null = np.sum(family.c(Yo, phi0), axis=1)
        score_null = tsum + np.sum(family.c1(Yo, phi0), axis=1)
        stats[ok, 0] = 2.0 * (diff * tsum + c_hat - c_null)
        stats[ok, 1] = diff**2 * (-n * a2.d2(phi))
        stats[ok, 2] = stats[ok, 1] if a2.label == "log(phi)/2" else score_null**2 / (-n * a2.d2(phi0))
        stats[ok, 3] = diff * score_null
    return stats, ok


def _single_row(config, family, link, spec, y):
    if config.hypothesis == "subset":
        return subset_tests(*fit_nested(family, link, spec, y, config.null_beta20)).values
    full = fit_full(family, link, spec, y)
    return precision_tests(family, y, full, config.null_phi).values


def run_chunk(config: SimConfig, start: int, stop: int):
    """Statistics and failure reasons for replications ``start .. stop-1``."""
    family, link, spec = config.model()
    ev = evaluate(spec, np.array(config.beta))
    theta = link.theta_of_eta(ev.eta)
    Y = np.array([sample(family, theta, config.phi, replication_stream(config.master_seed, r)) for r in range(start, stop)])
    if config.hypothesis == "precision" and family.pdm_a2 is None:
        raise UnsupportedFamilyError(f"family {family.name!r} has no a2(phi)")
    stats = np.full((stop - start, 4), np.nan)
    ok = np.zeros(stop - start, dtype=bool)
    if spec.is_linear:
        with np.errstate(all="ignore"):
            if config.hypothesis == "subset":
                stats, ok = _subset_rows(family, link, spec.covariates, Y, config.q, config.null_beta20)
            else:
                stats, ok = _precision_rows(family, link, spec.covariates, Y, config.null_phi)
    reasons = [None] * (stop - start)
    for i in np.flatnonzero(~ok):
        try:
            stats[i] = _single_row(config, family, link, spec, Y[i])
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            stats[i] = np.nan
            reasons[i] = f"{type(exc).__name__}: {str(exc).splitlines()[0]}"
    return stats, reasons


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("DM_TESTLAB_THREADS", "1"))
    return max(1, int(threads))


def simulate_statistics(config: SimConfig, threads: int | None = None):
    """``(R, 4)`` statistics (NaN rows for failures) and the failure reasons."""
    bounds = [(s, min(s + CHUNK, config.replications)) for s in range(0, config.replications, CHUNK)]
    workers = min(_threads(threads), len(bounds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, [config] * len(bounds), *zip(*bounds)))
    else:
        parts = [run_chunk(config, s, e) for s, e in bounds]
    stats = np.concatenate([p[0] for p in parts])
    reasons = [r for p in parts for r in p[1]]
    return stats, reasons


def _level_key(level: float) -> str:
    return f"{level:g}"


def summarize(config: SimConfig, stats: np.ndarray, reasons: list, analytic=None) -> SimReport:
    valid = np.all(np.isfinite(stats), axis=1)
    good = stats[valid]
    count = int(good.shape[0])
    failures = config.replications - count
    rates, ses, moments = {}, {}, {}
    for j, name in enumerate(STAT_NAMES):
        rates[name], ses[name] = {}, {}
        for level in config.nominal_levels:
            crit = chisq_quantile(1.0 - level, config.df)
            r = float(np.mean(good[:, j] > crit)) if count else float("nan")
            rates[name][_level_key(level)] = 100.0 * r
            ses[name][_level_key(level)] = 100.0 * float(np.sqrt(r * (1.0 - r) / count)) if count else float("nan")
        moments[name] = {
            "mean": float(np.mean(good[:, j])) if count else float("nan"),
            "variance": float(np.var(good[:, j], ddof=1)) if count > 1 else float("nan"),
        }
    unreliable = failures > FAILURE_LIMIT * config.replications
    if unreliable:
        log.warning("%d of %d replications failed; rates are unreliable", failures, config.replications)
    return SimReport(
        statistics=stats,
        rejection_rates=rates,
        mc_standard_errors=ses,
        moments=moments,
        reference_moments={"mean": float(config.df), "variance": 2.0 * config.df},
        replication_failures={
            "count": failures,
            "reasons": dict(Counter(r for r in reasons if r is not None)),
        },
        unreliable=bool(unreliable),
        metadata={
            "master_seed": int(config.master_seed),
            "generator": GENERATOR_NAME,
            "replications": config.replications,
            "valid_replications": count,
            "df": config.df,
            "config": config.to_dict(),
        },
        analytic=analytic,
    )


def rejection_experiment(config: SimConfig, threads: int | None = None) -> SimReport:
    """Rejection rates of the four statistics at each nominal level."""
    stats, reasons = simulate_statistics(config, threads)
    return summarize(config, stats, reasons)


def moments_experiment(config: SimConfig, threads: int | None = None) -> SimReport:
    """Same replications as :func:`rejection_experiment`; read ``moments`` and ``reference_moments``."""
    return rejection_experiment(config, threads)


def analytic_power(config: SimConfig) -> dict:
    """Expansion-based local powers and pairwise comparisons for the configuration."""
    family, link, spec = config.model()
    out = {}
    if config.hypothesis == "subset":
        q = config.q
        beta_null = np.array(config.beta)
        beta_null[q:] = config.null_beta20
        epsilon = np.array(config.beta[q:]) - config.null_beta20
        inputs = subset_inputs(family, link, spec, beta_null, config.phi, epsilon)
        table = subset_coefficients(inputs)
        compare = lambda level: power_differences(inputs, level)  # noqa: E731
    else:
        phi0 = config.null_phi
        table = precision_coefficients(family, config.p, phi0, config.phi - phi0, config.n)
        compare = lambda level: precision_power_differences(family, config.phi, phi0, level, config.n)  # noqa: E731
    out["noncentrality"] = table.noncentrality
    out["b"] = table.b.tolist()
    for level in config.nominal_levels:
        power = local_power(table, level)
        comparison = compare(level)
        out[_level_key(level)] = {
            "power": dict(zip(STAT_NAMES, power.values)),
            "clamped": power.clamped,
            "differences": comparison.differences,
            "verdicts": comparison.verdicts,
            "ordering": comparison.ordering,
        }
    return out


def power_experiment(config: SimConfig, threads: int | None = None) -> SimReport:
    """Empirical power with the expansion's local powers attached under ``analytic``."""
    stats, reasons = simulate_statistics(config, threads)
    return summarize(config, stats, reasons, analytic=analytic_power(config))
