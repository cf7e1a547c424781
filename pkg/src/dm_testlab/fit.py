"""Maximum likelihood fitting: reweighted least squares for β, root solve for φ."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .design import DesignEval, RegressionSpec, check_rank, evaluate
from .errors import ContractError, ConvergenceError, DomainError, PhiEquationError
from .family import FamilyDescriptor, LinkDescriptor, PdmA2

log = logging.getLogger(__name__)

PHI_BOUNDS = (1e-8, 1e8)
BETA_TOL = 1e-10
SCORE_TOL = 1e-8
MAX_ITER = 200
# scoring converges only linearly when observed and expected information differ a lot
NEWTON_AFTER = 25
NESTED_SLACK = 1e-10
MAX_HALVINGS = 30


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    beta: tuple
    kernel: float
    halvings: int


@dataclass(frozen=True)
class BetaTrace:
    beta: np.ndarray
    iterations: int
    converged: bool
    kernel: float
    trace: tuple = ()


@dataclass(frozen=True)
class FitResult:
    """Estimates and the per-observation quantities at the optimum.

    ``W`` and ``N`` hold the diagonals of the weight and adjusted-variable
    scaling matrices; ``dtheta`` holds ``dθ/dη``.  ``restricted`` is
    ``(q, beta20)`` for fits with β2 held fixed, else ``None``.
    """

    family: FamilyDescriptor
    link: LinkDescriptor
    spec: RegressionSpec
    y: np.ndarray
    beta_hat: np.ndarray
    phi_hat: float
    eta: np.ndarray
    theta: np.ndarray
    W: np.ndarray
    N: np.ndarray
    tdot: np.ndarray
    dtheta: np.ndarray
    info_beta: np.ndarray
    alpha2: float | None
    loglik: float
    iterations: int
    converged: bool
    design: DesignEval
    restricted: tuple | None = None
    trace: tuple = field(default=(), repr=False)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def score(self) -> np.ndarray:
        """``U_β = φ X*ᵀ diag(θ') ṫ`` at the estimate."""
        return self.phi_hat * self.design.jac.T @ (self.dtheta * self.tdot)

    def standard_errors(self):
        """Asymptotic standard errors of β̂ and φ̂ from the joint information."""
        se_beta = np.sqrt(np.diag(linalg.inv(self.info_beta)))
        se_phi = np.sqrt(-1.0 / self.alpha2) if self.alpha2 is not None else float("nan")
        return se_beta, float(se_phi)


# --------------------------------------------------------------------------- #
# φ equation
# --------------------------------------------------------------------------- #


def solve_a2_prime(pdm: PdmA2, rhs, guess=1.0, tol: float = 1e-14) -> np.ndarray:
    """Solve ``a2'(φ) = rhs`` elementwise by Newton steps kept inside a bracket.

    ``a2'`` is decreasing for every built-in family, so the bracket
    ``PHI_BOUNDS`` either contains a unique root or none.
    """
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    lo = np.full_like(rhs, PHI_BOUNDS[0])
    hi = np.full_like(rhs, PHI_BOUNDS[1])
    with np.errstate(all="ignore"):
        inside = (pdm.d1(lo) > rhs) & (pdm.d1(hi) < rhs) & np.isfinite(rhs)
    if not np.all(inside):
        bad = rhs[~inside][0]
        raise PhiEquationError(f"phi equation has no root (a2'(phi) = {bad!r} unreachable)")
    phi = np.clip(np.broadcast_to(np.asarray(guess, dtype=float), rhs.shape).copy(), lo * 10, hi / 10)
    scale = np.maximum(1.0, np.abs(rhs))
    active = np.ones(rhs.shape, dtype=bool)
    for _ in range(300):
        resid = pdm.d1(phi[active]) - rhs[active]
        done = np.abs(resid) <= tol * scale[active]
        lo_a, hi_a = lo[active], hi[active]
        lo_a = np.where(resid > 0, phi[active], lo_a)
        hi_a = np.where(resid < 0, phi[active], hi_a)
        lo[active], hi[active] = lo_a, hi_a
        with np.errstate(all="ignore"):
            newton = phi[active] - resid / pdm.d2(phi[active])
        fallback = np.sqrt(lo_a * hi_a)
        ok = np.isfinite(newton) & (newton > lo_a) & (newton < hi_a)
        step = np.where(ok, newton, fallback)
        narrow = hi_a / lo_a - 1.0 < 1e-15
        idx = np.flatnonzero(active)
        phi[idx[~done]] = step[~done]
        active[idx[done | narrow]] = False
        if not active.any():
            break
    return phi


def fit_phi(family: FamilyDescriptor, y, theta_hat, phi0_guess: float = 1.0) -> float:
    """Root of ``Σ{t(y, θ̂) + c1(y, φ)} = 0`` in φ."""
    y = np.asarray(y, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    total_t = float(np.sum(family.t(y, theta_hat)))
    if family.pdm_a2 is not None:
        return float(solve_a2_prime(family.pdm_a2, -total_t / y.size, phi0_guess)[0])

    def h(phi):
        return total_t + float(np.sum(family.c1(y, phi)))

    lo = hi = float(phi0_guess)
    while h(lo) <= 0:
        lo /= 4.0
        if lo < PHI_BOUNDS[0]:
            raise PhiEquationError("phi equation has no root")
    while h(hi) >= 0:
        hi *= 4.0
        if hi > PHI_BOUNDS[1]:
            raise PhiEquationError("phi equation has no root")
    return float(optimize.brentq(h, lo, hi, xtol=1e-14, rtol=1e-15))


def _phi_work(family, y, theta, previous):
    if not family.d2_depends_on_phi or family.pdm_a2 is None:
        return previous
    rhs = -float(np.mean(family.t(y, theta)))
    try:
        return float(solve_a2_prime(family.pdm_a2, rhs, previous)[0])
    except PhiEquationError:
        return previous


# --------------------------------------------------------------------------- #
# β iterations
# --------------------------------------------------------------------------- #


def _kernel(family, link, spec, y, beta):
    ev = evaluate(spec, beta, rank_check=False)
    theta = link.theta_of_eta(ev.eta)
    with np.errstate(all="ignore"):
        if not np.all(family.theta_in_domain(theta)):
            return -np.inf, ev, theta
        value = float(np.sum(family.t(y, theta)))
    return (value if np.isfinite(value) else -np.inf), ev, theta


def _observed_information(family, link, y, theta, ev, n_free, d1, tdot, fallback):
    """``-∂²Σt/∂β∂βᵀ`` over the free block, or ``fallback`` if it is not positive definite."""
    curv = d1**2 * family.d2t_dtheta2(y, theta) + link.d2theta_deta2(ev.eta) * tdot
    Xf = ev.jac[:, :n_free]
    obs = -(Xf.T @ (curv[:, None] * Xf))
    if not ev.linear:
        obs -= np.einsum("l,lij->ij", d1 * tdot, ev.hess[:, :n_free, :n_free])
    try:
        linalg.cholesky(obs)
    except linalg.LinAlgError:
        return fallback
    return obs


def fit_beta(
    family: FamilyDescriptor,
    link: LinkDescriptor,
    spec: RegressionSpec,
    y,
    beta0,
    *,
    n_free: int | None = None,
    max_iter: int = MAX_ITER,
    tol: float = BETA_TOL,
) -> BetaTrace:
    """Reweighted least squares for the first ``n_free`` coordinates of β.

    Each iteration solves ``X*ᵀWX* δ = X*ᵀ diag(θ') ṫ``, the update of
    ``X*ᵀWX* β⁺ = X*ᵀW y*`` written as a step; the step is halved while
    ``Σ t(y, θ)`` decreases or θ leaves its domain.  After ``NEWTON_AFTER``
    iterations the observed information replaces ``X*ᵀWX*`` whenever it is
    positive definite.
    """
    y = np.asarray(y, dtype=float)
    beta = np.array(beta0, dtype=float)
    n_free = spec.p if n_free is None else n_free
    kernel, ev, theta = _kernel(family, link, spec, y, beta)
    if not np.isfinite(kernel):
        raise DomainError("starting value puts theta outside its domain")
    phi_work = _phi_work(family, y, theta, 1.0)
    trace = []
    change = np.inf
    for it in range(1, max_iter + 1):
        d1 = link.dtheta_deta(ev.eta)
        tdot = family.dt_dtheta(y, theta)
        phi_work = _phi_work(family, y, theta, phi_work)
        w = -family.d2(theta, phi_work) * d1**2
        Xf = ev.jac[:, :n_free]
        score = Xf.T @ (d1 * tdot)
        if change <= tol and np.max(np.abs(score), initial=0.0) <= SCORE_TOL * (1.0 + abs(kernel)):
            return BetaTrace(beta, it - 1, True, kernel, tuple(trace))
        info = Xf.T @ (w[:, None] * Xf)
        if it > NEWTON_AFTER:
            info = _observed_information(family, link, y, theta, ev, n_free, d1, tdot, info)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as exc:
            raise ConvergenceError(f"weighted information singular at iteration {it}: {exc}", trace) from None
        frac, halvings, accepted, any_finite = 1.0, 0, False, False
        for halvings in range(MAX_HALVINGS + 1):
            cand = beta.copy()
            cand[:n_free] += frac * step
            k_new, ev_new, theta_new = _kernel(family, link, spec, y, cand)
            if np.isfinite(k_new):
                any_finite = True
                if k_new >= kernel:
                    accepted = True
                    break
            frac *= 0.5
        if accepted:
            change = float(np.max(np.abs(frac * step), initial=0.0))
            beta, kernel, ev, theta = cand, k_new, ev_new, theta_new
        elif any_finite:
            change = 0.0
        else:
            raise ConvergenceError(
                f"step halving could not keep theta inside its domain at iteration {it}", trace
            )
        trace.append(IterationRecord(it, tuple(beta), kernel, halvings))
    raise ConvergenceError(f"no convergence after {max_iter} iterations", trace)


# --------------------------------------------------------------------------- #
# Starting values
# --------------------------------------------------------------------------- #


def _clamped_pseudo_theta(family, y):
    theta = family.theta_of_y(y)
    lo, hi = family.theta_domain
    if np.isfinite(lo) and np.isfinite(hi):
        margin = 0.02 * (hi - lo)
        theta = np.clip(theta, lo + margin, hi - margin)
    return theta


def _centre_theta(family, y):
    if family.circular:
        return float(np.arctan2(np.mean(np.sin(y)), np.mean(np.cos(y))))
    return float(_clamped_pseudo_theta(family, np.array([np.mean(y)]))[0])


def start_candidates(family, link, spec, y, beta20=None):
    """Starting values tried in order by the fitters."""
    q = spec.q if beta20 is not None else spec.p
    fixed = np.zeros(0) if beta20 is None else np.asarray(beta20, dtype=float)
    out = []
    with np.errstate(all="ignore"):
        eta0 = link.eta_of_theta(_clamped_pseudo_theta(family, y))
        eta_c = link.eta_of_theta(np.array([_centre_theta(family, y)]))[0]
    if spec.predictor == "linear":
        X = spec.covariates
        X1, X2 = X[:, :q], X[:, q:]
        targets = [eta0, np.full(y.size, eta_c)]
        if family.circular:
            # tan-type links blow up angles near ±π, so the data start is a poor first guess
            targets.reverse()
        for target in targets:
            if not np.all(np.isfinite(target)):
                continue
            z = target - X2 @ fixed
            b1 = np.linalg.lstsq(X1, z, rcond=None)[0] if q else np.zeros(0)
            out.append(np.concatenate([b1, fixed]))
        out.append(np.concatenate([np.zeros(q), fixed]))
    elif spec.predictor == "expcurve":
        out.extend(_expcurve_starts(spec.covariates[:, 0], eta0, eta_c, q, fixed))
    return out


def _expcurve_starts(x, eta0, eta_c, q, fixed):
    """(level, scale) by least squares on ``η ≈ level + scale·exp(rate·x)`` over a grid of rates, best fit first."""
    target = eta0 if np.all(np.isfinite(eta0)) else np.full(x.size, eta_c)
    spread = max(float(np.ptp(x)), 1e-12)
    rates = [fixed[-1]] if q < 3 else [s * r / spread for r in (0.5, 1.0, 2.0, 4.0) for s in (-1.0, 1.0)]
    scored = []
    for rate in rates:
        basis = np.exp(rate * x)
        if q == 0:
            beta = np.asarray(fixed, dtype=float)
        elif q == 1:
            beta = np.array([np.mean(target - fixed[0] * basis), *fixed])
        else:
            coef = np.linalg.lstsq(np.column_stack([np.ones(x.size), basis]), target, rcond=None)[0]
            beta = np.array([coef[0], coef[1], rate])
        resid = target - beta[0] - beta[1] * np.exp(beta[2] * x)
        scored.append((float(resid @ resid), beta))
    scored.sort(key=lambda item: item[0])
    return [beta for _, beta in scored[:3]]


# --------------------------------------------------------------------------- #
# Full and restricted fits
# --------------------------------------------------------------------------- #


def _finish(family, link, spec, y, bt: BetaTrace, restricted) -> FitResult:
    ev = evaluate(spec, bt.beta)
    theta = link.theta_of_eta(ev.eta)
    phi = fit_phi(family, y, theta)
    d1 = link.dtheta_deta(ev.eta)
    D2 = family.d2(theta, phi)
    w = -D2 * d1**2
    N = -1.0 / (D2 * d1)
    info = phi * ev.jac.T @ (w[:, None] * ev.jac)
    alpha2 = family.alpha(2, phi, y.size) if family.pdm_a2 is not None else None
    loglik = float(np.sum(phi * family.t(y, theta) + family.c(y, phi)))
    frozen = []
    for arr in (y, bt.beta, ev.eta, theta, w, N, d1, info):
        arr = np.array(arr, dtype=float)
        arr.setflags(write=False)
        frozen.append(arr)
    y_, beta_, eta_, theta_, w_, N_, d1_, info_ = frozen
    return FitResult(
        family=family,
        link=link,
        spec=spec,
        y=y_,
        beta_hat=beta_,
        phi_hat=phi,
        eta=eta_,
        theta=theta_,
        W=w_,
        N=N_,
        tdot=family.dt_dtheta(y_, theta_),
        dtheta=d1_,
        info_beta=info_,
        alpha2=alpha2,
        loglik=loglik,
        iterations=bt.iterations,
        converged=bt.converged,
        design=ev,
        restricted=restricted,
        trace=bt.trace,
    )


def _validate_y(family, spec, y):
    if spec.is_linear:
        check_rank(spec.covariates)
    y = np.asarray(y, dtype=float)
    if y.shape != (spec.n,):
        raise ContractError(f"y must have shape ({spec.n},), got {y.shape}")
    if not np.all(family.y_in_support(y)):
        bad = int(np.flatnonzero(~family.y_in_support(y))[0])
        raise DomainError(f"y[{bad}] = {y[bad]!r} outside the {family.name} support")
    return y


def _run(family, link, spec, y, starts, n_free):
    errors = []
    for start in starts:
        try:
            return fit_beta(family, link, spec, y, start, n_free=n_free)
        except (ConvergenceError, DomainError) as exc:
            errors.append(exc)
            log.debug("start %s failed: %s", start, exc)
    if not errors:
        raise ContractError("no starting value available; pass beta0 for custom predictors")
    last = errors[-1]
    raise ConvergenceError(f"all starting values failed; last error: {last}", getattr(last, "trace", []))


def fit_full(family, link, spec: RegressionSpec, y, beta0=None) -> FitResult:
    """Unrestricted maximum likelihood fit of (β, φ)."""
    y = _validate_y(family, spec, y)
    starts = [np.asarray(beta0, dtype=float)] if beta0 is not None else start_candidates(family, link, spec, y)
    bt = _run(family, link, spec, y, starts, spec.p)
    return _finish(family, link, spec, y, bt, None)


def fit_nested(family, link, spec: RegressionSpec, y, beta20):
    """Full and restricted fits, with the full fit guaranteed not to fall below the restricted one.

    The restricted estimate is a feasible point of the full model, so a full
    fit that ends lower has stopped at a worse local maximum; it is refitted
    from the restricted estimate.
    """
    full = fit_full(family, link, spec, y)
    restricted = fit_restricted(family, link, spec, y, beta20)
    if restricted.loglik > full.loglik + NESTED_SLACK * (1.0 + abs(full.loglik)):
        log.debug("full fit below restricted (%.6g < %.6g); refitting", full.loglik, restricted.loglik)
        full = fit_full(family, link, spec, y, beta0=restricted.beta_hat)
    return full, restricted


def fit_restricted(family, link, spec: RegressionSpec, y, beta20, beta0=None) -> FitResult:
    """Fit with β2 (the last ``p - q`` coordinates) held at ``beta20``."""
    y = _validate_y(family, spec, y)
    beta20 = np.atleast_1d(np.asarray(beta20, dtype=float))
    if beta20.shape != (spec.p - spec.q,):
        raise ContractError(f"beta20 must have length p - q = {spec.p - spec.q}, got {beta20.size}")
    if beta0 is not None:
        beta0 = np.asarray(beta0, dtype=float).copy()
        beta0[spec.q :] = beta20
        starts = [beta0]
    else:
        starts = start_candidates(family, link, spec, y, beta20)
    if spec.q == 0:
        beta = beta20.copy()
        kernel, _, _ = _kernel(family, link, spec, y, beta)
        if not np.isfinite(kernel):
            raise DomainError("beta20 puts theta outside its domain")
        bt = BetaTrace(beta, 0, True, kernel)
    else:
        bt = _run(family, link, spec, y, starts, spec.q)
    return _finish(family, link, spec, y, bt, (spec.q, tuple(beta20)))
