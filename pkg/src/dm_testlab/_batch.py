"""Vectorized reweighted least squares over many responses sharing one linear design.

Used by the simulation harness: every replication is a row of ``Y``.  Rows
that fail here are refitted one at a time by :mod:`dm_testlab.fit`, which
tries further starting values, so a batch fit never disagrees with the
single-fit path on a row it reports as converged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PhiEquationError
from .fit import (
    BETA_TOL,
    MAX_HALVINGS,
    MAX_ITER,
    NEWTON_AFTER,
    PHI_BOUNDS,
    SCORE_TOL,
    _clamped_pseudo_theta,
    fit_phi,
    solve_a2_prime,
)


@dataclass
class BatchFit:
    beta: np.ndarray  # (R, p)
    phi: np.ndarray  # (R,)
    eta: np.ndarray  # (R, n)
    theta: np.ndarray
    w: np.ndarray
    dtheta: np.ndarray
    tdot: np.ndarray
    loglik: np.ndarray
    iterations: np.ndarray
    ok: np.ndarray  # converged rows
    reasons: list  # failure reason per row or None


def _kernel_rows(family, link, Y, eta):
    theta = link.theta_of_eta(eta)
    with np.errstate(all="ignore"):
        inside = np.all(family.theta_in_domain(theta), axis=1)
        kern = np.sum(family.t(Y, theta), axis=1)
    kern = np.where(inside & np.isfinite(kern), kern, -np.inf)
    return kern, theta


def _phi_work_rows(family, Y, theta, previous):
    if not family.d2_depends_on_phi or family.pdm_a2 is None:
        return previous
    rhs = -np.mean(family.t(Y, theta), axis=1)
    out = previous.copy()
    a2 = family.pdm_a2
    with np.errstate(all="ignore"):
        ok = (a2.d1(PHI_BOUNDS[0]) > rhs) & (a2.d1(PHI_BOUNDS[1]) < rhs) & np.isfinite(rhs)
    if ok.any():
        out[ok] = solve_a2_prime(a2, rhs[ok], previous[ok])
    return out


def start_rows(family, link, Xf, Y, offset):
    """Least-squares fit of the link-transformed, domain-clamped responses."""
    with np.errstate(all="ignore"):
        eta0 = link.eta_of_theta(_clamped_pseudo_theta(family, Y))
    if Xf.shape[1] == 0:
        return np.zeros((Y.shape[0], 0)), np.all(np.isfinite(eta0), axis=1)
    good = np.all(np.isfinite(eta0), axis=1)
    target = np.where(good[:, None], eta0 - offset, 0.0)
    coef = np.linalg.lstsq(Xf, target.T, rcond=None)[0].T
    return coef, good


def centre_rows(family, link, Xf, Y, offset):
    """Constant predictor at the link image of a central θ."""
    if family.circular:
        centre = np.arctan2(np.mean(np.sin(Y), axis=1), np.mean(np.cos(Y), axis=1))
    else:
        centre = _clamped_pseudo_theta(family, np.mean(Y, axis=1))
    with np.errstate(all="ignore"):
        eta_c = link.eta_of_theta(centre)
    usable = np.isfinite(eta_c)
    target = np.where(usable, eta_c, 0.0)[:, None] - offset
    return np.linalg.lstsq(Xf, target.T, rcond=None)[0].T, usable


def irls_rows(family, link, Xf, Y, offset, beta0, max_iter=MAX_ITER, tol=BETA_TOL):
    """Row-wise IRLS mirroring :func:`dm_testlab.fit.fit_beta`.

    Returns ``(beta, iterations, converged)``; ``offset`` is the fixed part
    of the predictor (``X2 β20`` for restricted fits).
    """
    R = Y.shape[0]
    beta = beta0.copy()
    kernel, theta = _kernel_rows(family, link, Y, offset + beta @ Xf.T)
    alive = np.isfinite(kernel)
    converged = np.zeros(R, dtype=bool)
    iterations = np.zeros(R, dtype=int)
    change = np.full(R, np.inf)
    phi_work = _phi_work_rows(family, Y, theta, np.ones(R))
    for it in range(1, max_iter + 1):
        act = np.flatnonzero(alive & ~converged)
        if act.size == 0:
            break
        Ya, th = Y[act], theta[act]
        eta = offset + beta[act] @ Xf.T
        d1 = link.dtheta_deta(eta)
        tdot = family.dt_dtheta(Ya, th)
        phi_work[act] = _phi_work_rows(family, Ya, th, phi_work[act])
        w = -family.d2(th, phi_work[act][:, None]) * d1**2
        score = (d1 * tdot) @ Xf
        done = (change[act] <= tol) & (np.max(np.abs(score), axis=1) <= SCORE_TOL * (1.0 + np.abs(kernel[act])))
        converged[act[done]] = True
        iterations[act[done]] = it - 1
        keep = ~done
        act, score, w = act[keep], score[keep], w[keep]
        if act.size == 0:
            break
        info = np.einsum("rl,li,lj->rij", w, Xf, Xf)
        if it > NEWTON_AFTER:
            info = _observed_rows(family, link, Ya[keep], th[keep], eta[keep], d1[keep], tdot[keep], Xf, info)
        try:
            step = np.linalg.solve(info, score[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.full_like(score, np.nan)
            for k in range(act.size):
                try:
                    step[k] = np.linalg.solve(info[k], score[k])
                except np.linalg.LinAlgError:
                    pass
        bad = ~np.all(np.isfinite(step), axis=1)
        alive[act[bad]] = False
        act, step = act[~bad], step[~bad]
        frac = np.ones(act.size)
        pending = np.ones(act.size, dtype=bool)
        any_finite = np.zeros(act.size, dtype=bool)
        for _ in range(MAX_HALVINGS + 1):
            idx = np.flatnonzero(pending)
            if idx.size == 0:
                break
            rows = act[idx]
            cand = beta[rows] + frac[idx, None] * step[idx]
            k_new, th_new = _kernel_rows(family, link, Y[rows], offset + cand @ Xf.T)
            finite = np.isfinite(k_new)
            any_finite[idx] |= finite
            accept = finite & (k_new >= kernel[rows])
            acc_rows = rows[accept]
            beta[acc_rows] = cand[accept]
            kernel[acc_rows] = k_new[accept]
            theta[acc_rows] = th_new[accept]
            change[acc_rows] = np.max(np.abs(frac[idx[accept], None] * step[idx[accept]]), axis=1, initial=0.0)
            pending[idx[accept]] = False
            frac[idx[~accept]] *= 0.5
        stalled = pending & any_finite
        change[act[stalled]] = 0.0
        alive[act[pending & ~any_finite]] = False
    return beta, iterations, converged & alive


def _observed_rows(family, link, Y, theta, eta, d1, tdot, Xf, fallback):
    """Observed information per row where positive definite, else the expected one."""
    curv = d1**2 * family.d2t_dtheta2(Y, theta) + link.d2theta_deta2(eta) * tdot
    obs = -np.einsum("rl,li,lj->rij", curv, Xf, Xf)
    pd = np.linalg.eigvalsh(obs)[:, 0] > 0
    return np.where(pd[:, None, None], obs, fallback)


def finish_rows(family, link, X, Y, beta_full):
    """φ̂, log-likelihood and weights for rows with converged β."""
    eta = beta_full @ X.T
    theta = link.theta_of_eta(eta)
    tsum = np.sum(family.t(Y, theta), axis=1)
    n = Y.shape[1]
    phi = np.full(Y.shape[0], np.nan)
    if family.pdm_a2 is not None:
        rhs = -tsum / n
        a2 = family.pdm_a2
        with np.errstate(all="ignore"):
            solvable = (a2.d1(PHI_BOUNDS[0]) > rhs) & (a2.d1(PHI_BOUNDS[1]) < rhs) & np.isfinite(rhs)
        if solvable.any():
            phi[solvable] = solve_a2_prime(a2, rhs[solvable])
    else:
        for r, (y, th) in enumerate(zip(Y, theta)):
            try:
                phi[r] = fit_phi(family, y, th)
            except PhiEquationError:
                pass
    d1 = link.dtheta_deta(eta)
    safe = np.where(np.isfinite(phi), phi, 1.0)[:, None]
    w = -family.d2(theta, safe) * d1**2
    loglik = np.where(np.isfinite(phi), phi * tsum + np.sum(family.c(Y, safe), axis=1), np.nan)
    return phi, eta, theta, w, d1, family.dt_dtheta(Y, theta), loglik


def fit_rows(family, link, X, Y, n_free, fixed=None):
    """Batch fit with the first ``n_free`` coefficients free and the rest at ``fixed``."""
    R, n = Y.shape
    p = X.shape[1]
    fixed = np.zeros(p - n_free) if fixed is None else np.asarray(fixed, dtype=float)
    Xf = X[:, :n_free]
    offset = X[:, n_free:] @ fixed
    if n_free:
        # same start order as dm_testlab.fit.start_candidates
        builders = (centre_rows, start_rows) if family.circular else (start_rows, centre_rows)
        beta0, start_ok = builders[0](family, link, Xf, Y, offset)
        beta_free, iters, ok = irls_rows(family, link, Xf, Y, offset, beta0)
        ok &= start_ok
        retry = np.flatnonzero(~ok)
        if retry.size:
            b_retry, retry_ok = builders[1](family, link, Xf, Y[retry], offset)
            b2, it2, ok2 = irls_rows(family, link, Xf, Y[retry], offset, b_retry)
            ok2 &= retry_ok
            beta_free[retry[ok2]], iters[retry[ok2]] = b2[ok2], it2[ok2]
            ok[retry[ok2]] = True
    else:
        beta_free, iters = np.zeros((R, 0)), np.zeros(R, dtype=int)
        kern, _ = _kernel_rows(family, link, Y, np.broadcast_to(offset, Y.shape))
        ok = np.isfinite(kern)
    beta = np.column_stack([beta_free, np.broadcast_to(fixed, (R, p - n_free))])
    reasons = [None] * R
    phi = np.full(R, np.nan)
    loglik = np.full(R, np.nan)
    eta = np.full((R, n), np.nan)
    theta, w, d1, tdot = eta.copy(), eta.copy(), eta.copy(), eta.copy()
    for r in np.flatnonzero(~ok):
        reasons[r] = "reweighted least squares did not converge"
    if ok.any():
        phi[ok], eta[ok], theta[ok], w[ok], d1[ok], tdot[ok], loglik[ok] = finish_rows(
            family, link, X, Y[ok], beta[ok]
        )
        no_root = ok & ~np.isfinite(phi)
        for r in np.flatnonzero(no_root):
            reasons[r] = "phi equation has no root"
        ok &= ~no_root
    return BatchFit(beta, phi, eta, theta, w, d1, tdot, loglik, iters, ok, reasons)
