"""Full-conditional update kernels of the Metropolis-within-Gibbs sampler.

Every public ``update_*`` function takes a :class:`~pscca.model.ModelState`
and a :class:`numpy.random.Generator` and returns a new state in which only
the targeted block has been redrawn.  The numba cores draw from the same
generator object, so a chain is reproducible from its seed alone.
"""
from __future__ import annotations

import math
from dataclasses import replace

import numba
import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import log_ndtr, ndtri

from .exceptions import SingularMatrixError, SliceSamplingError, TruncatedNormalError
from .model import CountDatasetPair, Hyperparams, ModelState

__all__ = [
    "slice_sample_theta",
    "sample_positive_normal",
    "update_theta",
    "update_z",
    "update_w",
    "update_mu",
    "update_sigma2",
    "update_horseshoe",
    "sweep",
]

TRUNCNORM_MAX_TRIES = 100


# --------------------------------------------------------------------------
# slice sampling of the natural parameters
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def _theta_logdens(x, x0, ex0, y, m, half_prec):
    # log density relative to its value at x0; for large counts both terms of
    # y*x - exp(x) exceed 1e15 and the absolute form loses the slice level
    dx = x - x0
    if ex0 > 1.0:
        rate_diff = ex0 * math.expm1(dx)
    else:
        rate_diff = math.exp(x) - ex0
    return y * dx - rate_diff - half_prec * dx * (x + x0 - 2.0 * m)


@numba.njit(cache=True)
def _slice_theta_core(theta, y, mean, sigma2, width, max_doublings, rng, out):
    half_prec = 0.5 / sigma2
    n = theta.size
    for idx in range(n):
        x0 = theta[idx]
        yy = y[idx]
        m = mean[idx]
        ex0 = math.exp(x0)
        logu = -rng.exponential()

        # doubling
        left = x0 - width * rng.random()
        right = left + width
        f_left = _theta_logdens(left, x0, ex0, yy, m, half_prec)
        f_right = _theta_logdens(right, x0, ex0, yy, m, half_prec)
        k = max_doublings
        while k > 0 and (logu < f_left or logu < f_right):
            if rng.random() < 0.5:
                left -= right - left
                f_left = _theta_logdens(left, x0, ex0, yy, m, half_prec)
            else:
                right += right - left
                f_right = _theta_logdens(right, x0, ex0, yy, m, half_prec)
            k -= 1
        # running out of doublings with one end inside the slice is part of
        # the procedure; both ends inside means the width is far too small
        if logu < f_left and logu < f_right:
            return idx

        # shrinkage, with the acceptance test for doubled intervals
        lo = left
        hi = right
        while True:
            x1 = lo + rng.random() * (hi - lo)
            if logu < _theta_logdens(x1, x0, ex0, yy, m, half_prec):
                accept = True
                a = left
                b = right
                split = False
                while b - a > 1.1 * width:
                    mid = 0.5 * (a + b)
                    if (x0 < mid) != (x1 < mid):
                        split = True
                    if x1 < mid:
                        b = mid
                    else:
                        a = mid
                    if (split and logu >= _theta_logdens(a, x0, ex0, yy, m, half_prec)
                            and logu >= _theta_logdens(b, x0, ex0, yy, m, half_prec)):
                        accept = False
                        break
                if accept:
                    out[idx] = x1
                    break
            if x1 < x0:
                lo = x1
            else:
                hi = x1
    return -1


def slice_sample_theta(theta, y, mean, sigma2, rng, width=1.0, max_doublings=10):
    """One slice-sampling update of every entry of ``theta``.

    Each entry targets ``exp(y*t - e^t) * N(t | mean, sigma2)``
    independently, using the doubling procedure and shrinkage.  ``width``
    is the initial bracket in units of the prior standard deviation,
    floored at one, since the conditional is never wider than its prior.
    """
    theta = np.ascontiguousarray(theta, dtype=float)
    y = np.ascontiguousarray(np.broadcast_to(y, theta.shape), dtype=float)
    mean = np.ascontiguousarray(np.broadcast_to(mean, theta.shape), dtype=float)
    out = np.empty_like(theta)
    bracket = float(width) * max(1.0, math.sqrt(sigma2))
    failed = _slice_theta_core(theta.ravel(), y.ravel(), mean.ravel(), float(sigma2),
                               bracket, int(max_doublings), rng, out.reshape(-1))
    if failed >= 0:
        i = np.unravel_index(failed, theta.shape)
        raise SliceSamplingError(
            f"slice for entry {tuple(int(v) for v in i)} extends past both ends "
            f"after {max_doublings} doublings of width {bracket:.4g} "
            f"(theta={theta[i]:.4g}, y={y[i]:.4g}, prior mean={mean[i]:.4g}, "
            f"sigma2={sigma2:.4g})")
    return out


def update_theta(state: ModelState, data: CountDatasetPair, rng,
                 width=1.0, max_doublings=10) -> ModelState:
    """Redraw every natural parameter from its Poisson-normal full conditional."""
    mean1 = state.mu1[:, None] + state.w1 @ state.z
    mean2 = state.mu2[:, None] + state.w2 @ state.z
    theta1 = slice_sample_theta(state.theta1, data.y1, mean1, state.sigma2_1, rng,
                                width, max_doublings)
    theta2 = slice_sample_theta(state.theta2, data.y2, mean2, state.sigma2_2, rng,
                                width, max_doublings)
    return replace(state, theta1=theta1, theta2=theta2)


# --------------------------------------------------------------------------
# positive-truncated normal
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def _std_truncnorm_rejection(a, rng, max_tries):
    """Draw from N(0, 1) restricted to (a, inf); NaN after ``max_tries`` rejections."""
    if a <= 0.25:
        for _ in range(max_tries):
            x = rng.standard_normal()
            if x > a:
                return x
    else:
        alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
        for _ in range(max_tries):
            x = a + rng.exponential() / alpha
            if rng.random() <= math.exp(-0.5 * (x - alpha) * (x - alpha)):
                return x
    return np.nan


def _std_truncnorm_inverse_cdf(a, rng):
    # P(X > x) = Phi(-x); sample the upper-tail mass uniformly in log space
    log_tail = log_ndtr(-a)
    log_v = log_tail + np.log(rng.random())
    return -ndtri(np.exp(log_v))


def sample_positive_normal(mean, sd, rng, max_tries=TRUNCNORM_MAX_TRIES) -> float:
    """Draw from ``N(mean, sd^2)`` truncated to the positive half-line.

    Rejection sampling (plain or exponential-proposal, depending on the
    truncation point) is tried first; an inverse-CDF draw takes over when
    it runs out of attempts.
    """
    a = -mean / sd
    x = _std_truncnorm_rejection(a, rng, max_tries)
    if np.isnan(x):
        x = _std_truncnorm_inverse_cdf(a, rng)
    value = mean + sd * x
    if not (np.isfinite(value) and value > 0):
        raise TruncatedNormalError(
            f"could not draw from N({mean:.4g}, {sd:.4g}^2) truncated to (0, inf)")
    return float(value)


# --------------------------------------------------------------------------
# latent scores
# --------------------------------------------------------------------------

def update_z(state: ModelState, rng) -> ModelState:
    """Redraw each score column from its Gaussian full conditional."""
    d = state.z.shape[0]
    n = state.z.shape[1]
    prec = np.eye(d)
    lin = np.zeros((d, n))
    for w, theta, mu, s2 in ((state.w1, state.theta1, state.mu1, state.sigma2_1),
                             (state.w2, state.theta2, state.mu2, state.sigma2_2)):
        prec += (w.T @ w) / s2
        lin += w.T @ (theta - mu[:, None]) / s2
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("score precision is not positive definite") from exc
    mean = cho_solve((chol, True), lin)
    noise = solve_triangular(chol.T, rng.standard_normal((d, n)), lower=False)
    return replace(state, z=mean + noise)


# --------------------------------------------------------------------------
# loadings
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def _chol_solve_draw(prec, lin, eps):
    """Mean ``prec^{-1} lin`` plus ``L^{-T} eps`` where ``prec = L L'``."""
    chol = np.linalg.cholesky(prec)
    n = lin.size
    # forward then back substitution for the mean
    t = np.empty(n)
    for i in range(n):
        s = lin[i]
        for k in range(i):
            s -= chol[i, k] * t[k]
        t[i] = s / chol[i, i]
    out = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = t[i] + eps[i]
        for k in range(i + 1, n):
            s -= chol[k, i] * out[k]
        out[i] = s / chol[i, i]
    return out


@numba.njit(cache=True)
def _update_loadings_core(w, zzt, zr, sigma2, prior_var, start, rng, max_tries):
    """Gibbs update of a lower-triangular loading matrix, row by row.

    ``zzt`` is Z Z', ``zr[i]`` is Z r_i with r_i the residual row i of
    theta - mu.  Rows at or below the latent dimension are drawn jointly;
    for rows i < d the off-diagonal block is drawn given the diagonal, and
    the diagonal then from its positive-truncated conditional.  Returns the
    index of a row whose truncated draw failed, or -1.  Rows before
    ``start`` are left untouched.
    """
    n_rows, d = w.shape
    out = w.copy()
    for i in range(start, n_rows):
        inv_pv = 1.0 / prior_var[i]
        if i >= d:
            prec = zzt / sigma2
            for k in range(d):
                prec[k, k] += inv_pv
            lin = zr[i] / sigma2
            eps = np.empty(d)
            for k in range(d):
                eps[k] = rng.standard_normal()
            out[i, :] = _chol_solve_draw(prec, lin, eps)
            continue
        # free entries are columns 0..i, the diagonal is column i
        diag = out[i, i]
        if i > 0:
            prec = zzt[:i, :i] / sigma2
            for k in range(i):
                prec[k, k] += inv_pv
            lin = (zr[i, :i] - zzt[:i, i] * diag) / sigma2
            eps = np.empty(i)
            for k in range(i):
                eps[k] = rng.standard_normal()
            out[i, :i] = _chol_solve_draw(prec, lin, eps)
        p_dd = zzt[i, i] / sigma2 + inv_pv
        b_d = zr[i, i]
        for k in range(i):
            b_d -= zzt[i, k] * out[i, k]
        mean = b_d / sigma2 / p_dd
        sd = 1.0 / math.sqrt(p_dd)
        x = _std_truncnorm_rejection(-mean / sd, rng, max_tries)
        if np.isnan(x):
            out[i, i] = np.nan
            return out, i
        value = mean + sd * x
        if not value > 0.0:
            out[i, i] = np.nan
            return out, i
        out[i, i] = value
    return out, -1


def _update_view_loadings(w, z, theta, mu, sigma2, prior_var, rng):
    zzt = z @ z.T
    zr = np.ascontiguousarray((theta - mu[:, None]) @ z.T)
    prior_var = np.ascontiguousarray(prior_var, dtype=float)
    w_new = np.ascontiguousarray(w, dtype=float)
    start = 0
    while True:
        w_new, failed = _update_loadings_core(w_new, zzt, zr, float(sigma2), prior_var,
                                              start, rng, TRUNCNORM_MAX_TRIES)
        if failed < 0:
            return w_new
        # rejection ran out of attempts: inverse-CDF draw for this diagonal,
        # then resume the sweep at the next row
        i = failed
        p_dd = zzt[i, i] / sigma2 + 1.0 / prior_var[i]
        mean = (zr[i, i] - zzt[i, :i] @ w_new[i, :i]) / sigma2 / p_dd
        sd = 1.0 / math.sqrt(p_dd)
        w_new[i, i] = mean + sd * _std_truncnorm_inverse_cdf(-mean / sd, rng)
        if not (np.isfinite(w_new[i, i]) and w_new[i, i] > 0):
            raise TruncatedNormalError(
                f"diagonal loading {i}: no positive draw from N({mean:.4g}, {sd:.4g}^2)")
        start = i + 1


def update_w(state: ModelState, rng) -> ModelState:
    """Redraw the free (lower-triangular) loadings of both views."""
    w1 = _update_view_loadings(state.w1, state.z, state.theta1, state.mu1, state.sigma2_1,
                               (state.lambda1 * state.tau1) ** 2, rng)
    w2 = _update_view_loadings(state.w2, state.z, state.theta2, state.mu2, state.sigma2_2,
                               (state.lambda2 * state.tau2) ** 2, rng)
    return replace(state, w1=w1, w2=w2)


# --------------------------------------------------------------------------
# means, error variances, shrinkage scales
# --------------------------------------------------------------------------

def update_mu(state: ModelState, hp: Hyperparams, rng) -> ModelState:
    """Conjugate normal update of the feature means."""
    n = state.z.shape[1]
    mus = []
    for m, (theta, w, s2) in enumerate(((state.theta1, state.w1, state.sigma2_1),
                                        (state.theta2, state.w2, state.sigma2_2))):
        resid_sum = (theta - w @ state.z).sum(axis=1)
        prec = 1.0 / hp.k_mu[m] + n / s2
        mean = resid_sum / s2 / prec
        mus.append(mean + rng.standard_normal(mean.shape) / np.sqrt(prec))
    return replace(state, mu1=mus[0], mu2=mus[1])


def _draw_scaled_inv_chi2(df, scale, rng):
    return df * scale / rng.chisquare(df)


def update_sigma2(state: ModelState, hp: Hyperparams, rng) -> ModelState:
    """Conjugate scaled inverse chi-square update of both error variances."""
    out = []
    for m, (theta, w, mu) in enumerate(((state.theta1, state.w1, state.mu1),
                                        (state.theta2, state.w2, state.mu2))):
        resid = theta - mu[:, None] - w @ state.z
        ssr = float(np.sum(resid * resid))
        nu, s2 = hp.nu_theta[m], hp.s2_theta[m]
        df = nu + resid.size
        out.append(_draw_scaled_inv_chi2(df, (nu * s2 + ssr) / df, rng))
    return replace(state, sigma2_1=out[0], sigma2_2=out[1])


def _horseshoe_view(w, tau, aux_lam, aux_tau, rng):
    d = w.shape[1]
    n_free = np.minimum(np.arange(w.shape[0]) + 1, d)
    row_ss = np.einsum("ik,ik->i", w, w)
    lam2 = (1.0 / aux_lam + row_ss / (2.0 * tau * tau)) / rng.gamma(0.5 * (n_free + 1))
    aux_lam = (1.0 + 1.0 / lam2) / rng.gamma(1.0, size=lam2.shape)
    tau2 = (1.0 / aux_tau + 0.5 * float(np.sum(row_ss / lam2))) / rng.gamma(0.5 * (n_free.sum() + 1))
    aux_tau = (1.0 + 1.0 / tau2) / rng.gamma(1.0)
    return np.sqrt(lam2), math.sqrt(tau2), aux_lam, float(aux_tau)


def update_horseshoe(state: ModelState, rng) -> ModelState:
    """Redraw local/global shrinkage scales and their auxiliary variables.

    Uses the representation ``lambda^2 | a ~ IG(1/2, 1/a)``,
    ``a ~ IG(1/2, 1)`` of the half-Cauchy, which makes every conditional
    inverse-gamma.
    """
    l1, t1, al1, at1 = _horseshoe_view(state.w1, state.tau1,
                                       state.aux_lambda1, state.aux_tau1, rng)
    l2, t2, al2, at2 = _horseshoe_view(state.w2, state.tau2,
                                       state.aux_lambda2, state.aux_tau2, rng)
    return replace(state, lambda1=l1, lambda2=l2, tau1=t1, tau2=t2,
                   aux_lambda1=al1, aux_lambda2=al2, aux_tau1=at1, aux_tau2=at2)


def sweep(state: ModelState, data: CountDatasetPair, hp: Hyperparams, rng,
          width=1.0, max_doublings=10) -> ModelState:
    """One full Gibbs sweep in the fixed order theta, z, W, mu, sigma2, scales."""
    state = update_theta(state, data, rng, width, max_doublings)
    state = update_z(state, rng)
    state = update_w(state, rng)
    state = update_mu(state, hp, rng)
    state = update_sigma2(state, hp, rng)
    return update_horseshoe(state, rng)
