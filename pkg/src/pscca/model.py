"""Model types, implied covariance/correlation structure, and log densities.

Two count matrices ``y1`` (D1 x N) and ``y2`` (D2 x N) are modelled through
natural parameters

    theta_m[:, j] = mu_m + W_m @ z[:, j] + eps,   eps ~ N(0, sigma2_m I)
    y_m[i, j] ~ Poisson(exp(theta_m[i, j]))

with shared scores ``z[:, j] ~ N(0, I_d)``, lower-triangular horseshoe
loadings ``W_m`` and conjugate priors on ``mu_m`` and ``sigma2_m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .exceptions import DimensionError, DomainError, SingularMatrixError

EIG_FLOOR = 1e-12
THETA_MAX = 700.0

__all__ = [
    "CountDatasetPair",
    "Hyperparams",
    "ModelState",
    "JointCovariance",
    "free_mask",
    "inv_sqrtm",
    "joint_covariance",
    "joint_correlation",
    "cross_correlation",
    "whitened_cross_covariance",
    "canonical_correlations",
    "canonical_correlations_from_blocks",
    "canonical_correlations_lowrank",
    "poisson_loglik",
    "log_posterior",
]


def _as_names(names, n, what):
    if names is None:
        return None
    names = tuple(str(s) for s in names)
    if len(names) != n:
        raise DimensionError(f"{what} has {len(names)} entries, expected {n}")
    return names


@dataclass(frozen=True)
class CountDatasetPair:
    """Two count matrices sharing the same N samples (columns)."""

    y1: np.ndarray
    y2: np.ndarray
    feature_names_1: Optional[Sequence[str]] = None
    feature_names_2: Optional[Sequence[str]] = None
    sample_ids: Optional[Sequence[str]] = None

    def __post_init__(self):
        y1 = self._check_counts(self.y1, "y1")
        y2 = self._check_counts(self.y2, "y2")
        if y1.shape[1] != y2.shape[1]:
            raise DimensionError(
                f"y1 has {y1.shape[1]} samples but y2 has {y2.shape[1]}")
        if y1.shape[1] < 2:
            raise DimensionError("at least two samples (columns) are required")
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)
        object.__setattr__(self, "feature_names_1",
                           _as_names(self.feature_names_1, y1.shape[0], "feature_names_1"))
        object.__setattr__(self, "feature_names_2",
                           _as_names(self.feature_names_2, y2.shape[0], "feature_names_2"))
        object.__setattr__(self, "sample_ids",
                           _as_names(self.sample_ids, y1.shape[1], "sample_ids"))

    @staticmethod
    def _check_counts(y, what):
        arr = np.asarray(y)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise DimensionError(f"{what} must be a non-empty 2-D matrix, got shape {arr.shape}")
        if arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{what} contains non-finite entries")
            if np.any(arr != np.round(arr)):
                raise DomainError(f"{what} contains non-integer entries")
        elif arr.dtype.kind not in "iub":
            raise DomainError(f"{what} must be numeric, got dtype {arr.dtype}")
        if np.any(arr < 0):
            raise DomainError(f"{what} contains negative counts")
        arr = arr.astype(np.int64)
        arr.setflags(write=False)
        return arr

    @property
    def dims(self):
        """``(D1, D2, N)``."""
        return self.y1.shape[0], self.y2.shape[0], self.y1.shape[1]

    def swapped(self) -> "CountDatasetPair":
        return CountDatasetPair(self.y2, self.y1, self.feature_names_2,
                                self.feature_names_1, self.sample_ids)


def _pair(value, what):
    if np.ndim(value) == 0:
        value = (value, value)
    if len(value) != 2:
        raise ValueError(f"{what} must be a scalar or a pair, got {value!r}")
    out = tuple(float(v) for v in value)
    if not all(v > 0 and math.isfinite(v) for v in out):
        raise DomainError(f"{what} must be strictly positive and finite, got {out}")
    return out


@dataclass(frozen=True)
class Hyperparams:
    """Latent dimension and fixed prior hyperparameters (one value per view).

    ``k_mu`` is the prior variance of every mean entry, ``nu_theta`` and
    ``s2_theta`` the degrees of freedom and scale of the scaled inverse
    chi-square prior on the error variance.
    """

    d: int
    k_mu: tuple = (100.0, 100.0)
    nu_theta: tuple = (2.0, 2.0)
    s2_theta: tuple = (1.0, 1.0)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"latent dimension d must be a positive integer, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "k_mu", _pair(self.k_mu, "k_mu"))
        object.__setattr__(self, "nu_theta", _pair(self.nu_theta, "nu_theta"))
        object.__setattr__(self, "s2_theta", _pair(self.s2_theta, "s2_theta"))

    def check_dims(self, d1, d2):
        if self.d > min(d1, d2):
            raise ValueError(f"d={self.d} exceeds min(D1, D2)={min(d1, d2)}")


def free_mask(n_rows: int, d: int) -> np.ndarray:
    """Boolean mask of the free (lower-triangular, diagonal included) loadings."""
    return np.arange(d)[None, :] <= np.arange(n_rows)[:, None]


@dataclass(frozen=True)
class ModelState:
    """One complete set of latent quantities.

    Arrays are treated as immutable values: samplers return new states
    built with :func:`dataclasses.replace` and never write in place.
    """

    theta1: np.ndarray
    theta2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    z: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    sigma2_1: float
    sigma2_2: float
    lambda1: np.ndarray
    lambda2: np.ndarray
    tau1: float
    tau2: float
    aux_lambda1: np.ndarray = field(default=None)
    aux_lambda2: np.ndarray = field(default=None)
    aux_tau1: float = 1.0
    aux_tau2: float = 1.0

    def __post_init__(self):
        if self.aux_lambda1 is None:
            object.__setattr__(self, "aux_lambda1", np.ones(np.shape(self.lambda1)))
        if self.aux_lambda2 is None:
            object.__setattr__(self, "aux_lambda2", np.ones(np.shape(self.lambda2)))

    @property
    def dims(self):
        """``(D1, D2, N, d)``."""
        return self.w1.shape[0], self.w2.shape[0], self.z.shape[1], self.z.shape[0]

    def check_shapes(self):
        w1, w2, z = np.asarray(self.w1), np.asarray(self.w2), np.asarray(self.z)
        if w1.ndim != 2 or w2.ndim != 2 or z.ndim != 2:
            raise DimensionError("w1, w2 and z must be matrices")
        d1, d = w1.shape
        d2, n = w2.shape[0], z.shape[1]
        expected = {
            "w2": (w2.shape, (d2, d)),
            "z": (z.shape, (d, n)),
            "theta1": (np.shape(self.theta1), (d1, n)),
            "theta2": (np.shape(self.theta2), (d2, n)),
            "mu1": (np.shape(self.mu1), (d1,)),
            "mu2": (np.shape(self.mu2), (d2,)),
            "lambda1": (np.shape(self.lambda1), (d1,)),
            "lambda2": (np.shape(self.lambda2), (d2,)),
            "aux_lambda1": (np.shape(self.aux_lambda1), (d1,)),
            "aux_lambda2": (np.shape(self.aux_lambda2), (d2,)),
        }
        for name, (got, want) in expected.items():
            if tuple(got) != want:
                raise DimensionError(f"{name} has shape {tuple(got)}, expected {want}")

    def validate(self):
        """Raise if any ModelState invariant is violated."""
        self.check_shapes()
        for name in ("sigma2_1", "sigma2_2", "tau1", "tau2", "aux_tau1", "aux_tau2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be strictly positive, got {v}")
        for name in ("lambda1", "lambda2", "aux_lambda1", "aux_lambda2"):
            v = np.asarray(getattr(self, name))
            if not np.all(np.isfinite(v) & (v > 0)):
                raise DomainError(f"{name} must be strictly positive")
        for name in ("w1", "w2"):
            w = np.asarray(getattr(self, name))
            if np.any(w[~free_mask(*w.shape)] != 0.0):
                raise DomainError(f"{name} has non-zero entries above the diagonal")
            if np.any(np.diagonal(w) <= 0.0):
                raise DomainError(f"{name} has non-positive diagonal entries")
        return self

    def swapped(self) -> "ModelState":
        """The same state with the roles of the two views exchanged."""
        return replace(
            self, theta1=self.theta2, theta2=self.theta1, w1=self.w2, w2=self.w1,
            mu1=self.mu2, mu2=self.mu1, sigma2_1=self.sigma2_2, sigma2_2=self.sigma2_1,
            lambda1=self.lambda2, lambda2=self.lambda1, tau1=self.tau2, tau2=self.tau1,
            aux_lambda1=self.aux_lambda2, aux_lambda2=self.aux_lambda1,
            aux_tau1=self.aux_tau2, aux_tau2=self.aux_tau1)


@dataclass(frozen=True)
class JointCovariance:
    """Covariance of the stacked natural parameters ``(theta1, theta2)``."""

    sigma: np.ndarray
    d1: int

    @property
    def s11(self):
        return self.sigma[:self.d1, :self.d1]

    @property
    def s12(self):
        return self.sigma[:self.d1, self.d1:]

    @property
    def s21(self):
        return self.sigma[self.d1:, :self.d1]

    @property
    def s22(self):
        return self.sigma[self.d1:, self.d1:]


def inv_sqrtm(m: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Inverse of the symmetric positive-definite square root of ``m``.

    Eigenvalues are floored at ``floor`` times the largest eigenvalue;
    a matrix whose eigenvalues are not all positive raises
    :class:`SingularMatrixError`.
    """
    m = np.asarray(m, dtype=float)
    m = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(m)
    top = vals[-1] if vals.size else 0.0
    if not np.all(np.isfinite(vals)) or top <= 0 or vals[0] <= -floor * top:
        raise SingularMatrixError(
            f"matrix is not positive definite (eigenvalues in [{vals[0]:.3g}, {top:.3g}])")
    vals = np.maximum(vals, floor * top)
    return (vecs / np.sqrt(vals)) @ vecs.T


def _check_positive(*pairs):
    for name, v in pairs:
        if not v > 0:
            raise SingularMatrixError(f"{name} must be positive for a definite covariance, got {v}")


def joint_covariance(state: ModelState) -> JointCovariance:
    """Block covariance ``[[W1 W1' + s1 I, W1 W2'], [W2 W1', W2 W2' + s2 I]]``."""
    state.check_shapes()
    w = np.vstack([state.w1, state.w2])
    sigma = w @ w.T
    d1 = state.w1.shape[0]
    idx = np.arange(sigma.shape[0])
    sigma[idx[:d1], idx[:d1]] += state.sigma2_1
    sigma[idx[d1:], idx[d1:]] += state.sigma2_2
    return JointCovariance(sigma=sigma, d1=d1)


def joint_correlation(state: ModelState) -> np.ndarray:
    """Correlation matrix of the stacked natural parameters."""
    sigma = joint_covariance(state).sigma
    sd = np.sqrt(np.diag(sigma))
    return sigma / np.outer(sd, sd)


def cross_correlation(state: ModelState) -> np.ndarray:
    """D1 x D2 matrix of correlations between ``theta1[i, j]`` and ``theta2[k, j]``."""
    state.check_shapes()
    _check_positive(("sigma2_1", state.sigma2_1), ("sigma2_2", state.sigma2_2))
    sd1 = np.sqrt(np.einsum("ik,ik->i", state.w1, state.w1) + state.sigma2_1)
    sd2 = np.sqrt(np.einsum("ik,ik->i", state.w2, state.w2) + state.sigma2_2)
    corr = (state.w1 @ state.w2.T) / np.outer(sd1, sd2)
    return np.clip(corr, -1.0, 1.0)


def whitened_cross_covariance(state: ModelState) -> np.ndarray:
    """``S11^{-1/2} S12 S22^{-1/2}``; its singular values are the canonical correlations."""
    state.check_shapes()
    _check_positive(("sigma2_1", state.sigma2_1), ("sigma2_2", state.sigma2_2))
    cov = joint_covariance(state)
    return inv_sqrtm(cov.s11) @ cov.s12 @ inv_sqrtm(cov.s22)


def canonical_correlations_from_blocks(s11, s12, s22, k: int) -> np.ndarray:
    """Leading ``k`` canonical correlations of a partitioned covariance, descending.

    Singular values of ``S11^{-1/2} S12 S22^{-1/2}``, i.e. square roots of
    the eigenvalues of ``S11^{-1} S12 S22^{-1} S21``.
    """
    s12 = np.asarray(s12, dtype=float)
    if int(k) != k or not 1 <= k <= min(s12.shape):
        raise ValueError(f"k must be an integer in [1, {min(s12.shape)}], got {k}")
    whitened = inv_sqrtm(s11) @ s12 @ inv_sqrtm(s22)
    sv = np.linalg.svd(whitened, compute_uv=False)
    return np.clip(sv[:int(k)], 0.0, 1.0)


def canonical_correlations(state: ModelState, k: int) -> np.ndarray:
    """The ``k`` largest canonical correlations between the two views, descending."""
    d1, d2 = state.w1.shape[0], state.w2.shape[0]
    if int(k) != k or not 1 <= k <= min(d1, d2):
        raise ValueError(f"k must be an integer in [1, {min(d1, d2)}], got {k}")
    state.check_shapes()
    _check_positive(("sigma2_1", state.sigma2_1), ("sigma2_2", state.sigma2_2))
    cov = joint_covariance(state)
    return canonical_correlations_from_blocks(cov.s11, cov.s12, cov.s22, k)


def _loading_gram(w, sigma2):
    # W' (W W' + s I)^{-1} W = I - s (s I + W'W)^{-1}
    d = w.shape[1]
    return np.eye(d) - sigma2 * np.linalg.inv(sigma2 * np.eye(d) + w.T @ w)


def canonical_correlations_lowrank(w1, w2, sigma2_1, sigma2_2) -> np.ndarray:
    """All ``d`` potentially non-zero canonical correlations via d x d algebra.

    Equivalent to :func:`canonical_correlations` (the remaining ones are
    exactly zero because the cross covariance has rank at most ``d``) but
    costs O(D d^2) instead of O(D^3).
    """
    g1 = _loading_gram(np.asarray(w1, dtype=float), sigma2_1)
    g2 = _loading_gram(np.asarray(w2, dtype=float), sigma2_2)
    # eigenvalues of G1 G2 equal those of the symmetric G2^{1/2} G1 G2^{1/2}
    v2, u2 = np.linalg.eigh(g2)
    r2 = (u2 * np.sqrt(np.clip(v2, 0.0, None))) @ u2.T
    ev = np.linalg.eigvalsh(r2 @ g1 @ r2)[::-1]
    return np.sqrt(np.clip(ev, 0.0, 1.0))


def poisson_loglik(y, theta) -> float:
    """Sum of Poisson log-pmfs ``y*theta - exp(theta) - log(y!)``."""
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if y.shape != theta.shape:
        raise DimensionError(f"y has shape {y.shape} but theta has {theta.shape}")
    if np.any(theta > THETA_MAX):
        raise DomainError(f"natural parameter above {THETA_MAX} would overflow exp()")
    return float(np.sum(y * theta - np.exp(theta) - gammaln(y + 1.0)))


_LOG_2PI = math.log(2.0 * math.pi)


def _normal_logpdf_sum(x, var):
    x = np.asarray(x, dtype=float)
    var = np.broadcast_to(np.asarray(var, dtype=float), x.shape)
    return float(np.sum(-0.5 * (_LOG_2PI + np.log(var) + x * x / var)))


def _half_cauchy_logpdf_sum(x):
    x = np.asarray(x, dtype=float)
    return float(np.sum(math.log(2.0 / math.pi) - np.log1p(x * x)))


def _scaled_inv_chi2_logpdf(x, nu, s2):
    h = 0.5 * nu
    return (h * math.log(h) - math.lgamma(h) + nu / 2 * math.log(s2)
            - (h + 1.0) * math.log(x) - nu * s2 / (2.0 * x))


def _loading_logprior(w, lam, tau):
    mask = free_mask(*w.shape)
    var = np.broadcast_to((lam * tau) ** 2, w.shape[::-1]).T
    n_diag = min(w.shape)
    # positive truncation of the diagonal doubles its density
    return _normal_logpdf_sum(w[mask], var[mask]) + n_diag * math.log(2.0)


def log_posterior(state: ModelState, data: CountDatasetPair, hp: Hyperparams) -> float:
    """Unnormalised log posterior density of ``state`` given the counts.

    Local and global scales enter through their half-Cauchy densities; the
    auxiliary variables used by the sampler are marginalised out and do
    not contribute.
    """
    state.check_shapes()
    if (state.w1.shape[0], state.w2.shape[0], state.z.shape[1]) != data.dims:
        raise DimensionError("state and data dimensions disagree")
    for name in ("sigma2_1", "sigma2_2", "tau1", "tau2"):
        if not getattr(state, name) > 0:
            raise DomainError(f"{name} must be strictly positive")
    if np.any(np.asarray(state.lambda1) <= 0) or np.any(np.asarray(state.lambda2) <= 0):
        raise DomainError("local scales must be strictly positive")

    views = (
        (data.y1, state.theta1, state.w1, state.mu1, state.sigma2_1,
         state.lambda1, state.tau1, 0),
        (data.y2, state.theta2, state.w2, state.mu2, state.sigma2_2,
         state.lambda2, state.tau2, 1),
    )
    total = _normal_logpdf_sum(state.z, 1.0)
    for y, theta, w, mu, s2, lam, tau, m in views:
        resid = theta - mu[:, None] - w @ state.z
        total += poisson_loglik(y, theta)
        total += _normal_logpdf_sum(resid, s2)
        total += _loading_logprior(w, lam, tau)
        total += _half_cauchy_logpdf_sum(lam) + _half_cauchy_logpdf_sum(tau)
        total += _normal_logpdf_sum(mu, hp.k_mu[m])
        total += _scaled_inv_chi2_logpdf(s2, hp.nu_theta[m], hp.s2_theta[m])
    return total
