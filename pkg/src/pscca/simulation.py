"""Synthetic scenarios, loss functions and method comparisons."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .baselines import correlation_matrix, midranks, pearson, sample_cca, spearman
from .exceptions import DimensionError, DomainError
from .model import (
    CountDatasetPair,
    Hyperparams,
    ModelState,
    canonical_correlations,
    cross_correlation,
    free_mask,
    joint_correlation,
)
from .sampler import ChainConfig, run_chain
from .summaries import summarize_cca, summarize_correlations

__all__ = [
    "ScenarioSpec",
    "SimulatedDataset",
    "generate",
    "simulate_counts",
    "frobenius_loss",
    "stein_loss",
    "ShrinkageReport",
    "verify_shrinkage",
    "LossTable",
    "run_comparison",
]

SCENARIOS = ("I", "II")
COV_MODELS = ("independent", "identity", "moderate")
COMPARISON_METHODS = ("pscca", "pearson", "spearman", "sample_cca")
# moderate model: common within-view correlation carried by the first factor
MODERATE_CORRELATION = 0.5
# numpy's Poisson sampler rejects rates near the int64 limit
MAX_THETA = 42.0


@dataclass(frozen=True)
class ScenarioSpec:
    """Design of one synthetic data set.

    ``sigma2`` is the natural-parameter error variance (defaults: 1.0 for
    scenario I, 0.25 for scenario II), ``loading_scale`` multiplies the
    scenario I loadings and ``mu_mean`` shifts the feature means (both
    control how informative the counts are).
    """

    scenario: str = "I"
    d_true: Optional[int] = None
    D1: Optional[int] = None
    D2: Optional[int] = None
    N: Optional[int] = None
    cov_model: Optional[str] = None
    seed: int = 0
    sigma2: Optional[float] = None
    loading_scale: float = 1.0
    mu_mean: float = 0.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        first = self.scenario == "I"
        defaults = dict(d_true=5 if first else 10, D1=10 if first else 60,
                        D2=30 if first else 60, N=50 if first else 100,
                        sigma2=1.0 if first else 0.25)
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        if first and self.cov_model is not None:
            raise ValueError("cov_model only applies to scenario II")
        if not first:
            if self.cov_model is None:
                object.__setattr__(self, "cov_model", "identity")
            if self.cov_model not in COV_MODELS:
                raise ValueError(f"cov_model must be one of {COV_MODELS}, got {self.cov_model!r}")
        for name in ("D1", "D2", "N"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.d_true < 0 or self.d_true > min(self.D1, self.D2):
            raise ValueError(f"d_true must lie in [0, min(D1, D2)], got {self.d_true}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not first:
            if self.d_true < 1:
                raise ValueError("scenario II needs d_true >= 1")
            budget = 1.0 - self.sigma2 - (MODERATE_CORRELATION if self.cov_model == "moderate" else 0.0)
            if self.cov_model != "independent" and budget < 0:
                raise ValueError(f"sigma2={self.sigma2} leaves no room for unit marginal variance "
                                 f"under the {self.cov_model} model")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def label(self) -> str:
        return self.cov_model if self.scenario == "II" else f"d{self.d_true}"


@dataclass(frozen=True)
class SimulatedDataset:
    data: CountDatasetPair
    true_state: ModelState
    true_cross_corr: np.ndarray
    true_cca: np.ndarray
    spec: Optional[ScenarioSpec] = None


def _lower_triangular_form(w):
    """Rotate ``w`` to lower-triangular form with a positive diagonal (``W W'`` unchanged)."""
    d = w.shape[1]
    if d == 0:
        return w.copy()
    q, r = np.linalg.qr(w.T)
    lt = r.T
    signs = np.sign(np.diag(lt)).copy()
    signs[signs == 0] = 1.0
    lt = lt * signs
    lt[~free_mask(*lt.shape)] = 0.0
    return lt


def _scenario_one_loadings(rows, d, scale, rng):
    w = np.where(free_mask(rows, d), scale * rng.standard_normal((rows, d)), 0.0)
    idx = np.arange(min(rows, d))
    w[idx, idx] = np.abs(w[idx, idx])
    return w


def _unit_rows(rows, cols, norm2, rng):
    g = rng.standard_normal((rows, cols))
    return g * np.sqrt(norm2) / np.linalg.norm(g, axis=1, keepdims=True)


def _scenario_two_loadings(rows, d, spec, rng):
    if spec.cov_model == "independent":
        # one feature per factor: within-view covariance stays diagonal
        w = np.zeros((rows, d))
        w[np.arange(d), np.arange(d)] = math.sqrt(1.0 - min(spec.sigma2, 0.5))
        return w
    if spec.cov_model == "identity":
        w = _unit_rows(rows, d, 1.0 - spec.sigma2, rng)
    else:
        rest = 1.0 - spec.sigma2 - MODERATE_CORRELATION
        w = np.hstack([np.full((rows, 1), math.sqrt(MODERATE_CORRELATION)),
                       _unit_rows(rows, d - 1, rest, rng) if d > 1 else np.zeros((rows, 0))])
    return _lower_triangular_form(w)


def simulate_counts(state: ModelState, rng) -> CountDatasetPair:
    """Draw counts given the natural parameters of ``state``.

    Raises
    ------
    DomainError
        If a natural parameter exceeds ``MAX_THETA`` (the Poisson rate would
        overflow 64-bit counts).
    """
    for name, theta in (("theta1", state.theta1), ("theta2", state.theta2)):
        if np.max(theta) > MAX_THETA:
            raise DomainError(f"{name} reaches {np.max(theta):.1f}; Poisson rates above "
                              f"exp({MAX_THETA}) overflow 64-bit counts")
    return CountDatasetPair(rng.poisson(np.exp(state.theta1)), rng.poisson(np.exp(state.theta2)))


def generate(spec: ScenarioSpec) -> SimulatedDataset:
    """Simulate one data set and its ground-truth correlation targets."""
    rng = np.random.default_rng(spec.seed)
    d, n = spec.d_true, spec.N
    if spec.scenario == "I":
        w1 = _scenario_one_loadings(spec.D1, d, spec.loading_scale, rng)
        w2 = _scenario_one_loadings(spec.D2, d, spec.loading_scale, rng)
    else:
        w1 = _scenario_two_loadings(spec.D1, d, spec, rng)
        w2 = _scenario_two_loadings(spec.D2, d, spec, rng)
    mu1 = spec.mu_mean + rng.standard_normal(spec.D1)
    mu2 = spec.mu_mean + rng.standard_normal(spec.D2)
    z = rng.standard_normal((d, n))
    sd = math.sqrt(spec.sigma2)
    theta1 = mu1[:, None] + w1 @ z + sd * rng.standard_normal((spec.D1, n))
    theta2 = mu2[:, None] + w2 @ z + sd * rng.standard_normal((spec.D2, n))
    state = ModelState(theta1=theta1, theta2=theta2, w1=w1, w2=w2, z=z, mu1=mu1, mu2=mu2,
                       sigma2_1=spec.sigma2, sigma2_2=spec.sigma2,
                       lambda1=np.ones(spec.D1), lambda2=np.ones(spec.D2), tau1=1.0, tau2=1.0)
    data = simulate_counts(state, rng)
    return SimulatedDataset(data=data, true_state=state,
                            true_cross_corr=cross_correlation(state),
                            true_cca=canonical_correlations(state, min(spec.D1, spec.D2)),
                            spec=spec)


def frobenius_loss(u, v) -> float:
    """Sum of squared elementwise differences."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionError(f"shape mismatch: {u.shape} vs {v.shape}")
    diff = u - v
    return float(np.sum(diff * diff))


def stein_loss(u, v) -> float:
    """``tr(V^{-1} U) - log det(V^{-1} U) - p`` for symmetric positive-definite U, V."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.ndim != 2 or u.shape != v.shape or u.shape[0] != u.shape[1]:
        raise DimensionError(f"need two square matrices of equal size, got {u.shape} and {v.shape}")
    chols = []
    for name, m in (("U", u), ("V", v)):
        if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12):
            raise DomainError(f"{name} is not symmetric")
        try:
            chols.append(np.linalg.cholesky(m))
        except np.linalg.LinAlgError as exc:
            raise DomainError(f"{name} is not positive definite") from exc
    lu, lv = chols
    # V^{-1}U is similar to (Lv^{-1} Lu)(Lv^{-1} Lu)'
    a = np.linalg.solve(lv, lu)
    trace = float(np.sum(a * a))
    logdet = 2.0 * float(np.sum(np.log(np.diag(lu))) - np.sum(np.log(np.diag(lv))))
    return trace - logdet - u.shape[0]


@dataclass(frozen=True)
class ShrinkageReport:
    mean_abs_raw: float
    mean_abs_natural: float
    dominance_fraction: float
    n_pairs: int


def verify_shrinkage(spec: ScenarioSpec, n_rep: int) -> ShrinkageReport:
    """Compare raw-count Pearson correlations with the natural-parameter truth.

    Over ``n_rep`` replicates (seeds ``spec.seed + r``) and every feature
    pair with non-zero true correlation, report the mean absolute raw and
    true correlations and the fraction of pairs whose raw magnitude is
    strictly smaller.
    """
    if spec.d_true < 1:
        raise ValueError("verify_shrinkage needs d_true >= 1")
    if n_rep < 1:
        raise ValueError("n_rep must be positive")
    raw_abs, true_abs = [], []
    for r in range(n_rep):
        sim = generate(_with_seed(spec, spec.seed + r))
        truth = sim.true_cross_corr
        mask = np.abs(truth) > 1e-12
        raw_abs.append(np.abs(pearson(sim.data).corr[mask]))
        true_abs.append(np.abs(truth[mask]))
    raw_abs = np.concatenate(raw_abs)
    true_abs = np.concatenate(true_abs)
    return ShrinkageReport(mean_abs_raw=float(raw_abs.mean()),
                           mean_abs_natural=float(true_abs.mean()),
                           dominance_fraction=float(np.mean(raw_abs < true_abs)),
                           n_pairs=int(raw_abs.size))


def _with_seed(spec: ScenarioSpec, seed: int) -> ScenarioSpec:
    return replace(spec, seed=int(seed) % 2**64)


@dataclass
class LossTable:
    """Per-replicate losses in long format."""

    rows: list = field(default_factory=list)
    COLUMNS = ("scenario", "model", "method", "replicate", "metric", "value")

    def add(self, spec, method, replicate, metric, value):
        self.rows.append((spec.scenario, spec.label, method, replicate, metric, float(value)))

    def values(self, method, metric) -> np.ndarray:
        return np.array([r[5] for r in self.rows if r[2] == method and r[4] == metric])

    def aggregate(self):
        """Mean, median, standard error and 2.5%/97.5% quantiles per (method, metric)."""
        keys = list(dict.fromkeys((r[0], r[1], r[2], r[4]) for r in self.rows))
        out = []
        for scen, model, method, metric in keys:
            v = self.values(method, metric)
            v = v[np.isfinite(v)]
            if v.size == 0:
                continue
            se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
            lo, hi = np.quantile(v, [0.025, 0.975])
            out.append({"scenario": scen, "model": model, "method": method, "metric": metric,
                        "n": int(v.size), "mean": float(v.mean()), "median": float(np.median(v)),
                        "se": se, "lower": float(lo), "upper": float(hi)})
        return out


def _pscca_losses(sim, fit_d, cfg, hp_kwargs, n_jobs):
    d1, d2 = sim.data.dims[0], sim.data.dims[1]
    hp = Hyperparams(d=fit_d, **hp_kwargs)
    draws = run_chain(sim.data, hp, cfg, n_jobs=n_jobs)
    corr = summarize_correlations(draws).mean
    cca = summarize_cca(draws, min(d1, d2)).means
    w1, w2, s1, s2 = draws.loading_draws()
    joint = np.mean([_joint_corr(a, b, x, y) for a, b, x, y in zip(w1, w2, s1, s2)], axis=0)
    return {"corr_frobenius": frobenius_loss(sim.true_cross_corr, corr),
            "cca_frobenius": frobenius_loss(sim.true_cca, cca),
            "joint_stein": stein_loss(joint_correlation(sim.true_state), joint)}


def _joint_corr(w1, w2, s1, s2):
    w = np.vstack([w1, w2])
    cov = w @ w.T
    cov[np.diag_indices(w1.shape[0])] += s1
    idx = np.arange(w1.shape[0], w.shape[0])
    cov[idx, idx] += s2
    sd = np.sqrt(np.diag(cov))
    return cov / np.outer(sd, sd)


def _raw_joint_stein(truth, rows):
    est, _, _ = correlation_matrix(rows)
    try:
        return stein_loss(truth, est)
    except DomainError:
        return math.nan


def run_comparison(spec: ScenarioSpec, methods: Sequence[str], cfg: ChainConfig,
                   n_rep: int = 20, fit_d: Optional[int] = None, ridge: float = 0.1,
                   hp_kwargs: Optional[dict] = None, n_jobs: int = 1,
                   stein: bool = False) -> LossTable:
    """Fit every method to ``n_rep`` simulated replicates and record losses.

    Replicate ``r`` uses data seed ``spec.seed + r`` and chain seed
    ``cfg.seed + r``.  Metrics: ``corr_frobenius`` (cross-correlation
    matrix), ``cca_frobenius`` (full vector of min(D1, D2) canonical
    correlations) and, when ``stein`` is set, ``joint_stein`` (Stein loss
    of the joint correlation matrix of both views, NaN when the estimate is
    singular).
    """
    unknown = [m for m in methods if m not in COMPARISON_METHODS]
    if unknown:
        raise ValueError(f"unknown method(s) {unknown}; choose from {COMPARISON_METHODS}")
    if n_rep < 1:
        raise ValueError("n_rep must be positive")
    fit_d = spec.d_true if fit_d is None else fit_d
    hp_kwargs = hp_kwargs or {}
    table = LossTable()
    for r in range(n_rep):
        sim = generate(_with_seed(spec, spec.seed + r))
        d1, d2, _ = sim.data.dims
        truth_joint = joint_correlation(sim.true_state)
        for method in methods:
            if method == "pscca":
                rcfg = replace(cfg, seed=(cfg.seed + r) % 2**64)
                for metric, value in _pscca_losses(sim, fit_d, rcfg, hp_kwargs, n_jobs).items():
                    if stein or metric != "joint_stein":
                        table.add(spec, method, r, metric, value)
            elif method in ("pearson", "spearman"):
                res = pearson(sim.data) if method == "pearson" else spearman(sim.data)
                table.add(spec, method, r, "corr_frobenius",
                          frobenius_loss(sim.true_cross_corr, res.corr))
                if stein:
                    rows = np.vstack([sim.data.y1, sim.data.y2]).astype(float)
                    if method == "spearman":
                        rows = midranks(rows)
                    table.add(spec, method, r, "joint_stein", _raw_joint_stein(truth_joint, rows))
            else:
                res = sample_cca(sim.data, ridge, min(d1, d2))
                table.add(spec, method, r, "cca_frobenius", frobenius_loss(sim.true_cca, res.corr))
    return table
