"""Posterior summaries of cross-correlations and canonical correlations."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .sampler import PosteriorDraws

__all__ = [
    "CorrelationSummary",
    "CcaSummary",
    "summarize_correlations",
    "summarize_cca",
    "export_heatmap_grid",
    "read_heatmap_grid",
]

HEATMAP_COLUMNS = ("feature_1", "feature_2", "mean", "lower", "upper")
# bounds the (block, draws, D2) temporaries when summarising large matrices
_BLOCK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class CorrelationSummary:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    feature_names_1: Optional[Sequence[str]] = None
    feature_names_2: Optional[Sequence[str]] = None


@dataclass(frozen=True)
class CcaSummary:
    means: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float

    @property
    def k(self) -> int:
        return len(self.means)


def _check(draws, level):
    if len(draws) == 0:
        raise ValueError("no posterior draws to summarise")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")


def _bounds(values, mean, level, axis=0):
    alpha = 0.5 * (1.0 - level)
    lower, upper = np.quantile(values, [alpha, 1.0 - alpha], axis=axis)
    # a heavily skewed marginal can push the mean outside its central
    # interval; widen rather than report an interval that excludes it
    return np.minimum(lower, mean), np.maximum(upper, mean)


def summarize_correlations(draws: PosteriorDraws, level: float = 0.95,
                           feature_names_1=None, feature_names_2=None) -> CorrelationSummary:
    """Posterior mean and equal-tailed credible bounds of every cross-correlation.

    Quantiles use linear (type 7) interpolation.  In ``"summaries"`` storage
    mode the mean is exact over all draws while the bounds come from the
    stored subsample of loadings.
    """
    _check(draws, level)
    d1, d2 = draws.dims[0], draws.dims[1]
    n_loaded = len(draws.loading_draws()[0])
    block = max(1, _BLOCK_ELEMENTS // max(1, n_loaded * d2))
    mean = np.empty((d1, d2))
    lower = np.empty((d1, d2))
    upper = np.empty((d1, d2))
    for start in range(0, d1, block):
        rows = slice(start, min(d1, start + block))
        corr = draws.cross_correlations(rows)
        mean[rows] = corr.mean(axis=0)
        lower[rows], upper[rows] = _bounds(corr, mean[rows], level)
    if draws.corr_mean is not None:
        mean = draws.corr_mean.copy()
        lower, upper = np.minimum(lower, mean), np.maximum(upper, mean)
    return CorrelationSummary(mean=mean, lower=lower, upper=upper, level=level,
                              feature_names_1=feature_names_1,
                              feature_names_2=feature_names_2)


def summarize_cca(draws: PosteriorDraws, k: int, level: float = 0.95) -> CcaSummary:
    """Rank-wise posterior mean and credible bounds of the leading ``k`` canonical correlations."""
    _check(draws, level)
    cc = draws.canonical(k)
    means = cc.mean(axis=0)
    lower, upper = _bounds(cc, means, level)
    return CcaSummary(means=means, lower=lower, upper=upper, level=level)


def _names(names, n, prefix):
    return list(names) if names is not None else [f"{prefix}{i + 1}" for i in range(n)]


def export_heatmap_grid(summary: CorrelationSummary, path) -> Path:
    """Write a long-format CSV with one row per feature pair, row-major order."""
    path = Path(path)
    d1, d2 = summary.mean.shape
    n1 = _names(summary.feature_names_1, d1, "x")
    n2 = _names(summary.feature_names_2, d2, "y")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(HEATMAP_COLUMNS)
            for i in range(d1):
                for j in range(d2):
                    writer.writerow([n1[i], n2[j], repr(float(summary.mean[i, j])),
                                     repr(float(summary.lower[i, j])),
                                     repr(float(summary.upper[i, j]))])
    except OSError as exc:
        raise OSError(f"cannot write heatmap grid to {path}: {exc}") from exc
    return path


def read_heatmap_grid(path, level: float = 0.95) -> CorrelationSummary:
    """Inverse of :func:`export_heatmap_grid`."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != HEATMAP_COLUMNS:
        raise ValueError(f"{path}: expected header {','.join(HEATMAP_COLUMNS)}")
    body = rows[1:]
    n1 = list(dict.fromkeys(r[0] for r in body))
    n2 = list(dict.fromkeys(r[1] for r in body))
    if len(body) != len(n1) * len(n2):
        raise ValueError(f"{path}: {len(body)} rows do not form a full grid")
    vals = np.array([[float(v) for v in r[2:5]] for r in body]).reshape(len(n1), len(n2), 3)
    return CorrelationSummary(mean=vals[..., 0], lower=vals[..., 1], upper=vals[..., 2],
                              level=level, feature_names_1=n1, feature_names_2=n2)
