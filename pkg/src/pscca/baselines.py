"""Classical estimators computed directly on the raw counts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .exceptions import SingularMatrixError
from .model import CountDatasetPair, inv_sqrtm

__all__ = ["BaselineResult", "pearson", "spearman", "sample_cca", "correlation_matrix", "midranks"]

METHODS = ("pearson", "spearman", "sample_cca")


@dataclass(frozen=True)
class BaselineResult:
    method: str
    corr: np.ndarray
    metadata: dict = field(default_factory=dict)


def correlation_matrix(x, y=None):
    """Row-wise Pearson correlations, with 0 wherever a row is constant.

    Returns ``(corr, constant_x, constant_y)``; with ``y`` omitted the
    correlations of ``x`` with itself are returned and the diagonal is 1.
    """
    x = np.asarray(x, dtype=float)
    same = y is None
    y = x if same else np.asarray(y, dtype=float)
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean(axis=1, keepdims=True)
    nx = np.sqrt(np.einsum("ij,ij->i", xc, xc))
    ny = np.sqrt(np.einsum("ij,ij->i", yc, yc))
    const_x = nx == 0
    const_y = ny == 0
    nx[const_x] = 1.0
    ny[const_y] = 1.0
    corr = (xc / nx[:, None]) @ (yc / ny[:, None]).T
    corr[const_x, :] = 0.0
    corr[:, const_y] = 0.0
    if same:
        np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0), const_x, const_y


def _need_three(data):
    if data.dims[2] < 3:
        raise ValueError("correlation baselines need at least three samples")


def pearson(data: CountDatasetPair) -> BaselineResult:
    """Sample Pearson correlation of every (view-1, view-2) feature pair."""
    _need_three(data)
    corr, cx, cy = correlation_matrix(data.y1, data.y2)
    return BaselineResult("pearson", corr, {"constant_1": np.flatnonzero(cx),
                                            "constant_2": np.flatnonzero(cy)})


def midranks(y):
    """Row-wise ranks with ties replaced by their average rank."""
    return np.apply_along_axis(rankdata, 1, np.asarray(y, dtype=float))


def spearman(data: CountDatasetPair) -> BaselineResult:
    """Pearson correlation of mid-ranks (ties share their average rank)."""
    _need_three(data)
    corr, cx, cy = correlation_matrix(midranks(data.y1), midranks(data.y2))
    return BaselineResult("spearman", corr, {"constant_1": np.flatnonzero(cx),
                                             "constant_2": np.flatnonzero(cy)})


def _cca_blocks(y1, y2):
    x = np.vstack([np.asarray(y1, float), np.asarray(y2, float)])
    x = x - x.mean(axis=1, keepdims=True)
    cov = x @ x.T / (x.shape[1] - 1)
    sd = np.sqrt(np.diag(cov))
    sd[sd == 0] = 1.0
    cov = cov / np.outer(sd, sd)
    d1 = np.shape(y1)[0]
    return cov[:d1, :d1], cov[:d1, d1:], cov[d1:, d1:]


def sample_cca(data: CountDatasetPair, ridge: float, k: int) -> BaselineResult:
    """Ridge-regularised sample canonical correlations of the raw counts.

    Features are centred and scaled to unit variance, ``ridge`` is added to
    the diagonal of each within-view block and the canonical correlations
    are the singular values of the whitened cross-covariance.
    """
    d1, d2, n = data.dims
    if int(k) != k or not 1 <= k <= min(d1, d2):
        raise ValueError(f"k must be an integer in [1, {min(d1, d2)}], got {k}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    s11, s12, s22 = _cca_blocks(data.y1, data.y2)
    blocks = []
    for name, s in (("view 1", s11), ("view 2", s22)):
        s = s + ridge * np.eye(s.shape[0])
        if ridge == 0:
            ev = np.linalg.eigvalsh(s)
            if ev[0] <= 1e-10 * max(ev[-1], 1e-300):
                raise SingularMatrixError(
                    f"{name} sample covariance is singular; use ridge > 0")
        blocks.append(inv_sqrtm(s))
    whitened = blocks[0] @ s12 @ blocks[1]
    sv = np.linalg.svd(whitened, compute_uv=False)
    return BaselineResult("sample_cca", np.clip(sv[:int(k)], 0.0, 1.0),
                          {"ridge": float(ridge), "whitened": whitened})
