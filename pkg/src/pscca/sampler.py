"""Chain driver: initialisation, multi-chain runs and retained-draw storage."""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Iterator, Optional

import numpy as np

from .kernels import sweep
from .model import (
    CountDatasetPair,
    Hyperparams,
    ModelState,
    canonical_correlations_lowrank,
    cross_correlation,
    free_mask,
    log_posterior,
)

__all__ = [
    "ChainConfig",
    "PosteriorDraws",
    "initial_state",
    "chain_rng",
    "run_chain",
    "psrf",
]

STORE_MODES = ("auto", "full", "params", "summaries")
# retained natural parameters above this size switch "auto" away from "full"
FULL_STORE_BUDGET_BYTES = 256 * 2**20
SUMMARY_MODE_MIN_FEATURES = 501
SUMMARY_MODE_MAX_LOADING_DRAWS = 250

_PARAM_FIELDS = ("w1", "w2", "mu1", "mu2", "lambda1", "lambda2",
                 "aux_lambda1", "aux_lambda2")
_SCALAR_FIELDS = ("sigma2_1", "sigma2_2", "tau1", "tau2", "aux_tau1", "aux_tau2")


@dataclass(frozen=True)
class ChainConfig:
    """MCMC run settings.

    ``store`` selects what is kept per retained draw: ``"full"`` keeps
    complete states, ``"params"`` drops the natural parameters and scores,
    ``"summaries"`` keeps derived quantities plus a systematic subsample of
    loadings.  ``"auto"`` picks the richest mode that fits in memory.
    """

    n_iter: int = 10000
    burn_in: int = 5000
    n_chains: int = 2
    thin: int = 1
    seed: int = 0
    slice_width: float = 1.0
    slice_max_doublings: int = 10
    store: str = "auto"

    def __post_init__(self):
        if self.n_iter < 1 or self.burn_in < 0 or self.burn_in >= self.n_iter:
            raise ValueError(
                f"need 0 <= burn_in < n_iter, got burn_in={self.burn_in}, n_iter={self.n_iter}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if self.n_chains < 1:
            raise ValueError(f"n_chains must be >= 1, got {self.n_chains}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.slice_width > 0:
            raise ValueError("slice_width must be positive")
        if self.slice_max_doublings < 0:
            raise ValueError("slice_max_doublings must be non-negative")
        if self.store not in STORE_MODES:
            raise ValueError(f"store must be one of {STORE_MODES}, got {self.store!r}")

    @property
    def draws_per_chain(self) -> int:
        return -(-(self.n_iter - self.burn_in) // self.thin)

    def resolve_store(self, d1, d2, n) -> str:
        if self.store != "auto":
            return self.store
        if d1 + d2 >= SUMMARY_MODE_MIN_FEATURES:
            return "summaries"
        theta_bytes = 8 * (d1 + d2) * n * self.draws_per_chain * self.n_chains
        return "full" if theta_bytes <= FULL_STORE_BUDGET_BYTES else "params"


def chain_rng(seed: int, chain_id: int) -> np.random.Generator:
    """Independent generator for one chain, derived from ``(seed, chain_id)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chain_id),)))


def initial_state(data: CountDatasetPair, hp: Hyperparams, rng,
                  jitter: float = 0.5) -> ModelState:
    """Moment-matched starting point with chain-specific jitter on theta."""
    d1, d2, n = data.dims
    hp.check_dims(d1, d2)
    d = hp.d

    def loadings(rows):
        w = np.where(free_mask(rows, d), rng.normal(0.0, 0.1, (rows, d)), 0.0)
        idx = np.arange(d)
        w[idx, idx] = np.abs(w[idx, idx]) + 1e-3
        return w

    theta1 = np.log(data.y1 + 0.5) + jitter * rng.standard_normal((d1, n))
    theta2 = np.log(data.y2 + 0.5) + jitter * rng.standard_normal((d2, n))
    return ModelState(
        theta1=theta1, theta2=theta2,
        w1=loadings(d1), w2=loadings(d2), z=np.zeros((d, n)),
        mu1=np.log(data.y1.mean(axis=1) + 0.5), mu2=np.log(data.y2.mean(axis=1) + 0.5),
        sigma2_1=1.0, sigma2_2=1.0,
        lambda1=np.ones(d1), lambda2=np.ones(d2), tau1=1.0, tau2=1.0,
        aux_lambda1=np.ones(d1), aux_lambda2=np.ones(d2), aux_tau1=1.0, aux_tau2=1.0,
    )


class _Recorder:
    """Preallocated storage for the retained draws of one chain."""

    def __init__(self, mode, n_keep, dims):
        d1, d2, n, d = dims
        self.mode = mode
        self.n_keep = n_keep
        self.i = 0
        shapes = {
            "w1": (d1, d), "w2": (d2, d), "mu1": (d1,), "mu2": (d2,),
            "lambda1": (d1,), "lambda2": (d2,), "aux_lambda1": (d1,), "aux_lambda2": (d2,),
        }
        self.arrays = {name: np.empty(n_keep) for name in _SCALAR_FIELDS}
        self.arrays["log_posterior"] = np.empty(n_keep)
        self.arrays["canonical"] = np.empty((n_keep, d))
        if mode in ("full", "params"):
            for name, shp in shapes.items():
                self.arrays[name] = np.empty((n_keep,) + shp)
        if mode == "full":
            self.arrays["theta1"] = np.empty((n_keep, d1, n))
            self.arrays["theta2"] = np.empty((n_keep, d2, n))
            self.arrays["z"] = np.empty((n_keep, d, n))
        if mode == "summaries":
            self.stride = max(1, math.ceil(n_keep / SUMMARY_MODE_MAX_LOADING_DRAWS))
            n_sub = len(range(0, n_keep, self.stride))
            self.arrays["sub_index"] = np.empty(n_sub, dtype=np.int64)
            self.arrays["sub_w1"] = np.empty((n_sub, d1, d))
            self.arrays["sub_w2"] = np.empty((n_sub, d2, d))
            self.arrays["sub_sigma2_1"] = np.empty(n_sub)
            self.arrays["sub_sigma2_2"] = np.empty(n_sub)
            self.corr_sum = np.zeros((d1, d2))
        self.theta_sum = (np.zeros((d1, n)), np.zeros((d2, n)))

    def add(self, state: ModelState, lp: float):
        i = self.i
        a = self.arrays
        for name in _SCALAR_FIELDS:
            a[name][i] = getattr(state, name)
        a["log_posterior"][i] = lp
        a["canonical"][i] = canonical_correlations_lowrank(
            state.w1, state.w2, state.sigma2_1, state.sigma2_2)
        if self.mode in ("full", "params"):
            for name in _PARAM_FIELDS:
                a[name][i] = getattr(state, name)
        if self.mode == "full":
            a["theta1"][i] = state.theta1
            a["theta2"][i] = state.theta2
            a["z"][i] = state.z
        if self.mode == "summaries":
            self.corr_sum += cross_correlation(state)
            if i % self.stride == 0:
                j = i // self.stride
                a["sub_index"][j] = i
                a["sub_w1"][j] = state.w1
                a["sub_w2"][j] = state.w2
                a["sub_sigma2_1"][j] = state.sigma2_1
                a["sub_sigma2_2"][j] = state.sigma2_2
        self.theta_sum[0][...] += state.theta1
        self.theta_sum[1][...] += state.theta2
        self.i += 1


@dataclass
class PosteriorDraws:
    """Retained post-burn-in draws from one or more chains.

    Draws are stored field-by-field as arrays whose leading axis indexes the
    retained draw (chains concatenated in order); ``chain_ids`` gives the
    chain of each draw.
    """

    config: ChainConfig
    dims: tuple
    mode: str
    chain_ids: np.ndarray
    arrays: dict
    theta_mean: tuple
    corr_mean: Optional[np.ndarray] = None
    divergent_chains: tuple = field(default=())

    def __len__(self):
        return len(self.chain_ids)

    @property
    def n_chains(self) -> int:
        return int(np.unique(self.chain_ids).size)

    def trace(self, name: str) -> np.ndarray:
        """Per-draw values of a stored field (e.g. ``"sigma2_1"``)."""
        return self.arrays[name]

    def by_chain(self, values) -> np.ndarray:
        """Reshape per-draw values to ``(n_chains, draws_per_chain, ...)``."""
        values = np.asarray(values)
        chains = np.unique(self.chain_ids)
        return np.stack([values[self.chain_ids == c] for c in chains])

    def states(self) -> Iterator[ModelState]:
        """Yield every retained :class:`ModelState` (``"full"`` mode only)."""
        if self.mode != "full":
            raise ValueError(f"complete states are not stored in {self.mode!r} mode")
        fields = _PARAM_FIELDS + _SCALAR_FIELDS + ("theta1", "theta2", "z")
        for i in range(len(self)):
            yield ModelState(**{f: _item(self.arrays[f][i]) for f in fields})

    def views(self) -> Iterator[SimpleNamespace]:
        """Yield a namespace of whatever is stored for each draw."""
        per_draw = [k for k, v in self.arrays.items()
                    if not k.startswith("sub_") and len(v) == len(self)]
        for i in range(len(self)):
            yield SimpleNamespace(**{k: _item(self.arrays[k][i]) for k in per_draw})

    def loading_draws(self):
        """``(w1, w2, sigma2_1, sigma2_2)`` stacks for the draws that carry loadings.

        Every draw in ``"full"``/``"params"`` mode; the systematic subsample
        in ``"summaries"`` mode.
        """
        a = self.arrays
        if self.mode == "summaries":
            return a["sub_w1"], a["sub_w2"], a["sub_sigma2_1"], a["sub_sigma2_2"]
        return a["w1"], a["w2"], a["sigma2_1"], a["sigma2_2"]

    def cross_correlations(self, rows: Optional[slice] = None) -> np.ndarray:
        """Per-draw D1 x D2 cross-correlation matrices, shape ``(n, D1, D2)``.

        ``rows`` restricts the computation to a block of view-1 features.
        """
        w1, w2, s1, s2 = self.loading_draws()
        if rows is not None:
            w1 = w1[:, rows]
        sd1 = np.sqrt(np.einsum("nik,nik->ni", w1, w1) + s1[:, None])
        sd2 = np.sqrt(np.einsum("nik,nik->ni", w2, w2) + s2[:, None])
        corr = np.einsum("nik,njk->nij", w1, w2)
        corr /= sd1[:, :, None]
        corr /= sd2[:, None, :]
        return np.clip(corr, -1.0, 1.0, out=corr)

    def canonical(self, k: Optional[int] = None) -> np.ndarray:
        """Per-draw canonical correlations, shape ``(n, k)``, zero-padded past ``d``."""
        cc = self.arrays["canonical"]
        d1, d2 = self.dims[0], self.dims[1]
        k = cc.shape[1] if k is None else int(k)
        if not 1 <= k <= min(d1, d2):
            raise ValueError(f"k must be in [1, {min(d1, d2)}], got {k}")
        if k <= cc.shape[1]:
            return cc[:, :k]
        return np.hstack([cc, np.zeros((cc.shape[0], k - cc.shape[1]))])


def _item(v):
    return float(v) if np.ndim(v) == 0 else v


def _run_one_chain(data: CountDatasetPair, hp: Hyperparams, cfg: ChainConfig,
                   chain_id: int, mode: str):
    rng = chain_rng(cfg.seed, chain_id)
    state = initial_state(data, hp, rng)
    d1, d2, n = data.dims
    rec = _Recorder(mode, cfg.draws_per_chain, (d1, d2, n, hp.d))
    divergent = False
    for it in range(cfg.n_iter):
        state = sweep(state, data, hp, rng, cfg.slice_width, cfg.slice_max_doublings)
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            try:
                lp = log_posterior(state, data, hp)
            except (ValueError, ArithmeticError):
                lp = math.nan
            divergent |= not math.isfinite(lp)
            rec.add(state, lp)
    return rec, divergent


def _run_one_chain_star(args):
    return _run_one_chain(*args)


def run_chain(data: CountDatasetPair, hp: Hyperparams, cfg: ChainConfig,
              n_jobs: Optional[int] = 1) -> PosteriorDraws:
    """Run ``cfg.n_chains`` independent chains and pool their retained draws.

    Chains are seeded from ``(cfg.seed, chain_id)``, so the result does not
    depend on ``n_jobs`` (``None`` means one worker per CPU).
    """
    d1, d2, n = data.dims
    hp.check_dims(d1, d2)
    mode = cfg.resolve_store(d1, d2, n)
    jobs = [(data, hp, cfg, c, mode) for c in range(cfg.n_chains)]
    workers = min(cfg.n_chains, n_jobs or os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_chain_star, jobs))
    else:
        results = [_run_one_chain(*job) for job in jobs]

    divergent = tuple(c for c, (_, bad) in enumerate(results) if bad)
    if divergent:
        warnings.warn(f"non-finite log posterior encountered in chain(s) {divergent}",
                      RuntimeWarning, stacklevel=2)
    recs = [r for r, _ in results]
    arrays = {k: np.concatenate([r.arrays[k] for r in recs]) for k in recs[0].arrays
              if k != "sub_index"}
    if mode == "summaries":
        offsets = np.cumsum([0] + [r.n_keep for r in recs[:-1]])
        arrays["sub_index"] = np.concatenate(
            [r.arrays["sub_index"] + o for r, o in zip(recs, offsets)])
    n_total = sum(r.n_keep for r in recs)
    theta_mean = tuple(sum(r.theta_sum[m] for r in recs) / n_total for m in (0, 1))
    corr_mean = sum(r.corr_sum for r in recs) / n_total if mode == "summaries" else None
    chain_ids = np.repeat(np.arange(cfg.n_chains), [r.n_keep for r in recs])
    return PosteriorDraws(config=cfg, dims=(d1, d2, n, hp.d), mode=mode,
                          chain_ids=chain_ids, arrays=arrays, theta_mean=theta_mean,
                          corr_mean=corr_mean, divergent_chains=divergent)


def psrf(draws: PosteriorDraws, extractor) -> float:
    """Split-chain potential scale reduction factor of a scalar trace.

    ``extractor`` is either the name of a stored field or a callable applied
    to each draw (a :class:`ModelState` in ``"full"`` mode, otherwise a
    namespace of the stored fields).
    """
    if draws.n_chains < 2:
        raise ValueError("PSRF needs at least two chains")
    if isinstance(extractor, str):
        values = np.asarray(draws.trace(extractor), dtype=float)
    else:
        source = draws.states() if draws.mode == "full" else draws.views()
        values = np.array([extractor(s) for s in source], dtype=float)
    return split_rhat(draws.by_chain(values))


def split_rhat(chains) -> float:
    """Split-R-hat of an ``(n_chains, n_draws)`` array."""
    chains = np.asarray(chains, dtype=float)
    half = chains.shape[1] // 2
    if half < 2:
        raise ValueError("each chain needs at least four draws")
    halves = np.concatenate([chains[:, :half], chains[:, -half:]], axis=0)
    n = halves.shape[1]
    means = halves.mean(axis=1)
    within = halves.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within <= 0.0:
        # constant within every half-chain: exact agreement or total disagreement
        return 1.0 if between <= 0.0 else math.inf
    var_plus = (n - 1) / n * within + between / n
    return float(math.sqrt(var_plus / within))
