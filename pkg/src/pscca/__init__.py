"""Correlation and canonical correlation analysis of paired count data.

Two count matrices are linked through a Poisson latent-factor model on
their natural (log-mean) parameters, with horseshoe shrinkage on the
loadings, and fitted by Markov chain Monte Carlo.
"""
from .baselines import BaselineResult, pearson, sample_cca, spearman
from .exceptions import (
    DimensionError,
    DomainError,
    PsccaError,
    SingularMatrixError,
    SliceSamplingError,
    TruncatedNormalError,
)
from .model import (
    CountDatasetPair,
    Hyperparams,
    JointCovariance,
    ModelState,
    canonical_correlations,
    cross_correlation,
    joint_covariance,
    log_posterior,
    poisson_loglik,
)
from .sampler import ChainConfig, PosteriorDraws, psrf, run_chain
from .simulation import (
    LossTable,
    ScenarioSpec,
    SimulatedDataset,
    frobenius_loss,
    generate,
    run_comparison,
    stein_loss,
    verify_shrinkage,
)
from .summaries import (
    CcaSummary,
    CorrelationSummary,
    export_heatmap_grid,
    summarize_cca,
    summarize_correlations,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineResult",
    "CcaSummary",
    "ChainConfig",
    "CorrelationSummary",
    "CountDatasetPair",
    "DimensionError",
    "DomainError",
    "Hyperparams",
    "JointCovariance",
    "LossTable",
    "ModelState",
    "PosteriorDraws",
    "PsccaError",
    "ScenarioSpec",
    "SimulatedDataset",
    "SingularMatrixError",
    "SliceSamplingError",
    "TruncatedNormalError",
    "canonical_correlations",
    "cross_correlation",
    "export_heatmap_grid",
    "frobenius_loss",
    "generate",
    "joint_covariance",
    "log_posterior",
    "pearson",
    "poisson_loglik",
    "psrf",
    "run_chain",
    "run_comparison",
    "sample_cca",
    "spearman",
    "stein_loss",
    "summarize_cca",
    "summarize_correlations",
    "verify_shrinkage",
]
