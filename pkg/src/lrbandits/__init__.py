"""Contextual low-rank bandits: subspace recovery, policy evaluation, best-policy identification, regret."""
from .environment import Environment, Trajectory, sample_trajectory
from .exceptions import (
    ConfigError,
    DimensionMismatch,
    InvalidSplit,
    LowRankBanditError,
    RankMismatch,
    SingularBlock,
    ZeroPropensity,
)
from .lowrank import LowRankMatrix, from_entries, gen_all_ones, gen_pdq
from .policy_eval import TwoPhaseEstimator
from .reduction import LowRankFeaturizer
from .spectral import SpectralEstimator

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionMismatch",
    "Environment",
    "InvalidSplit",
    "LowRankBanditError",
    "LowRankFeaturizer",
    "LowRankMatrix",
    "RankMismatch",
    "SingularBlock",
    "SpectralEstimator",
    "Trajectory",
    "TwoPhaseEstimator",
    "ZeroPropensity",
    "from_entries",
    "gen_all_ones",
    "gen_pdq",
    "sample_trajectory",
]
