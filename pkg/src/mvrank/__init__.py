"""Multivariate rank histograms, pre-rank functions and e-value calibration tests."""
from .errors import (
    ArchiveError,
    ConfigurationError,
    InvalidInputError,
    InvalidStateError,
    SequencingError,
)
from .evalues import EProcess, TestDecision, decide, fit_beta_binomial, rejection_threshold
from .kernels import BACKEND
from .pipeline import EvaluationRun, evaluate_block, evaluate_stream, rank_correlations
from .preranks import EnsembleCase, PreRankSpec, apply_prerank, default_specs, prerank_values
from .ranks import RankHistogram, chi_square_flatness, randomized_rank
from .reorder import ecc, reorder, schaake_template
from .sim import ScenarioConfig, preset, run_scenario

__version__ = "0.1.0"

__all__ = [
    "ArchiveError", "ConfigurationError", "InvalidInputError", "InvalidStateError",
    "SequencingError", "EProcess", "TestDecision", "decide", "fit_beta_binomial",
    "rejection_threshold", "BACKEND", "EvaluationRun", "evaluate_block", "evaluate_stream",
    "rank_correlations", "EnsembleCase", "PreRankSpec", "apply_prerank", "default_specs",
    "prerank_values", "RankHistogram", "chi_square_flatness", "randomized_rank", "ecc",
    "reorder", "schaake_template", "ScenarioConfig", "preset", "run_scenario",
]
