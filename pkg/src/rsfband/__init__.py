"""Random survival forests as incomplete U-statistics over matched disjoint
subsample pairs, with unbiased covariance estimates and simultaneous
confidence bands for the predicted cumulative hazard."""

from .band import BandParams, ConfidenceBand, build_band, nearest_pd, smooth_diagonal
from .covariance import (CovarianceEstimate, complete_cov_oracle, estimate_ch_b, estimate_cs_b,
                         estimate_sigma, hypergeom_weight)
from .data import (Dataset, Observation, TimeGrid, get_scenario, load_csv, make_grid,
                   simulate_scenario)
from .errors import FitError, InvalidArgumentError, NumericalError, ParseError
from .experiments import ExperimentConfig, run_b_sweep, run_coverage_study, run_real_data
from .forest import ForestParams, MatchedPairForest, fit_forest, predict_ub, sample_matched_pairs
from .tree import SurvivalTree, TreeParams, fit_tree, predict_chf

__version__ = "0.1.0"

__all__ = [
    "BandParams", "ConfidenceBand", "CovarianceEstimate", "Dataset", "ExperimentConfig",
    "FitError", "ForestParams", "InvalidArgumentError", "MatchedPairForest", "NumericalError",
    "Observation", "ParseError", "SurvivalTree", "TimeGrid", "TreeParams", "build_band",
    "complete_cov_oracle", "estimate_ch_b", "estimate_cs_b", "estimate_sigma", "fit_forest",
    "fit_tree", "get_scenario", "hypergeom_weight", "load_csv", "make_grid", "nearest_pd",
    "predict_chf", "predict_ub", "run_b_sweep", "run_coverage_study", "run_real_data",
    "sample_matched_pairs", "simulate_scenario", "smooth_diagonal",
]
