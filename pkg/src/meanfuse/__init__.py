"""Fusion of marginal mean models across dependent data sources.

The package learns which cells of a sources-by-studies grid share a
regression mean model: per-source estimating functions are stacked into
a moment vector, weighted by their sample covariance, and penalized with
a concave fusion penalty on whole-vector pairwise differences. An
alternating-direction solver produces a grouping per penalty strength,
an information criterion picks the strength, and an efficiency-weighted
combination yields fused estimates with confidence intervals.
"""

__version__ = "0.1.0"

from .admm import (AdmmConfig, SolverState, admm_solve, extract_partition,
                   representative_beta)
from .basis import BasisSet, ar_band_basis, exchangeable_basis, independence_basis, make_basis
from .data import SourceBlock, StudyDataset
from .links import LinkFamily
from .meta import MetaEstimate, confidence_intervals, meta_combine
from .penalty import PairSet, PenaltyConfig, build_pairs, gamma_prox, mcp, penalty_total
from .qif import psi_source, qif_fit_source, sensitivity_source
from .selection import SolutionPath, gmm_bic, qif_start, run_path, suggest_lambda_max
from .simulate import (SimDesign, StudyResult, build_dataset, evaluate_gate,
                       run_replicate, run_study)
from .stacking import (GmmFit, PartitionMap, StackedSystem, WeightedQuadratic,
                       gmm_estimate, sample_covariance, stack_psi, weighted_quadratic)

__all__ = [
    "AdmmConfig", "BasisSet", "GmmFit", "LinkFamily", "MetaEstimate",
    "PairSet", "PartitionMap", "PenaltyConfig", "SimDesign", "SolutionPath",
    "SolverState", "SourceBlock", "StackedSystem", "StudyDataset",
    "StudyResult", "WeightedQuadratic", "admm_solve", "ar_band_basis",
    "build_dataset", "build_pairs", "confidence_intervals",
    "exchangeable_basis", "extract_partition", "gamma_prox", "gmm_bic",
    "gmm_estimate", "independence_basis", "make_basis", "mcp",
    "meta_combine", "penalty_total", "psi_source", "qif_fit_source",
    "evaluate_gate", "qif_start", "representative_beta", "run_path",
    "run_replicate", "run_study", "sample_covariance", "sensitivity_source",
    "stack_psi", "suggest_lambda_max", "weighted_quadratic",
]
