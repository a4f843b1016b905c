"""Replication study designs at desk scale.

Two-group designs separate the groups well beyond the per-source
sampling noise, mirroring the full-scale settings the package targets;
sizes are chosen so a full study runs on a laptop in minutes. The
homogeneous count design doubles as the efficiency comparison against
the all-singleton fit and as the known-grouping agreement check.
"""

from __future__ import annotations

from .simulate import SimDesign

# twenty-point grid reaching past the fusion range of the binary design
_LOGISTIC_GRID = [round(0.025 * a, 6) for a in range(20)]
# counts fuse at smaller strengths; stop before cross-group collapse
_POISSON_GRID = [round(0.02 * a, 6) for a in range(16)]


def logistic_two_group(n_replicates: int = 50, seed: int = 20240501,
                       n_per_study: int = 400) -> SimDesign:
    """Binary outcomes, two studies by four sources, two true groups.

    Group coefficient vectors are separated by 2.0 in sup-norm.
    """
    return SimDesign(
        name="logistic-two-group",
        n_studies=2, n_sources=4,
        study_sizes=[n_per_study, n_per_study],
        response_dims=[10, 10, 10, 10],
        family="bernoulli",
        groups=[[(1, 1), (2, 1), (1, 2), (2, 2)],
                [(3, 1), (4, 1), (3, 2), (4, 2)]],
        theta=[[-1.0, 1.0, -0.5], [1.0, -0.5, 1.0]],
        lambda_grid=_LOGISTIC_GRID,
        n_replicates=n_replicates, seed=seed,
        correlation="ar1", correlation_param=0.5,
        max_iter=250,
        gate={"min_recovery": 0.9})


def poisson_homogeneous(n_replicates: int = 50, seed: int = 20240502,
                        n_total: int = 800) -> SimDesign:
    """Counts, one study of six sources sharing a single mean model."""
    return SimDesign(
        name="poisson-homogeneous",
        n_studies=1, n_sources=6,
        study_sizes=[n_total],
        response_dims=[12] * 6,
        family="poisson",
        groups=[[(j, 1) for j in range(1, 7)]],
        theta=[[0.1, -0.3, -0.6]],
        lambda_grid=_POISSON_GRID,
        n_replicates=n_replicates, seed=seed,
        correlation="ar1", correlation_param=0.5,
        max_iter=250,
        compare_het=True, compare_oracle=True,
        gate={"min_recovery": 0.9, "min_het_rmse_ratio": 2.0,
              "min_oracle_agreement": 0.95})


def poisson_two_group(n_replicates: int = 200, seed: int = 20240503,
                      n_per_study: int = 400) -> SimDesign:
    """Counts, two studies by four sources, two true groups.

    Coefficients follow the two leading group values of the full-scale
    count setting; coverage of the nominal 95% intervals is the target.
    """
    return SimDesign(
        name="poisson-two-group",
        n_studies=2, n_sources=4,
        study_sizes=[n_per_study, n_per_study],
        response_dims=[10, 10, 10, 10],
        family="poisson",
        groups=[[(1, 1), (2, 1), (1, 2), (2, 2)],
                [(3, 1), (4, 1), (3, 2), (4, 2)]],
        theta=[[-0.4, 0.1, -0.2], [0.1, -0.3, -0.6]],
        lambda_grid=_POISSON_GRID,
        n_replicates=n_replicates, seed=seed,
        correlation="ar1", correlation_param=0.5,
        max_iter=250,
        gate={"min_recovery": 0.9, "cp_range": [0.90, 0.99],
              "max_bias_ese_ratio": 0.5})
