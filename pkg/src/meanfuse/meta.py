"""Efficiency-weighted combination of per-source fits over a grouping.

Given fitted per-source coefficients and an estimated grouping, the
combined estimator weights the group members by their sample sensitivity
and variability matrices, so dependence between sources is carried into
both the point estimate and its covariance. Normal-approximation
intervals are valid for a fixed penalty strength.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import InputError, RankDeficiencyError
from .linalg import SymmetricPseudoInverse
from .qif import sensitivity_source
from .stacking import PartitionMap, StackedSystem, sample_covariance, stack_psi

_SINGULAR_REL_TOL = 1e-12


@dataclass
class MetaEstimate:
    partition: PartitionMap
    theta: np.ndarray
    covariance: np.ndarray
    ci_level: float
    intervals: np.ndarray

    @property
    def ase(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def theta_matrix(self) -> np.ndarray:
        """(G, q) view of the combined coefficients."""
        return self.theta.reshape(self.partition.n_groups, -1)


def confidence_intervals(estimate: MetaEstimate, level: float) -> np.ndarray:
    """Symmetric normal intervals, one (lower, upper) row per coefficient."""
    if not 0.0 < level < 1.0:
        raise InputError(f"confidence level must lie in (0, 1), got {level}")
    z = norm.ppf(0.5 + level / 2.0)
    half = z * estimate.ase
    return np.column_stack([estimate.theta - half, estimate.theta + half])


def meta_combine(system: StackedSystem, partition: PartitionMap,
                 beta_hat: np.ndarray, ci_level: float = 0.95) -> MetaEstimate:
    """Weighted combination of per-source fits into group coefficients.

    The participant moment rows are evaluated at beta_hat and re-ordered
    group-wise; the group-wise variability matrix is the same sample
    covariance with permuted rows and columns. Each source contributes
    its (n_k / N)-scaled sensitivity to its group's columns, and the
    combination solves the induced weighted least squares. Covariance is
    the inverse combined information divided by N.
    """
    ds = system.dataset
    beta_hat = np.asarray(beta_hat, dtype=float)
    if not np.all(np.isfinite(beta_hat)):
        raise InputError("beta_hat must be finite")
    if not 0.0 < ci_level < 1.0:
        raise InputError(f"confidence level must lie in (0, 1), got {ci_level}")
    q = ds.n_coef
    N = ds.n_total
    G = partition.n_groups

    rows, _ = stack_psi(system, beta_hat)

    # permutation of psi components: group-major, members in (k, j) order
    perm = []
    col_meta = []  # (group index, block) per source in permuted order
    for g, members in enumerate(partition.groups):
        for (j, k) in members:
            lo, hi = system.offsets[(j, k)]
            perm.extend(range(lo, hi))
            col_meta.append((g, j, k))
    perm = np.asarray(perm, dtype=int)
    rows_t = rows[:, perm]
    V_t = sample_covariance(system, rows_t)
    v_pinv = SymmetricPseudoInverse(V_t)

    sens_t = np.zeros((system.total_dim, G * q))
    target = np.zeros(system.total_dim)
    row0 = 0
    for (g, j, k) in col_meta:
        block = ds.block(j, k)
        scale = block.n_participants / N
        S_jk = scale * sensitivity_source(block, beta_hat[system.beta_slice(j, k)])
        d = block.psi_dim
        sens_t[row0:row0 + d, g * q:(g + 1) * q] = S_jk
        target[row0:row0 + d] = S_jk @ beta_hat[system.beta_slice(j, k)]
        row0 += d

    info = sens_t.T @ v_pinv.apply(sens_t)
    vals = np.linalg.eigvalsh(info)
    if vals[0] <= max(vals[-1], 0.0) * _SINGULAR_REL_TOL:
        raise RankDeficiencyError(
            f"combined information singular; offending group: {_offending_group(info, q, partition)}")
    theta = np.linalg.solve(info, sens_t.T @ v_pinv.apply(target))
    covariance = np.linalg.inv(info) / N

    est = MetaEstimate(partition=partition, theta=theta, covariance=covariance,
                       ci_level=ci_level, intervals=np.zeros((G * q, 2)))
    est.intervals = confidence_intervals(est, ci_level)
    return est


def _offending_group(info: np.ndarray, q: int, partition: PartitionMap) -> str:
    worst, worst_ratio = None, np.inf
    scale = float(np.max(np.abs(np.diag(info)))) or 1.0
    for g in range(partition.n_groups):
        block = info[g * q:(g + 1) * q, g * q:(g + 1) * q]
        ratio = float(np.linalg.eigvalsh(block)[0]) / scale
        if ratio < worst_ratio:
            worst, worst_ratio = g, ratio
    if worst is None:
        return "unknown"
    members = ",".join(f"({j},{k})" for (j, k) in partition.groups[worst])
    return f"group {worst + 1} {{{members}}}"
