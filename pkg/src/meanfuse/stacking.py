"""Stacked estimating functions across all sources, with GMM machinery.

Source blocks are ordered study-major (k outer, j inner, coefficients
innermost); the stacked moment vector holds, for participant i of study
k, the per-source vectors in study k's segment and exact zeros
elsewhere. The participant average therefore carries block (j, k) equal
to (n_k / N) times the per-source mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import StudyDataset, source_position
from .errors import ConvergenceError, InputError, RankDeficiencyError
from .linalg import SymmetricPseudoInverse, solve_spd_with_ridge, sup_norm
from .qif import (moments_with_sensitivity, psi_source, psi_source_mean,
                  sensitivity_source)

# stall floor of the refreshed-weight objective sits near sqrt(eps), so
# the stacked fit uses a looser gradient tolerance than the per-source fit
GMM_GRAD_TOL = 1e-6
GMM_MAX_ITER = 200


@dataclass
class StackedSystem:
    """Index bookkeeping for the stacked moment vector of a dataset."""

    dataset: StudyDataset
    offsets: dict = field(init=False)
    total_dim: int = field(init=False)

    def __post_init__(self):
        ds = self.dataset
        self.offsets = {}
        pos = 0
        for j, k, block in ds.source_cells():
            if block.n_coef >= block.n_participants:
                raise InputError(
                    f"study {k} needs more participants than coefficients "
                    f"(q={block.n_coef}, n={block.n_participants})")
            self.offsets[(j, k)] = (pos, pos + block.psi_dim)
            pos += block.psi_dim
        self.total_dim = pos
        if self.total_dim >= ds.n_total:
            raise InputError(
                f"stacked moment dimension {self.total_dim} must be below the "
                f"total sample size {ds.n_total}")

    @property
    def n_beta(self) -> int:
        return self.dataset.n_sources * self.dataset.n_studies * self.dataset.n_coef

    def beta_slice(self, j: int, k: int) -> slice:
        q = self.dataset.n_coef
        pos = source_position(j, k, self.dataset.n_sources)
        return slice(pos * q, (pos + 1) * q)

    def split_beta(self, beta: np.ndarray) -> dict:
        """Map (j, k) -> its q-subvector of the stacked coefficient vector."""
        return {(j, k): beta[self.beta_slice(j, k)]
                for j, k, _ in self.dataset.source_cells()}


def stack_psi(system: StackedSystem, beta: np.ndarray):
    """Per-participant stacked moment rows and their average.

    Returns (rows, mean): rows is (N, total_dim) with participants of
    study k filling only study k's columns (exact zeros elsewhere), in
    study order; mean is the average over all N rows.
    """
    ds = system.dataset
    beta = np.asarray(beta, dtype=float)
    rows = np.zeros((ds.n_total, system.total_dim))
    row0 = 0
    for k, blocks in enumerate(ds.studies, start=1):
        n_k = blocks[0].n_participants
        for j, block in enumerate(blocks, start=1):
            lo, hi = system.offsets[(j, k)]
            r, _ = psi_source(block, beta[system.beta_slice(j, k)])
            rows[row0:row0 + n_k, lo:hi] = r
        row0 += n_k
    return rows, rows.mean(axis=0)


def stack_psi_mean(system: StackedSystem, beta: np.ndarray) -> np.ndarray:
    """Average stacked moment only; cheaper than stack_psi for line searches."""
    ds = system.dataset
    beta = np.asarray(beta, dtype=float)
    out = np.zeros(system.total_dim)
    N = ds.n_total
    for j, k, block in ds.source_cells():
        lo, hi = system.offsets[(j, k)]
        out[lo:hi] = (block.n_participants / N) * psi_source_mean(
            block, beta[system.beta_slice(j, k)])
    return out


def sample_covariance(system: StackedSystem, rows: np.ndarray) -> np.ndarray:
    """Average outer product of the participant rows, (1/N) sum psi psi'."""
    rows = np.asarray(rows, dtype=float)
    return rows.T @ rows / rows.shape[0]


def stack_moments(system: StackedSystem, beta: np.ndarray):
    """(rows, mean, sensitivity) of the stacked system in one pass."""
    ds = system.dataset
    beta = np.asarray(beta, dtype=float)
    rows = np.zeros((ds.n_total, system.total_dim))
    sens = np.zeros((system.total_dim, system.n_beta))
    N = ds.n_total
    row0 = 0
    for k, blocks in enumerate(ds.studies, start=1):
        n_k = blocks[0].n_participants
        for j, block in enumerate(blocks, start=1):
            lo, hi = system.offsets[(j, k)]
            sl = system.beta_slice(j, k)
            r, _, S = moments_with_sensitivity(block, beta[sl])
            rows[row0:row0 + n_k, lo:hi] = r
            sens[lo:hi, sl] = (n_k / N) * S
        row0 += n_k
    return rows, rows.mean(axis=0), sens


def stacked_sensitivity(system: StackedSystem, beta: np.ndarray) -> np.ndarray:
    """Negative derivative of the stacked mean, (total_dim, JKq)."""
    ds = system.dataset
    beta = np.asarray(beta, dtype=float)
    out = np.zeros((system.total_dim, system.n_beta))
    N = ds.n_total
    for j, k, block in ds.source_cells():
        lo, hi = system.offsets[(j, k)]
        sl = system.beta_slice(j, k)
        out[lo:hi, sl] = (block.n_participants / N) * sensitivity_source(block, beta[sl])
    return out


class WeightedQuadratic:
    """Half quadratic form of a moment vector under a PSD weight.

    Uses the generalized inverse of the weight (relative eigenvalue
    cutoff 1e-10); exposes the frozen-weight pull vector S' V^- psi used
    as the Gauss-Newton right-hand side.
    """

    def __init__(self, psi: np.ndarray, weight: np.ndarray):
        self.psi = np.asarray(psi, dtype=float)
        self.pinv = SymmetricPseudoInverse(weight)
        self.value = 0.5 * self.pinv.quadratic(self.psi)

    def quad(self, other: np.ndarray) -> float:
        """Half quadratic form of another vector under the frozen weight."""
        return 0.5 * self.pinv.quadratic(other)

    def moment_pull(self, sens: np.ndarray) -> np.ndarray:
        """S' V^- psi for a sensitivity matrix S (negative objective gradient)."""
        return sens.T @ self.pinv.apply(self.psi)


def weighted_quadratic(psi: np.ndarray, weight: np.ndarray) -> WeightedQuadratic:
    return WeightedQuadratic(psi, weight)


@dataclass
class PartitionMap:
    """Grouping of the source grid with its 0/1 expansion matrices.

    groups: tuple of groups, each a tuple of (j, k) labels; groups are
    numbered by their smallest member in (k, j) order and members are
    sorted the same way.
    """

    groups: tuple
    n_sources: int
    n_studies: int
    n_coef: int

    def __post_init__(self):
        J, K = self.n_sources, self.n_studies
        norm = []
        for members in self.groups:
            if not members:
                raise InputError("empty partition group")
            norm.append(tuple(sorted((tuple(m) for m in members),
                                     key=lambda jk: (jk[1], jk[0]))))
        norm.sort(key=lambda g: (g[0][1], g[0][0]))
        self.groups = tuple(norm)
        seen = {}
        for g, members in enumerate(self.groups, start=1):
            for (j, k) in members:
                if not (1 <= j <= J and 1 <= k <= K):
                    raise InputError(f"source label ({j},{k}) outside the {J}x{K} grid")
                if (j, k) in seen:
                    raise InputError(f"source ({j},{k}) assigned to two groups")
                seen[(j, k)] = g
        if len(seen) != J * K:
            raise InputError("partition must cover every source exactly once")
        self.assignment = seen

    @classmethod
    def from_groups(cls, groups, n_sources: int, n_studies: int, n_coef: int) -> "PartitionMap":
        """Build from arbitrary group lists; ordering is canonicalized."""
        return cls(tuple(tuple(tuple(m) for m in g) for g in groups),
                   n_sources, n_studies, n_coef)

    @classmethod
    def singletons(cls, n_sources: int, n_studies: int, n_coef: int) -> "PartitionMap":
        groups = [((j, k),) for k in range(1, n_studies + 1) for j in range(1, n_sources + 1)]
        return cls(tuple(groups), n_sources, n_studies, n_coef)

    @classmethod
    def pooled(cls, n_sources: int, n_studies: int, n_coef: int) -> "PartitionMap":
        members = tuple((j, k) for k in range(1, n_studies + 1) for j in range(1, n_sources + 1))
        return cls((members,), n_sources, n_studies, n_coef)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def membership_matrix(self) -> np.ndarray:
        """(JK, G) 0/1 matrix; row source position, column group."""
        out = np.zeros((self.n_sources * self.n_studies, self.n_groups))
        for (j, k), g in self.assignment.items():
            out[source_position(j, k, self.n_sources), g - 1] = 1.0
        return out

    def expansion_matrix(self) -> np.ndarray:
        """(JKq, Gq) matrix replicating each group vector into its members."""
        return np.kron(self.membership_matrix(), np.eye(self.n_coef))

    def expand(self, theta: np.ndarray) -> np.ndarray:
        return self.expansion_matrix() @ np.asarray(theta, dtype=float)

    def signature(self) -> str:
        return "|".join(
            "{" + ",".join(f"({j},{k})" for (j, k) in g) + "}" for g in self.groups)

    def same_partition(self, other: "PartitionMap") -> bool:
        return set(frozenset(g) for g in self.groups) == set(frozenset(g) for g in other.groups)


@dataclass
class GmmFit:
    theta: np.ndarray
    covariance: np.ndarray
    objective: float
    gradient_norm: float
    iterations: int
    converged: bool


def gmm_estimate(system: StackedSystem, partition: PartitionMap, theta0: np.ndarray,
                 *, tol: float = GMM_GRAD_TOL, max_iter: int = GMM_MAX_ITER,
                 on_iteration=None) -> GmmFit:
    """Minimize the weighted quadratic form of the stacked moments over
    group coefficients, the partition held fixed.

    Gauss-Newton with step halving; the weight is refrozen at each
    iterate, so every accepted step strictly decreases the frozen-weight
    objective it was searched on. With the all-singleton partition this
    is the fully heterogeneous estimator. Returned covariance is the
    inverse sample Godambe matrix divided by N, evaluated at the solution.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    if theta.shape != (partition.n_groups * system.dataset.n_coef,):
        raise InputError(f"theta0 has shape {theta.shape}, expected "
                         f"({partition.n_groups * system.dataset.n_coef},)")
    expand = partition.expansion_matrix()
    N = system.dataset.n_total
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        beta = expand @ theta
        rows, mean, sens_full = stack_moments(system, beta)
        wq = WeightedQuadratic(mean, sample_covariance(system, rows))
        sens = sens_full @ expand
        pull = wq.moment_pull(sens)
        grad_norm = sup_norm(pull)
        if grad_norm <= tol:
            converged = True
            break
        H = sens.T @ wq.pinv.apply(sens)
        step = solve_spd_with_ridge(H, pull)
        alpha, accepted = 1.0, False
        value_after = wq.value
        while alpha >= 1e-12:
            trial = theta + alpha * step
            m_trial = stack_psi_mean(system, expand @ trial)
            if np.all(np.isfinite(m_trial)) and wq.quad(m_trial) < wq.value:
                value_after = wq.quad(m_trial)
                theta = trial
                accepted = True
                break
            alpha *= 0.5
        if on_iteration is not None:
            on_iteration({"iteration": iterations, "accepted": accepted,
                          "value_before": wq.value, "value_after": value_after,
                          "gradient_norm": grad_norm})
        if not accepted:
            # stalled line search: re-check gradient at the same point
            if grad_norm <= tol:
                converged = True
            break
    if not converged:
        beta = expand @ theta
        rows, mean, sens_full = stack_moments(system, beta)
        wq = WeightedQuadratic(mean, sample_covariance(system, rows))
        sens = sens_full @ expand
        grad_norm = sup_norm(wq.moment_pull(sens))
        if grad_norm > tol:
            raise ConvergenceError(
                f"GMM fit did not converge: gradient sup-norm {grad_norm:.3e} "
                f"after {iterations} iterations",
                iterate=theta, gradient_norm=grad_norm, iterations=iterations)
        converged = True
    beta = expand @ theta
    rows, mean, sens_full = stack_moments(system, beta)
    wq = WeightedQuadratic(mean, sample_covariance(system, rows))
    sens = sens_full @ expand
    info = sens.T @ wq.pinv.apply(sens)
    try:
        covariance = np.linalg.inv(info) / N
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"information matrix singular: {exc}") from exc
    return GmmFit(theta=theta, covariance=covariance, objective=wq.value,
                  gradient_norm=sup_norm(wq.moment_pull(sens)),
                  iterations=iterations, converged=True)
