"""Alternating-direction solver for the penalized stacked objective.

For a fixed penalty strength the solver alternates (i) one damped
Gauss-Newton step on the moment quadratic plus the augmented coupling
terms, with the weight matrix refrozen at the current iterate, (ii) an
exact proximal update of the pairwise difference variables, and (iii) a
multiplier ascent step. Pairs whose difference variable is exactly zero
are fused; the estimated grouping is the transitive closure of fused
pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .linalg import solve_spd_with_ridge
from .penalty import PairSet, PenaltyConfig, gamma_prox, penalty_total
from .stacking import (PartitionMap, StackedSystem, WeightedQuadratic,
                       sample_covariance, stack_moments, stack_psi_mean)


@dataclass(frozen=True)
class AdmmConfig:
    tol_primal: float = 1e-5
    tol_dual: float = 1e-5
    max_iter: int = 1000
    fuse_epsilon: float = 0.0

    def __post_init__(self):
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ConfigError("tolerances must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.fuse_epsilon < 0:
            raise ConfigError("fuse_epsilon must be nonnegative")


@dataclass
class SolverState:
    """Terminal state of one alternating-direction run."""

    beta: np.ndarray
    gamma: dict
    multipliers: dict
    weight: np.ndarray = field(repr=False)
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    iteration: int = 0
    converged: bool = False


def difference_operator(pairs: PairSet, n_coef: int) -> np.ndarray:
    """(Pq, JKq) operator mapping stacked coefficients to pair differences."""
    q = n_coef
    pos = pairs.positions()
    n_beta = pairs.n_sources * pairs.n_studies * q
    A = np.zeros((len(pairs) * q, n_beta))
    eye = np.eye(q)
    for p, (a, b) in enumerate(pos):
        A[p * q:(p + 1) * q, a * q:(a + 1) * q] = eye
        A[p * q:(p + 1) * q, b * q:(b + 1) * q] = -eye
    return A


def _pair_array(values, pairs: PairSet, q: int) -> np.ndarray:
    """Accept a (P, q) array or a dict keyed by pair tuples."""
    if isinstance(values, dict):
        return np.array([values[p] for p in pairs.pairs], dtype=float)
    out = np.asarray(values, dtype=float).copy()
    if out.shape != (len(pairs), q):
        raise ConfigError(f"pair-state shape {out.shape}, expected ({len(pairs)}, {q})")
    return out


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def _partition_from_gamma(gamma_mat: np.ndarray, pairs: PairSet, n_coef: int,
                          fuse_epsilon: float) -> PartitionMap:
    J, K = pairs.n_sources, pairs.n_studies
    uf = _UnionFind(J * K)
    pos = pairs.positions()
    fused = np.max(np.abs(gamma_mat), axis=1) <= fuse_epsilon
    for p in np.flatnonzero(fused):
        uf.union(int(pos[p, 0]), int(pos[p, 1]))
    groups = {}
    for cell in range(J * K):
        groups.setdefault(uf.find(cell), []).append(cell)
    member_lists = []
    for root in sorted(groups):
        k_of = [divmod(c, J) for c in groups[root]]
        member_lists.append([(j + 1, k + 1) for k, j in k_of])
    return PartitionMap.from_groups(member_lists, J, K, n_coef)


def extract_partition(state: SolverState, pairs: PairSet,
                      fuse_epsilon: float = 0.0) -> PartitionMap:
    """Grouping implied by the zero difference variables.

    A pair is fused when the sup-norm of its difference variable is at
    most fuse_epsilon; groups are the connected components, numbered by
    smallest member in (k, j) order.
    """
    n_coef = next(iter(state.gamma.values())).size
    gamma_mat = np.array([state.gamma[p] for p in pairs.pairs])
    return _partition_from_gamma(gamma_mat, pairs, n_coef, fuse_epsilon)


def representative_beta(state: SolverState, partition: PartitionMap) -> np.ndarray:
    """Plain within-group averages of the fitted coefficients, (G, q).

    Diagnostic only; the weighted combination is the estimator of record.
    """
    q = partition.n_coef
    beta = state.beta.reshape(-1, q)
    J = partition.n_sources
    out = np.zeros((partition.n_groups, q))
    for g, members in enumerate(partition.groups):
        pos = [(k - 1) * J + (j - 1) for (j, k) in members]
        out[g] = beta[pos].mean(axis=0)
    return out


def admm_solve(system: StackedSystem, pairs: PairSet, penalty: PenaltyConfig,
               admm: AdmmConfig, beta_init: np.ndarray, *,
               gamma_init=None, mult_init=None,
               trace=None, on_iteration=None) -> SolverState:
    """Run the alternating scheme at one penalty strength.

    beta_init is typically the per-source fits or a warm start from a
    neighbouring penalty strength. Difference variables start at the
    initial pairwise differences and multipliers at zero unless carried
    in from a neighbouring solve (continuation does not change fixed
    points, only the route there). Terminates when the largest pair-wise
    primal residual and the scaled dual change both drop below
    tolerance, or at max_iter with converged=False.

    trace, when given, receives tab-separated lines
    (iteration, objective, primal, dual, n_groups); on_iteration, when
    given, is called with a dict snapshot after each iteration.
    """
    rho = penalty.rho
    if penalty.delta * rho <= 1.0:
        raise ConfigError("penalty concavity incompatible with rho")
    q = system.dataset.n_coef
    beta = np.asarray(beta_init, dtype=float).copy()
    if beta.shape != (system.n_beta,):
        raise ConfigError(f"beta_init has shape {beta.shape}, expected ({system.n_beta},)")
    if not np.all(np.isfinite(beta)):
        raise DivergenceError("non-finite starting value", iteration=0)

    A = difference_operator(pairs, q)
    AtA = A.T @ A
    P = len(pairs)
    gamma = (A @ beta).reshape(P, q) if gamma_init is None else _pair_array(
        gamma_init, pairs, q)
    mult = np.zeros((P, q)) if mult_init is None else _pair_array(
        mult_init, pairs, q)

    if trace is not None:
        trace.write("iteration\tobjective\tprimal\tdual\tn_groups\n")

    primal = dual = np.inf
    it = 0
    converged = False
    V = np.zeros((system.total_dim, system.total_dim))
    for it in range(1, admm.max_iter + 1):
        rows, mean, sens = stack_moments(system, beta)
        V = sample_covariance(system, rows)
        wq = WeightedQuadratic(mean, V)

        diff = (A @ beta).reshape(P, q)
        gap = diff - gamma
        rhs = wq.moment_pull(sens) - A.T @ mult.ravel() - rho * (A.T @ gap.ravel())
        H = sens.T @ wq.pinv.apply(sens) + rho * AtA
        step = solve_spd_with_ridge(H, rhs)

        merit0 = wq.value + float(np.sum(mult * gap)) + 0.5 * rho * float(np.sum(gap * gap))
        alpha = 1.0
        while alpha >= 1e-10:
            trial = beta + alpha * step
            m_trial = stack_psi_mean(system, trial)
            if np.all(np.isfinite(m_trial)):
                gap_t = (A @ trial).reshape(P, q) - gamma
                merit_t = (wq.quad(m_trial) + float(np.sum(mult * gap_t))
                           + 0.5 * rho * float(np.sum(gap_t * gap_t)))
                if merit_t < merit0:
                    beta = trial
                    break
            alpha *= 0.5
        if not np.all(np.isfinite(beta)):
            raise DivergenceError("non-finite iterate", iteration=it,
                                  primal=primal, dual=dual)

        diff = (A @ beta).reshape(P, q)
        zeta = diff + mult / rho
        gamma_new = np.empty_like(gamma)
        for p in range(P):
            gamma_new[p] = gamma_prox(zeta[p], penalty)
        resid = diff - gamma_new
        mult = mult + rho * resid

        primal = float(np.sqrt(np.max(np.sum(resid * resid, axis=1))))
        dual = rho * float(np.sqrt(np.max(np.sum((gamma_new - gamma) ** 2, axis=1))))
        gamma = gamma_new

        if trace is not None or on_iteration is not None:
            part = _partition_from_gamma(gamma, pairs, q, admm.fuse_epsilon)
            objective = wq.quad(stack_psi_mean(system, beta)) + penalty_total(
                beta, pairs, penalty, q)
            if trace is not None:
                trace.write(f"{it}\t{objective!r}\t{primal!r}\t{dual!r}\t{part.n_groups}\n")
            if on_iteration is not None:
                on_iteration({"iteration": it, "beta": beta.copy(),
                              "gamma": gamma.copy(), "multipliers": mult.copy(),
                              "residual_vectors": resid.copy(),
                              "objective": objective, "primal": primal,
                              "dual": dual, "n_groups": part.n_groups})

        if primal <= admm.tol_primal and dual <= admm.tol_dual:
            converged = True
            break

    gamma_map = {pair: gamma[p].copy() for p, pair in enumerate(pairs.pairs)}
    mult_map = {pair: mult[p].copy() for p, pair in enumerate(pairs.pairs)}
    return SolverState(beta=beta, gamma=gamma_map, multipliers=mult_map,
                       weight=V, primal_residual=primal, dual_residual=dual,
                       iteration=it, converged=converged)
