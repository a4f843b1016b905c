"""Warm-started path over penalty strengths and information-criterion choice.

The first path point starts from the per-source fits; every later point
starts from the previous point's solution. Each record carries the
moment-based information criterion

    N psi' V^- psi - log(N) (total moment dim - G q),

so over-fusing inflates the fit term while the degrees-of-freedom term
rewards smaller G by exactly q log(N) per merged group.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .admm import AdmmConfig, SolverState, admm_solve, extract_partition
from .errors import InputError, PathError
from .penalty import PairSet, PenaltyConfig
from .qif import qif_fit_source
from .stacking import (PartitionMap, StackedSystem, WeightedQuadratic,
                       sample_covariance, stack_psi)


@dataclass
class PathRecord:
    lam: float
    beta_hat: np.ndarray
    partition: PartitionMap
    n_groups: int
    bic: float
    converged: bool
    iterations: int

    @property
    def signature(self) -> str:
        return self.partition.signature()


@dataclass
class SolutionPath:
    lambdas: list
    records: list
    selected: int

    def selected_record(self) -> PathRecord:
        return self.records[self.selected]


def gmm_bic(system: StackedSystem, beta_hat: np.ndarray, n_groups: int) -> float:
    """Moment-selection information criterion at a fitted coefficient vector."""
    beta_hat = np.asarray(beta_hat, dtype=float)
    rows, mean = stack_psi(system, beta_hat)
    wq = WeightedQuadratic(mean, sample_covariance(system, rows))
    N = system.dataset.n_total
    fit = 2.0 * N * wq.value                 # N psi' V^- psi
    dof = system.total_dim - n_groups * system.dataset.n_coef
    return float(fit - np.log(N) * dof)


def qif_start(system: StackedSystem) -> np.ndarray:
    """Stacked per-source fits used to start the path."""
    ds = system.dataset
    beta = np.zeros(system.n_beta)
    for j, k, block in ds.source_cells():
        beta[system.beta_slice(j, k)] = qif_fit_source(block, np.zeros(ds.n_coef))
    return beta


def suggest_lambda_max(system: StackedSystem, beta0: np.ndarray, pairs: PairSet) -> float:
    """Largest pairwise L1 coefficient difference of an unpenalized fit.

    Beyond this value every pair sits in the flat penalty region at the
    start, so larger grid values add nothing.
    """
    q = system.dataset.n_coef
    beta = np.asarray(beta0, dtype=float).reshape(-1, q)
    pos = pairs.positions()
    return float(np.max(np.abs(beta[pos[:, 0]] - beta[pos[:, 1]]).sum(axis=1)))


def run_path(system: StackedSystem, pairs: PairSet, lambdas, penalty_base: PenaltyConfig,
             admm: AdmmConfig, *, exclude_homogeneous: bool = False,
             beta0: np.ndarray | None = None, trace=None) -> SolutionPath:
    """Fit every penalty strength with warm starts and pick the criterion minimizer.

    lambdas must be nonnegative and ascending (duplicates allowed and
    reproduce identical records). When exclude_homogeneous is set,
    records with a single group are ineligible; if that empties the
    path, the unexcluded minimizer is returned with a warning. Criterion
    ties go to the larger penalty strength.
    """
    lambdas = [float(l) for l in lambdas]
    if not lambdas:
        raise InputError("empty penalty grid")
    if any(l < 0 for l in lambdas):
        raise InputError("penalty grid must be nonnegative")
    if any(a > b for a, b in zip(lambdas, lambdas[1:])):
        raise InputError("penalty grid must be ascending")

    start = qif_start(system) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    records: list[PathRecord] = []
    current = start
    carry_gamma = carry_mult = None
    for lam in lambdas:
        if records and records[-1].lam == lam:
            records.append(records[-1])     # repeated strength: same record
            continue
        state: SolverState = admm_solve(system, pairs, penalty_base.with_lam(lam),
                                        admm, current, gamma_init=carry_gamma,
                                        mult_init=carry_mult, trace=trace)
        partition = extract_partition(state, pairs, admm.fuse_epsilon)
        bic = gmm_bic(system, state.beta, partition.n_groups)
        records.append(PathRecord(lam=lam, beta_hat=state.beta, partition=partition,
                                  n_groups=partition.n_groups, bic=bic,
                                  converged=state.converged, iterations=state.iteration))
        current = state.beta
        carry_gamma, carry_mult = state.gamma, state.multipliers
    if not any(r.converged for r in records):
        raise PathError(
            "no converged record on the path; residuals at the last point: "
            f"lam={records[-1].lam}, iterations={records[-1].iterations}")

    eligible = [i for i, r in enumerate(records)
                if not (exclude_homogeneous and r.n_groups == 1)]
    if not eligible:
        warnings.warn("every grid point is homogeneous; ignoring the exclusion flag")
        eligible = list(range(len(records)))
    selected = eligible[0]
    for i in eligible[1:]:
        if records[i].bic <= records[selected].bic:
            selected = i
    return SolutionPath(lambdas=lambdas, records=records, selected=selected)


def write_path_table(path: SolutionPath, fobj, digest: str | None = None) -> None:
    """Tab-separated per-strength table for external plotting."""
    if digest is not None:
        fobj.write(f"# manifest_digest={digest}\n")
    fobj.write("lambda\tn_groups\tbic\tconverged\titerations\tselected\tpartition\n")
    for i, r in enumerate(path.records):
        fobj.write(f"{r.lam!r}\t{r.n_groups}\t{r.bic!r}\t{int(r.converged)}\t"
                   f"{r.iterations}\t{int(i == path.selected)}\t{r.signature}\n")
