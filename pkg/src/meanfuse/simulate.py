"""Correlated-outcome generators and the replicated study driver.

Responses are produced from block-correlated Gaussian latents: per
source the latent carries an AR(1) or exchangeable correlation, with
exact zero correlation across source blocks. Binary outcomes threshold
the latent at the normal quantile of the target mean; counts push the
latent through the standard normal CDF and then the Poisson quantile
function, so marginals are exact. Covariates are an intercept plus
independent Gaussian fields with the same per-source correlation.

All draws derive from counter-based substreams of (seed, replicate,
purpose), so every replicate is reproducible in isolation.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm, poisson

from .admm import AdmmConfig
from .basis import make_basis
from .data import SourceBlock, StudyDataset
from .errors import InputError, StudyError
from .links import LinkFamily
from .meta import meta_combine
from .penalty import PenaltyConfig, build_pairs
from .selection import qif_start, run_path
from .stacking import PartitionMap, StackedSystem, gmm_estimate

_PURPOSE_LATENT = 0
_PURPOSE_COVARIATE = 1

ORACLE_REL_TOL = 0.1
MAX_FAILURE_FRACTION = 0.2


@dataclass
class SimDesign:
    """Complete description of one replicated simulation study."""

    name: str
    n_studies: int
    n_sources: int
    study_sizes: list
    response_dims: list
    family: str
    groups: list
    theta: list
    lambda_grid: list
    n_replicates: int
    seed: int
    correlation: str = "ar1"
    correlation_param: object = 0.5
    n_covariate_fields: int = 2
    basis: str = "ar-band"
    basis_order: int = 1
    delta: float = 3.0
    rho: float = 1.0
    tol_primal: float = 1e-5
    tol_dual: float = 1e-5
    max_iter: int = 500
    fuse_epsilon: float = 0.0
    ci_level: float = 0.95
    exclude_homogeneous: bool = False
    compare_het: bool = False
    compare_oracle: bool = False
    gate: dict | None = None

    def __post_init__(self):
        if len(self.study_sizes) != self.n_studies:
            raise InputError("study_sizes length must equal n_studies")
        if len(self.response_dims) != self.n_sources:
            raise InputError("response_dims length must equal n_sources")
        self.groups = [[(int(j), int(k)) for (j, k) in g] for g in self.groups]
        self.theta = [list(map(float, t)) for t in self.theta]
        if len(self.theta) != len(self.groups):
            raise InputError("one theta vector per group is required")
        q = self.n_coef
        if any(len(t) != q for t in self.theta):
            raise InputError(f"theta vectors must have length q={q}")
        # canonical partition with theta rows aligned to canonical group order
        part = PartitionMap.from_groups(self.groups, self.n_sources, self.n_studies, q)
        by_members = {frozenset(g): t for g, t in zip(self.groups, self.theta)}
        self._partition = part
        self._theta_canonical = np.array(
            [by_members[frozenset(g)] for g in part.groups])

    @property
    def n_coef(self) -> int:
        return 1 + self.n_covariate_fields

    @property
    def true_partition(self) -> PartitionMap:
        return self._partition

    @property
    def theta_true(self) -> np.ndarray:
        """(G, q) array in canonical group order."""
        return self._theta_canonical

    def beta_true(self) -> np.ndarray:
        """Stacked per-source true coefficients."""
        return self._partition.expand(self._theta_canonical.ravel())

    def correlation_params(self) -> list:
        p = self.correlation_param
        if np.isscalar(p):
            return [float(p)] * self.n_sources
        p = list(map(float, p))
        if len(p) != self.n_sources:
            raise InputError("per-source correlation spec must have one entry per source")
        return p

    def penalty_base(self) -> PenaltyConfig:
        return PenaltyConfig(lam=0.0, delta=self.delta, rho=self.rho)

    def admm_config(self) -> AdmmConfig:
        return AdmmConfig(tol_primal=self.tol_primal, tol_dual=self.tol_dual,
                          max_iter=self.max_iter, fuse_epsilon=self.fuse_epsilon)

    def to_json(self) -> str:
        body = asdict(self)
        return json.dumps(body, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SimDesign":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "SimDesign":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(f.read())


def _rng(seed: int, replicate: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(replicate, purpose)))


def ar1_correlation(m: int, r: float) -> np.ndarray:
    if not -1.0 < r < 1.0:
        raise InputError(f"AR(1) coefficient must lie in (-1, 1), got {r}")
    idx = np.arange(m)
    return r ** np.abs(idx[:, None] - idx[None, :])


def exchangeable_correlation(m: int, r: float) -> np.ndarray:
    if not 0.0 <= r < 1.0:
        raise InputError(f"exchangeable correlation must lie in [0, 1), got {r}")
    C = np.full((m, m), r)
    np.fill_diagonal(C, 1.0)
    return C


def _source_cholesky(design: SimDesign) -> list:
    kind = design.correlation.lower()
    params = design.correlation_params()
    out = []
    for m, r in zip(design.response_dims, params):
        if kind in ("ar1", "ar(1)", "ar"):
            C = ar1_correlation(m, r)
        elif kind == "exchangeable":
            C = exchangeable_correlation(m, r)
        else:
            raise InputError(f"unknown correlation kind {design.correlation!r}")
        try:
            out.append(np.linalg.cholesky(C))
        except np.linalg.LinAlgError:
            raise InputError("requested latent correlation is not positive definite") from None
    return out


def gen_gaussian_latent(design: SimDesign, replicate: int) -> list:
    """Per-study latent draws, one (n_k, M) array per study.

    Columns are source-major: source j occupies its m_j slice. Blocks are
    drawn source by source (study outer, source inner), which makes the
    cross-block latent correlation exactly zero.
    """
    chols = _source_cholesky(design)
    rng = _rng(design.seed, replicate, _PURPOSE_LATENT)
    out = []
    for n_k in design.study_sizes:
        blocks = [rng.standard_normal((n_k, m)) @ L.T
                  for m, L in zip(design.response_dims, chols)]
        out.append(np.concatenate(blocks, axis=1))
    return out


def gen_covariates(design: SimDesign, replicate: int) -> list:
    """Design tensors [study][source] -> (n_k, m_j, q).

    Column 0 is the intercept; the remaining columns are independent
    unit-variance Gaussian fields sharing the latent's per-source
    correlation. Draw order is study, then source, then field.
    """
    chols = _source_cholesky(design)
    rng = _rng(design.seed, replicate, _PURPOSE_COVARIATE)
    q = design.n_coef
    out = []
    for n_k in design.study_sizes:
        per_source = []
        for m, L in zip(design.response_dims, chols):
            X = np.ones((n_k, m, q))
            for f in range(1, q):
                X[:, :, f] = rng.standard_normal((n_k, m)) @ L.T
            per_source.append(X)
        out.append(per_source)
    return out


def gen_bernoulli(means: np.ndarray, latent: np.ndarray) -> np.ndarray:
    """Threshold construction: y = 1 iff z <= Phi^{-1}(mu), so E y = mu."""
    return (latent <= norm.ppf(means)).astype(float)


def gen_poisson(means: np.ndarray, latent: np.ndarray) -> np.ndarray:
    """Copula construction: y = F_Pois^{-1}(Phi(z); mu); marginals are exact."""
    return poisson.ppf(norm.cdf(latent), means)


def gen_gaussian_response(means: np.ndarray, latent: np.ndarray) -> np.ndarray:
    """Additive construction: unit-variance correlated Gaussian errors."""
    return means + latent


def build_dataset(design: SimDesign, replicate: int) -> StudyDataset:
    """One replicate's dataset, fully determined by (seed, replicate)."""
    link = LinkFamily.parse(design.family)
    latent = gen_gaussian_latent(design, replicate)
    covs = gen_covariates(design, replicate)
    beta = design.beta_true().reshape(-1, design.n_coef)
    col_offsets = np.concatenate([[0], np.cumsum(design.response_dims)])
    studies = []
    for k in range(1, design.n_studies + 1):
        blocks = []
        for j in range(1, design.n_sources + 1):
            X = covs[k - 1][j - 1]
            eta = X @ beta[(k - 1) * design.n_sources + (j - 1)]
            mu = link.mean(eta)
            z = latent[k - 1][:, col_offsets[j - 1]:col_offsets[j]]
            if link is LinkFamily.BERNOULLI:
                y = gen_bernoulli(mu, z)
            elif link is LinkFamily.POISSON:
                y = gen_poisson(mu, z)
            else:
                y = gen_gaussian_response(mu, z)
            blocks.append(SourceBlock(
                study=k, source=j, responses=y, covariates=X,
                basis=make_basis(design.basis, design.response_dims[j - 1],
                                 design.basis_order),
                link=link))
        studies.append(blocks)
    return StudyDataset(studies)


def run_replicate(design: SimDesign, replicate: int) -> dict:
    """Generate, fit the path, select, combine; never raises on fit failure."""
    out = {"replicate": replicate, "ok": False}
    try:
        ds = build_dataset(design, replicate)
        system = StackedSystem(ds)
        pairs = build_pairs(design.n_sources, design.n_studies)
        start = qif_start(system)
        path = run_path(system, pairs, design.lambda_grid, design.penalty_base(),
                        design.admm_config(),
                        exclude_homogeneous=design.exclude_homogeneous,
                        beta0=start)
        rec = path.selected_record()
        est = meta_combine(system, rec.partition, rec.beta_hat, design.ci_level)
        recovered = rec.partition.same_partition(design.true_partition)
        out.update({
            "ok": True,
            "selected_lambda": rec.lam,
            "n_groups": rec.n_groups,
            "converged": rec.converged,
            "recovered": bool(recovered),
            "signature": rec.partition.signature(),
            "theta": est.theta.tolist(),
            "ase": est.ase.tolist(),
            "ci_lower": est.intervals[:, 0].tolist(),
            "ci_upper": est.intervals[:, 1].tolist(),
        })
        if recovered:
            truth = design.theta_true.ravel()
            out["ci_hit"] = [bool(lo <= t <= hi) for lo, t, hi in
                             zip(est.intervals[:, 0], truth, est.intervals[:, 1])]
        if design.compare_het:
            het = gmm_estimate(system, PartitionMap.singletons(
                design.n_sources, design.n_studies, design.n_coef), start)
            out["het_theta"] = het.theta.tolist()
        if design.compare_oracle:
            oracle_start = _group_average(start, design.true_partition)
            oracle = gmm_estimate(system, design.true_partition, oracle_start)
            out["oracle_theta"] = oracle.theta.tolist()
            if recovered:
                denom = float(np.linalg.norm(oracle.theta))
                out["oracle_rel_diff"] = (
                    float(np.linalg.norm(est.theta - oracle.theta) / denom)
                    if denom > 0 else float("inf"))
    except Exception as exc:  # replicate failures are recorded, not fatal
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def _group_average(beta: np.ndarray, partition: PartitionMap) -> np.ndarray:
    q = partition.n_coef
    mat = beta.reshape(-1, q)
    J = partition.n_sources
    rows = [mat[[(k - 1) * J + (j - 1) for (j, k) in g]].mean(axis=0)
            for g in partition.groups]
    return np.concatenate(rows)


def coefficient_label(r: int) -> str:
    return "intercept" if r == 0 else f"x{r}"


@dataclass
class StudyResult:
    design: SimDesign
    metrics: list
    summary: dict
    replicates: list = field(repr=False)


def _worker(args) -> dict:
    design_json, replicate = args
    return run_replicate(SimDesign.from_json(design_json), replicate)


def run_study(design: SimDesign, workers: int | None = None) -> StudyResult:
    """Run every replicate, aggregate the replication metrics.

    Per-coefficient metrics (RMSE, ESE, ASE, BIAS, CP) are computed over
    the replicates whose selected partition equals the truth; the
    recovery rate counts all successful replicates. More than 20%
    replicate failures aborts the study.
    """
    if workers is None:
        workers = int(os.environ.get("MEANFUSE_THREADS", "1"))
    reps = list(range(design.n_replicates))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_worker, [(design.to_json(), r) for r in reps]))
    else:
        records = [run_replicate(design, r) for r in reps]

    ok = [r for r in records if r["ok"]]
    n_failed = len(records) - len(ok)
    if n_failed > MAX_FAILURE_FRACTION * len(records):
        detail = next((r["error"] for r in records if not r["ok"]), "")
        raise StudyError(f"{n_failed}/{len(records)} replicates failed; first error: {detail}")

    q = design.n_coef
    G = design.true_partition.n_groups
    truth = design.theta_true.ravel()
    recovered = [r for r in ok if r["recovered"]]

    summary = {
        "setting": design.name,
        "n_replicates": design.n_replicates,
        "n_failed": n_failed,
        "recovery_rate": (sum(r["recovered"] for r in ok) / len(ok)) if ok else 0.0,
        "mean_n_groups": float(np.mean([r["n_groups"] for r in ok])) if ok else float("nan"),
        "n_recovered": len(recovered),
    }

    metrics = []
    if len(recovered) >= 2:
        theta = np.array([r["theta"] for r in recovered])          # (R, Gq)
        ase = np.array([r["ase"] for r in recovered])
        hits = np.array([r["ci_hit"] for r in recovered], dtype=float)
        err = theta - truth[None, :]
        rmse = np.sqrt(np.mean(err ** 2, axis=0))
        ese = np.std(theta, axis=0, ddof=1)
        bias = np.mean(err, axis=0)
        cp = hits.mean(axis=0)
        mean_ase = ase.mean(axis=0)
        for g in range(G):
            for r in range(q):
                c = g * q + r
                metrics.append({
                    "setting": design.name, "group": g + 1,
                    "covariate": coefficient_label(r),
                    "rmse": float(rmse[c]), "ese": float(ese[c]),
                    "ase": float(mean_ase[c]), "bias": float(bias[c]),
                    "cp": float(cp[c]),
                })
        if design.compare_het:
            beta_true = design.beta_true().reshape(-1, q)
            het = np.array([r["het_theta"] for r in ok]).reshape(len(ok), -1, q)
            het_err = het - beta_true[None, :, :]
            het_rmse_src = np.sqrt(np.mean(het_err ** 2, axis=0))   # (JK, q)
            het_rmse = het_rmse_src.mean(axis=0)                    # per coefficient
            fused_rmse = rmse.reshape(G, q).mean(axis=0)
            summary["het_rmse"] = het_rmse.tolist()
            summary["fused_rmse"] = fused_rmse.tolist()
            summary["rmse_ratio_het"] = (het_rmse / fused_rmse).tolist()
        if design.compare_oracle:
            diffs = [r["oracle_rel_diff"] for r in recovered if "oracle_rel_diff" in r]
            if diffs:
                summary["oracle_agreement"] = float(
                    np.mean([d <= ORACLE_REL_TOL for d in diffs]))
                summary["oracle_rel_diff_max"] = float(np.max(diffs))
    return StudyResult(design=design, metrics=metrics, summary=summary,
                       replicates=records)


def evaluate_gate(result: StudyResult) -> list:
    """Check gate thresholds from the design; returns failure messages."""
    gate = result.design.gate or {}
    failures = []
    s = result.summary
    if "min_recovery" in gate and s["recovery_rate"] < gate["min_recovery"]:
        failures.append(f"recovery {s['recovery_rate']:.3f} < {gate['min_recovery']}")
    if "cp_range" in gate:
        lo, hi = gate["cp_range"]
        for row in result.metrics:
            if not lo <= row["cp"] <= hi:
                failures.append(
                    f"cp {row['cp']:.3f} outside [{lo}, {hi}] "
                    f"(group {row['group']}, {row['covariate']})")
    if "max_bias_ese_ratio" in gate:
        cap = gate["max_bias_ese_ratio"]
        for row in result.metrics:
            if abs(row["bias"]) > cap * row["ese"]:
                failures.append(
                    f"|bias| {abs(row['bias']):.4g} > {cap} * ese {row['ese']:.4g} "
                    f"(group {row['group']}, {row['covariate']})")
    if "min_het_rmse_ratio" in gate:
        ratios = s.get("rmse_ratio_het")
        if ratios is None:
            failures.append("gate requires compare_het=true")
        else:
            for r, ratio in enumerate(ratios):
                if ratio < gate["min_het_rmse_ratio"]:
                    failures.append(
                        f"het/fused rmse ratio {ratio:.2f} < "
                        f"{gate['min_het_rmse_ratio']} ({coefficient_label(r)})")
    if "min_oracle_agreement" in gate:
        agree = s.get("oracle_agreement")
        if agree is None:
            failures.append("gate requires compare_oracle=true")
        elif agree < gate["min_oracle_agreement"]:
            failures.append(
                f"oracle agreement {agree:.3f} < {gate['min_oracle_agreement']}")
    return failures
