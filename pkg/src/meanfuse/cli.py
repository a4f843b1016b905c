"""Command-line entry points.

Subcommands: fit (path + selection + fused estimates), path (per-strength
table only), oracle (known-grouping fit), het (all-singleton fit), and
simulate (replicated study driver). Exit codes: 0 success, 1 input
error, 2 numerical failure, 3 gate failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, io
from .admm import AdmmConfig
from .errors import InputError, MeanFuseError, StudyError
from .meta import meta_combine
from .penalty import PenaltyConfig, build_pairs
from .selection import gmm_bic, qif_start, run_path, write_path_table
from .simulate import SimDesign, coefficient_label, evaluate_gate, run_study
from .stacking import PartitionMap, StackedSystem, gmm_estimate

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_GATE = 3


def _parse_lambda_grid(text: str) -> list:
    """Accept 'a,b,c' lists or 'start:stop:count' linear grids."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InputError(f"grid spec must be start:stop:count, got {text!r}")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise InputError("grid count must be positive")
        return [float(v) for v in np.linspace(start, stop, count)]
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _parse_groups(text: str):
    """Parse '1,1;2,1|3,1;4,1' into group member lists."""
    groups = []
    for chunk in text.split("|"):
        members = []
        for item in chunk.split(";"):
            j, k = item.split(",")
            members.append((int(j), int(k)))
        groups.append(members)
    return groups


def _add_common_fit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="long-format CSV dataset")
    p.add_argument("--family", default="gaussian",
                   help="gaussian | bernoulli | poisson")
    p.add_argument("--basis", default="ar-band",
                   help="independence | exchangeable | ar-band")
    p.add_argument("--basis-order", type=int, default=1)
    p.add_argument("--lambda-grid", default="0",
                   help="comma list or start:stop:count")
    p.add_argument("--delta", type=float, default=3.0)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--tol-primal", type=float, default=1e-5)
    p.add_argument("--tol-dual", type=float, default=1e-5)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--fuse-epsilon", type=float, default=0.0)
    p.add_argument("--ci-level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0,
                   help="recorded in the manifest; fitting is deterministic")
    p.add_argument("--exclude-homogeneous", action="store_true")
    p.add_argument("--out", required=True, help="output directory")


def _config_from_args(args) -> io.RunConfig:
    return io.RunConfig(
        family=args.family, basis=args.basis, basis_order=args.basis_order,
        lambda_grid=_parse_lambda_grid(args.lambda_grid), delta=args.delta,
        rho=args.rho, tol_primal=args.tol_primal, tol_dual=args.tol_dual,
        max_iter=args.max_iter, fuse_epsilon=args.fuse_epsilon,
        ci_level=args.ci_level, seed=args.seed,
        exclude_homogeneous=args.exclude_homogeneous)


def _prepare(args):
    config = _config_from_args(args)
    dataset = io.load_dataset(args.data, config)
    system = StackedSystem(dataset)
    os.makedirs(args.out, exist_ok=True)
    manifest = io.build_manifest(io.file_digest(args.data),
                                 {"command": args.command, **io.config_as_dict(config)})
    digest = io.write_manifest(args.out, manifest)
    return config, dataset, system, digest


def _estimate_rows(est, q):
    rows = []
    for g in range(est.partition.n_groups):
        members = ",".join(f"({j},{k})" for (j, k) in est.partition.groups[g])
        for r in range(q):
            c = g * q + r
            rows.append([g + 1, members, coefficient_label(r),
                         float(est.theta[c]), float(est.ase[c]),
                         float(est.intervals[c, 0]), float(est.intervals[c, 1])])
    return rows


_EST_HEADER = ["group", "members", "covariate", "estimate", "ase", "lower", "upper"]


def cmd_fit(args) -> int:
    config, dataset, system, digest = _prepare(args)
    pairs = build_pairs(dataset.n_sources, dataset.n_studies)
    penalty = PenaltyConfig(lam=0.0, delta=config.delta, rho=config.rho)
    admm = AdmmConfig(tol_primal=config.tol_primal, tol_dual=config.tol_dual,
                      max_iter=config.max_iter, fuse_epsilon=config.fuse_epsilon)
    start = qif_start(system)
    path = run_path(system, pairs, config.lambda_grid, penalty, admm,
                    exclude_homogeneous=config.exclude_homogeneous, beta0=start)
    with io._atomic_open(os.path.join(args.out, "solution_path.tsv")) as f:
        write_path_table(path, f, digest)

    rec = path.selected_record()
    q = dataset.n_coef
    io.write_table(os.path.join(args.out, "partition.tsv"), digest,
                   ["source", "study", "group"],
                   [[j, k, rec.partition.assignment[(j, k)]]
                    for j, k, _ in dataset.source_cells()])
    est = meta_combine(system, rec.partition, rec.beta_hat, config.ci_level)
    io.write_table(os.path.join(args.out, "fused_estimates.tsv"), digest,
                   _EST_HEADER, _estimate_rows(est, q))

    het = gmm_estimate(system, PartitionMap.singletons(
        dataset.n_sources, dataset.n_studies, q), start)
    het_rows = []
    het_ase = np.sqrt(np.diag(het.covariance))
    for pos, (j, k, _) in enumerate(dataset.source_cells()):
        g = rec.partition.assignment[(j, k)]
        for r in range(q):
            c = pos * q + r
            het_rows.append([j, k, coefficient_label(r), float(het.theta[c]),
                             float(het_ase[c]), g,
                             float(est.theta[(g - 1) * q + r])])
    io.write_table(os.path.join(args.out, "per_source_estimates.tsv"), digest,
                   ["source", "study", "covariate", "estimate", "ase",
                    "group", "fused_estimate"], het_rows)
    print(f"selected lambda {rec.lam} with {rec.n_groups} group(s); "
          f"artifacts in {args.out}")
    return EXIT_OK


def cmd_path(args) -> int:
    config, dataset, system, digest = _prepare(args)
    pairs = build_pairs(dataset.n_sources, dataset.n_studies)
    penalty = PenaltyConfig(lam=0.0, delta=config.delta, rho=config.rho)
    admm = AdmmConfig(tol_primal=config.tol_primal, tol_dual=config.tol_dual,
                      max_iter=config.max_iter, fuse_epsilon=config.fuse_epsilon)
    path = run_path(system, pairs, config.lambda_grid, penalty, admm,
                    exclude_homogeneous=config.exclude_homogeneous)
    with io._atomic_open(os.path.join(args.out, "solution_path.tsv")) as f:
        write_path_table(path, f, digest)
    print(f"{len(path.records)} path records in {args.out}")
    return EXIT_OK


def _known_partition_fit(args, partition_builder) -> int:
    config, dataset, system, digest = _prepare(args)
    q = dataset.n_coef
    partition = partition_builder(dataset, q)
    start = qif_start(system)
    theta0 = np.zeros(partition.n_groups * q)
    beta0 = start.reshape(-1, q)
    members_pos = {g: [(k - 1) * dataset.n_sources + (j - 1) for (j, k) in grp]
                   for g, grp in enumerate(partition.groups)}
    for g, pos in members_pos.items():
        theta0[g * q:(g + 1) * q] = beta0[pos].mean(axis=0)
    fit = gmm_estimate(system, partition, theta0)
    ase = np.sqrt(np.diag(fit.covariance))
    rows = []
    for g in range(partition.n_groups):
        members = ",".join(f"({j},{k})" for (j, k) in partition.groups[g])
        for r in range(q):
            c = g * q + r
            rows.append([g + 1, members, coefficient_label(r),
                         float(fit.theta[c]), float(ase[c])])
    io.write_table(os.path.join(args.out, "estimates.tsv"), digest,
                   ["group", "members", "covariate", "estimate", "ase"], rows)
    bic = gmm_bic(system, partition.expand(fit.theta), partition.n_groups)
    io.write_table(os.path.join(args.out, "fit_summary.tsv"), digest,
                   ["n_groups", "objective", "bic", "iterations"],
                   [[partition.n_groups, fit.objective, bic, fit.iterations]])
    print(f"fit with {partition.n_groups} group(s); artifacts in {args.out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    groups = _parse_groups(args.groups)
    return _known_partition_fit(
        args, lambda ds, q: PartitionMap.from_groups(groups, ds.n_sources,
                                                     ds.n_studies, q))


def cmd_het(args) -> int:
    return _known_partition_fit(
        args, lambda ds, q: PartitionMap.singletons(ds.n_sources, ds.n_studies, q))


def cmd_simulate(args) -> int:
    design = SimDesign.load(args.design)
    os.makedirs(args.out, exist_ok=True)
    manifest = io.build_manifest(io.file_digest(args.design),
                                 {"command": "simulate", "design": design.name})
    digest = io.write_manifest(args.out, manifest)
    result = run_study(design, workers=args.workers)

    io.write_table(os.path.join(args.out, "metrics.tsv"), digest,
                   ["setting", "group", "covariate", "rmse", "ese", "ase",
                    "bias", "cp"],
                   [[m["setting"], m["group"], m["covariate"], m["rmse"],
                     m["ese"], m["ase"], m["bias"], m["cp"]]
                    for m in result.metrics])
    rep_rows = []
    for r in result.replicates:
        rep_rows.append([r["replicate"], int(r["ok"]),
                         r.get("selected_lambda", ""), r.get("n_groups", ""),
                         int(r.get("recovered", False)), r.get("signature", ""),
                         json.dumps(r.get("theta", [])),
                         r.get("error", "")])
    io.write_table(os.path.join(args.out, "replicates.tsv"), digest,
                   ["replicate", "ok", "selected_lambda", "n_groups",
                    "recovered", "partition", "theta", "error"], rep_rows)
    io.atomic_write_text(os.path.join(args.out, "summary.json"),
                         json.dumps({"manifest_digest": digest, **result.summary},
                                    indent=2, sort_keys=True) + "\n")
    failures = evaluate_gate(result)
    for line in failures:
        print(f"gate failure: {line}", file=sys.stderr)
    if args.gate and failures:
        return EXIT_GATE
    print(f"recovery {result.summary['recovery_rate']:.3f} over "
          f"{result.summary['n_replicates']} replicates; artifacts in {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meanfuse",
        description="Learn shared mean structure across dependent data sources.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="full pipeline with fused estimates")
    _add_common_fit_args(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_path = sub.add_parser("path", help="solution-path table only")
    _add_common_fit_args(p_path)
    p_path.set_defaults(func=cmd_path)

    p_oracle = sub.add_parser("oracle", help="GMM fit with a known grouping")
    _add_common_fit_args(p_oracle)
    p_oracle.add_argument("--groups", required=True,
                          help="grouping as '1,1;2,1|3,1' (j,k pairs)")
    p_oracle.set_defaults(func=cmd_oracle)

    p_het = sub.add_parser("het", help="all-singleton GMM fit")
    _add_common_fit_args(p_het)
    p_het.set_defaults(func=cmd_het)

    p_sim = sub.add_parser("simulate", help="replicated simulation study")
    p_sim.add_argument("--design", required=True, help="design JSON file")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--gate", action="store_true",
                       help="exit 3 when gate thresholds fail")
    p_sim.add_argument("--workers", type=int, default=None,
                       help="replicate workers (default: MEANFUSE_THREADS or 1)")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (InputError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StudyError as exc:
        print(f"study failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MeanFuseError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
