"""Dataset ingestion, result artifacts, and the run manifest.

Datasets travel as long-format comma-delimited text with one row per
(study, source, participant, position) and covariate columns x1..xq.
Artifacts are tab-separated text files whose first line embeds the run
manifest digest; the manifest itself records the input digest, the
configuration, and library versions, so any artifact can be traced back
to the exact run that produced it. All files are written atomically.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy

from . import __version__
from .basis import make_basis
from .data import SourceBlock, StudyDataset
from .errors import ConfigError, InputError, ParseError
from .links import LinkFamily

_REQUIRED_COLUMNS = ("study", "source", "participant", "position", "y")


@dataclass
class RunConfig:
    """Options shared by the fitting commands."""

    family: str = "gaussian"
    basis: str = "ar-band"
    basis_order: int = 1
    lambda_grid: list = field(default_factory=lambda: [0.0])
    delta: float = 3.0
    rho: float = 1.0
    tol_primal: float = 1e-5
    tol_dual: float = 1e-5
    max_iter: int = 1000
    fuse_epsilon: float = 0.0
    ci_level: float = 0.95
    seed: int = 0
    exclude_homogeneous: bool = False

    def __post_init__(self):
        if self.delta * self.rho <= 1.0:
            raise ConfigError("need delta > 1/rho")
        lam = list(map(float, self.lambda_grid))
        if any(l < 0 for l in lam):
            raise ConfigError("penalty grid must be nonnegative")
        if lam != sorted(lam):
            raise ConfigError("penalty grid must be ascending")
        self.lambda_grid = lam
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError("ci_level must lie in (0, 1)")


def load_dataset(path, config: RunConfig) -> StudyDataset:
    """Parse and validate a long-format dataset file.

    Errors name the offending line(s): missing cells, duplicate
    (study, participant, source, position) keys, incomplete position
    runs, participants in two studies, and responses outside the family
    support all raise ParseError.
    """
    link = LinkFamily.parse(config.family)
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in _REQUIRED_COLUMNS:
            if col not in header:
                raise ParseError(f"{path}: missing required column {col!r}")
        x_cols = [h for h in header if h.startswith("x")]
        expected_x = [f"x{i}" for i in range(1, len(x_cols) + 1)]
        if x_cols != expected_x:
            raise ParseError(f"{path}: covariate columns must be x1..xq, got {x_cols}")
        if not x_cols:
            raise ParseError(f"{path}: at least one covariate column is required")
        idx = {h: header.index(h) for h in header}
        q = len(x_cols)

        cells = {}       # (k, participant, j, position) -> (line, y, x vector)
        study_of = {}    # participant -> (study, line first seen)
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}")
            try:
                k = int(row[idx["study"]])
                j = int(row[idx["source"]])
                pid = int(row[idx["participant"]])
                pos = int(row[idx["position"]])
                y = float(row[idx["y"]])
                x = [float(row[idx[c]]) for c in x_cols]
            except ValueError as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from None
            key = (k, pid, j, pos)
            if key in cells:
                raise ParseError(
                    f"{path}: duplicate key study={k} participant={pid} source={j} "
                    f"position={pos} at lines {cells[key][0]} and {line_no}")
            try:
                link.check_support(np.array([y]))
            except InputError as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from None
            if pid in study_of and study_of[pid][0] != k:
                raise ParseError(
                    f"{path}:{line_no}: participant {pid} already in study "
                    f"{study_of[pid][0]} (line {study_of[pid][1]})")
            study_of.setdefault(pid, (k, line_no))
            cells[key] = (line_no, y, x)
    if not cells:
        raise ParseError(f"{path}: no data rows")

    studies = sorted({k for (k, _, _, _) in cells})
    if studies != list(range(1, len(studies) + 1)):
        raise ParseError(f"{path}: study labels must be 1..K, got {studies}")
    sources = sorted({j for (_, _, j, _) in cells})
    if sources != list(range(1, len(sources) + 1)):
        raise ParseError(f"{path}: source labels must be 1..J, got {sources}")

    m_of = {}
    for j in sources:
        m_of[j] = max(pos for (_, _, jj, pos) in cells if jj == j)

    participants = {k: sorted(p for p, (kk, _) in study_of.items() if kk == k)
                    for k in studies}
    study_blocks = []
    for k in studies:
        pids = participants[k]
        if not pids:
            raise ParseError(f"{path}: study {k} has no participants")
        blocks = []
        for j in sources:
            m = m_of[j]
            y = np.empty((len(pids), m))
            X = np.empty((len(pids), m, q))
            for i, pid in enumerate(pids):
                for pos in range(1, m + 1):
                    entry = cells.get((k, pid, j, pos))
                    if entry is None:
                        raise ParseError(
                            f"{path}: participant {pid} (study {k}) is missing source "
                            f"{j} position {pos}; positions 1..{m} must be complete")
                    _, y_val, x_val = entry
                    y[i, pos - 1] = y_val
                    X[i, pos - 1] = x_val
            blocks.append(SourceBlock(
                study=k, source=j, responses=y, covariates=X,
                basis=make_basis(config.basis, m, config.basis_order), link=link))
        study_blocks.append(blocks)
    return StudyDataset(study_blocks)


def write_dataset(dataset: StudyDataset, path) -> None:
    """Long-format inverse of load_dataset; round-trips exactly."""
    q = dataset.n_coef
    header = ["study", "source", "participant", "position", "y"] + [
        f"x{i}" for i in range(1, q + 1)]
    pid0 = 0
    with _atomic_open(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for k, blocks in enumerate(dataset.studies, start=1):
            n_k = blocks[0].n_participants
            for i in range(n_k):
                pid = pid0 + i + 1
                for j, b in enumerate(blocks, start=1):
                    for pos in range(b.n_positions):
                        row = [k, j, pid, pos + 1, repr(float(b.responses[i, pos]))]
                        row += [repr(float(v)) for v in b.covariates[i, pos]]
                        writer.writerow(row)
            pid0 += n_k
    return None


class _atomic_open:
    """Write-then-rename file handle; partial writes never land."""

    def __init__(self, path):
        self.path = os.fspath(path)
        self.tmp = None
        self.fobj = None

    def __enter__(self):
        d = os.path.dirname(self.path) or "."
        fd, self.tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
        self.fobj = os.fdopen(fd, "w", encoding="utf-8", newline="")
        return self.fobj

    def __exit__(self, exc_type, exc, tb):
        self.fobj.close()
        if exc_type is None:
            os.replace(self.tmp, self.path)
        else:
            os.unlink(self.tmp)
        return False


def atomic_write_text(path, text: str) -> None:
    with _atomic_open(path) as f:
        f.write(text)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(input_digest: str, config: dict) -> dict:
    return {
        "input_digest": input_digest,
        "config": config,
        "versions": {
            "meanfuse": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }


def manifest_digest(manifest: dict) -> str:
    body = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def write_manifest(outdir, manifest: dict) -> str:
    digest = manifest_digest(manifest)
    body = dict(manifest)
    body["manifest_digest"] = digest
    atomic_write_text(os.path.join(outdir, "manifest.json"),
                      json.dumps(body, indent=2, sort_keys=True) + "\n")
    return digest


def write_table(path, digest: str, header: list, rows: list) -> None:
    """Tab-separated artifact with the manifest digest on the first line."""
    lines = [f"# manifest_digest={digest}", "\t".join(header)]
    for row in rows:
        lines.append("\t".join(_fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def read_artifact_digest(path) -> str:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    prefix = "# manifest_digest="
    if not first.startswith(prefix):
        raise InputError(f"{path}: missing manifest digest header")
    return first[len(prefix):]


def verify_run_dir(outdir) -> None:
    """Re-derive the manifest digest and check every artifact header."""
    man_path = os.path.join(outdir, "manifest.json")
    with open(man_path, "r", encoding="utf-8") as f:
        body = json.load(f)
    stored = body.pop("manifest_digest", None)
    recomputed = manifest_digest(body)
    if stored != recomputed:
        raise InputError(f"{man_path}: stored digest {stored} != recomputed {recomputed}")
    for name in sorted(os.listdir(outdir)):
        if not (name.endswith(".tsv") or name.endswith(".txt")):
            continue
        digest = read_artifact_digest(os.path.join(outdir, name))
        if digest != recomputed:
            raise InputError(f"{name}: artifact digest {digest} != manifest {recomputed}")


def config_as_dict(config: RunConfig) -> dict:
    return asdict(config)
