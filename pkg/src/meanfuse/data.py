"""Containers for multi-study, multi-source regression data.

A study k observes n_k independent participants; each participant
contributes J dependent response vectors (one per source j, of length
m_j) together with an m_j x q design matrix per source. Studies are
disjoint participant sets, so data are independent across k and
dependent across j within a study.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSet
from .errors import InputError
from .links import LinkFamily


@dataclass
class SourceBlock:
    """Data for one (source j, study k) cell of the grid.

    responses: (n_k, m_j) array; covariates: (n_k, m_j, q) array with the
    participant design matrices stacked along the first axis.
    """

    study: int
    source: int
    responses: np.ndarray
    covariates: np.ndarray
    basis: BasisSet
    link: LinkFamily

    def __post_init__(self):
        self.responses = np.asarray(self.responses, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.responses.ndim != 2:
            raise InputError("responses must be (participants, positions)")
        if self.covariates.ndim != 3:
            raise InputError("covariates must be (participants, positions, coefficients)")
        n, m = self.responses.shape
        if self.covariates.shape[:2] != (n, m):
            raise InputError(
                f"covariate shape {self.covariates.shape} does not match responses {self.responses.shape}")
        if self.basis.dim != m:
            raise InputError(f"basis dimension {self.basis.dim} does not match m={m}")
        if not np.all(np.isfinite(self.covariates)):
            raise InputError("covariates must be finite")
        self.link.check_support(self.responses)

    @property
    def n_participants(self) -> int:
        return self.responses.shape[0]

    @property
    def n_positions(self) -> int:
        return self.responses.shape[1]

    @property
    def n_coef(self) -> int:
        return self.covariates.shape[2]

    @property
    def psi_dim(self) -> int:
        return self.n_coef * self.basis.size


@dataclass
class StudyDataset:
    """K studies, each holding the same J sources on its own participants.

    ``studies[k][j]`` is the SourceBlock for source j+1 in study k+1.
    Source blocks are ordered study-major: position (k, j) maps to the
    flat index k*J + j everywhere in this package.
    """

    studies: list[list[SourceBlock]]

    def __post_init__(self):
        if not self.studies or not self.studies[0]:
            raise InputError("dataset must contain at least one study with one source")
        J = len(self.studies[0])
        q = self.studies[0][0].n_coef
        link = self.studies[0][0].link
        for k, blocks in enumerate(self.studies, start=1):
            if len(blocks) != J:
                raise InputError(f"study {k} has {len(blocks)} sources, expected {J}")
            n_k = blocks[0].n_participants
            for j, b in enumerate(blocks, start=1):
                if b.study != k or b.source != j:
                    raise InputError(f"block at study {k}, source {j} carries labels ({b.study},{b.source})")
                if b.n_participants != n_k:
                    raise InputError(f"study {k} blocks disagree on participant count")
                if b.n_coef != q:
                    raise InputError("all sources must share the coefficient dimension q")
                if b.link is not link:
                    raise InputError("all sources must share the link family")
                if b.n_positions != self.studies[0][j - 1].n_positions:
                    raise InputError(f"source {j} response dimension differs across studies")

    @property
    def n_studies(self) -> int:
        return len(self.studies)

    @property
    def n_sources(self) -> int:
        return len(self.studies[0])

    @property
    def n_coef(self) -> int:
        return self.studies[0][0].n_coef

    @property
    def link(self) -> LinkFamily:
        return self.studies[0][0].link

    @property
    def study_sizes(self) -> list[int]:
        return [blocks[0].n_participants for blocks in self.studies]

    @property
    def response_dims(self) -> list[int]:
        return [b.n_positions for b in self.studies[0]]

    @property
    def n_total(self) -> int:
        return sum(self.study_sizes)

    @property
    def m_total(self) -> int:
        return sum(self.response_dims)

    def source_cells(self):
        """Yield (j, k, block) with 1-based labels in study-major order."""
        for k, blocks in enumerate(self.studies, start=1):
            for j, b in enumerate(blocks, start=1):
                yield j, k, b

    def block(self, j: int, k: int) -> SourceBlock:
        return self.studies[k - 1][j - 1]


def source_position(j: int, k: int, n_sources: int) -> int:
    """Flat 0-based position of source (j, k) in study-major order."""
    return (k - 1) * n_sources + (j - 1)


def position_label(pos: int, n_sources: int) -> tuple[int, int]:
    """Inverse of source_position: flat position -> (j, k)."""
    k, j = divmod(pos, n_sources)
    return j + 1, k + 1
