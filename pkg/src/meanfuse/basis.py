"""Zero/one basis matrices used to expand inverse working correlations.

Supported structures: independence (identity only), exchangeable
(identity plus the all-ones off-diagonal matrix), and banded sets whose
matrix r+1 carries ones exactly on the +/- r off-diagonals, matching the
banded inverse of an AR(d) correlation matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

INDEPENDENCE = "independence"
EXCHANGEABLE = "exchangeable"
AR_BAND = "ar-band"

KINDS = (INDEPENDENCE, EXCHANGEABLE, AR_BAND)


@dataclass(frozen=True)
class BasisSet:
    kind: str
    matrices: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        if not self.matrices:
            raise InputError("basis set needs at least one matrix")
        m = self.matrices[0].shape[0]
        for B in self.matrices:
            if B.shape != (m, m):
                raise InputError("basis matrices must be square with a common dimension")
            if not np.all((B == 0) | (B == 1)):
                raise InputError("basis matrices must have 0/1 entries")
        if not np.array_equal(self.matrices[0], np.eye(m)):
            raise InputError("first basis matrix must be the identity")

    @property
    def size(self) -> int:
        return len(self.matrices)

    @property
    def dim(self) -> int:
        return self.matrices[0].shape[0]


def independence_basis(m: int) -> BasisSet:
    return BasisSet(INDEPENDENCE, (np.eye(m),))


def exchangeable_basis(m: int) -> BasisSet:
    if m < 2:
        raise InputError("exchangeable basis needs dimension >= 2")
    return BasisSet(EXCHANGEABLE, (np.eye(m), np.ones((m, m)) - np.eye(m)))


def ar_band_basis(m: int, order: int = 1) -> BasisSet:
    if order < 1:
        raise InputError("band order must be >= 1")
    if order > m - 1:
        raise InputError(f"band order {order} too large for dimension {m}")
    mats = [np.eye(m)]
    for r in range(1, order + 1):
        B = np.zeros((m, m))
        idx = np.arange(m - r)
        B[idx, idx + r] = 1.0
        B[idx + r, idx] = 1.0
        mats.append(B)
    return BasisSet(AR_BAND, tuple(mats))


def make_basis(kind: str, m: int, order: int = 1) -> BasisSet:
    kind = str(kind).strip().lower()
    if kind == INDEPENDENCE:
        return independence_basis(m)
    if kind == EXCHANGEABLE:
        return exchangeable_basis(m)
    if kind in (AR_BAND, "ar1", "ar"):
        return ar_band_basis(m, order)
    raise InputError(f"unknown basis kind {kind!r}; expected one of {KINDS}")
