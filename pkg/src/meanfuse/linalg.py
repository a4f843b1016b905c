"""Small linear-algebra helpers shared by the solvers."""

from __future__ import annotations

import numpy as np

from .errors import InputError

# relative eigenvalue cutoff for generalized inverses of PSD matrices
EIG_CUTOFF = 1e-10
# asymmetry tolerance accepted before a weight matrix is rejected
SYMMETRY_TOL = 1e-8


class SymmetricPseudoInverse:
    """Eigendecomposition-backed generalized inverse of a PSD matrix.

    Eigenvalues below EIG_CUTOFF times the largest eigenvalue are treated
    as zero, so rank-deficient weights reduce the quadratic form to the
    positive-eigenvalue subspace.
    """

    def __init__(self, mat: np.ndarray, cutoff: float = EIG_CUTOFF):
        mat = np.asarray(mat, dtype=float)
        asym = np.max(np.abs(mat - mat.T)) if mat.size else 0.0
        if asym > SYMMETRY_TOL:
            raise InputError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
        mat = 0.5 * (mat + mat.T)
        vals, vecs = np.linalg.eigh(mat)
        top = float(vals[-1]) if vals.size else 0.0
        keep = vals > max(top, 0.0) * cutoff
        self.eigenvalues = vals
        self._vals = vals[keep]
        self._vecs = vecs[:, keep]
        self.rank = int(np.count_nonzero(keep))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Generalized-inverse product, for vectors or matrices."""
        if self.rank == 0:
            return np.zeros_like(np.asarray(x, dtype=float))
        proj = self._vecs.T @ x
        if proj.ndim == 1:
            return self._vecs @ (proj / self._vals)
        return self._vecs @ (proj / self._vals[:, None])

    def quadratic(self, x: np.ndarray) -> float:
        """x' A^- x, restricted to the retained eigenspace."""
        if self.rank == 0:
            return 0.0
        proj = self._vecs.T @ x
        return float(np.sum(proj * proj / self._vals))


def sym_pseudo_inverse(mat: np.ndarray, cutoff: float = EIG_CUTOFF) -> SymmetricPseudoInverse:
    return SymmetricPseudoInverse(mat, cutoff)


def solve_spd_with_ridge(H: np.ndarray, g: np.ndarray,
                         *, ridge0: float = 1e-8, ridge_max: float = 1e-2) -> np.ndarray:
    """Solve H x = g for symmetric positive (semi)definite H.

    A failed or non-finite solve is retried with an increasing ridge on
    the diagonal, doubling from ridge0 up to ridge_max; a still-singular
    system raises LinAlgError.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    scale = float(np.max(np.abs(np.diag(H)))) if H.size else 1.0
    if scale <= 0.0 or not np.isfinite(scale):
        scale = 1.0
    try:
        x = np.linalg.solve(H, g)
        if np.all(np.isfinite(x)):
            return x
    except np.linalg.LinAlgError:
        pass
    ridge = ridge0
    eye = np.eye(H.shape[0])
    while ridge <= ridge_max:
        try:
            x = np.linalg.solve(H + ridge * scale * eye, g)
            if np.all(np.isfinite(x)):
                return x
        except np.linalg.LinAlgError:
            pass
        ridge *= 2.0
    raise np.linalg.LinAlgError(
        f"linear system remained singular after ridge damping up to {ridge_max:g}")


def sup_norm(x: np.ndarray) -> float:
    x = np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0
