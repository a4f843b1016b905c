"""Per-source estimating functions with analytic derivatives.

For one source block, each participant contributes the stacked vector
with component t equal to

    mudot' D^{-1/2} B_t D^{-1/2} (y - mu),

where mudot = diag(h'(X beta)) X and D = diag(v(mu)). The sensitivity is
the exact negative derivative of the participant average, including the
terms coming from the beta-dependence of mudot and D.
"""

from __future__ import annotations

import numpy as np

from .data import SourceBlock
from .errors import ConvergenceError, SingularVarianceError
from .linalg import solve_spd_with_ridge, sym_pseudo_inverse
from .links import LinkFamily

QIF_GRAD_TOL = 1e-8
QIF_MAX_ITER = 200


def _link_terms(block: SourceBlock, beta: np.ndarray):
    """Shared per-participant quantities for psi and its derivative."""
    X = block.covariates                      # (n, m, q)
    eta = X @ beta                            # (n, m)
    link = block.link
    mu = link.mean(eta)
    if not np.all(np.isfinite(mu)):
        i, r = np.argwhere(~np.isfinite(mu))[0]
        raise SingularVarianceError(
            f"non-finite mean at participant {i + 1}, coordinate {r + 1} "
            f"(study {block.study}, source {block.source})")
    mu_c = link.clip_mean(mu)
    v = link.variance(mu_c)
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        i, r = np.argwhere((v <= 0) | ~np.isfinite(v))[0]
        raise SingularVarianceError(
            f"degenerate variance at participant {i + 1}, coordinate {r + 1} "
            f"(study {block.study}, source {block.source})")
    w = 1.0 / np.sqrt(v)                      # D^{-1/2} diagonal
    slope = link.mean_slope_from(mu)          # h', canonical links allow this
    resid = block.responses - mu
    return X, eta, mu_c, v, w, slope, resid


def psi_source(block: SourceBlock, beta: np.ndarray):
    """Per-participant stacked estimating vectors and their mean.

    Returns (rows, mean) where rows has shape (n, q * s) with the s basis
    components concatenated, and mean is the participant average.
    """
    beta = np.asarray(beta, dtype=float)
    X, _, _, _, w, slope, resid = _link_terms(block, beta)
    a = w * slope                             # rows of D^{-1/2} mudot
    u = w * resid                             # D^{-1/2} residual
    n, _, q = X.shape
    rows = np.empty((n, block.psi_dim))
    for t, B in enumerate(block.basis.matrices):
        bu = a * (u @ B)                      # B symmetric
        rows[:, t * q:(t + 1) * q] = (X * bu[:, :, None]).sum(axis=1)
    return rows, rows.mean(axis=0)


def psi_source_mean(block: SourceBlock, beta: np.ndarray) -> np.ndarray:
    """Participant average of the stacked estimating vector (no rows kept)."""
    beta = np.asarray(beta, dtype=float)
    X, _, _, _, w, slope, resid = _link_terms(block, beta)
    a = w * slope
    u = w * resid
    n, m, q = X.shape
    Xf = X.reshape(n * m, q)
    out = np.empty(block.psi_dim)
    for t, B in enumerate(block.basis.matrices):
        bu = a * (u @ B)
        out[t * q:(t + 1) * q] = bu.reshape(-1) @ Xf / n
    return out


def moments_with_sensitivity(block: SourceBlock, beta: np.ndarray):
    """(rows, mean, sensitivity) in one pass, sharing the link terms.

    Equivalent to psi_source plus sensitivity_source; the combined form
    avoids re-evaluating means and weights in iterative solvers. The
    quadratic contractions run through (mq, mq) Gram matrices shared by
    all basis matrices of the block.
    """
    beta = np.asarray(beta, dtype=float)
    X, eta, mu_c, v, w, slope, resid = _link_terms(block, beta)
    link = block.link
    a = w * slope
    u = w * resid
    n, m, q = X.shape
    Xf = X.reshape(n * m, q)
    rows = np.empty((n, block.psi_dim))
    sens = np.empty((block.psi_dim, q))
    gaussian = link is LinkFamily.GAUSSIAN
    if gaussian:
        AXr = X.reshape(n, m * q)
        cross = None
    else:
        curv = link.mean_curvature_from(mu_c)
        vs = link.variance_slope(mu_c)
        w_dot = -0.5 * vs * slope / (v * np.sqrt(v))   # d/d eta of v^{-1/2}
        a_dot = w * curv + slope * w_dot               # d/d eta of (w h')
        e = w_dot * resid                              # weight part of d(w r)
        AXr = (a[:, :, None] * X).reshape(n, m * q)
        EXr = (e[:, :, None] * X).reshape(n, m * q)
        cross = (AXr.T @ EXr).reshape(m, q, m, q)      # sum_i AX_m x EX_m'
    gram = (AXr.T @ AXr).reshape(m, q, m, q)           # sum_i AX_m x AX_m'
    for t, B in enumerate(block.basis.matrices):
        uB = u @ B
        bu = a * uB
        rows[:, t * q:(t + 1) * q] = (X * bu[:, :, None]).sum(axis=1)
        term = np.tensordot(B, gram, axes=([0, 1], [0, 2]))
        if not gaussian:
            term = term - Xf.T @ ((a_dot * uB).reshape(-1)[:, None] * Xf)
            term = term - np.tensordot(B, cross, axes=([0, 1], [0, 2]))
        sens[t * q:(t + 1) * q] = term / n
    return rows, rows.mean(axis=0), sens


def sensitivity_source(block: SourceBlock, beta: np.ndarray) -> np.ndarray:
    """Exact negative derivative of the psi mean, shape (q * s, q).

    Includes the residual-dependent terms from differentiating the
    weights; for the identity link these vanish and each component
    reduces to the average of X' B_t X.
    """
    return moments_with_sensitivity(block, beta)[2]


def qif_objective(block: SourceBlock, beta: np.ndarray) -> float:
    """Quadratic-form objective with the summed outer-product weight."""
    rows, mean = psi_source(block, beta)
    inner = sym_pseudo_inverse(rows.T @ rows)
    return float(mean @ inner.apply(mean))


def qif_fit_source(block: SourceBlock, beta0: np.ndarray, *,
                   tol: float = QIF_GRAD_TOL, max_iter: int = QIF_MAX_ITER) -> np.ndarray:
    """Minimize the per-source quadratic inference objective.

    Gauss-Newton with step halving; the inner outer-product weight is
    refrozen at each accepted iterate. Converges when the sup-norm of
    the frozen-weight gradient drops below ``tol``.
    """
    beta = np.asarray(beta0, dtype=float).copy()
    if not np.all(np.isfinite(beta)):
        raise ConvergenceError("non-finite starting value", iterate=beta)
    for _ in range(max_iter):
        rows, mean, S = moments_with_sensitivity(block, beta)
        inner = sym_pseudo_inverse(rows.T @ rows)
        value = float(mean @ inner.apply(mean))
        pull = S.T @ inner.apply(mean)
        grad_norm = float(np.max(np.abs(2.0 * pull)))
        if grad_norm <= tol:
            return beta
        H = S.T @ inner.apply(S)
        step = solve_spd_with_ridge(H, pull)
        alpha = 1.0
        accepted = False
        while alpha >= 1e-12:
            trial = beta + alpha * step
            m_trial = psi_source_mean(block, trial)
            v_trial = float(m_trial @ inner.apply(m_trial))
            if np.isfinite(v_trial) and v_trial < value:
                beta = trial
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
    rows, mean, S = moments_with_sensitivity(block, beta)
    inner = sym_pseudo_inverse(rows.T @ rows)
    pull = S.T @ inner.apply(mean)
    grad_norm = float(np.max(np.abs(2.0 * pull)))
    if grad_norm <= tol:
        return beta
    raise ConvergenceError(
        f"QIF fit did not converge (study {block.study}, source {block.source}): "
        f"gradient sup-norm {grad_norm:.3e}",
        iterate=beta, gradient_norm=grad_norm, iterations=max_iter)
