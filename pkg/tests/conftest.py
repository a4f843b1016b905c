"""Shared fixtures and independent oracle helpers.

The oracles here deliberately re-derive quantities scalar by scalar (or
by brute force) so the vectorized implementations are checked against a
separate code path.
"""

import numpy as np
import pytest

from meanfuse.basis import make_basis
from meanfuse.data import SourceBlock, StudyDataset
from meanfuse.links import LinkFamily
from meanfuse.qif import psi_source_mean


def psi_oracle(block, beta):
    """Scalar-by-scalar evaluation of the stacked estimating vectors."""
    link = block.link
    out = []
    for i in range(block.n_participants):
        X = block.covariates[i]
        y = block.responses[i]
        eta = X @ beta
        mu = link.mean(eta)
        mu_c = link.clip_mean(mu)
        v = link.variance(mu_c)
        Dm = np.diag(1.0 / np.sqrt(v))
        mudot = np.diag(link.mean_slope(eta)) @ X
        comp = [mudot.T @ Dm @ B @ Dm @ (y - mu) for B in block.basis.matrices]
        out.append(np.concatenate(comp))
    return np.array(out)


def finite_difference_sensitivity(block, beta, h=1e-5):
    """Central finite differences of the psi mean."""
    q = beta.size
    out = np.zeros((block.psi_dim, q))
    for r in range(q):
        e = np.zeros(q)
        e[r] = h
        out[:, r] = -(psi_source_mean(block, beta + e)
                      - psi_source_mean(block, beta - e)) / (2.0 * h)
    return out


def prox_objective(gamma, zeta, config):
    """True piecewise objective of the proximal subproblem."""
    gamma = np.asarray(gamma, dtype=float)
    t = np.sum(np.abs(gamma), axis=-1)
    lam, delta = config.lam, config.delta
    pen = np.where(t >= delta * lam, 0.5 * delta * lam * lam,
                   lam * t - t * t / (2.0 * delta))
    return pen + 0.5 * config.rho * np.sum((gamma - zeta) ** 2, axis=-1)


def prox_oracle_level_scan(zeta, config, n_grid=4001):
    """Exhaustive scan over L1 levels of the proximal subproblem.

    The optimum has sign(g) = sign(zeta) and |g| <= |zeta|, and for a
    fixed L1 level T the closest point to |zeta| on the simplex slice is
    the water-filling projection, so a dense scan over T brackets the
    global minimum value from above to second order in the T spacing.
    """
    zabs = np.sort(np.abs(np.asarray(zeta, dtype=float)))[::-1]
    total = zabs.sum()
    if total == 0.0:
        return float(prox_objective(np.zeros_like(zabs), zabs, config))
    css = np.cumsum(zabs)
    q = zabs.size
    best = np.inf
    for T in np.linspace(0.0, total, n_grid):
        for r in range(1, q + 1):
            tau = (css[r - 1] - T) / r
            lo = zabs[r] if r < q else 0.0
            if tau >= lo - 1e-15:
                g = np.maximum(zabs - tau, 0.0)
                break
        best = min(best, float(prox_objective(g, zabs, config)))
    return best


def random_block(rng, link, kind="ar-band", order=1, n=30, m=None, q=None,
                 beta_scale=0.4, x_scale=0.5):
    """Random well-behaved source block with responses drawn at a true beta."""
    m = int(rng.integers(3, 7)) if m is None else m
    q = int(rng.integers(1, 4)) if q is None else q
    if kind == "exchangeable":
        order = 1
    order = min(order, m - 1)
    X = rng.standard_normal((n, m, q)) * x_scale
    beta = rng.standard_normal(q) * beta_scale
    mu = link.mean(X @ beta)
    if link is LinkFamily.GAUSSIAN:
        y = mu + rng.standard_normal(mu.shape)
    elif link is LinkFamily.BERNOULLI:
        y = (rng.random(mu.shape) < mu).astype(float)
    else:
        y = rng.poisson(mu).astype(float)
    return SourceBlock(1, 1, y, X, make_basis(kind, m, order), link), beta


def small_gaussian_dataset(rng, n_studies=2, n_sources=2, n=40, m=4, q=2,
                           beta_by_source=None):
    """Tiny identity-link dataset for structural tests."""
    studies = []
    for k in range(1, n_studies + 1):
        blocks = []
        for j in range(1, n_sources + 1):
            X = rng.standard_normal((n, m, q))
            beta = (np.zeros(q) if beta_by_source is None
                    else np.asarray(beta_by_source[(j, k)], dtype=float))
            y = X @ beta + rng.standard_normal((n, m))
            blocks.append(SourceBlock(k, j, y, X, make_basis("ar-band", m, 1),
                                      LinkFamily.GAUSSIAN))
        studies.append(blocks)
    return StudyDataset(studies)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
