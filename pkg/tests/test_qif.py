import numpy as np
import pytest

from conftest import finite_difference_sensitivity, psi_oracle, random_block
from meanfuse.basis import make_basis
from meanfuse.data import SourceBlock
from meanfuse.errors import SingularVarianceError
from meanfuse.links import LinkFamily
from meanfuse.qif import (moments_with_sensitivity, psi_source, psi_source_mean,
                          qif_fit_source, qif_objective, sensitivity_source)


def test_psi_identity_link_reduces_to_score():
    # one participant, X = I2, y = (1, 2), beta = 0: psi = X'(y - X beta)
    X = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    y = np.array([[1.0, 2.0]])
    blk = SourceBlock(1, 1, y, X, make_basis("independence", 2), LinkFamily.GAUSSIAN)
    rows, mean = psi_source(blk, np.zeros(2))
    assert np.allclose(rows[0], [1.0, 2.0])
    assert np.allclose(mean, [1.0, 2.0])


def test_psi_logit_hand_example():
    # logit, m=2, exchangeable pair of basis matrices, X rows e1,e2,
    # y=(1,0), beta=0. Value frozen from the scalar oracle: with mu=0.5,
    # v=0.25 the two D^{-1/2} factors contribute 4 and h' contributes
    # 0.25, so the identity component is exactly X'(y-mu).
    X = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    y = np.array([[1.0, 0.0]])
    blk = SourceBlock(1, 1, y, X, make_basis("exchangeable", 2), LinkFamily.BERNOULLI)
    rows, _ = psi_source(blk, np.zeros(2))
    oracle = psi_oracle(blk, np.zeros(2))
    assert np.allclose(rows, oracle, atol=1e-14)
    assert np.allclose(rows[0], [0.5, -0.5, -0.5, 0.5], atol=1e-14)


def test_psi_matches_scalar_oracle_randomized(rng):
    for link in LinkFamily:
        for kind, order in [("independence", 1), ("exchangeable", 1), ("ar-band", 2)]:
            blk, beta = random_block(rng, link, kind, order)
            rows, mean = psi_source(blk, beta)
            oracle = psi_oracle(blk, beta)
            assert rows.shape == (blk.n_participants, blk.n_coef * blk.basis.size)
            assert np.allclose(rows, oracle, atol=1e-12)
            assert np.allclose(mean, oracle.mean(axis=0), atol=1e-12)
            assert np.allclose(psi_source_mean(blk, beta), mean, atol=1e-12)


def test_psi_zero_at_exact_fit(rng):
    # responses equal to the fitted means make every residual vanish
    X = rng.standard_normal((10, 4, 2))
    beta = np.array([0.3, -0.2])
    blk = SourceBlock(1, 1, X @ beta, X, make_basis("ar-band", 4, 1), LinkFamily.GAUSSIAN)
    rows, mean = psi_source(blk, beta)
    assert np.allclose(rows, 0.0)
    assert np.allclose(mean, 0.0)


def test_sensitivity_identity_link_closed_form(rng):
    n, m, q = 30, 5, 3
    X = rng.standard_normal((n, m, q))
    y = X @ np.array([0.5, -0.3, 0.2]) + rng.standard_normal((n, m))
    blk = SourceBlock(1, 1, y, X, make_basis("ar-band", m, 1), LinkFamily.GAUSSIAN)
    S = sensitivity_source(blk, rng.standard_normal(q))
    expected = np.vstack([np.einsum("imq,ms,isp->qp", X, B, X) / n
                          for B in blk.basis.matrices])
    assert np.allclose(S, expected, atol=1e-12)


def test_sensitivity_matches_finite_differences_50_instances(rng):
    # required derivative oracle: 50 random (link, basis, m<=6, q<=3) draws
    links = list(LinkFamily)
    kinds = [("independence", 1), ("exchangeable", 1), ("ar-band", 1), ("ar-band", 2)]
    worst = 0.0
    for i in range(50):
        link = links[i % 3]
        kind, order = kinds[i % 4]
        blk, beta = random_block(rng, link, kind, order)
        S = sensitivity_source(blk, beta)
        F = finite_difference_sensitivity(blk, beta, h=1e-5)
        rel = np.max(np.abs(S - F)) / max(1.0, np.max(np.abs(F)))
        worst = max(worst, rel)
    assert worst <= 1e-5


def test_logit_sensitivity_residual_terms_present():
    # at beta=0 with y=(1,0) the residual-dependent terms do not cancel,
    # so the exact derivative must differ from the expectation form
    X = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    y = np.array([[1.0, 0.0]])
    blk = SourceBlock(1, 1, y, X, make_basis("exchangeable", 2), LinkFamily.BERNOULLI)
    beta = np.array([0.3, -0.1])
    S = sensitivity_source(blk, beta)
    F = finite_difference_sensitivity(blk, beta)
    assert np.allclose(S, F, rtol=1e-5, atol=1e-8)
    eta = X[0] @ beta
    mu = LinkFamily.BERNOULLI.mean(eta)
    a = LinkFamily.BERNOULLI.mean_slope(eta) / np.sqrt(mu * (1 - mu))
    AX = a[:, None] * X[0]
    efORM = np.vstack([AX.T @ B @ AX for B in blk.basis.matrices])
    assert not np.allclose(S, efORM, atol=1e-6)


def test_moments_with_sensitivity_consistency(rng):
    for link in LinkFamily:
        blk, beta = random_block(rng, link, "exchangeable")
        rows, mean, S = moments_with_sensitivity(blk, beta)
        rows2, mean2 = psi_source(blk, beta)
        assert np.allclose(rows, rows2, atol=1e-13)
        assert np.allclose(mean, mean2, atol=1e-13)
        assert np.allclose(S, sensitivity_source(blk, beta), atol=1e-13)


def test_singular_variance_error_names_coordinate():
    X = np.array([[[1.0], [1.0]], [[1.0], [1.0]]])
    y = np.array([[0.0, 1.0], [2.0, 0.0]])
    blk = SourceBlock(1, 1, y, X, make_basis("independence", 2), LinkFamily.POISSON)
    with pytest.raises(SingularVarianceError) as err, np.errstate(over="ignore"):
        psi_source(blk, np.array([800.0]))  # exp overflows to inf
    assert "participant" in str(err.value)


def test_qif_fit_identity_link_equals_least_squares(rng):
    n, m, q = 40, 4, 3
    X = rng.standard_normal((n, m, q))
    y = X @ np.array([0.5, -0.3, 0.2]) + rng.standard_normal((n, m))
    blk = SourceBlock(1, 1, y, X, make_basis("independence", m), LinkFamily.GAUSSIAN)
    fit = qif_fit_source(blk, np.zeros(q))
    ols = np.linalg.lstsq(X.reshape(-1, q), y.ravel(), rcond=None)[0]
    assert np.max(np.abs(fit - ols)) <= 1e-8


def test_qif_objective_zero_at_exact_solution(rng):
    # identity link, B={I}: the least-squares solution zeroes the moment
    n, m, q = 25, 3, 2
    X = rng.standard_normal((n, m, q))
    y = X @ np.array([1.0, -1.0]) + rng.standard_normal((n, m))
    blk = SourceBlock(1, 1, y, X, make_basis("independence", m), LinkFamily.GAUSSIAN)
    fit = qif_fit_source(blk, np.zeros(q))
    assert qif_objective(blk, fit) <= 1e-12


def test_qif_objective_nonnegative(rng):
    for link in LinkFamily:
        blk, beta = random_block(rng, link, "ar-band", 1)
        assert qif_objective(blk, beta) >= 0.0
        assert qif_objective(blk, np.zeros_like(beta)) >= 0.0


@pytest.mark.slow
def test_qif_fit_logistic_monte_carlo(rng):
    # 100 replicates at n=500, m=5: the average estimate should sit
    # within 3 monte-carlo standard errors of the truth, per coordinate
    truth = np.array([0.5, -0.5, 0.25])
    n, m = 500, 5
    reps = 100
    fits = np.empty((reps, 3))
    for r in range(reps):
        X = np.concatenate([np.ones((n, m, 1)), rng.standard_normal((n, m, 2))], axis=2)
        mu = LinkFamily.BERNOULLI.mean(X @ truth)
        y = (rng.random((n, m)) < mu).astype(float)
        blk = SourceBlock(1, 1, y, X, make_basis("ar-band", m, 1), LinkFamily.BERNOULLI)
        fits[r] = qif_fit_source(blk, np.zeros(3))
    ese = fits.std(axis=0, ddof=1)
    assert np.all(np.abs(fits.mean(axis=0) - truth) <= 3.0 * ese / np.sqrt(reps))


def test_qif_fit_deterministic(rng):
    blk, beta = random_block(rng, LinkFamily.POISSON, "ar-band", 1, n=60)
    a = qif_fit_source(blk, np.zeros(beta.size))
    b = qif_fit_source(blk, np.zeros(beta.size))
    assert np.array_equal(a, b)
