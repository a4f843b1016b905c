import numpy as np
import pytest

from conftest import small_gaussian_dataset
from meanfuse.admm import (AdmmConfig, SolverState, admm_solve, difference_operator,
                           extract_partition, representative_beta)
from meanfuse.errors import ConfigError
from meanfuse.linalg import sup_norm
from meanfuse.penalty import PenaltyConfig, build_pairs
from meanfuse.selection import qif_start, suggest_lambda_max
from meanfuse.simulate import SimDesign, build_dataset
from meanfuse.stacking import (PartitionMap, StackedSystem, WeightedQuadratic,
                               sample_covariance, stack_moments)


def _small_system(rng, heterogeneous=True):
    beta_by_source = {(1, 1): [0.8, -0.5], (2, 1): [0.8, -0.5],
                      (1, 2): [-0.6, 0.7], (2, 2): [-0.6, 0.7]}
    if not heterogeneous:
        beta_by_source = {k: [0.5, -0.2] for k in beta_by_source}
    ds = small_gaussian_dataset(rng, n_studies=2, n_sources=2, n=60, m=4, q=2,
                                beta_by_source=beta_by_source)
    system = StackedSystem(ds)
    pairs = build_pairs(2, 2)
    return system, pairs


def test_difference_operator_shape_and_action(rng):
    pairs = build_pairs(2, 2)
    A = difference_operator(pairs, 2)
    assert A.shape == (len(pairs) * 2, 8)
    beta = rng.standard_normal(8)
    diffs = (A @ beta).reshape(len(pairs), 2)
    mat = beta.reshape(4, 2)
    for p, ((j, k), (j2, k2)) in enumerate(pairs):
        a = (k - 1) * 2 + (j - 1)
        b = (k2 - 1) * 2 + (j2 - 1)
        assert np.allclose(diffs[p], mat[a] - mat[b])


def test_lambda_zero_gives_singletons_and_stationarity(rng):
    system, pairs = _small_system(rng)
    start = qif_start(system)
    state = admm_solve(system, pairs, PenaltyConfig(lam=0.0),
                       AdmmConfig(max_iter=500), start)
    assert state.converged
    part = extract_partition(state, pairs, 0.0)
    assert part.n_groups == 4  # distinct true coefficients: no fusion at lam=0
    # gamma converges to the pairwise differences of the unpenalized fit
    mat = state.beta.reshape(4, 2)
    for (jk, j2k2), g in state.gamma.items():
        a = (jk[1] - 1) * 2 + (jk[0] - 1)
        b = (j2k2[1] - 1) * 2 + (j2k2[0] - 1)
        assert np.allclose(g, mat[a] - mat[b], atol=1e-4)
    # unpenalized stationarity at the fixed point
    rows, mean, sens = stack_moments(system, state.beta)
    wq = WeightedQuadratic(mean, sample_covariance(system, rows))
    assert sup_norm(wq.moment_pull(sens)) <= 1e-4


def test_large_lambda_fuses_everything(rng):
    system, pairs = _small_system(rng)
    start = qif_start(system)
    lam = 2.0 * suggest_lambda_max(system, start, pairs)
    state = admm_solve(system, pairs, PenaltyConfig(lam=lam),
                       AdmmConfig(max_iter=500), start)
    part = extract_partition(state, pairs, 0.0)
    assert part.n_groups == 1
    for g in state.gamma.values():
        assert np.array_equal(g, np.zeros(2))


def test_multiplier_update_identity_every_iteration(rng):
    system, pairs = _small_system(rng)
    start = qif_start(system)
    snapshots = []
    admm_solve(system, pairs, PenaltyConfig(lam=0.3), AdmmConfig(max_iter=40),
               start, on_iteration=snapshots.append)
    assert len(snapshots) >= 2
    prev = np.zeros_like(snapshots[0]["multipliers"])
    for snap in snapshots:
        # t_new = t_old + rho * residual vector, exactly as computed
        assert np.array_equal(snap["multipliers"],
                              prev + 1.0 * snap["residual_vectors"])
        prev = snap["multipliers"]


def test_merit_nonincreasing_within_iteration_frozen_weight(rng):
    # one iteration from a fresh start: the accepted beta cannot increase
    # the augmented merit evaluated under the iteration's frozen weight,
    # multipliers, and difference variables
    system, pairs = _small_system(rng)
    start = qif_start(system)
    q = system.dataset.n_coef
    A = difference_operator(pairs, q)

    def merit(beta, wq, gamma_vec, mult_vec, rho):
        from meanfuse.stacking import stack_psi_mean
        gap = A @ beta - gamma_vec
        return (wq.quad(stack_psi_mean(system, beta))
                + float(mult_vec @ gap) + 0.5 * rho * float(gap @ gap))

    for lam in (0.0, 0.2, 0.8):
        pen = PenaltyConfig(lam=lam)
        rows, mean, _ = stack_moments(system, start)
        wq = WeightedQuadratic(mean, sample_covariance(system, rows))
        gamma_vec = A @ start            # initial difference variables
        mult_vec = np.zeros_like(gamma_vec)
        before = merit(start, wq, gamma_vec, mult_vec, pen.rho)
        state = admm_solve(system, pairs, pen, AdmmConfig(max_iter=1), start)
        after = merit(state.beta, wq, gamma_vec, mult_vec, pen.rho)
        assert after <= before + 1e-12


def test_trace_emission(rng, tmp_path):
    system, pairs = _small_system(rng)
    start = qif_start(system)
    path = tmp_path / "trace.tsv"
    with open(path, "w") as f:
        admm_solve(system, pairs, PenaltyConfig(lam=0.2), AdmmConfig(max_iter=30),
                   start, trace=f)
    lines = path.read_text().strip().splitlines()
    assert lines[0].split("\t") == ["iteration", "objective", "primal", "dual", "n_groups"]
    assert len(lines) >= 2
    first = lines[1].split("\t")
    assert int(first[0]) == 1 and int(first[4]) >= 1


def test_admm_rejects_bad_config(rng):
    system, pairs = _small_system(rng)
    with pytest.raises(ConfigError):
        AdmmConfig(max_iter=0)
    with pytest.raises(ConfigError):
        AdmmConfig(tol_primal=-1.0)
    with pytest.raises(ConfigError):
        admm_solve(system, pairs, PenaltyConfig(lam=0.1),
                   AdmmConfig(), np.zeros(3))  # wrong beta length


def test_non_converged_flag_at_tiny_budget(rng):
    system, pairs = _small_system(rng)
    start = qif_start(system)
    state = admm_solve(system, pairs, PenaltyConfig(lam=0.3),
                       AdmmConfig(max_iter=2), start)
    assert state.iteration == 2
    assert not state.converged


def _fake_state(gamma_map):
    some = next(iter(gamma_map.values()))
    return SolverState(beta=np.zeros(0), gamma=gamma_map,
                       multipliers={k: np.zeros_like(v) for k, v in gamma_map.items()},
                       weight=np.zeros((0, 0)))


def test_extract_partition_trivial_cases():
    pairs = build_pairs(3, 1)
    q = 2
    zero = {p: np.zeros(q) for p in pairs.pairs}
    part = extract_partition(_fake_state(zero), pairs, 0.0)
    assert part.n_groups == 1
    nonzero = {p: np.ones(q) for p in pairs.pairs}
    part = extract_partition(_fake_state(nonzero), pairs, 0.0)
    assert part.n_groups == 3


def test_extract_partition_transitive_closure():
    # gamma zero on (A,B) and (B,C) only: one group by closure
    pairs = build_pairs(3, 1)
    q = 1
    gam = {}
    for (a, b) in pairs.pairs:
        fused = {((1, 1), (2, 1)), ((2, 1), (3, 1))}
        gam[(a, b)] = np.zeros(q) if (a, b) in fused else np.ones(q)
    part = extract_partition(_fake_state(gam), pairs, 0.0)
    assert part.n_groups == 1


def test_extract_partition_respects_epsilon():
    pairs = build_pairs(2, 1)
    gam = {pairs.pairs[0]: np.array([1e-9, 0.0])}
    assert extract_partition(_fake_state(gam), pairs, 0.0).n_groups == 2
    assert extract_partition(_fake_state(gam), pairs, 1e-8).n_groups == 1


def test_extract_partition_always_valid(rng):
    pairs = build_pairs(3, 2)
    for _ in range(25):
        gam = {p: (rng.random(2) < 0.5) * rng.standard_normal(2) for p in pairs.pairs}
        part = extract_partition(_fake_state(gam), pairs, 0.0)
        cells = [(j, k) for k in (1, 2) for j in (1, 2, 3)]
        assert sorted(c for g in part.groups for c in g) == sorted(cells)


def test_representative_beta_averages():
    pairs = build_pairs(2, 1)
    state = SolverState(beta=np.array([1.0, 0.0, 0.0, 1.0]),
                        gamma={pairs.pairs[0]: np.zeros(2)},
                        multipliers={pairs.pairs[0]: np.zeros(2)},
                        weight=np.zeros((0, 0)))
    part = PartitionMap.pooled(2, 1, 2)
    rep = representative_beta(state, part)
    assert np.allclose(rep, [[0.5, 0.5]])
    singles = PartitionMap.singletons(2, 1, 2)
    rep = representative_beta(state, singles)
    assert np.allclose(rep, [[1.0, 0.0], [0.0, 1.0]])


def test_divergence_error_on_bad_start(rng):
    system, pairs = _small_system(rng)
    from meanfuse.errors import DivergenceError
    with pytest.raises(DivergenceError):
        admm_solve(system, pairs, PenaltyConfig(lam=0.1), AdmmConfig(),
                   np.full(system.n_beta, np.nan))


@pytest.mark.slow
def test_warm_start_iteration_advantage_informational(rng):
    # informational diagnostic: warm starts should rarely be slower
    wins = 0
    total = 10
    for i in range(total):
        design = SimDesign(
            name="w", n_studies=1, n_sources=3, study_sizes=[120],
            response_dims=[4, 4, 4], family="gaussian",
            groups=[[(1, 1), (2, 1)], [(3, 1)]],
            theta=[[0.5, -0.5], [1.5, 1.0]],
            lambda_grid=[0.0], n_replicates=1, seed=100 + i,
            n_covariate_fields=1)
        ds = build_dataset(design, 0)
        system = StackedSystem(ds)
        pairs = build_pairs(3, 1)
        start = qif_start(system)
        warm = admm_solve(system, pairs, PenaltyConfig(lam=0.05),
                          AdmmConfig(max_iter=400), start)
        cold = admm_solve(system, pairs, PenaltyConfig(lam=0.3),
                          AdmmConfig(max_iter=400), start)
        warm2 = admm_solve(system, pairs, PenaltyConfig(lam=0.3),
                           AdmmConfig(max_iter=400), warm.beta)
        if warm2.iteration <= cold.iteration:
            wins += 1
    print(f"warm start no slower on {wins}/{total} instances")
    assert wins >= 1  # informational; report without a strict gate
