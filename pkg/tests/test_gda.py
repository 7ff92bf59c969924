import csv

import numpy as np
import pytest
from scipy import stats

from minimax_bayes.beliefs import DirichletProductPrior, simplex_grid
from minimax_bayes.experiments import small_pair
from minimax_bayes.gda import GdaConfig, GdaDivergenceError, FiniteTask, gda_run, stochastic_gradients
from minimax_bayes.histories import HistoryLattice
from minimax_bayes.mdp import optimal_utility_batch
from minimax_bayes.policy import SoftmaxPartitionPolicy, expected_value_batch
from minimax_bayes.regret import (bayes_optimal_envelope, bayes_optimal_tree, regrets, sequence_form_minimax,
                                  task_lattice)

from conftest import random_task


@pytest.fixture(scope="module")
def pair():
    return small_pair()


@pytest.fixture(scope="module")
def pair_run(pair):
    cfg = GdaConfig(3.0, 0.3, iterations=3000, output="mixture")
    return gda_run(cfg, SoftmaxPartitionPolicy.zeros(task_lattice(pair)), (pair, np.array([0.5, 0.5])))


def test_config_validation():
    with pytest.raises(ValueError):
        GdaConfig(eta_policy=-1)
    with pytest.raises(ValueError):
        GdaConfig(batch=0)
    with pytest.raises(ValueError):
        GdaConfig(output="median")


def test_exact_belief_gradient_is_regret(rng):
    mdps = random_task(rng, 3, 2, 3)
    pol = SoftmaxPartitionPolicy(task_lattice(mdps), rng.standard_normal((task_lattice(mdps).n_cells, 2)))
    belief = rng.dirichlet(np.ones(3))
    est = stochastic_gradients(pol, (mdps, belief), 16, rng, exact=True)
    np.testing.assert_allclose(est.g_belief, regrets(pol.to_tree(), mdps), atol=1e-12)
    assert est.regret == pytest.approx(float(belief @ est.g_belief), abs=1e-12)
    sampled = stochastic_gradients(pol, (mdps, belief), 20_000, rng, exact=False)
    assert np.abs(sampled.g_policy - est.g_policy).max() < 5 * np.sqrt(sampled.var_policy) + 1e-9


def test_policy_gradient_vanishes_at_bayes_optimum(rng):
    mdps = random_task(rng, 2, 2, 3)
    belief = np.array([0.3, 0.7])
    tree, _ = bayes_optimal_tree(mdps, belief)
    lat = task_lattice(mdps)
    w = np.vstack([np.where(p == 1.0, 20.0, -20.0) for p in tree.probs])
    est = stochastic_gradients(SoftmaxPartitionPolicy(lat, w), (mdps, belief), 1, rng, exact=True)
    assert np.linalg.norm(est.g_policy) < 1e-6


def crn_bayesian_regret(policy, prior, uniforms):
    # common-random-number estimate of the Bayesian regret, smooth in alpha
    g = stats.gamma.ppf(uniforms, prior.alpha)
    mu = g / g.sum(axis=-1, keepdims=True)
    sigma = prior.initial_distribution()
    u = expected_value_batch(policy, mu, prior.reward, prior.horizon, prior.discount, sigma)
    u_star = optimal_utility_batch(mu, prior.reward, prior.horizon, prior.discount, sigma)
    return u_star - u


def test_dirichlet_score_estimator_matches_finite_difference(rng):
    alpha = np.array([[[1.5, 0.8], [1.0, 2.0]], [[0.7, 1.2], [2.5, 1.0]]])
    prior = DirichletProductPrior(alpha, np.array([[0.0, 0.4], [1.0, 0.2]]), 3)
    lat = HistoryLattice.full(2, 2, 3)
    pol = SoftmaxPartitionPolicy(lat, rng.standard_normal((lat.n_cells, 2)))
    # 20 independent batches give a per-coordinate standard error
    batches = np.array([stochastic_gradients(pol, prior, 5000, rng).g_belief for _ in range(20)])
    g_score, se_score = batches.mean(axis=0), batches.std(axis=0, ddof=1) / np.sqrt(20)
    u = rng.random((100_000,) + alpha.shape)
    h = 1e-3
    for idx in [(0, 0, 0), (0, 1, 1), (1, 0, 0)]:
        e = np.zeros_like(alpha)
        e[idx] = h
        diff = (crn_bayesian_regret(pol, prior.replace(alpha=alpha + e), u)
                - crn_bayesian_regret(pol, prior.replace(alpha=alpha - e), u)) / (2 * h)
        fd, se_fd = diff.mean(), diff.std(ddof=1) / np.sqrt(diff.size)
        assert abs(g_score[idx] - fd) < 3 * np.hypot(se_score[idx], se_fd)


def test_zero_steps_return_input(pair):
    lat = task_lattice(pair)
    w0 = np.random.default_rng(1).standard_normal((lat.n_cells, 2))
    res = gda_run(GdaConfig(0.0, 0.0, iterations=20, output="random"),
                  SoftmaxPartitionPolicy(lat, w0), (pair, np.array([0.3, 0.7])))
    np.testing.assert_array_equal(res.policy.weights, w0)
    np.testing.assert_allclose(res.prior[1], [0.3, 0.7], atol=1e-12)


def test_finite_task_converges_to_maximin(pair, pair_run):
    grid = simplex_grid(2, 0.01)
    envelope, _, _ = bayes_optimal_envelope(pair, grid)
    beta_grid = grid[int(np.argmax(envelope))]
    value = sequence_form_minimax(pair)[0]
    assert np.abs(pair_run.prior[1] - beta_grid).sum() < 0.05
    assert regrets(pair_run.policy, pair).max() - value < 0.02


def test_trace_invariants(pair_run):
    trace = pair_run.trace
    assert len(trace) == 3000
    b = trace.beliefs()
    assert np.all(b >= 0) and np.allclose(b.sum(axis=1), 1.0, atol=1e-12)
    # the estimate at step k uses the policy recorded at step k - 1
    est, worst = trace.column("bayes_regret_est"), trace.column("worst_case_regret")
    assert np.all(est[1:] <= worst[:-1] + 1e-12)


def test_stationarity_proxy_with_decaying_steps(pair):
    cfg = GdaConfig(3.0, 0.3, iterations=3000, output="last", decay=0.5)
    res = gda_run(cfg, SoftmaxPartitionPolicy.zeros(task_lattice(pair)), (pair, np.array([0.5, 0.5])))
    reg = np.array([r["regrets"] for r in res.trace.rows])
    tangent = reg - reg.mean(axis=1, keepdims=True)
    norm = np.hypot(res.trace.column("gpi_norm"), np.linalg.norm(tangent, axis=1))
    n = len(norm) // 10
    assert norm[-n:].mean() < norm[:n].mean()


def test_reproducible_and_random_pick(pair):
    cfg = GdaConfig(1.0, 0.1, iterations=50, seed=3)
    lat = task_lattice(pair)
    a = gda_run(cfg, SoftmaxPartitionPolicy.zeros(lat), (pair, np.array([0.5, 0.5])))
    b = gda_run(cfg, SoftmaxPartitionPolicy.zeros(lat), (pair, np.array([0.5, 0.5])))
    np.testing.assert_array_equal(a.policy.weights, b.policy.weights)
    assert a.chosen_iteration == int(np.random.default_rng(3).integers(1, 51))
    np.testing.assert_allclose(a.prior[1], a.trace.rows[a.chosen_iteration - 1]["beta"])


def test_divergence_guard(pair):
    with pytest.raises(GdaDivergenceError):
        gda_run(GdaConfig(1e9, 0.0, iterations=5), SoftmaxPartitionPolicy.zeros(task_lattice(pair)),
                (pair, np.array([0.5, 0.5])))


def test_finite_task_requires_shared_reward(rng):
    mdps = random_task(rng, 2, 2, 2)
    mdps[1] = mdps[1].replace(reward=1 - mdps[0].reward)
    with pytest.raises(ValueError):
        FiniteTask(mdps)


def test_dirichlet_run_stays_in_box(rng):
    prior = DirichletProductPrior(np.ones((2, 2, 2)), np.array([[0.0, 0.3], [1.0, 0.0]]), 4)
    lat = HistoryLattice.windowed(2, 2, 4, window=1)
    cfg = GdaConfig(1.0, 0.5, batch=8, iterations=30, belief_kind="dirichlet", output="last")
    res = gda_run(cfg, SoftmaxPartitionPolicy.zeros(lat), prior)
    for beta in res.trace.beliefs():
        assert np.all(beta >= 0.01) and np.all(beta <= 100.0)
    assert res.variance_belief > 0


def test_trace_csv(tmp_path, pair):
    res = gda_run(GdaConfig(1.0, 0.1, iterations=5), SoftmaxPartitionPolicy.zeros(task_lattice(pair)),
                  (pair, np.array([0.5, 0.5])))
    path = tmp_path / "trace.csv"
    res.trace.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0][:5] == ["iter", "bayes_regret_est", "worst_case_regret", "gpi_norm", "gbeta_norm"]
    assert len(rows) == 6
