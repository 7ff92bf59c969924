import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minimax_bayes.histories import HistoryLattice
from minimax_bayes.mdp import FiniteMDP, evaluate_policy, gen_random_mdp
from minimax_bayes.policy import (SoftmaxPartitionPolicy, enumerate_trajectories, expected_value_batch,
                                  reinforce_terms, softmax, utility_gradient, utility_gradient_batch,
                                  utility_gradient_mc, utility_gradient_trajectories, utility_hessian)

from conftest import brute_utility


def random_policy(lat, rng, scale=1.0):
    return SoftmaxPartitionPolicy(lat, scale * rng.standard_normal((lat.n_cells, lat.n_actions)))


def random_mdp(rng, S, A, T, discount=1.0):
    return FiniteMDP(rng.dirichlet(np.ones(S), size=(S, A)), rng.random((S, A)), T, discount)


def value(policy, mdp):
    return evaluate_policy(mdp, policy.to_tree())


def fd_gradient(policy, mdp, h=1e-5):
    w = policy.weights
    g = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        e = np.zeros_like(w)
        e[idx] = h
        g[idx] = (value(policy.with_weights(w + e), mdp) - value(policy.with_weights(w - e), mdp)) / (2 * h)
    return g


def test_action_probs_examples():
    lat = HistoryLattice.full(2, 2, 2)
    w = np.zeros((lat.n_cells, 2))
    pol = SoftmaxPartitionPolicy(lat, w)
    np.testing.assert_allclose(pol.action_probs((0,)), [0.5, 0.5])
    for c in (-3.0, 0.0, 7.5):
        w[0] = [c, c + np.log(3)]
        np.testing.assert_allclose(pol.with_weights(w).action_probs((0,)), [0.25, 0.75], atol=1e-12)
    w[0] = [1.0, 2.0]
    e = np.e
    np.testing.assert_allclose(pol.with_weights(w).action_probs((0,)), [1 / (1 + e), e / (1 + e)], atol=1e-12)
    with pytest.raises(KeyError):
        pol.action_probs((0, 1))
    with pytest.raises(ValueError):
        SoftmaxPartitionPolicy(lat, np.full((lat.n_cells, 2), np.inf))


def test_log_policy_gradient(rng):
    lat = HistoryLattice.full(2, 2, 3)
    pol = SoftmaxPartitionPolicy.zeros(lat)
    g = pol.log_policy_gradient((0, 1, 1), 0)
    cell = lat.cell((0, 1, 1))
    np.testing.assert_allclose(g[cell], [0.5, -0.5])
    assert np.count_nonzero(np.delete(g, cell, axis=0)) == 0

    pol = random_policy(lat, rng)
    h = (0, 1, 0)
    probs = pol.action_probs(h)
    total = sum(p * pol.log_policy_gradient(h, a) for a, p in enumerate(probs))
    np.testing.assert_allclose(total, 0.0, atol=1e-12)
    step = 1e-6
    for a in range(2):
        g = pol.log_policy_gradient(h, a)
        for idx in np.ndindex(pol.weights.shape):
            e = np.zeros_like(pol.weights)
            e[idx] = step
            fd = (np.log(pol.with_weights(pol.weights + e).action_probs(h)[a])
                  - np.log(pol.with_weights(pol.weights - e).action_probs(h)[a])) / (2 * step)
            assert g[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_policy_value_matches_history_recursion(rng):
    lat = HistoryLattice.windowed(2, 2, 4, window=1)
    pol = random_policy(lat, rng)
    mdp = random_mdp(rng, 2, 2, 4, 0.9)
    assert value(pol, mdp) == pytest.approx(brute_utility(mdp, pol.action_probs), abs=1e-12)


def test_shift_invariance(rng):
    lat = HistoryLattice.full(2, 2, 3)
    pol = random_policy(lat, rng)
    mdp = random_mdp(rng, 2, 2, 3)
    shifted = pol.weights + rng.standard_normal((lat.n_cells, 1))
    assert value(pol.with_weights(shifted), mdp) == pytest.approx(value(pol, mdp), abs=1e-12)


@pytest.mark.parametrize("window", [None, 1])
def test_gradient_matches_finite_difference(rng, window):
    for _ in range(5):
        lat = HistoryLattice.full(2, 2, 3) if window is None else HistoryLattice.windowed(2, 2, 4, window)
        pol = random_policy(lat, rng)
        mdp = random_mdp(rng, 2, 2, lat.horizon, 0.95)
        g = utility_gradient(pol, mdp)
        fd = fd_gradient(pol, mdp)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)
        np.testing.assert_allclose(utility_gradient_trajectories(pol, mdp), g, atol=1e-12)


def test_gradient_vanishes_at_saturated_optimum():
    mdp = FiniteMDP(np.ones((1, 2, 1)), np.array([[0.0, 1.0]]), 3)
    lat = HistoryLattice.full(1, 2, 3)
    w = np.tile([-20.0, 20.0], (lat.n_cells, 1))
    assert np.linalg.norm(utility_gradient(SoftmaxPartitionPolicy(lat, w), mdp)) < 1e-6


def test_trajectory_enumeration_is_a_distribution(rng):
    lat = HistoryLattice.full(2, 2, 3)
    pol = random_policy(lat, rng)
    mdp = random_mdp(rng, 2, 2, 3)
    traj = enumerate_trajectories(pol, mdp)
    assert traj.prob.sum() == pytest.approx(1.0, abs=1e-12)
    assert float(traj.prob @ traj.utility) == pytest.approx(value(pol, mdp), abs=1e-12)


def test_hessian_symmetric_and_matches_finite_difference(rng):
    for window in (None, 1):
        lat = HistoryLattice.full(2, 2, 3) if window is None else HistoryLattice.windowed(2, 2, 3, window)
        pol = random_policy(lat, rng)
        mdp = random_mdp(rng, 2, 2, 3)
        H = utility_hessian(pol, mdp)
        assert np.abs(H - H.T).max() < 1e-10
        step = 1e-5
        w = pol.weights.ravel()
        fd = np.zeros_like(H)
        for k in range(w.size):
            e = np.zeros_like(w)
            e[k] = step
            gp = utility_gradient(pol.with_weights((w + e).reshape(pol.weights.shape)), mdp).ravel()
            gm = utility_gradient(pol.with_weights((w - e).reshape(pol.weights.shape)), mdp).ravel()
            fd[:, k] = (gp - gm) / (2 * step)
        assert np.linalg.norm(H - fd) <= 1e-4 * np.linalg.norm(fd)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), T=st.integers(1, 3), S=st.integers(1, 2))
def test_gradient_and_hessian_bounds(seed, T, S):
    rng = np.random.default_rng(seed)
    lat = HistoryLattice.full(S, 2, T)
    pol = random_policy(lat, rng, scale=3.0)
    mdp = random_mdp(rng, S, 2, T)
    assert np.linalg.norm(utility_gradient(pol, mdp)) <= T ** 2
    assert np.linalg.norm(utility_hessian(pol, mdp)) <= T ** 2 * 3


def test_monte_carlo_gradient_unbiased(rng):
    lat = HistoryLattice.full(2, 2, 3)
    pol = random_policy(lat, rng)
    mdp = random_mdp(rng, 2, 2, 3)
    mean, se = utility_gradient_mc(pol, mdp, 200_000, rng)
    exact = utility_gradient(pol, mdp)
    z = np.abs(mean - exact) / np.maximum(se, 1e-12)
    assert np.mean(z < 3) > 0.95


def test_reinforce_baseline_keeps_mean():
    returns = np.array([1.0, 2.0, 4.0])
    scores = np.array([[1.0], [0.0], [-1.0]])
    terms = reinforce_terms(returns, scores)
    # leave-one-out baselines: 1 - 3, 2 - 2.5, 4 - 1.5
    np.testing.assert_allclose(terms[:, 0], [-2.0, 0.0, -2.5])


def test_batched_matches_single(rng):
    lat = HistoryLattice.windowed(3, 2, 5, window=1)
    pol = random_policy(lat, rng)
    reward = rng.random((3, 2))
    P = rng.dirichlet(np.ones(3), size=(4, 3, 2))
    sigma = np.array([1.0, 0.0, 0.0])
    u, grads = utility_gradient_batch(pol, P, reward, 5, 0.9, sigma)
    np.testing.assert_allclose(expected_value_batch(pol, P, reward, 5, 0.9, sigma), u, atol=1e-12)
    for k in range(4):
        mdp = FiniteMDP(P[k], reward, 5, 0.9)
        assert u[k] == pytest.approx(value(pol, mdp), abs=1e-12)
        np.testing.assert_allclose(grads[k], utility_gradient(pol, mdp), atol=1e-12)


def test_serialisation_roundtrip(tmp_path, rng):
    lat = HistoryLattice.windowed(3, 2, 6, window=2)
    pol = random_policy(lat, rng)
    path = tmp_path / "p.json"
    pol.save(path)
    d = json.loads(path.read_text())
    assert set(d) == {"partition_spec", "weights"}
    back = SoftmaxPartitionPolicy.from_dict(d)
    np.testing.assert_array_equal(back.weights, pol.weights)
    assert back.lattice.n_cells == lat.n_cells


def test_softmax_stable():
    np.testing.assert_allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])


def test_joint_smoothness_finite_belief(rng):
    from conftest import random_task
    from minimax_bayes.regret import optimal_utilities, task_lattice

    for _ in range(50):
        T = int(rng.integers(1, 4))
        mdps = random_task(rng, 3, 2, T)
        lat = task_lattice(mdps)
        u_star = optimal_utilities(mdps)

        def joint_gradient(w, beta):
            pol = SoftmaxPartitionPolicy(lat, w)
            g_pi = -sum(b * utility_gradient(pol, m) for b, m in zip(beta, mdps))
            g_beta = u_star - np.array([value(pol, m) for m in mdps])
            return np.concatenate([g_pi.ravel(), g_beta])

        w1, w2 = rng.standard_normal((2, lat.n_cells, 2))
        b1, b2 = rng.dirichlet(np.ones(3), size=2)
        lhs = np.linalg.norm(joint_gradient(w1, b1) - joint_gradient(w2, b2))
        dist = np.linalg.norm(np.concatenate([(w1 - w2).ravel(), b1 - b2]))
        assert lhs <= T ** 2 * 3 * dist
