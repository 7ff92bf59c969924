import numpy as np
import pytest

from minimax_bayes.histories import HistoryLattice
from minimax_bayes.mdp import HistoryPolicyTree


def brute_utility(mdp, probs_of):
    """Expected utility by explicit recursion over every history.

    ``probs_of(history)`` returns the action distribution at a history tuple.
    Independent of the lattice-based forward pass used by the library.
    """
    sigma = mdp.initial_distribution()

    def rec(history, t):
        if t == mdp.horizon:
            return 0.0
        s = history[-1]
        total = 0.0
        for a, pa in enumerate(probs_of(history)):
            if pa == 0:
                continue
            inner = mdp.reward[s, a] * mdp.discount ** t
            for s2 in range(mdp.n_states):
                p = mdp.transition[s, a, s2]
                if p > 0 and t + 1 < mdp.horizon:
                    inner += p * rec(history + (a, s2), t + 1)
            total += pa * inner
        return total

    return sum(sigma[s] * rec((s,), 0) for s in range(mdp.n_states) if sigma[s] > 0)


def random_tree(lattice, rng, concentration=1.0):
    probs = [rng.dirichlet(np.full(lattice.n_actions, concentration), size=n) for n in lattice.level_sizes]
    return HistoryPolicyTree(lattice, probs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_bayes_value(mdps, belief):
    """``max_pi U(pi, beta)`` by recursion over histories with posterior-free weights.

    The weight of MDP ``i`` at a history is ``beta_i`` times its likelihood;
    the agent maximises the weighted sum at every history.
    """
    m0 = mdps[0]
    T, S, A = m0.horizon, m0.n_states, m0.n_actions

    def rec(weights, s, t):
        if t == T:
            return 0.0
        best = -np.inf
        for a in range(A):
            v = sum(w * m.reward[s, a] * m.discount ** t for w, m in zip(weights, mdps))
            for s2 in range(S):
                nw = [w * m.transition[s, a, s2] for w, m in zip(weights, mdps)]
                if sum(nw) > 0:
                    v += rec(nw, s2, t + 1)
            best = max(best, v)
        return best

    total = 0.0
    for s in range(S):
        w = [b * m.initial_distribution()[s] for b, m in zip(belief, mdps)]
        if sum(w) > 0:
            total += rec(w, s, 0)
    return total


def random_task(rng, n_mdps, n_states, horizon, n_actions=2, discount=1.0):
    """MDPs sharing reward and start state, with random transitions."""
    from minimax_bayes.mdp import FiniteMDP
    reward = rng.random((n_states, n_actions))
    return [FiniteMDP(rng.dirichlet(np.ones(n_states), size=(n_states, n_actions)), reward, horizon, discount)
            for _ in range(n_mdps)]
