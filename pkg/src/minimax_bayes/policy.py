"""Softmax policies over a partition of histories, with exact derivatives.

The parameter table ``w[c, a]`` has one row per partition cell ``c`` of a
:class:`HistoryLattice`; a node in cell ``c`` plays ``softmax(w[c])``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .histories import HistoryLattice, push_forward
from .mdp import FiniteMDP, HistoryPolicyTree, _check_start, tree_reach

MAX_TRAJECTORIES = 2_000_000


def softmax(w: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(w - w.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


@dataclass(eq=False)
class SoftmaxPartitionPolicy:
    lattice: HistoryLattice
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.lattice.n_cells, self.lattice.n_actions):
            raise ValueError(f"weights must have shape {(self.lattice.n_cells, self.lattice.n_actions)}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    @classmethod
    def zeros(cls, lattice: HistoryLattice) -> "SoftmaxPartitionPolicy":
        return cls(lattice, np.zeros((lattice.n_cells, lattice.n_actions)))

    @property
    def n_params(self) -> int:
        return self.weights.size

    def with_weights(self, weights: np.ndarray) -> "SoftmaxPartitionPolicy":
        return SoftmaxPartitionPolicy(self.lattice, np.asarray(weights).reshape(self.weights.shape))

    def cell_probs(self) -> np.ndarray:
        return softmax(self.weights)

    def level_probs(self) -> list[np.ndarray]:
        p = self.cell_probs()
        return [p[c] for c in self.lattice.cells]

    def action_probs(self, history) -> np.ndarray:
        return softmax(self.weights[self.lattice.cell(history)])

    def log_policy_gradient(self, history, action: int) -> np.ndarray:
        """``d ln pi(a | h) / d w``: ``1 - pi`` at ``(cell, a)``, ``-pi(b)`` at ``(cell, b != a)``, 0 elsewhere."""
        c = self.lattice.cell(history)
        g = np.zeros_like(self.weights)
        g[c] = -softmax(self.weights[c])
        g[c, action] += 1.0
        return g

    def to_tree(self) -> HistoryPolicyTree:
        return HistoryPolicyTree(self.lattice, self.level_probs())

    def to_dict(self) -> dict:
        return {"partition_spec": self.lattice.spec(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SoftmaxPartitionPolicy":
        return cls(HistoryLattice.from_spec(d["partition_spec"]), np.array(d["weights"], dtype=float))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def _check(policy: SoftmaxPartitionPolicy, mdp: FiniteMDP) -> np.ndarray:
    lat = policy.lattice
    if (lat.n_states, lat.n_actions) != (mdp.n_states, mdp.n_actions) or lat.horizon < mdp.horizon:
        raise ValueError("policy lattice does not cover the MDP")
    sigma = mdp.initial_distribution()
    _check_start(lat, sigma)
    return sigma


def utility_gradient(policy: SoftmaxPartitionPolicy, mdp: FiniteMDP) -> np.ndarray:
    """Exact ``grad_w U(pi, mu)``.

    Uses the advantage form ``sum_{n in c} d(n) pi(a|n) (Q(n, a) - V(n))``,
    which equals the trajectory-sum expression term by term.
    """
    sigma = _check(policy, mdp)
    lat = policy.lattice
    probs = policy.level_probs()
    reach = tree_reach(lat, probs, mdp.transition, sigma)
    T, g = mdp.horizon, mdp.discount
    grad = np.zeros_like(policy.weights)
    v_next = None
    for t in range(T - 1, -1, -1):
        s = lat.states[t]
        q = (g ** t) * mdp.reward[s]
        if v_next is not None:
            q = q + np.einsum("nas,nas->na", mdp.transition[s], v_next[lat.children[t]])
        v = (probs[t] * q).sum(axis=1)
        adv = reach[t][:, None] * probs[t] * (q - v[:, None])
        np.add.at(grad, lat.cells[t], adv)
        v_next = v
    return grad


@dataclass
class Trajectories:
    """Every full-length trajectory of a policy in one MDP."""

    nodes: np.ndarray     # (T, n) lattice node per step
    actions: np.ndarray   # (T, n)
    prob: np.ndarray      # (n,)
    utility: np.ndarray   # (n,)


def enumerate_trajectories(policy: SoftmaxPartitionPolicy, mdp: FiniteMDP) -> Trajectories:
    sigma = _check(policy, mdp)
    lat = policy.lattice
    T, A, S = mdp.horizon, lat.n_actions, lat.n_states
    count = len(lat.start_states) * (A * S) ** (T - 1) * A
    if count > MAX_TRAJECTORIES:
        raise ValueError(f"{count} trajectories exceed the enumeration limit")
    probs = policy.level_probs()
    node = np.arange(lat.level_sizes[0])
    prob = sigma[list(lat.start_states)]
    util = np.zeros(len(node))
    nodes, actions = [node], []
    for t in range(T):
        s = lat.states[t][node]
        n = len(node)
        a = np.tile(np.arange(A), n)
        rep = np.repeat(np.arange(n), A)
        prob = prob[rep] * probs[t][node[rep], a]
        util = util[rep] + (mdp.discount ** t) * mdp.reward[s[rep], a]
        nodes = [x[rep] for x in nodes]
        actions = [x[rep] for x in actions] + [a]
        if t + 1 == T:
            break
        m = len(rep)
        rep2 = np.repeat(np.arange(m), S)
        s2 = np.tile(np.arange(S), m)
        prob = prob[rep2] * mdp.transition[s[rep][rep2], a[rep2], s2]
        util = util[rep2]
        child = lat.children[t][nodes[-1][rep2], a[rep2], s2]
        nodes = [x[rep2] for x in nodes] + [child]
        actions = [x[rep2] for x in actions]
        node = child
    return Trajectories(np.array(nodes), np.array(actions), prob, util)


def _score_matrix(policy: SoftmaxPartitionPolicy, traj: Trajectories) -> np.ndarray:
    """Row ``k`` is ``sum_t grad_w ln pi(a_t | h_t)`` for trajectory ``k``, flattened."""
    lat = policy.lattice
    probs = policy.level_probs()
    A = lat.n_actions
    n = traj.prob.size
    G = np.zeros((n, policy.n_params))
    rows = np.arange(n)
    for t in range(traj.nodes.shape[0]):
        node = traj.nodes[t]
        cell = lat.cells[t][node]
        cols = cell[:, None] * A + np.arange(A)
        np.add.at(G, (rows[:, None], cols), -probs[t][node])
        np.add.at(G, (rows, cell * A + traj.actions[t]), 1.0)
    return G


def utility_gradient_trajectories(policy: SoftmaxPartitionPolicy, mdp: FiniteMDP) -> np.ndarray:
    """Literal ``sum_h U(h) P(h) sum_t grad ln pi(a_t|h_t)``; slow reference path."""
    traj = enumerate_trajectories(policy, mdp)
    G = _score_matrix(policy, traj)
    return ((traj.utility * traj.prob) @ G).reshape(policy.weights.shape)


def utility_hessian(policy: SoftmaxPartitionPolicy, mdp: FiniteMDP) -> np.ndarray:
    """Exact ``grad^2_w U`` as ``G1 + G2`` over enumerated trajectories.

    ``G1 = sum_h U(h) P(h) g_h g_h^T`` with ``g_h`` the summed score of the
    trajectory (cross-step products included) and
    ``G2 = sum_h U(h) P(h) sum_t grad^2 ln pi(a_t|h_t)``, where the softmax
    block is ``pi_a (pi_a - 1)`` on the diagonal and ``pi_a pi_b`` off it.
    """
    traj = enumerate_trajectories(policy, mdp)
    lat = policy.lattice
    A = lat.n_actions
    G = _score_matrix(policy, traj)
    up = traj.utility * traj.prob
    H = (G * up[:, None]).T @ G
    probs = policy.level_probs()
    # the log-softmax Hessian depends only on the node, not on the action taken
    blocks = np.zeros((lat.n_cells, A, A))
    for t in range(traj.nodes.shape[0]):
        node = traj.nodes[t]
        mass = np.bincount(node, weights=up, minlength=lat.level_sizes[t])
        p = probs[t]
        h = p[:, :, None] * p[:, None, :] - p[:, :, None] * np.eye(A)
        np.add.at(blocks, lat.cells[t], mass[:, None, None] * h)
    for c in range(lat.n_cells):
        H[c * A:(c + 1) * A, c * A:(c + 1) * A] += blocks[c]
    return H


def sample_trajectories(policy: SoftmaxPartitionPolicy, mdp: FiniteMDP, n: int,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Returns and summed score vectors of ``n`` sampled trajectories."""
    sigma = _check(policy, mdp)
    lat = policy.lattice
    A, S = lat.n_actions, lat.n_states
    probs = policy.level_probs()
    start = rng.choice(mdp.n_states, size=n, p=sigma)
    lookup = np.full(mdp.n_states, -1)
    lookup[list(lat.start_states)] = np.arange(len(lat.start_states))
    node = lookup[start]
    states = start
    ret = np.zeros(n)
    score = np.zeros((n, lat.n_cells, A))
    rows = np.arange(n)
    for t in range(mdp.horizon):
        p = probs[t][node]
        a = np.minimum((rng.random(n)[:, None] > np.cumsum(p, axis=1)).sum(axis=1), A - 1)
        cell = lat.cells[t][node]
        np.add.at(score, (rows, cell), -p)
        np.add.at(score, (rows, cell, a), 1.0)
        ret += (mdp.discount ** t) * mdp.reward[states, a]
        if t + 1 < mdp.horizon:
            cdf = np.cumsum(mdp.transition[states, a], axis=1)
            nxt = np.minimum((rng.random(n)[:, None] > cdf).sum(axis=1), S - 1)
            node = lat.children[t][node, a, nxt]
            states = nxt
    return ret, score


def reinforce_terms(returns: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Per-sample gradient terms ``(U_k - b_k) g_k`` with a leave-one-out mean baseline.

    The baseline for sample ``k`` excludes sample ``k``, so each term is
    unbiased for ``grad U``.
    """
    n = returns.size
    if n > 1:
        base = (returns.sum() - returns) / (n - 1)
    else:
        base = np.zeros(1)
    return (returns - base).reshape((n,) + (1,) * (scores.ndim - 1)) * scores


def utility_gradient_mc(policy: SoftmaxPartitionPolicy, mdp: FiniteMDP, n: int,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """REINFORCE estimate of ``grad_w U`` and its per-entry standard error."""
    ret, score = sample_trajectories(policy, mdp, n, rng)
    terms = reinforce_terms(ret, score)
    se = terms.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(terms.shape[1:], np.inf)
    return terms.mean(axis=0), se


def expected_value_batch(policy: SoftmaxPartitionPolicy, transitions: np.ndarray, reward: np.ndarray,
                         horizon: int, discount: float, sigma: np.ndarray) -> np.ndarray:
    """Exact ``U(pi, mu_k)`` for a stack of transition tensors ``(B, S, A, S)``."""
    lat = policy.lattice
    probs = policy.level_probs()
    reach = tree_reach(lat, probs, transitions, sigma)
    total = np.zeros(transitions.shape[0])
    for t in range(horizon):
        r = (probs[t] * reward[lat.states[t]]).sum(axis=1)
        total += (discount ** t) * reach[t] @ r
    return total


def utility_gradient_batch(policy: SoftmaxPartitionPolicy, transitions: np.ndarray, reward: np.ndarray,
                           horizon: int, discount: float, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact utilities and gradients for a stack of MDPs sharing reward and start."""
    lat = policy.lattice
    probs = policy.level_probs()
    reach = tree_reach(lat, probs, transitions, sigma)
    B = transitions.shape[0]
    grad = np.zeros((B,) + policy.weights.shape)
    v_next = None
    for t in range(horizon - 1, -1, -1):
        s = lat.states[t]
        q = np.broadcast_to((discount ** t) * reward[s], (B, len(s), lat.n_actions))
        if v_next is not None:
            q = q + np.einsum("bnas,bnas->bna", transitions[:, s], v_next[:, lat.children[t]])
        v = (probs[t] * q).sum(axis=2)
        adv = reach[t][:, :, None] * probs[t] * (q - v[:, :, None])
        for b in range(B):
            np.add.at(grad[b], lat.cells[t], adv[b])
        v_next = v
    return (reach[0] * v_next).sum(axis=1), grad
