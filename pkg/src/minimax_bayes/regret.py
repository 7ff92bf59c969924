"""Bayes-optimal tree policies over finite MDP sets, regret notions and PSRL."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .beliefs import check_belief
from .histories import HistoryLattice
from .mdp import (FiniteMDP, HistoryPolicyTree, MemorylessPolicy, argmax_lowest,
                  backward_induction, evaluate_policy, tree_reach)


def _shared_shape(mdps: Sequence[FiniteMDP]) -> tuple[int, int, int]:
    first = mdps[0]
    shape = (first.n_states, first.n_actions, first.horizon)
    for m in mdps[1:]:
        if (m.n_states, m.n_actions, m.horizon) != shape:
            raise ValueError("all MDPs must share states, actions and horizon")
        if m.discount != first.discount:
            raise ValueError("all MDPs must share the discount factor")
    return shape


def task_lattice(mdps: Sequence[FiniteMDP]) -> HistoryLattice:
    """Full history tree covering every start state of every MDP in the set."""
    S, A, T = _shared_shape(mdps)
    starts = sorted({s for m in mdps for s in m.start_states()})
    return HistoryLattice.full(S, A, T, starts)


def stack(mdps: Sequence[FiniteMDP]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (np.stack([m.transition for m in mdps]), np.stack([m.reward for m in mdps]),
            np.stack([m.initial_distribution() for m in mdps]))


def chance_weights(mdps: Sequence[FiniteMDP], lattice: HistoryLattice) -> list[np.ndarray]:
    """Per-MDP likelihood of the state part of every history, shape ``(n_mdps, n_t)``.

    This is the policy-independent factor of the reach probability; it is the
    information state carried by the Bayes-optimal recursion.
    """
    P, _, sigma = stack(mdps)
    ones = [np.ones((n, lattice.n_actions)) for n in lattice.level_sizes]
    return tree_reach(lattice, ones, P, sigma)


def optimal_utilities(mdps: Sequence[FiniteMDP]) -> np.ndarray:
    return np.array([backward_induction(m)[2] for m in mdps])


def bayes_optimal_tree(mdps: Sequence[FiniteMDP], belief,
                       lattice: HistoryLattice | None = None) -> tuple[HistoryPolicyTree, float]:
    """Deterministic Bayes-optimal history policy and ``U*(beta)``.

    Backward induction over the history tree where each node carries the
    vector of belief-weighted per-MDP likelihoods of its history.
    """
    belief = check_belief(belief)
    if len(belief) != len(mdps):
        raise ValueError("belief length must equal the number of MDPs")
    lat = lattice or task_lattice(mdps)
    weights = chance_weights(mdps, lat)
    _, R, _ = stack(mdps)
    g = mdps[0].discount
    T = lat.horizon
    actions: list[np.ndarray] = [None] * T
    v_next = None
    for t in range(T - 1, -1, -1):
        w = belief[:, None] * weights[t]
        s = lat.states[t]
        q = (g ** t) * np.einsum("in,ina->na", w, R[:, s, :])
        if v_next is not None:
            q = q + v_next.reshape(len(s), lat.n_actions, lat.n_states).sum(axis=2)
        actions[t] = argmax_lowest(q, tol=1e-12 * max(1.0, float(np.abs(q).max(initial=0))))
        v_next = q[np.arange(len(s)), actions[t]]
    return HistoryPolicyTree.deterministic(lat, actions), float(v_next.sum())


def utilities(policy, mdps: Sequence[FiniteMDP]) -> np.ndarray:
    return np.array([evaluate_policy(m, policy) for m in mdps])


def regret(policy, mdp: FiniteMDP) -> float:
    """``R(pi, mu) = U*(mu) - U(pi, mu)``."""
    return backward_induction(mdp)[2] - evaluate_policy(mdp, policy)


def regrets(policy, mdps: Sequence[FiniteMDP], u_star: np.ndarray | None = None) -> np.ndarray:
    """Per-MDP regrets; this vector is also ``grad_beta`` of the Bayesian regret."""
    if u_star is None:
        u_star = optimal_utilities(mdps)
    return u_star - utilities(policy, mdps)


def bayesian_regret(policy, mdps: Sequence[FiniteMDP], belief) -> float:
    """``sum_i beta_i [U*(mu_i) - U(pi, mu_i)]``; linear in the belief."""
    return float(check_belief(belief) @ regrets(policy, mdps))


def bayes_optimal_regret(policy, mdps: Sequence[FiniteMDP], belief) -> float:
    """``U*(beta) - U(pi, beta)``: loss against the prior-aware oracle."""
    belief = check_belief(belief)
    _, value = bayes_optimal_tree(mdps, belief)
    return value - float(belief @ utilities(policy, mdps))


@dataclass
class RegretReport:
    regret: float
    bayes_optimal_regret: float
    bayesian_regret: float
    argmax_mdp: int

    def __post_init__(self):
        if self.bayes_optimal_regret > self.bayesian_regret + 1e-10:
            raise ValueError("Bayes-optimal regret exceeds Bayesian regret")
        if min(self.regret, self.bayes_optimal_regret, self.bayesian_regret) < -1e-10:
            raise ValueError("regrets must be nonnegative")

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def regret_report(policy, mdps: Sequence[FiniteMDP], belief) -> RegretReport:
    belief = check_belief(belief)
    r = regrets(policy, mdps)
    _, value = bayes_optimal_tree(mdps, belief)
    u = optimal_utilities(mdps) - r
    i = int(np.argmax(r))
    return RegretReport(float(r[i]), value - float(belief @ u), float(belief @ r), i)


def bayes_optimal_envelope(mdps: Sequence[FiniteMDP], beliefs: np.ndarray,
                           u_star: np.ndarray | None = None):
    """``min_pi R_bayes(pi, beta)`` and the per-MDP regret gradient at each belief row."""
    if u_star is None:
        u_star = optimal_utilities(mdps)
    lat = task_lattice(mdps)
    values, grads, policies = [], [], []
    for b in np.atleast_2d(beliefs):
        pol, v = bayes_optimal_tree(mdps, b, lat)
        r = u_star - utilities(pol, mdps)
        values.append(float(b @ u_star) - v)
        grads.append(r)
        policies.append(pol)
    return np.array(values), np.array(grads), policies


# ---------------------------------------------------------------------------
# matrix games and mixtures
# ---------------------------------------------------------------------------

def solve_matrix_game(loss) -> tuple[np.ndarray, float, np.ndarray]:
    """Minimax solution of a zero-sum game with ``loss[j, i]`` paid by the row player.

    Returns ``(row_mixture, value, column_mixture)`` where the row player
    minimises and the column player maximises the expected loss.
    """
    L = np.asarray(loss, dtype=float)
    m, n = L.shape
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A_ub = np.hstack([L.T, -np.ones((n, 1))])
    A_eq = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * m + [(None, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"matrix game LP failed: {res.message}")
    q = np.clip(res.x[:m], 0, None)
    q /= q.sum()
    col = np.clip(-res.ineqlin.marginals, 0, None)
    col = col / col.sum() if col.sum() > 0 else np.full(n, 1.0 / n)
    return q, float(res.x[-1]), col


def agent_realization(tree: HistoryPolicyTree) -> list[np.ndarray]:
    """Product of the agent's own action probabilities along each history."""
    lat = tree.lattice
    if not lat.is_full():
        raise ValueError("realization weights need a full history tree")
    out = [np.ones(lat.level_sizes[0])]
    for t in range(lat.horizon - 1):
        x = out[-1][:, None] * tree.probs[t]
        out.append(np.repeat(x.ravel(), lat.n_states))
    return out


def mixture_to_behavioral(policies: Sequence[HistoryPolicyTree], weights) -> HistoryPolicyTree:
    """Stochastic tree policy equivalent to sampling one of ``policies`` up front.

    Node probabilities are the mixture weights conditioned on the history's
    own actions; histories no mixture component reaches get the uniform rule.
    """
    weights = np.asarray(weights, dtype=float)
    lat = policies[0].lattice
    reach = [agent_realization(p) for p in policies]
    probs = []
    for t in range(lat.horizon):
        num = sum(w * r[t][:, None] * p.probs[t] for w, r, p in zip(weights, reach, policies))
        den = num.sum(axis=1, keepdims=True)
        uniform = np.full_like(num, 1.0 / lat.n_actions)
        probs.append(np.where(den > 0, num / np.where(den > 0, den, 1.0), uniform))
    return HistoryPolicyTree(lat, probs)


def count_deterministic_trees(lattice: HistoryLattice) -> int:
    return lattice.n_actions ** lattice.n_nodes


def deterministic_tree_utilities(mdps: Sequence[FiniteMDP], lattice: HistoryLattice | None = None,
                                 max_policies: int = 10 ** 6, chunk: int = 1 << 15) -> np.ndarray:
    """Utilities ``U(pi_j, mu_i)`` of every deterministic tree policy, shape ``(n_pol, n_mdps)``.

    Policy ``j`` picks at node ``k`` (global order) the ``k``-th base-``A``
    digit of ``j``.
    """
    lat = lattice or task_lattice(mdps)
    total = count_deterministic_trees(lat)
    if total > max_policies:
        raise ValueError(f"{total} deterministic tree policies exceed the limit {max_policies}")
    P, R, sigma = stack(mdps)
    A, S = lat.n_actions, lat.n_states
    g = mdps[0].discount
    offsets = np.cumsum([0] + lat.level_sizes)
    out = np.empty((total, len(mdps)))
    for lo in range(0, total, chunk):
        ids = np.arange(lo, min(total, lo + chunk), dtype=np.int64)
        digits = (ids[:, None] // (A ** np.arange(lat.n_nodes, dtype=np.int64))) % A
        d = np.broadcast_to(sigma[:, list(lat.start_states)][:, None, :],
                            (len(mdps), len(ids), lat.level_sizes[0])).copy()
        u = np.zeros((len(mdps), len(ids)))
        for t in range(lat.horizon):
            s = lat.states[t]
            act = digits[:, offsets[t]:offsets[t + 1]]
            u += (g ** t) * np.einsum("ipn,ipn->ip", d, R[:, s[None, :], act])
            if t + 1 < lat.horizon:
                onehot = act[:, :, None] == np.arange(A)[None, None, :]
                mass = d[..., None, None] * onehot[None, :, :, :, None] * P[:, s][:, None]
                d = mass.reshape(len(mdps), len(ids), -1)
        out[ids] = u.T
    return out


def sequence_form_minimax(mdps: Sequence[FiniteMDP], lattice: HistoryLattice | None = None
                          ) -> tuple[float, HistoryPolicyTree, np.ndarray]:
    """Exact ``min_pi max_i R(pi, mu_i)`` over all behavioural tree policies.

    The agent's realization plan ``x(h, a)`` makes every per-MDP utility
    linear, so the minimax problem is a single LP.  By the mixed/behavioural
    equivalence this equals the matrix game over all deterministic trees.
    Returns the value, the minimax behavioural policy and nature's worst-case
    belief (LP duals).
    """
    lat = lattice or task_lattice(mdps)
    A, S = lat.n_actions, lat.n_states
    P, R, _ = stack(mdps)
    chance = chance_weights(mdps, lat)
    g = mdps[0].discount
    u_star = optimal_utilities(mdps)
    offsets = np.cumsum([0] + [n * A for n in lat.level_sizes])
    n_var = offsets[-1] + 1
    # utility coefficients of x(n, a) for each MDP
    coef = np.zeros((len(mdps), n_var - 1))
    for t in range(lat.horizon):
        s = lat.states[t]
        coef[:, offsets[t]:offsets[t + 1]] = ((g ** t) * chance[t][:, :, None] * R[:, s, :]).reshape(len(mdps), -1)
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for k in range(lat.level_sizes[0]):
        for a in range(A):
            rows.append(r); cols.append(offsets[0] + k * A + a); vals.append(1.0)
        rhs.append(1.0)
        r += 1
    for t in range(1, lat.horizon):
        n_t = lat.level_sizes[t]
        parent_var = offsets[t - 1] + np.arange(n_t) // S  # node index // S = parent * A + a
        for k in range(n_t):
            for a in range(A):
                rows.append(r); cols.append(offsets[t] + k * A + a); vals.append(1.0)
            rows.append(r); cols.append(int(parent_var[k])); vals.append(-1.0)
            rhs.append(0.0)
            r += 1
    from scipy.sparse import coo_matrix
    A_eq = coo_matrix((vals, (rows, cols)), shape=(r, n_var)).tocsr()
    # u_star_i - coef_i . x <= v
    A_ub = np.hstack([-coef, -np.ones((len(mdps), 1))])
    c = np.zeros(n_var)
    c[-1] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=-u_star, A_eq=A_eq, b_eq=np.array(rhs),
                  bounds=[(0, None)] * (n_var - 1) + [(None, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"sequence-form LP failed: {res.message}")
    x = np.clip(res.x[:-1], 0, None)
    probs = []
    for t in range(lat.horizon):
        xt = x[offsets[t]:offsets[t + 1]].reshape(-1, A)
        den = xt.sum(axis=1, keepdims=True)
        probs.append(np.where(den > 1e-15, xt / np.where(den > 1e-15, den, 1.0), 1.0 / A))
    nature = np.clip(-res.ineqlin.marginals, 0, None)
    nature = nature / nature.sum() if nature.sum() > 0 else np.full(len(mdps), 1.0 / len(mdps))
    return float(res.x[-1]), HistoryPolicyTree(lat, probs), nature


def minimax_value(mdps: Sequence[FiniteMDP], max_policies: int = 10 ** 6) -> float:
    """Minimax Bayesian regret of a finite task over all tree policies.

    Enumerates deterministic trees and solves the matrix game when there are
    at most ``max_policies`` of them; otherwise uses the sequence-form LP.
    """
    lat = task_lattice(mdps)
    if count_deterministic_trees(lat) <= max_policies:
        loss = optimal_utilities(mdps)[None, :] - deterministic_tree_utilities(mdps, lat, max_policies)
        return solve_matrix_game(loss)[1]
    return sequence_form_minimax(mdps, lat)[0]


# ---------------------------------------------------------------------------
# posterior sampling
# ---------------------------------------------------------------------------

def _optimal_actions(mdps: Sequence[FiniteMDP]) -> np.ndarray:
    """Per-MDP greedy actions, shape ``(n_mdps, T, S)``."""
    return np.stack([np.argmax(backward_induction(m)[1].probs, axis=2) for m in mdps])


def psrl_evaluate(mdps: Sequence[FiniteMDP], belief, episode_length: int, n_episodes: int,
                  rng: np.random.Generator, n_mc: int = 10_000,
                  update: bool = False) -> tuple[float, float]:
    """Monte-Carlo Bayesian regret of posterior sampling; returns ``(mean, standard error)``.

    Each episode samples an MDP from the current belief and follows its
    optimal non-stationary policy.  With ``update`` the belief is
    conditioned on the transitions observed so far before each resample.
    Steps past ``episode_length * n_episodes`` keep the last sample.
    """
    belief = check_belief(belief)
    _, _, T = _shared_shape(mdps)
    if episode_length * n_episodes > T:
        raise ValueError("episodes exceed the horizon")
    P, R, sigma = stack(mdps)
    g = mdps[0].discount
    greedy = _optimal_actions(mdps)
    u_star = optimal_utilities(mdps)
    S = P.shape[1]
    true = rng.choice(len(mdps), size=n_mc, p=belief)
    states = (rng.random(n_mc)[:, None] > np.cumsum(sigma[true], axis=1)).sum(axis=1)
    states = np.minimum(states, S - 1)
    log_post = np.tile(np.log(np.maximum(belief, 1e-300)), (n_mc, 1))
    log_post[:, belief == 0] = -np.inf
    sampled = np.zeros(n_mc, dtype=np.int64)
    ret = np.zeros(n_mc)
    for t in range(T):
        if t % episode_length == 0 and t // episode_length < n_episodes:
            if update:
                post = np.exp(log_post - log_post.max(axis=1, keepdims=True))
                post /= post.sum(axis=1, keepdims=True)
            else:
                post = np.broadcast_to(belief, (n_mc, len(mdps)))
            sampled = (rng.random(n_mc)[:, None] > np.cumsum(post, axis=1)).sum(axis=1)
            sampled = np.minimum(sampled, len(mdps) - 1)
        actions = greedy[sampled, t, states]
        ret += (g ** t) * R[true, states, actions]
        cdf = np.cumsum(P[true, states, actions], axis=1)
        nxt = np.minimum((rng.random(n_mc)[:, None] > cdf).sum(axis=1), S - 1)
        if update:
            with np.errstate(divide="ignore"):
                log_post += np.log(P[:, states, actions, nxt].T)
        states = nxt
    samples = u_star[true] - ret
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(n_mc))


def psrl_utilities_exact(mdps: Sequence[FiniteMDP], belief, episode_length: int) -> np.ndarray:
    """Exact ``U(PSRL, mu_i)`` without belief updates.

    Episode samples are independent of the trajectory, so the expected
    reward of an episode is linear in its starting state distribution.
    """
    belief = check_belief(belief)
    _, _, T = _shared_shape(mdps)
    P, R, sigma = stack(mdps)
    g = mdps[0].discount
    greedy = _optimal_actions(mdps)
    out = np.zeros(len(mdps))
    for i in range(len(mdps)):
        d = sigma[i].copy()
        total = 0.0
        for start in range(0, T, episode_length):
            stop = min(T, start + episode_length)
            d_end = np.zeros_like(d)
            for j, bj in enumerate(belief):
                if bj == 0:
                    continue
                dj = d.copy()
                for t in range(start, stop):
                    a = greedy[j, t]
                    total += bj * (g ** t) * float(dj @ R[i, np.arange(len(dj)), a])
                    dj = dj @ P[i, np.arange(len(dj)), a]
                d_end += bj * dj
            d = d_end
        out[i] = total
    return out


def psrl_bayesian_regret_exact(mdps: Sequence[FiniteMDP], belief, episode_length: int) -> float:
    belief = check_belief(belief)
    return float(belief @ (optimal_utilities(mdps) - psrl_utilities_exact(mdps, belief, episode_length)))
