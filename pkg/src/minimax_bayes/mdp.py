"""Finite-horizon tabular MDPs, exact solvers and policy evaluation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .histories import HistoryLattice, push_forward

ROW_TOL = 1e-12
TIE_TOL = 1e-12


@dataclass(eq=False)
class FiniteMDP:
    """Tabular MDP ``(S, A, P, rho, T)`` with discount and initial state.

    ``transition[s, a, s']`` is ``P(s' | s, a)``; ``reward[s, a]`` lies in
    ``[0, 1]``.  ``initial_state`` is either a state index or a distribution.
    """

    transition: np.ndarray
    reward: np.ndarray
    horizon: int
    discount: float = 1.0
    initial_state: int | np.ndarray = 0

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError("transition must have shape (S, A, S)")
        if self.reward.shape != self.transition.shape[:2]:
            raise ValueError("reward must have shape (S, A)")
        if np.any(self.transition < 0) or np.any(
                np.abs(self.transition.sum(axis=2) - 1.0) > ROW_TOL):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if np.any(self.reward < 0) or np.any(self.reward > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = int(self.horizon)
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if not np.isscalar(self.initial_state):
            sigma = np.asarray(self.initial_state, dtype=float)
            if sigma.shape != (self.n_states,) or np.any(sigma < 0) or abs(sigma.sum() - 1) > ROW_TOL:
                raise ValueError("initial distribution must be a probability vector over states")
            self.initial_state = sigma
        elif not 0 <= int(self.initial_state) < self.n_states:
            raise ValueError("initial state out of range")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def initial_distribution(self) -> np.ndarray:
        if np.isscalar(self.initial_state):
            sigma = np.zeros(self.n_states)
            sigma[int(self.initial_state)] = 1.0
            return sigma
        return np.asarray(self.initial_state, dtype=float)

    def start_states(self) -> tuple[int, ...]:
        return tuple(int(s) for s in np.flatnonzero(self.initial_distribution() > 0))

    def max_utility(self) -> float:
        """Upper bound ``sum_t gamma^(t-1)`` on any policy's utility."""
        return float(sum(self.discount ** t for t in range(self.horizon)))

    def replace(self, **changes) -> "FiniteMDP":
        fields = dict(transition=self.transition, reward=self.reward, horizon=self.horizon,
                      discount=self.discount, initial_state=self.initial_state)
        fields.update(changes)
        return FiniteMDP(**fields)

    def to_dict(self) -> dict:
        init = self.initial_state
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "horizon": self.horizon,
            "discount": self.discount,
            "initial_state": int(init) if np.isscalar(init) else np.asarray(init).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteMDP":
        mdp = cls(np.array(d["transition"]), np.array(d["reward"]), d["horizon"],
                  d.get("discount", 1.0), d.get("initial_state", 0))
        if "n_states" in d and d["n_states"] != mdp.n_states:
            raise ValueError("n_states does not match the transition tensor")
        if "n_actions" in d and d["n_actions"] != mdp.n_actions:
            raise ValueError("n_actions does not match the transition tensor")
        return mdp


def save_mdps(mdps: Sequence[FiniteMDP], path: str | Path) -> None:
    Path(path).write_text(json.dumps({"mdps": [m.to_dict() for m in mdps]}))


def load_mdps(path: str | Path) -> list[FiniteMDP]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict) and "mdps" in data:
        data = data["mdps"]
    if isinstance(data, dict):
        data = [data]
    return [FiniteMDP.from_dict(d) for d in data]


@dataclass(eq=False)
class MemorylessPolicy:
    """Action probabilities ``probs[s, a]``, or ``probs[t, s, a]`` per step."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim not in (2, 3):
            raise ValueError("probs must have shape (S, A) or (T, S, A)")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=-1) - 1) > ROW_TOL):
            raise ValueError("policy rows must be probability vectors")

    def at(self, t: int) -> np.ndarray:
        return self.probs[t] if self.probs.ndim == 3 else self.probs

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "MemorylessPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(eq=False)
class HistoryPolicyTree:
    """Per-node action distributions on a :class:`HistoryLattice`.

    On a full lattice this is a behavioural policy ``pi(a | h_t)`` over every
    history up to the horizon.
    """

    lattice: HistoryLattice
    probs: list[np.ndarray]

    def __post_init__(self):
        sizes = self.lattice.level_sizes
        if len(self.probs) != len(sizes):
            raise ValueError(f"policy has {len(self.probs)} levels, lattice has {len(sizes)}")
        for t, (p, n) in enumerate(zip(self.probs, sizes)):
            if p.shape != (n, self.lattice.n_actions):
                raise ValueError(f"level {t}: expected probs of shape {(n, self.lattice.n_actions)}, "
                                 f"got {p.shape}")
            if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1) > ROW_TOL):
                raise ValueError(f"level {t}: node distributions must sum to 1")

    def action_probs(self, history) -> np.ndarray:
        t, idx = self.lattice.node_index(history)
        return self.probs[t][idx]

    def to_tree(self) -> "HistoryPolicyTree":
        return self

    def to_dict(self) -> dict:
        return {"lattice": self.lattice.spec(), "probs": [p.tolist() for p in self.probs]}

    @classmethod
    def from_dict(cls, d: dict) -> "HistoryPolicyTree":
        lattice = HistoryLattice.from_spec(d["lattice"])
        return cls(lattice, [np.asarray(p, dtype=float) for p in d["probs"]])

    @classmethod
    def uniform(cls, lattice: HistoryLattice) -> "HistoryPolicyTree":
        return cls(lattice, [np.full((n, lattice.n_actions), 1.0 / lattice.n_actions)
                             for n in lattice.level_sizes])

    @classmethod
    def deterministic(cls, lattice: HistoryLattice, actions: list[np.ndarray]) -> "HistoryPolicyTree":
        eye = np.eye(lattice.n_actions)
        return cls(lattice, [eye[np.asarray(a, dtype=np.int64)] for a in actions])

    @classmethod
    def from_memoryless(cls, lattice: HistoryLattice, policy: MemorylessPolicy) -> "HistoryPolicyTree":
        return cls(lattice, [policy.at(t)[s].copy() for t, s in enumerate(lattice.states)])


def argmax_lowest(values: np.ndarray, axis: int = -1, tol: float = TIE_TOL) -> np.ndarray:
    """Argmax that resolves near-ties (within ``tol``) toward the lowest index."""
    best = values.max(axis=axis, keepdims=True)
    return np.argmax(values >= best - tol, axis=axis)


def backward_induction(mdp: FiniteMDP) -> tuple[np.ndarray, MemorylessPolicy, float]:
    """Optimal values ``V[t, s]`` (``t = 0..T``), greedy per-step policy and ``U*``.

    ``V[t]`` is the optimal discounted reward collected from step ``t+1`` on,
    discounted relative to that step.
    """
    S, A, T, g = mdp.n_states, mdp.n_actions, mdp.horizon, mdp.discount
    values = np.zeros((T + 1, S))
    actions = np.zeros((T, S), dtype=np.int64)
    for t in range(T - 1, -1, -1):
        q = mdp.reward + g * mdp.transition @ values[t + 1]
        actions[t] = argmax_lowest(q)
        values[t] = q[np.arange(S), actions[t]]
    probs = np.eye(A)[actions]
    return values, MemorylessPolicy(probs), float(mdp.initial_distribution() @ values[0])


def optimal_utility(mdp: FiniteMDP) -> float:
    return backward_induction(mdp)[2]


def optimal_utility_batch(transition: np.ndarray, reward: np.ndarray, horizon: int,
                          discount: float, initial: np.ndarray) -> np.ndarray:
    """``U*`` for a stack of MDPs; ``transition`` has shape ``(B, S, A, S)``."""
    B, S = transition.shape[:2]
    reward = np.broadcast_to(reward, transition.shape[:3])
    v = np.zeros((B, S))
    for _ in range(horizon):
        q = reward + discount * np.einsum("bsan,bn->bsa", transition, v)
        v = q.max(axis=2)
    return v @ initial if initial.ndim == 1 else (v * initial).sum(axis=1)


def _tree_of(policy) -> HistoryPolicyTree:
    if isinstance(policy, HistoryPolicyTree):
        return policy
    if hasattr(policy, "to_tree"):
        return policy.to_tree()
    raise TypeError(f"cannot evaluate policy of type {type(policy).__name__}")


def _check_start(lattice: HistoryLattice, sigma: np.ndarray) -> None:
    missing = [s for s in np.flatnonzero(sigma > 0) if int(s) not in lattice.start_states]
    if missing:
        raise KeyError(f"policy has no history node for start state(s) {missing}")


def evaluate_memoryless(mdp: FiniteMDP, policy: MemorylessPolicy) -> float:
    if policy.probs.shape[-2:] != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    if policy.probs.ndim == 3 and policy.probs.shape[0] < mdp.horizon:
        raise KeyError("per-step policy is shorter than the horizon")
    d = mdp.initial_distribution()
    total, g = 0.0, 1.0
    for t in range(mdp.horizon):
        pi = policy.at(t)
        total += g * float(d @ (pi * mdp.reward).sum(axis=1))
        d = np.einsum("s,sa,san->n", d, pi, mdp.transition)
        g *= mdp.discount
    return total


def tree_reach(lattice: HistoryLattice, probs: list[np.ndarray], transition: np.ndarray,
               sigma: np.ndarray) -> list[np.ndarray]:
    """Reach probabilities of every node; leading batch dims of ``transition`` are kept."""
    lead = transition.shape[:-3]
    d = sigma[..., list(lattice.start_states)] * np.ones(lead + (1,))
    out = [d]
    for t in range(lattice.horizon - 1):
        s = lattice.states[t]
        mass = d[..., :, None, None] * probs[t][:, :, None] * transition[..., s, :, :]
        d = push_forward(lattice, t, mass)
        out.append(d)
    return out


def evaluate_tree(mdp: FiniteMDP, tree: HistoryPolicyTree) -> float:
    lat = tree.lattice
    if (lat.n_states, lat.n_actions) != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy lattice does not match the MDP's state/action spaces")
    if lat.horizon < mdp.horizon:
        raise KeyError(f"policy covers {lat.horizon} steps, MDP horizon is {mdp.horizon}")
    sigma = mdp.initial_distribution()
    _check_start(lat, sigma)
    reach = tree_reach(lat, tree.probs, mdp.transition, sigma)
    total, g = 0.0, 1.0
    for t in range(mdp.horizon):
        r = (tree.probs[t] * mdp.reward[lat.states[t]]).sum(axis=1)
        total += g * float(reach[t] @ r)
        g *= mdp.discount
    return total


def evaluate_policy(mdp: FiniteMDP, policy) -> float:
    """Exact expected utility ``U(pi, mu)`` by forward dynamic programming."""
    if isinstance(policy, MemorylessPolicy):
        return evaluate_memoryless(mdp, policy)
    return evaluate_tree(mdp, _tree_of(policy))


def rollout_returns(mdp: FiniteMDP, policy, n: int, rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo discounted returns of ``n`` independent episodes."""
    if isinstance(policy, MemorylessPolicy):
        get = lambda t, nodes, states: policy.at(t)[states]
        lattice = None
    else:
        tree = _tree_of(policy)
        lattice = tree.lattice
        get = lambda t, nodes, states: tree.probs[t][nodes]
    S = mdp.n_states
    states = rng.choice(S, size=n, p=mdp.initial_distribution())
    nodes = None
    if lattice is not None:
        lookup = {s: i for i, s in enumerate(lattice.start_states)}
        nodes = np.array([lookup[int(s)] for s in states], dtype=np.int64)
    ret = np.zeros(n)
    g = 1.0
    for t in range(mdp.horizon):
        p = get(t, nodes, states)
        actions = (rng.random(n)[:, None] > np.cumsum(p, axis=1)).sum(axis=1)
        actions = np.minimum(actions, mdp.n_actions - 1)
        ret += g * mdp.reward[states, actions]
        cdf = np.cumsum(mdp.transition[states, actions], axis=1)
        nxt = np.minimum((rng.random(n)[:, None] > cdf).sum(axis=1), S - 1)
        if lattice is not None and t + 1 < mdp.horizon:
            nodes = lattice.children[t][nodes, actions, nxt]
        states = nxt
        g *= mdp.discount
    return ret


def gen_random_mdp(n_states: int, n_actions: int, seed=None, horizon: int = 5,
                   discount: float = 1.0) -> FiniteMDP:
    """Exponential(1) transition rows, normalised; reward 1 only at ``(S-1, 0)``; start in 0."""
    if n_states < 2:
        raise ValueError("need at least two states")
    rng = np.random.default_rng(seed)
    p = rng.exponential(1.0, size=(n_states, n_actions, n_states))
    p /= p.sum(axis=2, keepdims=True)
    reward = np.zeros((n_states, n_actions))
    reward[n_states - 1, 0] = 1.0
    return FiniteMDP(p, reward, horizon, discount, 0)


@dataclass(frozen=True)
class ChainConstants:
    end_reward: float = 1.0
    return_reward: float = 0.2
    slip: float = 0.2


def chain_reward(n_states: int, constants: ChainConstants = ChainConstants()) -> np.ndarray:
    reward = np.zeros((n_states, 2))
    reward[:, 1] = constants.return_reward
    reward[n_states - 1, 0] = constants.end_reward
    return reward


def chain_mdp(n_states: int, slip: float = 0.2, horizon: int = 10, discount: float = 1.0,
              constants: ChainConstants = ChainConstants()) -> FiniteMDP:
    """Chain task: action 0 advances (staying put at the end), action 1 returns to 0.

    With probability ``slip`` the effect of the chosen action is swapped.
    Rewards are ``end_reward`` for advancing in the last state and
    ``return_reward`` for the return action in any state.
    """
    if n_states < 2:
        raise ValueError("need at least two states")
    if not 0 <= slip <= 1:
        raise ValueError("slip must be a probability")
    p = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        advance = min(s + 1, n_states - 1)
        p[s, 0, advance] += 1 - slip
        p[s, 0, 0] += slip
        p[s, 1, 0] += 1 - slip
        p[s, 1, advance] += slip
    return FiniteMDP(p, chain_reward(n_states, constants), horizon, discount, 0)
