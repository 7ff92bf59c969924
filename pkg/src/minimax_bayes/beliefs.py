"""Priors over MDPs: simplex beliefs over finite sets and Dirichlet-product priors."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import digamma, gammaln

from .mdp import FiniteMDP

BELIEF_TOL = 1e-12
LOG_CLAMP = 1e-12
ALPHA_MIN = 0.01
ALPHA_MAX = 100.0


class PriorDomainError(ValueError):
    """Score requested at a point where the log density is undefined."""


def check_belief(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or np.any(w < -BELIEF_TOL) or abs(w.sum() - 1) > BELIEF_TOL:
        raise ValueError("belief must be a nonnegative vector summing to 1")
    return np.clip(w, 0.0, None)


def dirac(n: int, i: int) -> np.ndarray:
    w = np.zeros(n)
    w[i] = 1.0
    return w


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project non-finite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - (css - 1) / k > 0)[0][-1]
    theta = (css[rho] - 1) / (rho + 1)
    w = np.maximum(v - theta, 0.0)
    # renormalise away rounding so the BeliefVector invariant holds to 1e-12
    return w / w.sum()


def simplex_grid(n: int, resolution: float) -> np.ndarray:
    """All points of the simplex in ``R^n`` whose coordinates are multiples of ``resolution``."""
    m = int(round(1 / resolution))
    if abs(m * resolution - 1) > 1e-9:
        raise ValueError("resolution must divide 1")

    def rec(k, left):
        if k == 1:
            return np.array([[left]])
        parts = []
        for first in range(left + 1):
            rest = rec(k - 1, left - first)
            parts.append(np.column_stack([np.full(len(rest), first), rest]))
        return np.vstack(parts)

    return rec(n, m) / m


@dataclass
class BetaRewardPrior:
    """Independent ``Beta(alpha_s, beta_s)`` prior on a per-state reward ``rho_s``."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.alpha.shape != self.beta.shape or np.any(self.alpha <= 0) or np.any(self.beta <= 0):
            raise ValueError("Beta parameters must be positive and of equal shape")

    @property
    def p(self) -> np.ndarray:
        return self.alpha / (self.alpha + self.beta)

    @property
    def n(self) -> np.ndarray:
        return self.alpha + self.beta

    @classmethod
    def from_pn(cls, p, n) -> "BetaRewardPrior":
        p, n = np.asarray(p, dtype=float), np.asarray(n, dtype=float)
        if np.any(p <= 0) or np.any(p >= 1) or np.any(n <= 0):
            raise ValueError("need p in (0, 1) and n > 0")
        return cls(p * n, n * (1 - p))


@dataclass
class DirichletProductPrior:
    """Independent ``Dirichlet(alpha[s, a, :])`` per transition row.

    The remaining MDP ingredients (reward, horizon, discount, start state)
    are known and copied into every sampled MDP, unless ``reward_prior`` is
    given, in which case a per-state reward is drawn from it.
    """

    alpha: np.ndarray
    reward: np.ndarray
    horizon: int
    discount: float = 1.0
    initial_state: int | np.ndarray = 0
    reward_prior: BetaRewardPrior | None = None
    point_mass: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        if self.alpha.ndim != 3 or self.alpha.shape[0] != self.alpha.shape[2]:
            raise ValueError("alpha must have shape (S, A, S)")
        if np.any(self.alpha <= 0):
            raise ValueError("Dirichlet parameters must be positive")
        if self.reward.shape != self.alpha.shape[:2]:
            raise ValueError("reward must have shape (S, A)")
        if self.reward_prior is not None and self.reward_prior.alpha.shape != (self.alpha.shape[0],):
            raise ValueError("reward prior needs one Beta per state")

    @property
    def n_states(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_actions(self) -> int:
        return self.alpha.shape[1]

    def replace(self, **changes) -> "DirichletProductPrior":
        fields = dict(alpha=self.alpha, reward=self.reward, horizon=self.horizon,
                      discount=self.discount, initial_state=self.initial_state,
                      reward_prior=self.reward_prior, point_mass=self.point_mass)
        fields.update(changes)
        return DirichletProductPrior(**fields)

    def initial_distribution(self) -> np.ndarray:
        return self.make_mdp(np.full(self.alpha.shape, 1.0 / self.n_states)).initial_distribution()

    def make_mdp(self, transition: np.ndarray, reward: np.ndarray | None = None) -> FiniteMDP:
        return FiniteMDP(transition, self.reward if reward is None else reward,
                         self.horizon, self.discount, self.initial_state)

    def to_dict(self) -> dict:
        d = {"alpha": self.alpha.tolist(), "reward": self.reward.tolist(),
             "horizon": self.horizon, "discount": self.discount,
             "initial_state": self.initial_state if np.isscalar(self.initial_state)
             else np.asarray(self.initial_state).tolist(),
             "reward_prior": None}
        if self.reward_prior is not None:
            d["reward_prior"] = {"alpha": self.reward_prior.alpha.tolist(),
                                 "beta": self.reward_prior.beta.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DirichletProductPrior":
        rp = d.get("reward_prior")
        return cls(np.array(d["alpha"]), np.array(d["reward"]), d["horizon"],
                   d.get("discount", 1.0), d.get("initial_state", 0),
                   BetaRewardPrior(rp["alpha"], rp["beta"]) if rp else None)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def sample_transitions(alpha: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws of the transition tensor, shape ``(n, S, A, S)``."""
    g = rng.standard_gamma(np.broadcast_to(alpha, (n,) + alpha.shape))
    total = g.sum(axis=-1, keepdims=True)
    # all-zero gamma draws can happen for tiny alpha; fall back to the mode-free uniform row
    bad = total[..., 0] <= 0
    if np.any(bad):
        g[bad] = 1.0
        total = g.sum(axis=-1, keepdims=True)
    return g / total


def dirichlet_sample(prior: DirichletProductPrior, rng: np.random.Generator) -> FiniteMDP:
    """One MDP from the prior; rows independent ``Dirichlet(alpha[s, a])``."""
    if prior.point_mass is not None:
        return prior.make_mdp(prior.point_mass)
    p = sample_transitions(prior.alpha, 1, rng)[0]
    reward = None
    if prior.reward_prior is not None:
        rho = rng.beta(prior.reward_prior.alpha, prior.reward_prior.beta)
        reward = np.repeat(rho[:, None], prior.n_actions, axis=1)
    return prior.make_mdp(p, reward)


def dirichlet_log_density(alpha: np.ndarray, transition: np.ndarray) -> float:
    """``ln beta(mu)`` summed over all ``(s, a)`` rows."""
    return float(np.sum(gammaln(alpha.sum(axis=-1)) - gammaln(alpha).sum(axis=-1)
                        + ((alpha - 1) * np.log(transition)).sum(axis=-1)))


def dirichlet_score_batch(alpha: np.ndarray, transitions: np.ndarray,
                          clamp: bool = True) -> tuple[np.ndarray, int]:
    """Scores for a stack of transition tensors plus the number of clamped log arguments."""
    small = transitions < LOG_CLAMP
    n_clamped = int(small.sum())
    if n_clamped and not clamp:
        raise PriorDomainError("zero transition probability under a positive Dirichlet parameter")
    log_p = np.log(np.maximum(transitions, LOG_CLAMP))
    return digamma(alpha.sum(axis=-1, keepdims=True)) - digamma(alpha) + log_p, n_clamped


def dirichlet_score(prior: DirichletProductPrior, mdp: FiniteMDP, clamp: bool = False) -> np.ndarray:
    """``d ln beta(mu) / d alpha[s, a, i] = psi(sum_j alpha_saj) - psi(alpha_sai) + ln mu_sai``."""
    score, _ = dirichlet_score_batch(prior.alpha, mdp.transition, clamp=clamp)
    return score


def beta_log_density(alpha, beta, rho) -> float:
    alpha, beta, rho = (np.asarray(x, dtype=float) for x in (alpha, beta, rho))
    return float(np.sum(gammaln(alpha + beta) - gammaln(alpha) - gammaln(beta)
                        + (alpha - 1) * np.log(rho) + (beta - 1) * np.log1p(-rho)))


def beta_reward_score(prior: BetaRewardPrior, rho) -> dict[str, np.ndarray]:
    """Score of the per-state reward prior in both ``(alpha, beta)`` and ``(p, n)`` coordinates.

    ``rho`` may be an array of per-state rewards or an MDP whose reward is
    constant across actions.
    """
    if isinstance(rho, FiniteMDP):
        rho = rho.reward[:, 0]
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0) or np.any(rho >= 1):
        raise PriorDomainError("Beta score needs rewards strictly inside (0, 1)")
    a, b = prior.alpha, prior.beta
    d_alpha = digamma(a + b) - digamma(a) + np.log(rho)
    d_beta = digamma(a + b) - digamma(b) + np.log1p(-rho)
    p, n = prior.p, prior.n
    logit = np.log(rho) - np.log1p(-rho)
    d_p = n * (digamma(b) - digamma(a) + logit)
    d_n = p * (digamma(b) - digamma(a) + logit) + d_beta
    return {"alpha": d_alpha, "beta": d_beta, "p": d_p, "n": d_n}


def clip_alpha(alpha: np.ndarray, lo: float = ALPHA_MIN, hi: float = ALPHA_MAX) -> np.ndarray:
    """Projection of Dirichlet parameters onto the box ``[lo, hi]``."""
    return np.clip(alpha, lo, hi)
