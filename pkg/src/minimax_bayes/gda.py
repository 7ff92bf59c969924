"""Stochastic gradient descent-ascent over (policy, prior).

The policy descends the Bayesian regret while the prior ascends it, both
updated simultaneously from the same iterate.  Priors are either simplex
beliefs over a finite MDP list or Dirichlet-product priors over transitions.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .beliefs import (DirichletProductPrior, clip_alpha, dirichlet_score_batch, sample_transitions,
                      simplex_project)
from .mdp import FiniteMDP, optimal_utility_batch
from .policy import SoftmaxPartitionPolicy, utility_gradient_batch
from .mdp import HistoryPolicyTree
from .regret import agent_realization, optimal_utilities, stack

DIVERGENCE_LIMIT = 1e6


class GdaDivergenceError(RuntimeError):
    pass


@dataclass
class GdaConfig:
    eta_policy: float = 0.05
    eta_belief: float = 0.01
    batch: int = 16
    iterations: int = 5000
    seed: int = 0
    belief_kind: str = "finite"
    # finite beliefs: use the exact expectation over MDPs instead of sampling
    exact: bool = True
    # "random" draws one iterate uniformly; "mixture" returns the behavioural
    # policy equal in law to that draw, with the averaged prior; "last";
    # "best" (finite beliefs only) keeps the lowest worst-case regret iterate
    output: str = "random"
    baseline: bool = True
    # step sizes shrink as eta / k**decay; 0 keeps them constant
    decay: float = 0.0

    def __post_init__(self):
        if self.eta_policy < 0 or self.eta_belief < 0:
            raise ValueError("step sizes must be nonnegative")
        if self.batch < 1 or self.iterations < 1:
            raise ValueError("batch and iterations must be >= 1")
        if self.belief_kind not in ("finite", "dirichlet"):
            raise ValueError("belief_kind must be 'finite' or 'dirichlet'")
        if self.output not in ("random", "mixture", "last", "best"):
            raise ValueError("output must be 'random', 'mixture', 'last' or 'best'")


@dataclass
class GradientEstimate:
    g_policy: np.ndarray
    g_belief: np.ndarray
    var_policy: float
    var_belief: float
    regret: float
    n_clamped: int = 0


@dataclass
class FiniteTask:
    """Finite MDP list with cached stacked tensors and optimal utilities."""

    mdps: Sequence[FiniteMDP]
    transitions: np.ndarray = field(init=False)
    u_star: np.ndarray = field(init=False)

    def __post_init__(self):
        P, R, sigma = stack(self.mdps)
        if np.ptp(R, axis=0).max() > 0 or np.ptp(sigma, axis=0).max() > 0:
            raise ValueError("GDA over finite sets needs a shared reward and start distribution")
        self.transitions = P
        self.u_star = optimal_utilities(self.mdps)

    def utilities_and_gradients(self, policy: SoftmaxPartitionPolicy, idx=None):
        m = self.mdps[0]
        P = self.transitions if idx is None else self.transitions[idx]
        return utility_gradient_batch(policy, P, m.reward, m.horizon, m.discount, m.initial_distribution())


def stochastic_gradients(policy: SoftmaxPartitionPolicy, prior, M: int, rng: np.random.Generator,
                         exact: bool = False, baseline: bool = True,
                         task: FiniteTask | None = None) -> GradientEstimate:
    """Descent direction for the policy and ascent direction for the prior.

    ``prior`` is ``(mdps, belief)`` for finite sets or a
    :class:`DirichletProductPrior`.  ``g_policy`` is the gradient of the
    Bayesian regret in the policy weights (so the policy steps against it).
    """
    if isinstance(prior, DirichletProductPrior):
        return _dirichlet_gradients(policy, prior, M, rng, baseline)
    mdps, belief = prior
    task = task or FiniteTask(mdps)
    belief = np.asarray(belief, dtype=float)
    u, grads = task.utilities_and_gradients(policy)
    regrets = task.u_star - u
    if exact:
        g_pi = -np.tensordot(belief, grads, axes=1)
        var_pi = 0.0
    else:
        idx = rng.choice(len(mdps), size=M, p=belief)
        samples = -grads[idx]
        g_pi = samples.mean(axis=0)
        var_pi = float(((samples - g_pi) ** 2).sum() / max(M - 1, 1) / M)
    return GradientEstimate(g_pi, regrets, var_pi, 0.0, float(belief @ regrets))


def _dirichlet_gradients(policy, prior: DirichletProductPrior, M, rng, baseline):
    mu = sample_transitions(prior.alpha, M, rng)
    sigma = prior.initial_distribution()
    u, grads = utility_gradient_batch(policy, mu, prior.reward, prior.horizon, prior.discount, sigma)
    u_star = optimal_utility_batch(mu, prior.reward, prior.horizon, prior.discount, sigma)
    r = u_star - u
    score, n_clamped = dirichlet_score_batch(prior.alpha, mu)
    weight = r - (r.sum() - r) / (M - 1) if baseline and M > 1 else r
    terms = weight[:, None, None, None] * score
    g_beta = terms.mean(axis=0)
    g_pi = -grads.mean(axis=0)

    def var(x, mean):
        return float(((x - mean) ** 2).sum() / max(M - 1, 1) / M)

    return GradientEstimate(g_pi, g_beta, var(-grads, g_pi), var(terms, g_beta), float(r.mean()), n_clamped)


@dataclass
class GdaTrace:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def beliefs(self) -> np.ndarray:
        return np.array([r["beta"] for r in self.rows])

    def write_csv(self, path) -> None:
        n_beta = len(self.rows[0]["beta"]) if self.rows else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "bayes_regret_est", "worst_case_regret", "gpi_norm", "gbeta_norm",
                        "policy_id"] + [f"beta_{i}" for i in range(n_beta)])
            for r in self.rows:
                w.writerow([r["iter"], repr(r["bayes_regret_est"]), repr(r["worst_case_regret"]),
                            repr(r["gpi_norm"]), repr(r["gbeta_norm"]), r["policy_id"]]
                           + [repr(float(b)) for b in r["beta"]])


@dataclass
class GdaResult:
    policy: SoftmaxPartitionPolicy | HistoryPolicyTree
    prior: object
    trace: GdaTrace
    chosen_iteration: int
    variance_policy: float
    variance_belief: float
    config: dict


def _normalise_rows(num: np.ndarray) -> np.ndarray:
    den = num.sum(axis=1, keepdims=True)
    uniform = np.full_like(num, 1.0 / num.shape[1])
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), uniform)


def gda_run(config: GdaConfig, init_policy: SoftmaxPartitionPolicy, init_prior) -> GdaResult:
    """Simultaneous projected gradient descent-ascent.

    ``init_prior`` is ``(mdps, belief)`` or a :class:`DirichletProductPrior`.
    Iterate ``k`` (``1..iterations``) is the pair after ``k`` updates; by
    default one of them is returned uniformly at random.
    """
    rng = np.random.default_rng(config.seed)
    pick = int(rng.integers(1, config.iterations + 1))
    finite = not isinstance(init_prior, DirichletProductPrior)
    if finite != (config.belief_kind == "finite"):
        raise ValueError("prior type does not match belief_kind")
    if config.output == "best" and not finite:
        raise ValueError("output='best' needs a finite belief")
    if config.output == "mixture" and not init_policy.lattice.is_full():
        raise ValueError("output='mixture' needs a full history lattice")
    if finite:
        mdps, belief = init_prior
        task = FiniteTask(mdps)
        belief = simplex_project(belief)
    else:
        task = None
        belief = init_prior.alpha.copy()

    w = init_policy.weights.copy()
    trace = GdaTrace()
    chosen = (w.copy(), belief.copy())
    best = np.inf
    var_pi = var_beta = 0.0
    mix_num = [np.zeros((n, init_policy.lattice.n_actions)) for n in init_policy.lattice.level_sizes]
    belief_sum = np.zeros_like(belief)
    for k in range(1, config.iterations + 1):
        policy = init_policy.with_weights(w)
        prior = (mdps, belief) if finite else init_prior.replace(alpha=belief)
        est = stochastic_gradients(policy, prior, config.batch, rng, exact=config.exact,
                                   baseline=config.baseline, task=task)
        var_pi += est.var_policy
        var_beta += est.var_belief
        scale = k ** -config.decay
        w = w - scale * config.eta_policy * est.g_policy
        if finite:
            belief = simplex_project(belief + scale * config.eta_belief * est.g_belief)
        else:
            belief = clip_alpha(belief + scale * config.eta_belief * est.g_belief)
        if not np.all(np.isfinite(w)) or np.abs(w).max() > DIVERGENCE_LIMIT:
            raise GdaDivergenceError(f"policy weights diverged at iteration {k}")
        worst, reg = np.nan, None
        if finite:
            u, _ = task.utilities_and_gradients(init_policy.with_weights(w))
            reg = task.u_star - u
            worst = float(reg.max())
            if config.output == "best" and worst < best:
                best, chosen = worst, (w.copy(), belief.copy())
        trace.append(iter=k, bayes_regret_est=est.regret, worst_case_regret=worst,
                     gpi_norm=float(np.linalg.norm(est.g_policy)),
                     gbeta_norm=float(np.linalg.norm(est.g_belief)), policy_id=k,
                     beta=belief.ravel().copy(), regrets=reg)
        if config.output == "mixture":
            tree = init_policy.with_weights(w).to_tree()
            for acc, r, p in zip(mix_num, agent_realization(tree), tree.probs):
                acc += r[:, None] * p
            belief_sum += belief
        if (config.output == "random" and k == pick) or (config.output == "last" and k == config.iterations):
            chosen = (w.copy(), belief.copy())
    w_out, b_out = chosen
    policy_out = init_policy.with_weights(w_out)
    if config.output == "mixture":
        b_out = belief_sum / config.iterations
        if finite:
            b_out = b_out / b_out.sum()
        policy_out = HistoryPolicyTree(init_policy.lattice, [_normalise_rows(a) for a in mix_num])
    prior_out = (mdps, b_out) if finite else init_prior.replace(alpha=b_out)
    chosen_iter = pick if config.output in ("random", "mixture") else (
        config.iterations if config.output == "last" else int(np.argmin(trace.column("worst_case_regret"))) + 1)
    return GdaResult(policy_out, prior_out, trace, chosen_iter,
                     var_pi / config.iterations, var_beta / config.iterations, asdict(config))
