"""Desk-scale experiment runners producing CSV rows and JSON records."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .beliefs import DirichletProductPrior, dirac, sample_transitions, simplex_grid
from .cutting_plane import cutting_plane_run, minimax_mixture
from .gda import GdaConfig, gda_run
from .histories import HistoryLattice
from .mdp import FiniteMDP, chain_mdp, chain_reward, gen_random_mdp, optimal_utility_batch
from .policy import SoftmaxPartitionPolicy, expected_value_batch
from .regret import (bayes_optimal_envelope, bayes_optimal_tree, bayesian_regret, optimal_utilities,
                     psrl_bayesian_regret_exact, psrl_evaluate, regrets, task_lattice)

# two random 3-state MDPs whose best responses differ, giving a nonzero minimax regret
BENCHMARK_SEEDS = (10, 11)


def benchmark_pair(seeds: Sequence[int] = BENCHMARK_SEEDS, n_states: int = 3, horizon: int = 5,
                   discount: float = 1.0) -> list[FiniteMDP]:
    return [gen_random_mdp(n_states, 2, seed=s, horizon=horizon, discount=discount) for s in seeds]


# 2-state, horizon-3 pair small enough for exhaustive pure-tree games
SMALL_SEEDS = (100, 101)


def small_pair(seeds: Sequence[int] = SMALL_SEEDS) -> list[FiniteMDP]:
    return [gen_random_mdp(2, 2, seed=s, horizon=3) for s in seeds]


def random_task(n_mdps: int, seed: int, n_states: int = 3, n_actions: int = 2, horizon: int = 5,
                discount: float = 1.0) -> list[FiniteMDP]:
    seeds = np.random.SeedSequence(seed).generate_state(n_mdps)
    return [gen_random_mdp(n_states, n_actions, seed=int(s), horizon=horizon, discount=discount)
            for s in seeds]


def write_rows(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def write_manifest(out_dir, kind: str, config: dict, seed: int, outputs: Sequence[str]) -> Path:
    manifest = {"kind": kind, "config": config, "config_sha256": config_hash(config), "seed": seed,
                "version": __version__, "numpy": np.__version__, "python": platform.python_version(),
                "outputs": list(outputs)}
    path = Path(out_dir) / f"{kind}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path


# ---------------------------------------------------------------------------
# finite MDP sets
# ---------------------------------------------------------------------------

@dataclass
class TwoMdpCurve:
    header: list[str]
    rows: list[list]
    beta_star: np.ndarray
    mixture_weights: np.ndarray
    minimax_value: float


def run_two_mdp_curve(mdps: Sequence[FiniteMDP], n_grid: int = 101, seed: int = 0,
                      cut_iterations: int = 30, psrl_episode_length: int = 1, psrl_mc: int = 2000,
                      psrl_update: bool = False) -> TwoMdpCurve:
    """Bayesian regret of several policies along ``beta = (x, 1 - x)``.

    Columns: the Bayes-optimal envelope, each best response collected by the
    cutting-plane run (lines), the minimax mixture of those responses, and
    PSRL (exact without updates, plus a Monte-Carlo estimate).
    """
    rng = np.random.default_rng(seed)
    u_star = optimal_utilities(mdps)
    cut = cutting_plane_run(mdps, cut_iterations, rng)
    mix = minimax_mixture(mdps, cut.best_responses, u_star)
    xs = np.linspace(0.0, 1.0, n_grid)
    betas = np.column_stack([xs, 1 - xs])
    env, _, _ = bayes_optimal_envelope(mdps, betas, u_star)
    lines = mix.payoff                              # (n_responses, n_mdps)
    mix_r = mix.weights @ lines
    T = mdps[0].horizon
    n_episodes = -(-T // psrl_episode_length)
    rows = []
    for x, b, e in zip(xs, betas, env):
        psrl_exact = (psrl_bayesian_regret_exact(mdps, b, psrl_episode_length)
                      if not psrl_update else np.nan)
        m, se = psrl_evaluate(mdps, b, psrl_episode_length, n_episodes, rng, psrl_mc, psrl_update)
        rows.append([x, e] + list(lines @ b) + [float(mix_r @ b), psrl_exact, m, se])
    header = (["beta_0", "bayes_optimal"] + [f"response_{j}" for j in range(len(lines))]
              + ["minimax_mixture", "psrl_exact", "psrl_mc", "psrl_se"])
    return TwoMdpCurve(header, rows, cut.beta_star, mix.weights, mix.value)


def run_three_mdp_grid(mdps: Sequence[FiniteMDP], resolution: float = 0.05):
    """Envelope value and its gradient (per-MDP regrets of the best response) on the 2-simplex."""
    if len(mdps) != 3:
        raise ValueError("need exactly three MDPs")
    grid = simplex_grid(3, resolution)
    env, grads, _ = bayes_optimal_envelope(mdps, grid)
    tangent = grads - grads.mean(axis=1, keepdims=True)
    rows = [list(b) + [v] + list(g) + list(tg) for b, v, g, tg in zip(grid, env, grads, tangent)]
    header = ["x", "y", "z", "bayes_regret", "grad_0", "grad_1", "grad_2", "tangent_0", "tangent_1",
              "tangent_2"]
    return header, rows


@dataclass
class CompareRow:
    seed: int
    minimax: float
    uniform: float
    minimax_value_lp: float
    n_responses: int


def run_compare16(seeds: Sequence[int] = (0, 1, 2, 3, 4), n_mdps: int = 16, n_states: int = 3,
                  horizon: int = 4, discount: float = 0.9, cut_iterations: int = 30) -> list[CompareRow]:
    """Worst-case Bayesian regret of the minimax mixture vs the uniform-belief best response."""
    out = []
    for seed in seeds:
        mdps = random_task(n_mdps, seed, n_states, 2, horizon, discount)
        u_star = optimal_utilities(mdps)
        cut = cutting_plane_run(mdps, cut_iterations, np.random.default_rng(seed))
        mix = minimax_mixture(mdps, cut.best_responses, u_star)
        uniform_policy, _ = bayes_optimal_tree(mdps, np.full(n_mdps, 1.0 / n_mdps))
        worst_mix = float(regrets(mix.policy, mdps, u_star).max())
        worst_uniform = float(regrets(uniform_policy, mdps, u_star).max())
        out.append(CompareRow(seed, worst_mix, worst_uniform, mix.value, len(cut.best_responses)))
    return out


# ---------------------------------------------------------------------------
# Dirichlet priors
# ---------------------------------------------------------------------------

@dataclass
class MixturePrior:
    """Finite mixture of Dirichlet-product priors (Bayesian regret is linear in the weights)."""

    components: list[DirichletProductPrior]
    weights: np.ndarray

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        which = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n,) + self.components[0].alpha.shape)
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(which == k)
            if idx.size:
                out[idx] = _draw(comp, idx.size, rng)
        return out


def _draw(prior: DirichletProductPrior, n: int, rng: np.random.Generator) -> np.ndarray:
    if prior.point_mass is not None:
        return np.broadcast_to(prior.point_mass, (n,) + prior.point_mass.shape).copy()
    return sample_transitions(prior.alpha, n, rng)


def sample_prior(prior, n: int, rng: np.random.Generator) -> np.ndarray:
    return prior.sample(n, rng) if isinstance(prior, MixturePrior) else _draw(prior, n, rng)


def regret_samples(policy: SoftmaxPartitionPolicy, prior, template: DirichletProductPrior, n: int,
                   rng: np.random.Generator, chunk: int = 2000) -> np.ndarray:
    """Exact per-MDP regrets of ``policy`` for ``n`` MDPs drawn from ``prior``."""
    mu = sample_prior(prior, n, rng)
    sigma = template.initial_distribution()
    out = np.empty(n)
    for lo in range(0, n, chunk):
        P = mu[lo:lo + chunk]
        u = expected_value_batch(policy, P, template.reward, template.horizon, template.discount, sigma)
        u_star = optimal_utility_batch(P, template.reward, template.horizon, template.discount, sigma)
        out[lo:lo + chunk] = u_star - u
    return out


@dataclass
class GdaDirichletConfig:
    n_states: int = 3
    horizon: int = 8
    window: int = 2
    alpha_uniform: float = 1.0
    alpha_deterministic: float = 0.05
    chain_slip: float = 0.2
    eta_policy: float = 2.0
    eta_belief: float = 0.003
    batch: int = 16
    iterations: int = 3000
    output: str = "last"
    n_eval: int = 10_000
    seed: int = 0


@dataclass
class RobustnessTable:
    policies: list[str]
    priors: list[str]
    mean: np.ndarray
    median: np.ndarray
    p999: np.ndarray
    se: np.ndarray
    beta_star: np.ndarray
    traces: dict = field(default_factory=dict)

    def rows(self):
        for i, p in enumerate(self.policies):
            for j, q in enumerate(self.priors):
                yield [p, q, float(self.mean[i, j]), float(self.se[i, j]), float(self.median[i, j]),
                       float(self.p999[i, j])]


def run_gda_dirichlet(config: GdaDirichletConfig) -> RobustnessTable:
    """Train three policies and compare their regret on six evaluation priors.

    Policies: best response to the uniform prior, the GDA minimax policy, and
    the best response to the GDA prior.  Best responses are trained with the
    same gradient estimator and a frozen prior.
    """
    S, T = config.n_states, config.horizon
    lat = (HistoryLattice.full(S, 2, T) if config.window is None
           else HistoryLattice.windowed(S, 2, T, config.window))
    reward = chain_reward(S)
    uniform = DirichletProductPrior(np.full((S, 2, S), config.alpha_uniform), reward, T)
    ss = np.random.SeedSequence(config.seed).spawn(4)

    def train(prior, eta_belief, seed_seq):
        cfg = GdaConfig(config.eta_policy, eta_belief, config.batch, config.iterations,
                        int(seed_seq.generate_state(1)[0]), "dirichlet", output=config.output)
        return gda_run(cfg, SoftmaxPartitionPolicy.zeros(lat), prior)

    br_uniform = train(uniform, 0.0, ss[0])
    minimax = train(uniform, config.eta_belief, ss[1])
    beta_star = minimax.prior
    br_star = train(beta_star, 0.0, ss[2])

    priors = {
        "uniform": uniform,
        "beta_star": beta_star,
        "mix_1/3": MixturePrior([uniform, beta_star], np.array([2 / 3, 1 / 3])),
        "mix_2/3": MixturePrior([uniform, beta_star], np.array([1 / 3, 2 / 3])),
        "deterministic": uniform.replace(alpha=np.full((S, 2, S), config.alpha_deterministic)),
        "chain": uniform.replace(point_mass=chain_mdp(S, config.chain_slip, T).transition),
    }
    policies = {"pi_uniform": br_uniform.policy, "pi_minimax": minimax.policy, "pi_beta_star": br_star.policy}
    shape = (len(policies), len(priors))
    mean, med, p999, se = (np.zeros(shape) for _ in range(4))
    eval_seed = int(ss[3].generate_state(1)[0])
    # common random numbers: every policy sees the same sampled MDPs per prior
    for j, prior in enumerate(priors.values()):
        for i, pol in enumerate(policies.values()):
            r = regret_samples(pol, prior, uniform, config.n_eval, np.random.default_rng([eval_seed, j]))
            mean[i, j], med[i, j] = r.mean(), np.median(r)
            p999[i, j], se[i, j] = np.quantile(r, 0.999), r.std(ddof=1) / np.sqrt(r.size)
    return RobustnessTable(list(policies), list(priors), mean, med, p999, se, beta_star.alpha,
                           {"minimax": minimax.trace})
