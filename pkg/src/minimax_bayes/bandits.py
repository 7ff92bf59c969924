"""Bernoulli bandits with Beta priors: Gittins indices and Bayesian regret.

Indices come from the retirement calibration: at belief ``Beta(a, b)`` the
index is the per-step reward ``lambda`` at which continuing to pull the arm
and retiring forever on ``lambda / (1 - gamma)`` are equally good.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, stats

DEFAULT_GRID = 1001


@dataclass
class BetaProductPrior:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("a and b must be 1-D arrays of equal length")
        if np.any(self.a <= 0) or np.any(self.b <= 0):
            raise ValueError("Beta parameters must be positive")

    @property
    def n_arms(self) -> int:
        return self.a.size

    @classmethod
    def symmetric(cls, n_arms: int, a: float, b: float | None = None) -> "BetaProductPrior":
        return cls(np.full(n_arms, a), np.full(n_arms, a if b is None else b))


@dataclass
class GittinsTable:
    """Indices ``index[s, f]`` at belief ``Beta(a + s, b + f)`` for ``s + f <= n_max``."""

    a: float
    b: float
    gamma: float
    n_max: int
    index: np.ndarray
    truncation_error: float

    def lookup(self, s: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Index at counts ``(s, f)``; the posterior mean beyond the table."""
        inside = s + f <= self.n_max
        si, fi = np.where(inside, s, 0), np.where(inside, f, 0)
        mean = (self.a + s) / (self.a + self.b + s + f)
        return np.where(inside, self.index[si, fi], mean)

    def __call__(self, a: float, b: float) -> float:
        """Index at an integer offset ``(a - self.a, b - self.b)`` of the base prior."""
        s, f = int(round(a - self.a)), int(round(b - self.b))
        if s < 0 or f < 0 or abs(s - (a - self.a)) > 1e-9 or abs(f - (b - self.b)) > 1e-9:
            raise KeyError("(a, b) is not on the table's lattice")
        return float(self.lookup(np.array(s), np.array(f)))


def _calibrate(a0: float, b0: float, gamma: float, n_max: int, lam: np.ndarray) -> np.ndarray:
    """Index at every lattice node by locating the indifference point on ``lam``."""
    scale = 1.0 / (1.0 - gamma)
    retire = lam[:, None] * scale
    index = np.full((n_max + 1, n_max + 1), np.nan)
    # boundary: the arm is treated as known, worth its mean forever
    s = np.arange(n_max + 1)
    mean = (a0 + s) / (a0 + b0 + n_max)
    v = np.maximum(lam[:, None], mean[None, :]) * scale
    for depth in range(n_max, -1, -1):
        s = np.arange(depth + 1)
        p = (a0 + s) / (a0 + b0 + depth)
        if depth == n_max:
            cont = mean[None, :] * scale + 0.0 * lam[:, None]
        else:
            cont = p * (1.0 + gamma * v[:, 1:depth + 2]) + (1 - p) * gamma * v[:, :depth + 1]
            v = np.maximum(retire, cont)
        diff = cont - retire                       # decreasing in lambda
        k = (diff > 0).sum(axis=0)                 # first grid index with diff <= 0
        k = np.clip(k, 1, lam.size - 1)
        cols = np.arange(depth + 1)
        d0, d1 = diff[k - 1, cols], diff[k, cols]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(d0 != d1, d0 / (d0 - d1), 0.0)
        index[s, depth - s] = np.clip(lam[k - 1] + w * (lam[k] - lam[k - 1]), lam[0], lam[-1])
    return index


@lru_cache(maxsize=256)
def _cached_table(a: float, b: float, gamma: float, n_max: int, grid: int) -> GittinsTable:
    lam = np.linspace(0.0, 1.0, grid)
    index = _calibrate(a, b, gamma, n_max, lam)
    return GittinsTable(a, b, gamma, n_max, index, gamma ** n_max / (1 - gamma))


def gittins_table(gamma: float, n_max: int, a: float = 1.0, b: float = 1.0,
                  grid: int = DEFAULT_GRID) -> GittinsTable:
    """Gittins indices on the lattice rooted at ``Beta(a, b)``.

    The optimal-stopping problem is solved for every ``lambda`` on a uniform
    grid of ``grid`` points in ``[0, 1]`` at once, and each node's index is
    the linear interpolation of its indifference crossing.  The lattice is
    cut at ``n_max`` observations, where the arm is valued at its mean; this
    perturbs values by at most ``gamma**n_max / (1 - gamma)``.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    return _cached_table(float(a), float(b), float(gamma), int(n_max), int(grid))


def _run_policy(prior: BetaProductPrior, theta: np.ndarray, u_reward: np.ndarray, gamma: float,
                index_fn) -> np.ndarray:
    """Expected discounted reward of an index policy for each sampled ``theta`` row.

    The regret uses the expected reward of the chosen arm (its ``theta``),
    while the posterior is updated with the Bernoulli outcome.
    """
    n, K = theta.shape
    horizon = u_reward.shape[1]
    s = np.zeros((n, K), dtype=np.int64)
    f = np.zeros((n, K), dtype=np.int64)
    rows = np.arange(n)
    total = np.zeros(n)
    g = 1.0
    for t in range(horizon):
        idx = index_fn(s, f)
        arm = np.argmax(idx, axis=1)
        total += g * theta[rows, arm]
        success = u_reward[:, t] < theta[rows, arm]
        s[rows, arm] += success
        f[rows, arm] += ~success
        g *= gamma
    return total


def _index_fn(prior: BetaProductPrior, gamma: float, n_max: int, grid: int, greedy: bool):
    a, b = prior.a, prior.b
    if greedy:
        return lambda s, f: (a + s) / (a + b + s + f)
    tables = [gittins_table(gamma, n_max, a[k], b[k], grid) for k in range(prior.n_arms)]
    return lambda s, f: np.column_stack([tables[k].lookup(s[:, k], f[:, k]) for k in range(len(tables))])


def sample_common(prior: BetaProductPrior, n_mc: int, horizon: int, rng: np.random.Generator):
    """Uniforms driving the arm means (by inverse CDF) and the reward draws."""
    return rng.random((n_mc, prior.n_arms)), rng.random((n_mc, horizon))


@dataclass
class RegretEstimate:
    mean: float
    se: float


def gittins_regret(prior: BetaProductPrior, gamma: float, horizon_trunc: int = 200, n_mc: int = 10_000,
                   rng: np.random.Generator | None = None, n_max: int = 200, grid: int = DEFAULT_GRID,
                   greedy: bool = False, common=None) -> RegretEstimate:
    """Monte-Carlo Bayesian regret of the Gittins (or greedy) policy.

    Per replication, ``theta ~ prior`` and the regret sample is
    ``max_k theta_k (1 - gamma^H) / (1 - gamma)`` minus the expected
    discounted reward collected in ``H = horizon_trunc`` steps.
    """
    if prior.n_arms < 2:
        raise ValueError("need at least two arms")
    if common is None:
        rng = rng or np.random.default_rng()
        common = sample_common(prior, n_mc, horizon_trunc, rng)
    u_theta, u_reward = common
    theta = stats.beta.ppf(u_theta, prior.a[None, :], prior.b[None, :])
    collected = _run_policy(prior, theta, u_reward, gamma,
                            _index_fn(prior, gamma, n_max, grid, greedy))
    best = theta.max(axis=1) * (1 - gamma ** u_reward.shape[1]) / (1 - gamma)
    r = best - collected
    return RegretEstimate(float(r.mean()), float(r.std(ddof=1) / np.sqrt(r.size)))


def expected_max(prior: BetaProductPrior) -> float:
    """``E[max_k theta_k]`` for independent Beta arms, by quadrature."""
    def integrand(x):
        cdf = stats.beta.cdf(x, prior.a, prior.b)
        return 1.0 - np.prod(cdf)
    return float(integrate.quad(integrand, 0.0, 1.0, limit=200)[0])


def exact_index_policy_regret(prior: BetaProductPrior, gamma: float, horizon: int,
                              n_max: int = 200, grid: int = DEFAULT_GRID, greedy: bool = False) -> float:
    """Bayesian regret of an index policy by recursion over all count vectors.

    Intended for small horizons; the state is the tuple of per-arm
    ``(successes, failures)``.
    """
    index_fn = _index_fn(prior, gamma, n_max, grid, greedy)
    K = prior.n_arms
    memo: dict[tuple, float] = {}

    def value(state: tuple, t: int) -> float:
        if t == horizon:
            return 0.0
        key = (state, t)
        if key in memo:
            return memo[key]
        s = np.array(state[0::2])[None, :]
        f = np.array(state[1::2])[None, :]
        k = int(np.argmax(index_fn(s, f)[0]))
        p = (prior.a[k] + s[0, k]) / (prior.a[k] + prior.b[k] + s[0, k] + f[0, k])
        win = list(state)
        win[2 * k] += 1
        lose = list(state)
        lose[2 * k + 1] += 1
        v = p * (1 + gamma * value(tuple(win), t + 1)) + (1 - p) * gamma * value(tuple(lose), t + 1)
        memo[key] = v
        return v

    collected = value((0,) * (2 * K), 0)
    return expected_max(prior) * (1 - gamma ** horizon) / (1 - gamma) - collected


def regret_surface(fixed: tuple[float, float], a2_values, b2_values, gamma: float,
                   horizon_trunc: int = 200, n_mc: int = 10_000, seed: int = 0,
                   n_max: int = 200, grid: int = DEFAULT_GRID) -> tuple[np.ndarray, np.ndarray]:
    """Regret estimates and standard errors over a grid of second-arm priors.

    Every cell uses the same seed, so all cells share common random numbers
    and any single cell can be recomputed bit-identically.
    """
    a2_values, b2_values = np.asarray(a2_values, float), np.asarray(b2_values, float)
    mean = np.zeros((a2_values.size, b2_values.size))
    se = np.zeros_like(mean)
    for i, a2 in enumerate(a2_values):
        for j, b2 in enumerate(b2_values):
            mean[i, j], se[i, j] = surface_cell(fixed, a2, b2, gamma, horizon_trunc, n_mc, seed,
                                                n_max, grid)
    return mean, se


def surface_cell(fixed, a2, b2, gamma, horizon_trunc=200, n_mc=10_000, seed=0, n_max=200,
                 grid=DEFAULT_GRID) -> tuple[float, float]:
    prior = BetaProductPrior([fixed[0], a2], [fixed[1], b2])
    est = gittins_regret(prior, gamma, horizon_trunc, n_mc, np.random.default_rng(seed), n_max, grid)
    return est.mean, est.se


def write_surface_csv(path, a2_values, b2_values, mean, se) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a2", "b2", "regret", "se"])
        for i, a2 in enumerate(a2_values):
            for j, b2 in enumerate(b2_values):
                w.writerow([repr(float(a2)), repr(float(b2)), repr(float(mean[i, j])), repr(float(se[i, j]))])


@dataclass
class WorstCasePrior:
    a_star: float
    regret: float
    se: float
    grid: np.ndarray
    regrets: np.ndarray
    ses: np.ndarray


def worst_case_prior(n_arms: int, gamma: float, a_grid=None, horizon_trunc: int = 200,
                     n_mc: int = 10_000, seed: int = 0, n_max: int = 200,
                     grid: int = DEFAULT_GRID) -> WorstCasePrior:
    """Grid search over symmetric ``Beta(a, a)`` priors for the largest Gittins regret.

    All grid points share common random numbers (the arm means are drawn by
    inverse CDF from the same uniforms), which keeps the curve smooth.
    """
    if a_grid is None:
        a_grid = np.round(np.arange(0.2, 2.01, 0.1), 10)
    a_grid = np.asarray(a_grid, dtype=float)
    regrets, ses = np.zeros(a_grid.size), np.zeros(a_grid.size)
    for i, a in enumerate(a_grid):
        prior = BetaProductPrior.symmetric(n_arms, a)
        est = gittins_regret(prior, gamma, horizon_trunc, n_mc, np.random.default_rng(seed), n_max, grid)
        regrets[i], ses[i] = est.mean, est.se
    k = int(np.argmax(regrets))
    return WorstCasePrior(float(a_grid[k]), float(regrets[k]), float(ses[k]), a_grid, regrets, ses)
