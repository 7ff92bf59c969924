"""Centroid cutting planes for the maximin belief over a finite MDP set.

The envelope ``f(beta) = min_pi R_bayes(pi, beta)`` is concave, and the
Bayesian regret of a best response at ``beta_t`` is a linear function
``C . beta`` touching ``f`` from above at ``beta_t``.  Keeping the side where
that plane increases never discards a maximiser, and cutting through an
approximate centroid removes a constant fraction of the volume.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mdp import FiniteMDP, HistoryPolicyTree
from .regret import (bayes_optimal_tree, mixture_to_behavioral, optimal_utilities, solve_matrix_game, utilities)

CUT_INSET = 1e-12


class DegeneratePolytopeError(ValueError):
    pass


class EmptyPolytopeError(RuntimeError):
    def __init__(self, message: str, last_belief: np.ndarray):
        super().__init__(message)
        self.last_belief = last_belief


@dataclass
class CutPolytope:
    """Simplex in ``R^n`` intersected with halfspaces ``c . beta >= b``."""

    n: int
    cuts: list[tuple[np.ndarray, float]] = field(default_factory=list)
    interior: np.ndarray | None = None
    samples: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.interior is None:
            self.interior = np.full(self.n, 1.0 / self.n)

    def constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """All halfspaces as ``(C, b)`` with rows ``C[k] . beta >= b[k]``; facets first."""
        C = [np.eye(self.n)] + [c[None, :] for c, _ in self.cuts]
        b = [np.zeros(self.n)] + [np.array([v]) for _, v in self.cuts]
        return np.vstack(C), np.concatenate(b)

    def add_cut(self, c, b: float) -> None:
        self.cuts.append((np.asarray(c, dtype=float).copy(), float(b)))

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        C, b = self.constraints()
        pts = np.atleast_2d(points)
        return np.all(pts @ C.T >= b - tol, axis=1) & (np.abs(pts.sum(axis=1) - 1) < 1e-9)

    def to_dict(self) -> dict:
        return {"n": self.n, "cuts": [{"c": c.tolist(), "b": b} for c, b in self.cuts],
                "interior": self.interior.tolist()}


def _tangent_directions(rng: np.random.Generator, k: int, n: int) -> np.ndarray:
    d = rng.standard_normal((k, n))
    d -= d.mean(axis=1, keepdims=True)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def hit_and_run(polytope: CutPolytope, n_samples: int = 2000, burn_in: int = 500,
                rng: np.random.Generator | None = None, thin: int = 5,
                chains: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Approximately uniform samples from the polytope and their mean.

    Runs ``chains`` independent chains from the stored interior point in the
    affine hull of the simplex; each chain discards ``burn_in`` steps and then
    keeps every ``thin``-th point.
    """
    rng = rng or np.random.default_rng()
    n = polytope.n
    if n == 1:
        pts = np.ones((n_samples, 1))
        return pts, pts.mean(axis=0)
    C, b = polytope.constraints()
    x0 = polytope.interior
    slack0 = C @ x0 - b
    if abs(x0.sum() - 1) > 1e-9 or np.any(slack0 <= 0):
        k = int(np.argmin(slack0))
        raise DegeneratePolytopeError(
            f"interior point is not strictly inside facet {k} (slack {slack0[k]:.3g}); "
            "the polytope may be lower-dimensional")
    chains = max(1, min(chains, n_samples))
    per_chain = -(-n_samples // chains)
    x = np.tile(x0, (chains, 1))
    out = []
    for step in range(burn_in + per_chain * thin):
        d = _tangent_directions(rng, chains, n)
        slack = x @ C.T - b                      # (chains, m), >= 0
        rate = d @ C.T                           # change of each constraint per unit step
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -slack / rate
        hi = np.where(rate < 0, t, np.inf).min(axis=1)
        lo = np.where(rate > 0, t, -np.inf).max(axis=1)
        lo, hi = np.minimum(lo, 0.0), np.maximum(hi, 0.0)
        x = x + (lo + (hi - lo) * rng.random(chains))[:, None] * d
        if step >= burn_in and (step - burn_in) % thin == thin - 1:
            out.append(x.copy())
    samples = np.stack(out, axis=1).reshape(-1, n)[:n_samples]
    polytope.samples = samples
    return samples, samples.mean(axis=0)


Oracle = Callable[[Sequence[FiniteMDP], np.ndarray], tuple[HistoryPolicyTree, float]]


def regret_plane(mdps: Sequence[FiniteMDP], belief, oracle: Oracle = bayes_optimal_tree,
                 u_star: np.ndarray | None = None) -> tuple[np.ndarray, HistoryPolicyTree]:
    """Per-MDP regrets of the oracle's best response at ``belief``.

    ``C . beta`` is that policy's Bayesian regret at any ``beta``.
    """
    if u_star is None:
        u_star = optimal_utilities(mdps)
    policy, _ = oracle(mdps, np.asarray(belief, dtype=float))
    return u_star - utilities(policy, mdps), policy


def _response_key(regrets: np.ndarray) -> bytes:
    # policies differing only on unreachable histories have identical regrets
    return np.round(regrets, 10).tobytes()


@dataclass
class CuttingPlaneResult:
    beta_star: np.ndarray
    value: float
    best_responses: list[HistoryPolicyTree]
    centroids: list[np.ndarray]
    planes: list[np.ndarray]
    policy_ids: list[int]
    volume_fractions: list[float]
    polytope: CutPolytope
    status: str

    def to_dict(self) -> dict:
        return {"beta_star": self.beta_star.tolist(), "value": self.value, "status": self.status,
                "centroids": [c.tolist() for c in self.centroids],
                "cuts": [p.tolist() for p in self.planes], "policy_ids": self.policy_ids,
                "volume_fractions": self.volume_fractions,
                "best_responses": [p.to_dict() for p in self.best_responses]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def cutting_plane_run(mdps: Sequence[FiniteMDP], iterations: int, rng: np.random.Generator,
                      tol: float = 1e-4, n_samples: int = 2000, burn_in: int = 500, thin: int = 5,
                      oracle: Oracle = bayes_optimal_tree) -> CuttingPlaneResult:
    """Locate the maximin belief by repeated centroid cuts.

    Each iteration estimates the centroid ``beta_t``, queries the oracle for a
    best response, and keeps ``{beta : C . (beta - beta_t) >= 0}``.  Stops
    after ``iterations`` cuts, when ``max_i C_i < tol`` or when ``C`` is
    constant across MDPs (the best response has the same regret everywhere,
    so ``beta_t`` already attains the maximin value).
    """
    n = len(mdps)
    u_star = optimal_utilities(mdps)
    poly = CutPolytope(n)
    samples, beta = hit_and_run(poly, n_samples, burn_in, rng, thin)
    responses, keys = [], {}
    centroids, planes, ids, fractions = [], [], [], []
    best_value, best_beta = -np.inf, beta
    status = "iterations"
    for _ in range(iterations):
        C, policy = regret_plane(mdps, beta, oracle, u_star)
        key = _response_key(C)
        if key not in keys:
            keys[key] = len(responses)
            responses.append(policy)
        centroids.append(beta.copy())
        planes.append(C)
        ids.append(keys[key])
        value = float(C @ beta)
        if value > best_value:
            best_value, best_beta = value, beta.copy()
        if np.abs(C).max() < tol:
            status = "zero-plane"
            break
        if np.ptp(C) < tol:
            status = "flat-plane"
            break
        b = float(C @ beta) + CUT_INSET
        keep = samples @ C >= b
        fractions.append(float(keep.mean()))
        poly.add_cut(C, b)
        if not keep.any():
            status = "empty"
            break
        poly.interior = samples[keep].mean(axis=0)
        try:
            samples, beta = hit_and_run(poly, n_samples, burn_in, rng, thin)
        except DegeneratePolytopeError:
            status = "degenerate"
            break
        if np.ptp(samples, axis=0).max() < 1e-10:
            status = "collapsed"
            break
    return CuttingPlaneResult(beta, best_value, responses, centroids, planes, ids, fractions, poly, status)


@dataclass
class MinimaxMixture:
    weights: np.ndarray
    value: float
    nature: np.ndarray
    payoff: np.ndarray
    policy: HistoryPolicyTree


def minimax_mixture(mdps: Sequence[FiniteMDP], best_responses: Sequence[HistoryPolicyTree],
                    u_star: np.ndarray | None = None) -> MinimaxMixture:
    """Mixed strategy over ``best_responses`` minimising the worst per-MDP regret.

    The payoff of policy ``j`` against MDP ``i`` is ``R(pi_j, mu_i)``; the
    returned behavioural policy reproduces the mixture's utilities exactly.
    """
    if not best_responses:
        raise ValueError("need at least one policy")
    if u_star is None:
        u_star = optimal_utilities(mdps)
    payoff = np.array([u_star - utilities(p, mdps) for p in best_responses])
    q, value, nature = solve_matrix_game(payoff)
    return MinimaxMixture(q, value, nature, payoff, mixture_to_behavioral(best_responses, q))
