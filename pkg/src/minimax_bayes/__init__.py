"""Minimax-Bayes reinforcement learning on finite MDP sets and Dirichlet priors."""

__version__ = "0.1.0"
