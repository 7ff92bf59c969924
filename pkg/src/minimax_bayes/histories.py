"""Level-by-level enumeration of decision histories.

A history ``h_t = (s_1, a_1, s_2, ..., a_{t-1}, s_t)`` is stored as a flat
tuple of ints.  A :class:`HistoryLattice` groups histories into *nodes*,
one array per decision step, and records for every node its current state,
the parameter cell it maps to, and the child node reached after each
``(action, next_state)`` pair.

Two partitions are supported:

* full history (``window=None``): every history is its own node and cell,
  so the lattice is the complete history tree;
* suffix window of length ``L``: histories sharing their last ``L``
  ``(s, a, s')`` triples are merged.  The window plus the decision step is a
  sufficient statistic for the future under a windowed policy, so exact
  dynamic programming stays valid on the merged lattice.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TREE_HORIZON_LIMIT = 8
MAX_LATTICE_NODES = 5_000_000

History = tuple


class HorizonGuardError(ValueError):
    """Raised when an exact full-history computation would be too large."""


@dataclass(eq=False)
class HistoryLattice:
    n_states: int
    n_actions: int
    horizon: int
    start_states: tuple[int, ...]
    window: int | None
    states: list[np.ndarray]
    cells: list[np.ndarray]
    children: list[np.ndarray]
    n_cells: int
    _cell_index: dict = field(default_factory=dict, repr=False)

    @classmethod
    def full(cls, n_states: int, n_actions: int, horizon: int,
             start_states: Sequence[int] = (0,)) -> "HistoryLattice":
        """Complete history tree; refuses horizons above ``TREE_HORIZON_LIMIT``."""
        if horizon > TREE_HORIZON_LIMIT:
            raise HorizonGuardError(
                f"exact history trees need horizon <= {TREE_HORIZON_LIMIT}, got {horizon}")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        start = tuple(sorted(set(int(s) for s in start_states)))
        branch = n_actions * n_states
        total = len(start) * sum(branch ** t for t in range(horizon))
        if total > MAX_LATTICE_NODES:
            raise HorizonGuardError(f"history tree would have {total} nodes")

        states, cells, children = [], [], []
        n = len(start)
        states.append(np.asarray(start, dtype=np.int64))
        offset = 0
        for t in range(horizon):
            cells.append(offset + np.arange(n, dtype=np.int64))
            offset += n
            if t + 1 < horizon:
                children.append(np.arange(n * branch, dtype=np.int64).reshape(n, n_actions, n_states))
                states.append(np.tile(np.arange(n_states, dtype=np.int64), n * n_actions))
                n *= branch
        return cls(n_states, n_actions, horizon, start, None, states, cells, children, offset)

    @classmethod
    def windowed(cls, n_states: int, n_actions: int, horizon: int, window: int,
                 start_states: Sequence[int] = (0,)) -> "HistoryLattice":
        """Lattice whose nodes are the last ``window`` transitions plus the current state."""
        if window < 0:
            raise ValueError("window must be >= 0")
        start = tuple(sorted(set(int(s) for s in start_states)))
        keep = 2 * window + 1
        cell_index: dict[tuple, int] = {}

        def cell_of(key):
            if key not in cell_index:
                cell_index[key] = len(cell_index)
            return cell_index[key]

        level_keys = [(s,) for s in start]
        states, cells, children = [], [], []
        for t in range(horizon):
            states.append(np.array([k[-1] for k in level_keys], dtype=np.int64))
            cells.append(np.array([cell_of(k) for k in level_keys], dtype=np.int64))
            if t + 1 == horizon:
                break
            nxt: dict[tuple, int] = {}
            table = np.empty((len(level_keys), n_actions, n_states), dtype=np.int64)
            for i, key in enumerate(level_keys):
                for a in range(n_actions):
                    for s in range(n_states):
                        child = (key + (a, s))[-keep:]
                        table[i, a, s] = nxt.setdefault(child, len(nxt))
            children.append(table)
            level_keys = list(nxt)
        return cls(n_states, n_actions, horizon, start, window, states, cells, children,
                   len(cell_index), cell_index)

    @property
    def level_sizes(self) -> list[int]:
        return [len(s) for s in self.states]

    @property
    def n_nodes(self) -> int:
        return sum(self.level_sizes)

    def is_full(self) -> bool:
        return self.window is None

    def cell_key(self, history: Sequence[int]) -> tuple:
        h = tuple(int(x) for x in history)
        if self.window is None:
            return h
        return h[-(2 * self.window + 1):]

    def node_index(self, history: Sequence[int]) -> tuple[int, int]:
        """Return ``(level, index)`` of the node holding ``history``."""
        h = tuple(int(x) for x in history)
        if len(h) % 2 == 0 or not h:
            raise KeyError(f"malformed history {h!r}")
        t = len(h) // 2
        if t >= self.horizon:
            raise KeyError(f"history {h!r} is longer than the horizon")
        if h[0] not in self.start_states:
            raise KeyError(f"history {h!r} starts outside the lattice")
        idx = self.start_states.index(h[0])
        for k in range(t):
            a, s = h[2 * k + 1], h[2 * k + 2]
            if not (0 <= a < self.n_actions and 0 <= s < self.n_states):
                raise KeyError(f"history {h!r} has out-of-range entries")
            idx = int(self.children[k][idx, a, s])
        return t, idx

    def cell(self, history: Sequence[int]) -> int:
        t, idx = self.node_index(history)
        return int(self.cells[t][idx])

    def histories(self, level: int) -> list[History]:
        """All histories at a level of a full lattice, in node order."""
        if self.window is not None:
            raise ValueError("histories can only be listed on a full lattice")
        out = [(s,) for s in self.start_states]
        for _ in range(level):
            out = [h + (a, s) for h in out for a in range(self.n_actions)
                   for s in range(self.n_states)]
        return out

    def spec(self) -> dict:
        return {"n_states": self.n_states, "n_actions": self.n_actions,
                "horizon": self.horizon, "start_states": list(self.start_states),
                "window": self.window}

    @classmethod
    def from_spec(cls, spec: dict) -> "HistoryLattice":
        if spec.get("window") is None:
            return cls.full(spec["n_states"], spec["n_actions"], spec["horizon"],
                            spec.get("start_states", (0,)))
        return cls.windowed(spec["n_states"], spec["n_actions"], spec["horizon"],
                            spec["window"], spec.get("start_states", (0,)))


def push_forward(lattice: HistoryLattice, level: int, mass: np.ndarray) -> np.ndarray:
    """Sum ``mass[..., n, a, s']`` into the child nodes of ``level``."""
    table = lattice.children[level]
    n_next = lattice.level_sizes[level + 1]
    lead = mass.shape[:-3]
    flat = mass.reshape(lead + (-1,))
    if lattice.window is None:
        return flat.copy()
    idx = table.ravel()
    out = np.zeros(lead + (n_next,))
    if lead:
        out2 = out.reshape(-1, n_next)
        src = flat.reshape(-1, idx.size)
        for k in range(src.shape[0]):
            out2[k] = np.bincount(idx, weights=src[k], minlength=n_next)
        return out
    return np.bincount(idx, weights=flat, minlength=n_next)
