"""Prioritized experience replay: proportional sampling over a sum-tree with
stratified draws, importance weights normalized by the global maximum, and
priority updates from absolute TD errors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Underfilled(RuntimeError):
    """Sampling requested more transitions than the buffer holds."""


@dataclass(frozen=True)
class Transition:
    state: object
    actions: np.ndarray   # (N,) level indices
    reward: float
    next_state: object
    terminal: bool


@dataclass(frozen=True)
class ReplayConfig:
    capacity: int = 100_000
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    eps_priority: float = 0.01

    def beta_at(self, frac: float) -> float:
        return self.beta_start + (self.beta_end - self.beta_start) * min(max(frac, 0.0), 1.0)


class SumTree:
    """Array-backed binary tree over leaf priorities; internal nodes hold the
    sum of their children. Parallel min/max trees support exact global
    weight normalization and the push-at-max-priority rule."""

    def __init__(self, capacity: int):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError("capacity must be a positive power of two")
        self.capacity = capacity
        self.sums = np.zeros(2 * capacity)
        self.mins = np.full(2 * capacity, np.inf)
        self.maxs = np.zeros(2 * capacity)
        self.size = 0

    @property
    def total(self) -> float:
        return float(self.sums[1])

    def max_leaf(self) -> float:
        return float(self.maxs[1])

    def min_leaf(self) -> float:
        return float(self.mins[1])

    def update(self, leaf: int, priority: float) -> None:
        if not 0 <= leaf < self.capacity:
            raise IndexError(f"leaf {leaf} out of range")
        if priority < 0:
            raise ValueError("priority must be non-negative")
        i = leaf + self.capacity
        self.sums[i] = priority
        self.mins[i] = priority
        self.maxs[i] = priority
        i //= 2
        while i >= 1:
            left, right = 2 * i, 2 * i + 1
            self.sums[i] = self.sums[left] + self.sums[right]
            self.mins[i] = min(self.mins[left], self.mins[right])
            self.maxs[i] = max(self.maxs[left], self.maxs[right])
            i //= 2

    def get(self, leaf: int) -> float:
        return float(self.sums[leaf + self.capacity])

    def find(self, mass: float) -> int:
        """Leaf whose cumulative-priority interval contains `mass`."""
        i = 1
        while i < self.capacity:
            left = 2 * i
            if mass <= self.sums[left] or self.sums[left + 1] == 0.0:
                i = left
            else:
                mass -= self.sums[left]
                i = left + 1
        return min(i - self.capacity, max(self.size - 1, 0))


class ReplayBuffer:
    """FIFO ring of transitions with proportional prioritization."""

    def __init__(self, config: ReplayConfig = ReplayConfig()):
        self.config = config
        cap = 1
        while cap < config.capacity:
            cap *= 2
        self.tree = SumTree(cap)
        self._data: list[Transition | None] = [None] * config.capacity
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, transition: Transition) -> None:
        priority = self.tree.max_leaf() if self._size else 1.0
        self._data[self._cursor] = transition
        self.tree.update(self._cursor, priority)
        self._cursor = (self._cursor + 1) % self.config.capacity
        self._size = min(self._size + 1, self.config.capacity)
        self.tree.size = self._size

    def sample(self, k: int, beta: float,
               rng: np.random.Generator) -> tuple[list[Transition], np.ndarray, np.ndarray]:
        """Stratified proportional draw of k transitions.

        Returns (transitions, importance weights normalized by the global max
        weight, leaf indices for priority updates).
        """
        if self._size < k:
            raise Underfilled(f"buffer holds {self._size} < batch {k}")
        total = self.tree.total
        segment = total / k
        leaves = np.empty(k, dtype=np.int64)
        offsets = rng.random(k)
        for i in range(k):
            mass = (i + offsets[i]) * segment
            leaves[i] = self.tree.find(mass)
        probs = np.array([self.tree.get(int(l)) for l in leaves]) / total
        if beta == 0.0:
            weights = np.ones(k)
        else:
            weights = (self._size * probs) ** (-beta)
            min_prob = self.tree.min_leaf() / total
            weights /= (self._size * min_prob) ** (-beta)
        batch = [self._data[int(l)] for l in leaves]
        return batch, weights, leaves

    def update_priorities(self, leaves: np.ndarray, td_errors: np.ndarray) -> None:
        if len(leaves) != len(td_errors):
            raise ValueError("leaves and td_errors must have equal length")
        for leaf, err in zip(leaves, td_errors):
            if not 0 <= int(leaf) < self._size:
                raise IndexError(f"leaf {int(leaf)} out of range")
            p = (abs(float(err)) + self.config.eps_priority) ** self.config.alpha
            self.tree.update(int(leaf), p)
