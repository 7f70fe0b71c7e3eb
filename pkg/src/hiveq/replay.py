"""Trajectory storage with priority-proportional sampling.

A trajectory's priority is its normalized episode return plus a small
floor:

    p = clamp((sum_t r_t - L) / (H - L), 0, 1) + eps

with (L, H) the configured return bounds of the task. The floor keeps every
stored trajectory sampleable. Buffers hold whole episodes in a fixed-size
ring (strict FIFO eviction) with a sum tree over priorities so proportional
sampling and insertion are O(log n).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

DEFAULT_PRIORITY_EPS = 0.01
DEFAULT_CAPACITY = 5000


@dataclass
class Trajectory:
    """One episode of joint experience.

    Shapes: obs (T+1, n_agents, obs_dim), state (T+1, state_dim),
    avail (T+1, n_agents, n_actions), actions (T, n_agents), rewards (T,),
    terminated (T,). The trailing rows of obs/state/avail describe the
    post-step situation used for bootstrapping.
    """

    obs: np.ndarray
    state: np.ndarray
    avail: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    container_id: int = 0
    priority: float = 0.0
    uid: tuple[int, int, int] = (0, 0, 0)

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


def compute_priority(
    trajectory_return: float | Trajectory,
    low: float,
    high: float,
    eps: float = DEFAULT_PRIORITY_EPS,
) -> float:
    """Normalized-return priority with a strictly positive floor."""
    if high <= low:
        raise ConfigurationError(f"return bounds must satisfy H > L, got L={low} H={high}")
    if eps <= 0:
        raise ConfigurationError("priority floor eps must be positive")
    total = (
        trajectory_return.episode_return
        if isinstance(trajectory_return, Trajectory)
        else float(trajectory_return)
    )
    normalized = (total - low) / (high - low)
    return float(np.clip(normalized, 0.0, 1.0)) + eps


class SumTree:
    """Array-backed binary tree whose internal nodes hold subtree sums."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ConfigurationError("sum tree capacity must be positive")
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity - 1)

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def set(self, index: int, value: float) -> None:
        i = index + self.capacity - 1
        delta = value - self.nodes[i]
        self.nodes[i] = value
        while i > 0:
            i = (i - 1) // 2
            self.nodes[i] += delta

    def get(self, index: int) -> float:
        return float(self.nodes[index + self.capacity - 1])

    def find_prefix(self, prefix: float) -> int:
        """Index of the first leaf whose cumulative sum exceeds ``prefix``."""
        i = 0
        while 2 * i + 1 < len(self.nodes):
            left = 2 * i + 1
            if prefix <= self.nodes[left]:
                i = left
            else:
                prefix -= self.nodes[left]
                i = left + 1
        return i - (self.capacity - 1)


@dataclass
class BufferStats:
    inserted: int = 0
    evicted: int = 0
    sampled: int = 0

    def snapshot(self) -> dict:
        return {"inserted": self.inserted, "evicted": self.evicted, "sampled": self.sampled}


class PrioritizedBuffer:
    """Ring of trajectories with priority-proportional sampling.

    Owned by exactly one buffer-manager worker; needs no internal locking.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity <= 0:
            raise ConfigurationError("buffer capacity must be positive")
        self.capacity = capacity
        self.tree = SumTree(capacity)
        self.storage: list[Trajectory | None] = [None] * capacity
        self.write = 0
        self.size = 0
        self.stats = BufferStats()

    def __len__(self) -> int:
        return self.size

    def insert(self, trajectory: Trajectory) -> None:
        if trajectory.priority <= 0:
            raise ConfigurationError("trajectories must carry a positive priority")
        if self.storage[self.write] is not None:
            self.stats.evicted += 1
        self.storage[self.write] = trajectory
        self.tree.set(self.write, trajectory.priority)
        self.write = (self.write + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.stats.inserted += 1

    def insert_batch(self, batch: list[Trajectory]) -> None:
        for traj in batch:
            self.insert(traj)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Trajectory] | None:
        """``batch_size`` independent priority-proportional draws (with
        replacement), or None while the buffer is empty (caller waits)."""
        if self.size == 0:
            return None
        total = self.tree.total
        out = []
        for u in rng.random(batch_size):
            idx = self.tree.find_prefix(u * total)
            traj = self.storage[idx]
            if traj is None:  # numeric edge: prefix landed past the filled region
                idx = (self.write - 1) % self.capacity
                traj = self.storage[idx]
            out.append(traj)
        self.stats.sampled += batch_size
        return out

    def priority_histogram(self, bins: int = 10) -> np.ndarray:
        priorities = [t.priority for t in self.storage if t is not None]
        hist, _ = np.histogram(priorities, bins=bins) if priorities else (np.zeros(bins), None)
        return hist


def select_top_fraction(
    batch: list[Trajectory], eta_percent: float, rng: np.random.Generator
) -> list[Trajectory]:
    """Draw ceil(eta% of the batch) without replacement, proportionally to
    priority (Efraimidis-Spirakis exponential keys)."""
    if not 0 < eta_percent <= 100:
        raise ConfigurationError(f"eta must be in (0, 100], got {eta_percent}")
    if not batch:
        return []
    k = int(np.ceil(eta_percent / 100.0 * len(batch)))
    weights = np.array([t.priority for t in batch])
    keys = rng.exponential(size=len(batch)) / weights
    chosen = np.argsort(keys)[:k]
    return [batch[i] for i in sorted(chosen)]
