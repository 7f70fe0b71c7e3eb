"""Cooperative partially-observable environment interface.

All tasks share one contract: a team of ``n_agents`` agents acts jointly,
receives a single shared reward, and each agent sees only its own
observation while a global state vector is available for centralized
training. Action legality is exposed through per-agent masks and enforced:
stepping with an illegal action raises instead of silently clamping.
"""

from __future__ import annotations

import copy
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    episode_limit: int


@dataclass
class StepResult:
    reward: float
    terminated: bool
    next_obs: list[np.ndarray]
    next_state: np.ndarray
    avail_actions: list[np.ndarray]


class Env(ABC):
    """Base class handling seeding, step counting, and legality checks.

    Subclasses implement ``_reset`` and ``_step`` and may assume actions were
    validated. An episode terminates when the task says so or when the
    episode limit is reached, whichever comes first.
    """

    # True only for tasks whose reward is a deterministic function of the
    # joint actions over a short horizon; the exhaustive-search oracle
    # refuses everything else.
    reward_deterministic: bool = False

    def __init__(self):
        self._rng = np.random.default_rng(0)
        self._t = 0
        self._done = True

    @property
    @abstractmethod
    def spec(self) -> EnvSpec:
        ...

    @abstractmethod
    def _reset(self) -> None:
        ...

    @abstractmethod
    def _step(self, actions: np.ndarray) -> tuple[float, bool]:
        ...

    @abstractmethod
    def observations(self) -> list[np.ndarray]:
        ...

    @abstractmethod
    def state(self) -> np.ndarray:
        ...

    def avail_actions(self) -> list[np.ndarray]:
        """Per-agent boolean masks; default: everything legal."""
        return [np.ones(self.spec.n_actions, dtype=bool) for _ in range(self.spec.n_agents)]

    def reset(self, seed: int | np.random.Generator | None = None):
        if isinstance(seed, np.random.Generator):
            self._rng = seed
        elif seed is not None:
            self._rng = np.random.default_rng(seed)
        self._t = 0
        self._done = False
        self._reset()
        return self.observations(), self.state()

    def step(self, joint_action) -> StepResult:
        if self._done:
            raise ContractViolation("step() on a finished episode; call reset()")
        actions = np.asarray(joint_action, dtype=np.int64)
        if actions.shape != (self.spec.n_agents,):
            raise ContractViolation(
                f"expected {self.spec.n_agents} actions, got shape {actions.shape}"
            )
        masks = self.avail_actions()
        for i, a in enumerate(actions):
            if a < 0 or a >= self.spec.n_actions or not masks[i][a]:
                raise ContractViolation(f"agent {i}: action {a} is illegal at t={self._t}")
        reward, terminated = self._step(actions)
        self._t += 1
        if self._t >= self.spec.episode_limit:
            terminated = True
        self._done = terminated
        return StepResult(
            reward=float(reward),
            terminated=terminated,
            next_obs=self.observations(),
            next_state=self.state(),
            avail_actions=self.avail_actions(),
        )

    def clone(self) -> "Env":
        """Deep copy including RNG state (used by the search oracle)."""
        return copy.deepcopy(self)

    @staticmethod
    def one_hot(index: int, size: int) -> np.ndarray:
        v = np.zeros(size)
        v[index] = 1.0
        return v
