"""Hospital staffing task.

Each step one of four hospitals is selected and announces how many agents
it needs on duty next step. Agents simultaneously choose which hospital to
work at; if the selected hospital ends up short, the team is punished by
the shortfall (arrivals minus need, a non-positive number). The need is an
integer drawn uniformly from [1, n_agents // 2], so full coverage is always
possible when the team converges on the announced hospital.

Observation per agent: one-hot of its current hospital, one-hot of the
selected hospital, and the announced need scaled by the team size. The
announcement is visible to everyone, which makes the observations reveal
the full game state. Global state: hospital occupancy fractions, the
selected hospital, and the scaled need.
"""

from __future__ import annotations

import numpy as np

from .base import Env, EnvSpec


class Disperse(Env):
    reward_deterministic = True

    def __init__(
        self,
        n_agents: int = 12,
        n_hospitals: int = 4,
        episode_limit: int = 25,
        need_range: tuple[int, int] | None = None,
        initial_need: tuple[int, int] | None = None,
    ):
        super().__init__()
        self.n_agents = n_agents
        self.n_hospitals = n_hospitals
        low, high = need_range if need_range else (1, max(1, n_agents // 2))
        self.need_low, self.need_high = low, high
        # (hospital, amount) override for the first announcement, used by
        # oracle tests that need a fixed single-step instance
        self.initial_need = initial_need
        self.positions = np.zeros(n_agents, dtype=np.int64)
        self.selected = 0
        self.need = 1
        self._spec = EnvSpec(
            n_agents=n_agents,
            n_actions=n_hospitals,
            obs_dim=2 * n_hospitals + 1,
            state_dim=2 * n_hospitals + 1,
            episode_limit=episode_limit,
        )

    @property
    def spec(self) -> EnvSpec:
        return self._spec

    def _draw_need(self) -> None:
        self.selected = int(self._rng.integers(self.n_hospitals))
        self.need = int(self._rng.integers(self.need_low, self.need_high + 1))

    def _reset(self) -> None:
        self.positions = self._rng.integers(self.n_hospitals, size=self.n_agents)
        if self.initial_need is not None:
            self.selected, self.need = self.initial_need
        else:
            self._draw_need()

    def _step(self, actions: np.ndarray) -> tuple[float, bool]:
        self.positions = actions.copy()
        arrived = int(np.sum(self.positions == self.selected))
        reward = float(min(0, arrived - self.need))
        self._draw_need()
        return reward, False

    def observations(self) -> list[np.ndarray]:
        announce = np.concatenate(
            [self.one_hot(self.selected, self.n_hospitals), [self.need / self.n_agents]]
        )
        return [
            np.concatenate([self.one_hot(int(p), self.n_hospitals), announce])
            for p in self.positions
        ]

    def state(self) -> np.ndarray:
        occupancy = np.bincount(self.positions, minlength=self.n_hospitals) / self.n_agents
        return np.concatenate(
            [occupancy, self.one_hot(self.selected, self.n_hospitals), [self.need / self.n_agents]]
        )
