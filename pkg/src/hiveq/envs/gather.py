"""Grid rendezvous version of the climb game.

Agents roam a square grid holding three goal cells. Every episode one goal
is secretly marked optimal; only agents that spawn within ``know_radius``
(Chebyshev) of it are told which one it is. The episode resolves the first
time every agent stands on some goal cell: +10 if all are on the optimal
goal, +5 if none are, and -5 for a split. Until then rewards are zero, so
the team must both discover the secret and synchronize its arrival.

Observation per agent: one-hot row, one-hot column, and a one-hot of the
optimal goal for informed agents (zeros otherwise). Global state: all agent
coordinates scaled to [0, 1] plus the optimal-goal one-hot.
"""

from __future__ import annotations

import numpy as np

from .base import Env, EnvSpec

STAY, UP, DOWN, LEFT, RIGHT = range(5)
MOVES = np.array([(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)])


class Gather(Env):
    def __init__(
        self,
        n_agents: int = 5,
        size: int = 7,
        goals: tuple[tuple[int, int], ...] = ((0, 3), (6, 0), (6, 6)),
        know_radius: int = 2,
        episode_limit: int = 30,
    ):
        super().__init__()
        self.n_agents = n_agents
        self.size = size
        self.goals = [tuple(g) for g in goals]
        if any(not (0 <= r < size and 0 <= c < size) for r, c in self.goals):
            raise ValueError("goal cells must lie inside the grid")
        self.know_radius = know_radius
        self.optimal = 0
        self.pos = np.zeros((n_agents, 2), dtype=np.int64)
        self.knows = np.zeros(n_agents, dtype=bool)
        self._spec = EnvSpec(
            n_agents=n_agents,
            n_actions=5,
            obs_dim=2 * size + len(self.goals),
            state_dim=2 * n_agents + len(self.goals),
            episode_limit=episode_limit,
        )

    @property
    def spec(self) -> EnvSpec:
        return self._spec

    def _reset(self) -> None:
        self.optimal = int(self._rng.integers(len(self.goals)))
        free = [
            (r, c)
            for r in range(self.size)
            for c in range(self.size)
            if (r, c) not in self.goals
        ]
        idx = self._rng.choice(len(free), size=self.n_agents, replace=True)
        self.pos = np.array([free[i] for i in idx], dtype=np.int64)
        opt = np.array(self.goals[self.optimal])
        dist = np.abs(self.pos - opt).max(axis=1)
        self.knows = dist <= self.know_radius

    def avail_actions(self) -> list[np.ndarray]:
        masks = []
        for r, c in self.pos:
            masks.append(
                np.array(
                    [True, r > 0, r < self.size - 1, c > 0, c < self.size - 1],
                    dtype=bool,
                )
            )
        return masks

    def _step(self, actions: np.ndarray) -> tuple[float, bool]:
        self.pos = self.pos + MOVES[actions]
        goal_index = np.full(self.n_agents, -1)
        for k, g in enumerate(self.goals):
            on_g = (self.pos[:, 0] == g[0]) & (self.pos[:, 1] == g[1])
            goal_index[on_g] = k
        if (goal_index >= 0).all():
            at_optimal = int(np.sum(goal_index == self.optimal))
            if at_optimal == self.n_agents:
                return 10.0, True
            if at_optimal == 0:
                return 5.0, True
            return -5.0, True
        return 0.0, False

    def observations(self) -> list[np.ndarray]:
        obs = []
        n_goals = len(self.goals)
        for i in range(self.n_agents):
            r, c = self.pos[i]
            goal_info = (
                self.one_hot(self.optimal, n_goals) if self.knows[i] else np.zeros(n_goals)
            )
            obs.append(
                np.concatenate([self.one_hot(int(r), self.size), self.one_hot(int(c), self.size), goal_info])
            )
        return obs

    def state(self) -> np.ndarray:
        coords = self.pos.reshape(-1) / (self.size - 1)
        return np.concatenate([coords, self.one_hot(self.optimal, len(self.goals))])
