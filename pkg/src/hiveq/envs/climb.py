"""One-shot climb matrix game.

Every agent picks one of three actions. The team is paid 10 when everyone
picks action 0, nothing when only some do, and 5 when nobody does. The
payoff punishes near-misses of the coordinated optimum, which makes the
game a compact probe for whether a learner can hold on to the risky joint
optimum instead of settling for the safe 5.
"""

from __future__ import annotations

import numpy as np

from .base import Env, EnvSpec


class ClimbGame(Env):
    reward_deterministic = True

    def __init__(self, n_agents: int = 4):
        super().__init__()
        self.n_agents = n_agents
        self._spec = EnvSpec(
            n_agents=n_agents, n_actions=3, obs_dim=1, state_dim=1, episode_limit=1
        )

    @property
    def spec(self) -> EnvSpec:
        return self._spec

    def _reset(self) -> None:
        pass

    def _step(self, actions: np.ndarray) -> tuple[float, bool]:
        chose_zero = int(np.sum(actions == 0))
        if chose_zero == self.n_agents:
            reward = 10.0
        elif chose_zero == 0:
            reward = 5.0
        else:
            reward = 0.0
        return reward, True

    def observations(self) -> list[np.ndarray]:
        return [np.ones(1) for _ in range(self.n_agents)]

    def state(self) -> np.ndarray:
        return np.ones(1)
