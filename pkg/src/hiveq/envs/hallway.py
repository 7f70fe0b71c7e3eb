"""Multi-chain rendezvous task.

Each agent walks its own chain toward a common goal cell g (position 0).
Agents are partitioned into groups; a group wins +1 only if all of its
surviving members step onto g in the same timestep. A member arriving
early removes its whole group without reward. If more than one group tries
to enter g in the same step, none of those agents move and the team is
punished 0.5 per attempting group. The horizon is max chain length + 10.

Chain lengths are drawn once per environment instance (uniform in
``length_range``) from the construction seed; positions are re-drawn each
episode. An agent observes its own position as a one-hot over
``max_length + 1`` slots; removed agents observe zeros and may only no-op.
Global state: every agent's position one-hot plus an alive flag.
"""

from __future__ import annotations

import numpy as np

from .base import Env, EnvSpec

STAY, LEFT, RIGHT = 0, 1, 2


class Hallway(Env):
    def __init__(
        self,
        n_agents: int = 12,
        n_groups: int = 4,
        length_range: tuple[int, int] = (4, 8),
        seed: int = 0,
    ):
        super().__init__()
        if n_agents % n_groups:
            raise ValueError("n_agents must divide evenly into groups")
        self.n_agents = n_agents
        self.n_groups = n_groups
        self.group_of = np.repeat(np.arange(n_groups), n_agents // n_groups)
        rng = np.random.default_rng(seed)
        self.lengths = rng.integers(length_range[0], length_range[1] + 1, size=n_agents)
        self.max_length = int(self.lengths.max())
        self.positions = np.ones(n_agents, dtype=np.int64)
        self.alive = np.ones(n_agents, dtype=bool)
        self.group_active = np.ones(n_groups, dtype=bool)
        pos_slots = self.max_length + 1
        self._spec = EnvSpec(
            n_agents=n_agents,
            n_actions=3,
            obs_dim=pos_slots,
            state_dim=n_agents * (pos_slots + 1),
            episode_limit=self.max_length + 10,
        )

    @property
    def spec(self) -> EnvSpec:
        return self._spec

    def _reset(self) -> None:
        self.positions = np.array(
            [self._rng.integers(1, l + 1) for l in self.lengths], dtype=np.int64
        )
        self.alive = np.ones(self.n_agents, dtype=bool)
        self.group_active = np.ones(self.n_groups, dtype=bool)

    def avail_actions(self) -> list[np.ndarray]:
        masks = []
        for i in range(self.n_agents):
            if not self.alive[i]:
                masks.append(np.array([True, False, False]))
                continue
            pos = self.positions[i]
            masks.append(np.array([True, pos >= 1, pos + 1 <= self.lengths[i]]))
        return masks

    def _step(self, actions: np.ndarray) -> tuple[float, bool]:
        target = self.positions.copy()
        movers = self.alive
        target[movers & (actions == LEFT)] -= 1
        target[movers & (actions == RIGHT)] += 1

        arriving = movers & (target == 0)
        arriving_groups = np.unique(self.group_of[arriving])
        reward = 0.0
        if arriving_groups.size > 1:
            # contention at the goal: the attempting agents stay put
            target[arriving] = self.positions[arriving]
            reward -= 0.5 * arriving_groups.size
        elif arriving_groups.size == 1:
            g = int(arriving_groups[0])
            members = self.alive & (self.group_of == g)
            if (arriving == members).all():
                reward += 1.0
            self.alive[members] = False
            self.group_active[g] = False

        self.positions = target
        terminated = not self.group_active.any()
        return reward, terminated

    def observations(self) -> list[np.ndarray]:
        slots = self.max_length + 1
        obs = []
        for i in range(self.n_agents):
            if self.alive[i]:
                obs.append(self.one_hot(int(self.positions[i]), slots))
            else:
                obs.append(np.zeros(slots))
        return obs

    def state(self) -> np.ndarray:
        slots = self.max_length + 1
        parts = []
        for i in range(self.n_agents):
            pos = self.one_hot(int(self.positions[i]), slots) if self.alive[i] else np.zeros(slots)
            parts.append(np.concatenate([pos, [float(self.alive[i])]]))
        return np.concatenate(parts)
