"""Island broadcast task.

Ten islands (a 2x5 grid by default) each hold a backlog of messages,
starting at 1 and capped at 5. Per step an island may transmit one message
or stay silent. Transmissions from adjacent islands collide: colliding
messages are not delivered (they stay in the backlog) and each colliding
pair costs the team 10. Every successful transmission pays 0.1 and pops one
message. New messages arrive independently with probability 0.6 wherever
the backlog is below the cap.

Observation per island: one-hot island position followed by the island's
backlog scaled to [0, 1]. Global state: all backlogs scaled to [0, 1].
The neighbourhood is the 4-neighbourhood of the grid; pass an explicit
``adjacency`` (list of index pairs) for other topologies.
"""

from __future__ import annotations

import numpy as np

from .base import Env, EnvSpec

NOOP, SEND = 0, 1


def grid_adjacency(rows: int, cols: int) -> list[tuple[int, int]]:
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return edges


class Aloha(Env):
    def __init__(
        self,
        rows: int = 2,
        cols: int = 5,
        max_backlog: int = 5,
        arrival_prob: float = 0.6,
        episode_limit: int = 50,
        adjacency: list[tuple[int, int]] | None = None,
    ):
        super().__init__()
        self.n_islands = rows * cols
        self.max_backlog = max_backlog
        self.arrival_prob = arrival_prob
        self.edges = grid_adjacency(rows, cols) if adjacency is None else list(adjacency)
        self.backlogs = np.ones(self.n_islands, dtype=np.int64)
        self._spec = EnvSpec(
            n_agents=self.n_islands,
            n_actions=2,
            obs_dim=self.n_islands + 1,
            state_dim=self.n_islands,
            episode_limit=episode_limit,
        )

    @property
    def spec(self) -> EnvSpec:
        return self._spec

    def _reset(self) -> None:
        self.backlogs = np.ones(self.n_islands, dtype=np.int64)

    def avail_actions(self) -> list[np.ndarray]:
        masks = []
        for i in range(self.n_islands):
            m = np.array([True, self.backlogs[i] > 0])
            masks.append(m)
        return masks

    def _step(self, actions: np.ndarray) -> tuple[float, bool]:
        sending = actions == SEND
        collided = np.zeros(self.n_islands, dtype=bool)
        collisions = 0
        for i, j in self.edges:
            if sending[i] and sending[j]:
                collisions += 1
                collided[i] = collided[j] = True
        delivered = sending & ~collided
        self.backlogs[delivered] -= 1
        reward = 0.1 * int(delivered.sum()) - 10.0 * collisions
        arrivals = self._rng.random(self.n_islands) < self.arrival_prob
        room = self.backlogs < self.max_backlog
        self.backlogs[arrivals & room] += 1
        return reward, False

    def observations(self) -> list[np.ndarray]:
        return [
            np.concatenate(
                [self.one_hot(i, self.n_islands), [self.backlogs[i] / self.max_backlog]]
            )
            for i in range(self.n_islands)
        ]

    def state(self) -> np.ndarray:
        return self.backlogs / self.max_backlog
