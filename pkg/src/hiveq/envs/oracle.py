"""Exhaustive-search oracle for tiny instances.

Enumerates every legal joint-action sequence by cloning the environment at
each branch and returns the best total reward. Only valid where the reward
is a deterministic function of the actions over the searched horizon, so it
refuses environments that do not declare ``reward_deterministic`` as well
as instances whose search space is too large.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from ..errors import ConfigurationError
from .base import Env

MAX_JOINT_ACTIONS = 10_000_000
MAX_HORIZON = 3


def brute_force_optimal_return(env: Env, horizon: int | None = None) -> float:
    spec = env.spec
    if horizon is None:
        horizon = spec.episode_limit
    if horizon > MAX_HORIZON:
        raise ConfigurationError(
            f"refusing exhaustive search over horizon {horizon} (max {MAX_HORIZON})"
        )
    if spec.n_actions**spec.n_agents > MAX_JOINT_ACTIONS:
        raise ConfigurationError("refusing exhaustive search: joint action space too large")
    if not env.reward_deterministic:
        raise ConfigurationError(
            "refusing exhaustive search: rewards are not action-deterministic"
        )

    def best(node: Env, depth: int) -> float:
        masks = node.avail_actions()
        legal = [np.flatnonzero(m) for m in masks]
        best_total = -np.inf
        for joint in product(*legal):
            child = node.clone()
            res = child.step(np.array(joint))
            total = res.reward
            if not res.terminated and depth > 1:
                total += best(child, depth - 1)
            best_total = max(best_total, total)
        return best_total

    return float(best(env, horizon))
