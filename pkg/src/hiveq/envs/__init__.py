"""Task registry."""

from __future__ import annotations

from ..errors import ConfigurationError
from .aloha import Aloha
from .base import Env, EnvSpec, StepResult
from .climb import ClimbGame
from .disperse import Disperse
from .gather import Gather
from .hallway import Hallway
from .oracle import brute_force_optimal_return

REGISTRY = {
    "climb": ClimbGame,
    "aloha": Aloha,
    "disperse": Disperse,
    "hallway": Hallway,
    "gather": Gather,
}

# Analytic whole-episode return bounds used to normalize trajectory
# priorities, keyed by task name. Rough bounds are fine: out-of-range
# returns are clamped before the priority floor is added.
RETURN_BOUNDS = {
    "climb": (-5.0, 10.0),
    "gather": (-5.0, 10.0),
    "aloha": (-50.0, 5.0),
    "disperse": (-30.0, 0.0),
    "hallway": (-2.0, 4.0),
}


def make_env(name: str, **params) -> Env:
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown environment {name!r}; choices: {sorted(REGISTRY)}"
        ) from None
    return cls(**params)


__all__ = [
    "Env",
    "EnvSpec",
    "StepResult",
    "ClimbGame",
    "Aloha",
    "Disperse",
    "Hallway",
    "Gather",
    "brute_force_optimal_return",
    "make_env",
    "REGISTRY",
    "RETURN_BOUNDS",
]
