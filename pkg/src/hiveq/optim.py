"""RMSprop, the only optimizer the system uses.

Plain RMSprop without momentum or weight decay:

    square_avg <- alpha * square_avg + (1 - alpha) * g^2
    p          <- p - lr * g / sqrt(square_avg + eps)

Defaults follow the training setup used throughout: lr 5e-4, alpha 0.99,
eps 1e-5.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .nets import ParamSet


class RMSprop:
    def __init__(
        self,
        params: ParamSet,
        names: list[str] | None = None,
        learning_rate: float = 5e-4,
        alpha: float = 0.99,
        eps: float = 1e-5,
    ):
        if learning_rate <= 0 or alpha <= 0 or eps <= 0:
            raise ConfigurationError("RMSprop hyperparameters must be strictly positive")
        self.params = params
        self.names = params.names() if names is None else list(names)
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.eps = eps
        self.square_avg = {
            n: np.zeros_like(params[n].value) for n in self.names
        }

    def step(self) -> None:
        """Apply one update from the gradients accumulated on the tracked
        parameters; parameters without a gradient are treated as g = 0."""
        for name in self.names:
            t = self.params[name]
            g = t.grad if t.grad is not None else np.zeros_like(t.value)
            sq = self.square_avg[name]
            sq *= self.alpha
            sq += (1.0 - self.alpha) * g * g
            t.value = t.value - self.learning_rate * g / np.sqrt(sq + self.eps)

    def zero_grad(self) -> None:
        for name in self.names:
            self.params[name].grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: sq.copy() for n, sq in self.square_avg.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for n, sq in state.items():
            if n not in self.square_avg:
                raise ConfigurationError(f"unknown optimizer slot {n!r}")
            self.square_avg[n] = np.array(sq, dtype=np.float64)


def rmsprop_update(
    param: np.ndarray,
    grad: np.ndarray,
    square_avg: np.ndarray,
    learning_rate: float = 5e-4,
    alpha: float = 0.99,
    eps: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray]:
    """Functional single-array form; returns (new_param, new_square_avg)."""
    sq = alpha * square_avg + (1.0 - alpha) * grad * grad
    return param - learning_rate * grad / np.sqrt(sq + eps), sq
