"""Action selection: epsilon-greedy for acting, Boltzmann for the diversity
objective, and the linear exploration schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    anneal_steps: int = 50_000

    def value(self, step: int) -> float:
        if step >= self.anneal_steps:
            return self.end
        frac = step / self.anneal_steps
        return self.start + (self.end - self.start) * frac


@dataclass
class PolicyOutput:
    """Per-agent action values with the derived distributions."""

    q_values: np.ndarray  # (n_agents, n_actions)
    boltzmann: np.ndarray  # (n_agents, n_actions), rows sum to 1
    chosen: np.ndarray  # (n_agents,) int


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> int:
    masked = np.where(mask.astype(bool), q, -np.inf)
    return int(np.argmax(masked))


def epsilon_greedy(
    q: np.ndarray, mask: np.ndarray, epsilon: float, rng: np.random.Generator
) -> int:
    """Greedy over legal actions with probability 1-eps, else uniform legal."""
    legal = np.flatnonzero(mask)
    if legal.size == 0:
        raise ContractViolation("epsilon_greedy: no legal action in mask")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(legal[rng.integers(legal.size)])
    return masked_argmax(q, mask)


def boltzmann(q: np.ndarray, mask: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax of q/T over legal actions; illegal actions get probability 0.

    Max-subtraction keeps the exponentials in range, so arbitrarily large
    finite Q values are safe.
    """
    if temperature <= 0:
        raise ContractViolation("boltzmann: temperature must be positive")
    mask = mask.astype(bool)
    if not mask.any():
        raise ContractViolation("boltzmann: no legal action in mask")
    z = np.where(mask, q / temperature, -np.inf)
    z = z - z.max()
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum()


def boltzmann_batch(q: np.ndarray, mask: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise boltzmann for (B, n_actions) inputs."""
    mask = mask.astype(bool)
    z = np.where(mask, q / temperature, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)
