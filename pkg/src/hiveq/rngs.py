"""Counter-based random streams.

Every episode gets its own Philox stream keyed by (run seed, container id,
actor id, purpose) with the episode index as the counter. Parallel workers
therefore never share or race a stream, and any episode can be replayed in
isolation.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# purpose codes
ENV = 0
EXPLORE = 1
SAMPLER = 2
EVAL = 3


def episode_rng(
    run_seed: int,
    container_id: int,
    actor_id: int,
    episode_index: int,
    purpose: int = ENV,
) -> np.random.Generator:
    key = np.array(
        [
            (run_seed * 0x9E3779B97F4A7C15 + purpose) & MASK64,
            ((container_id & 0xFFFFFFFF) << 32 | (actor_id & 0xFFFFFFFF)) & MASK64,
        ],
        dtype=np.uint64,
    )
    counter = np.array([episode_index & MASK64, 0, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def stream_rng(run_seed: int, *scope: int) -> np.random.Generator:
    """A named long-lived stream (parameter init, buffer sampling, ...)."""
    ss = np.random.SeedSequence(entropy=run_seed, spawn_key=tuple(scope))
    return np.random.Generator(np.random.PCG64(ss))
