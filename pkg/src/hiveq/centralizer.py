"""The central learner process.

Mirrors the container's internal architecture: an experience receiver
accumulates trajectory batches arriving from containers (acknowledging and
deduplicating them), a buffer manager owns the central prioritized buffer
behind the same shared-signal protocol, and the learner optimizes the TD
loss over priority-sampled batches, refreshing its target copy every C
updates. A broadcaster periodically pushes the shared lower layers, the
central head, and all known container heads to every connected container,
and an evaluator rolls out the greedy central policy to produce the metrics
CSV.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import rngs, wire
from .container import build_qnet, init_central_params, initial_head_arrays
from .envs import Env, make_env
from .fabric import ChannelEmpty, Clock, RateLimiter, SharedSignal
from .losses import PaddedBatch, build_targets, combined_loss
from .metrics import CSV_FIELDS
from .nets import QNetwork, ParamSet, SHARED_PREFIXES
from .optim import RMSprop
from .policy import masked_argmax
from .replay import PrioritizedBuffer, Trajectory

log = logging.getLogger(__name__)


@dataclass
class CentralConfig:
    env_name: str = "climb"
    env_params: dict = field(default_factory=dict)
    n_containers: int = 1
    gamma: float = 0.99
    learning_rate: float = 5e-4
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    batch_size: int = 32
    buffer_capacity: int = 5000
    min_buffer_to_learn: int = 8
    target_copy_period: int = 200
    broadcast_interval_s: float = 5.0
    learner_floor_sps: float = 10.0
    learner_min_interval_s: float = 0.0
    eval_interval_s: float = 5.0
    eval_episodes: int = 8
    stats_flush_interval_s: float = 1.0
    hidden_dim: int = 64
    mixing_dim: int = 32
    run_seed: int = 0
    out_dir: str | None = None

    def make_env(self) -> Env:
        return make_env(self.env_name, **self.env_params)


def evaluate_policy(
    env: Env,
    qnet: QNetwork,
    params: ParamSet,
    episodes: int,
    seed: int,
) -> dict:
    """Greedy (epsilon = 0) rollouts; returns mean/median/per-episode
    returns. Deterministic for fixed (params, seed)."""
    returns = []
    with ad.no_grad():
        for ep in range(episodes):
            rng = rngs.episode_rng(seed, 0xEBA1, 0, ep, rngs.EVAL)
            obs, _ = env.reset(rng)
            masks = env.avail_actions()
            n, a = env.spec.n_agents, env.spec.n_actions
            hidden = qnet.agent.initial_state(n)
            last = np.zeros((n, a))
            total, done = 0.0, False
            while not done:
                x = ad.constant(np.concatenate([np.array(obs), last], axis=1))
                q, h = qnet.agent.forward(params, x, ad.constant(hidden))
                hidden = h.value
                actions = np.array(
                    [masked_argmax(q.value[i], masks[i]) for i in range(n)]
                )
                res = env.step(actions)
                total += res.reward
                obs, masks = res.next_obs, res.avail_actions
                last = np.zeros((n, a))
                last[np.arange(n), actions] = 1.0
                done = res.terminated
            returns.append(total)
    return {
        "mean": float(np.mean(returns)),
        "median": float(median(returns)),
        "returns": returns,
    }


class MetricsWriter:
    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self._fh = None
        self._writer = None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fresh = not self.path.exists()
            self._fh = open(self.path, "a", newline="")
            self._writer = csv.DictWriter(self._fh, fieldnames=CSV_FIELDS)
            if fresh:
                self._writer.writeheader()
        self.rows: list[dict] = []

    def write(self, row: dict) -> None:
        self.rows.append(row)
        if self._writer:
            self._writer.writerow(row)
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


class Centralizer:
    """All central roles as tickable methods; transport is injected as a
    ``send(container_id, message_bytes) -> bool`` callable plus an incoming
    channel of decoded messages."""

    def __init__(
        self,
        cfg: CentralConfig,
        incoming,
        send: Callable[[int, bytes], bool],
        clock: Clock | None = None,
        local_mode: bool = False,
    ):
        self.cfg = cfg
        self.incoming = incoming
        self.send = send
        self.clock = clock or Clock()
        self.local_mode = local_mode  # deterministic mode: send dicts not bytes

        env = cfg.make_env()
        self.eval_env = cfg.make_env()
        self.qnet = build_qnet(env, cfg.hidden_dim, cfg.mixing_dim)
        self.params = init_central_params(self.qnet, cfg.run_seed)
        self.target = self.params.clone()
        self.opt = RMSprop(
            self.params,
            learning_rate=cfg.learning_rate,
            alpha=cfg.rms_alpha,
            eps=cfg.rms_eps,
        )
        self.buffer = PrioritizedBuffer(cfg.buffer_capacity)
        self.signal = SharedSignal()
        self.signal.set()  # the buffer manager starts hungry
        self.accumulation: list[Trajectory] = []
        self.sample_rng = rngs.stream_rng(cfg.run_seed, 7)

        self.update_counter = 0
        self.broadcast_version = 0
        self.updates_at_broadcast = 0
        self.head_store: dict[int, dict[str, np.ndarray]] = {
            cid: initial_head_arrays(self.qnet, cfg.run_seed, cid)
            for cid in range(cfg.n_containers)
        }
        self.head_versions: dict[int, int] = {cid: -1 for cid in self.head_store}
        self.connected: set[int] = set()
        self.ever_connected: set[int] = set()
        self.seen_seqs: dict[int, set[int]] = {}
        self.received_counts: dict[int, int] = {}
        self.duplicate_batches = 0
        self.container_stats: dict[int, dict] = {}
        self.last_td = 0.0
        self.start_time = self.clock.now()
        self._last_batch_time = self.clock.now()
        self.broadcast_limiter = RateLimiter(self.clock, cfg.broadcast_interval_s)
        self.eval_limiter = RateLimiter(self.clock, cfg.eval_interval_s)
        self.learn_limiter = RateLimiter(self.clock, cfg.learner_min_interval_s)
        self.floor_limiter = RateLimiter(
            self.clock, 1.0 / cfg.learner_floor_sps if cfg.learner_floor_sps > 0 else 0.0
        )
        self.metrics = MetricsWriter(
            Path(cfg.out_dir) / "metrics.csv" if cfg.out_dir else None
        )
        self.buffer_inbox: list[list[Trajectory]] = []
        self.learner_inbox: list[list[Trajectory]] = []

    # -- receiver ---------------------------------------------------------------

    def env_steps_total(self) -> int:
        return int(sum(s.get("env_steps", 0) for s in self.container_stats.values()))

    def _ack(self, cid: int, seq: int) -> None:
        if self.local_mode:
            self.send(cid, {"type": wire.ACK, "container_id": cid, "batch_seq": seq}, False)
        else:
            self.send(cid, wire.pack_frame(wire.encode_ack(cid, seq)), False)

    def receiver_tick(self) -> bool:
        moved = False
        while True:
            try:
                msg = self.incoming.get_nowait()
            except ChannelEmpty:
                break
            moved = True
            mtype = msg["type"]
            if mtype == wire.HELLO:
                cid = msg["container_id"]
                self.connected.add(cid)
                self.ever_connected.add(cid)
            elif mtype == wire.TRAJ_BATCH:
                cid, seq = msg["container_id"], msg["batch_seq"]
                seen = self.seen_seqs.setdefault(cid, set())
                if seq in seen:
                    self.duplicate_batches += 1
                else:
                    seen.add(seq)
                    self.accumulation.extend(msg["trajectories"])
                    self.received_counts[cid] = self.received_counts.get(cid, 0) + 1
                self._ack(cid, seq)
            elif mtype == wire.HEAD_UPLOAD:
                cid, version = msg["container_id"], msg["version"]
                if version > self.head_versions.get(cid, -1):
                    self.head_versions[cid] = version
                    self.head_store[cid] = dict(msg["arrays"])
            elif mtype == wire.STATS:
                payload = msg["payload"]
                self.container_stats[int(payload["container_id"])] = payload
            elif mtype == "disconnect":
                self.connected.discard(msg["container_id"])
        # queue-manager side of the shared signal: flush the gathered batch
        # to the buffer manager only when it asked for one
        if self.signal.is_set() and self.accumulation:
            self.buffer_inbox.append(self.accumulation)
            self.accumulation = []
            self.signal.clear()
            moved = True
        return moved

    def buffer_tick(self) -> bool:
        """Buffer-manager role: sole owner of the central buffer. Each
        arriving batch is inserted and queues exactly one learning step."""
        moved = False
        while self.buffer_inbox:
            batch = self.buffer_inbox.pop(0)
            self.buffer.insert_batch(batch)
            self._last_batch_time = self.clock.now()
            sampled = self.buffer.sample(self.cfg.batch_size, self.sample_rng)
            if sampled is not None and len(self.learner_inbox) < 2:
                self.learner_inbox.append(sampled)
            moved = True
        self.signal.set()
        return moved

    # -- learner ----------------------------------------------------------------

    def learner_tick(self, allow_floor: bool = True) -> bool:
        if not self.learn_limiter.ready():
            return False
        batch: list[Trajectory] | None = None
        if self.learner_inbox:
            batch = self.learner_inbox.pop(0)
        elif (
            allow_floor
            and self.floor_limiter.ready()
            and len(self.buffer) >= self.cfg.min_buffer_to_learn
        ):
            # steady floor keeps learning alive when input stalls
            batch = self.buffer.sample(self.cfg.batch_size, self.sample_rng)
        if batch is None:
            return False
        self.learn_limiter.fire()
        self.floor_limiter.fire()
        padded = PaddedBatch.from_trajectories(batch)
        targets = build_targets(self.qnet, self.target, padded, self.cfg.gamma)
        loss, info = combined_loss(self.qnet, self.params, padded, targets, beta=0.0)
        self.opt.zero_grad()
        ad.backward(loss)
        self.opt.step()
        self.update_counter += 1
        if self.update_counter % self.cfg.target_copy_period == 0:
            self.target.copy_from(self.params)
        self.last_td = info["td_loss"]
        return True

    # -- broadcaster ---------------------------------------------------------------

    def weights_arrays(self) -> dict[str, np.ndarray]:
        arrays: dict[str, np.ndarray] = {}
        shared = self.params.to_arrays(self.params.block_names(SHARED_PREFIXES))
        for k, v in shared.items():
            arrays[f"shared/{k}"] = v
        for k, v in self.params.to_arrays(QNetwork.head_names(self.params)).items():
            arrays[f"central/{k}"] = v
        for cid, head in self.head_store.items():
            for k, v in head.items():
                arrays[f"head/{cid}/{k}"] = v
        return arrays

    def broadcaster_tick(self) -> bool:
        if not self.broadcast_limiter.ready():
            return False
        if self.update_counter == self.updates_at_broadcast:
            return False  # nothing new learned since last broadcast
        if not self.connected:
            return False
        self.broadcast_version += 1
        self.updates_at_broadcast = self.update_counter
        steps = self.env_steps_total()
        if self.local_mode:
            payload = {
                "type": wire.WEIGHTS,
                "version": self.broadcast_version,
                "global_env_steps": steps,
                "arrays": self.weights_arrays(),
            }
            for cid in list(self.connected):
                self.send(cid, payload, True)
        else:
            frame = wire.pack_frame(
                wire.encode_weights(self.broadcast_version, steps, self.weights_arrays())
            )
            for cid in list(self.connected):
                if not self.send(cid, frame, True):  # droppable: resent next round
                    log.debug("broadcast to container %d skipped this round", cid)
        self.broadcast_limiter.fire()
        return True

    # -- evaluator ----------------------------------------------------------------

    def evaluator_tick(self, force: bool = False) -> bool:
        if not force and not self.eval_limiter.ready():
            return False
        self.eval_limiter.fire()
        result = evaluate_policy(
            self.eval_env, self.qnet, self.params, self.cfg.eval_episodes, self.cfg.run_seed
        )
        kls = [s.get("kl_mean", 0.0) for s in self.container_stats.values()]
        sizes = [str(s.get("buffer_size", 0)) for s in self.container_stats.values()]
        dropped = sum(s.get("dropped", 0) for s in self.container_stats.values())
        self.metrics.write(
            {
                "wall_clock_s": round(self.clock.now() - self.start_time, 3),
                "env_steps_total": self.env_steps_total(),
                "eval_mean_return": result["mean"],
                "eval_median_return": result["median"],
                "td_loss": self.last_td,
                "kl_mean_per_container": float(np.mean(kls)) if kls else 0.0,
                "central_buffer_size": len(self.buffer),
                "container_buffer_sizes": "|".join(sizes),
                "dropped_episodes": dropped,
            }
        )
        return True

    # -- bookkeeping -----------------------------------------------------------------

    def result_payload(self) -> dict:
        return {
            "received_counts": {str(c): n for c, n in self.received_counts.items()},
            "received_seqs": {str(c): sorted(s) for c, s in self.seen_seqs.items()},
            "duplicate_batches": self.duplicate_batches,
            "update_counter": self.update_counter,
            "broadcast_version": self.broadcast_version,
            "env_steps_total": self.env_steps_total(),
            "buffer_size": len(self.buffer),
        }

    def write_result(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "central_result.json").write_text(json.dumps(self.result_payload(), indent=2))

    def close(self) -> None:
        self.metrics.close()
