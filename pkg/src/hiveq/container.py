"""One collection container.

A container bundles k actors (separate processes in production, in-process
workers in deterministic mode), a multi-queue manager, a buffer manager
owning the container's prioritized buffer, and a local learner. The roles
are connected only by message channels and one shared request flag:

    actors -> [bounded queues] -> multi-queue manager -> (initial priority
    calculator) -> buffer manager -> learner

The multi-queue manager gathers constantly and flushes one compacted batch
whenever the buffer manager raises the shared signal, so actors never wait
on buffer traffic. After priorities are computed, a priority-proportional
eta% of each batch is queued for transfer to the centralizer.

The agent network's lower two layers are shared with the central learner:
they are installed verbatim from every WEIGHTS broadcast and stay frozen
locally; only the head and the container's mixer train here. Sibling heads
arriving with broadcasts define the container-average policy for the
diversity term.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import rngs
from .envs import Env, make_env
from .fabric import (
    BoundedPipe,
    ChannelEmpty,
    ChannelFull,
    Clock,
    LatencyTracker,
    RateLimiter,
)
from .losses import PaddedBatch, build_targets, combined_loss, unroll_values
from .nets import QNetwork, ParamSet
from .optim import RMSprop
from .policy import EpsilonSchedule, boltzmann_batch, epsilon_greedy
from .replay import PrioritizedBuffer, Trajectory, compute_priority, select_top_fraction

log = logging.getLogger(__name__)


@dataclass
class ContainerConfig:
    container_id: int = 0
    n_containers: int = 1
    k_actors: int = 4
    env_name: str = "climb"
    env_params: dict = field(default_factory=dict)
    eta_percent: float = 20.0
    beta: float = 0.1
    kl_target: float = 0.5
    temperature: float = 1.0
    gamma: float = 0.99
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    learning_rate: float = 5e-4
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    batch_size: int = 32
    buffer_capacity: int = 5000
    priority_eps: float = 0.01
    return_bounds: tuple[float, float] = (0.0, 1.0)
    actor_queue_capacity: int = 64
    actor_nice: int = 0
    target_copy_period: int = 200
    head_upload_interval_s: float = 2.0
    stats_interval_s: float = 1.0
    snapshot_interval_s: float = 0.25
    learner_min_interval_s: float = 0.0
    min_buffer_to_learn: int = 8
    hidden_dim: int = 64
    mixing_dim: int = 32
    run_seed: int = 0
    step_budget: int = 10_000
    time_budget_s: float | None = None
    follow_central: bool = False
    local_learning: bool = True

    def make_env(self) -> Env:
        return make_env(self.env_name, **self.env_params)


def build_qnet(env: Env, hidden_dim: int, mixing_dim: int) -> QNetwork:
    s = env.spec
    return QNetwork(
        obs_dim=s.obs_dim,
        n_actions=s.n_actions,
        n_agents=s.n_agents,
        state_dim=s.state_dim,
        hidden_dim=hidden_dim,
        mixing_dim=mixing_dim,
    )


def init_central_params(qnet: QNetwork, run_seed: int) -> ParamSet:
    return qnet.init_params(rngs.stream_rng(run_seed, 0))


def initial_head_arrays(qnet: QNetwork, run_seed: int, container_id: int) -> dict[str, np.ndarray]:
    """Deterministic per-container head init, reproducible anywhere."""
    scratch = qnet.init_params(rngs.stream_rng(run_seed, 100 + container_id))
    return scratch.to_arrays(QNetwork.head_names(scratch))


def init_container_params(qnet: QNetwork, run_seed: int, container_id: int) -> ParamSet:
    """Shared blocks and mixer start identical to the central learner;
    heads differ per container so exploration diverges from step one."""
    params = init_central_params(qnet, run_seed)
    params.load_arrays(initial_head_arrays(qnet, run_seed, container_id))
    return params


# -- snapshots -------------------------------------------------------------------


@dataclass
class PolicySnapshot:
    """Immutable policy copy actors act with."""

    arrays: dict[str, np.ndarray]
    version: int
    eps_step_base: int  # system-wide env-step estimate for the schedule


# -- actor ------------------------------------------------------------------------


class ActorWorker:
    """Plays episodes with the latest snapshot and pushes them downstream
    with bounded, non-blocking enqueue (oldest pending episode is dropped
    when everything is full)."""

    def __init__(
        self,
        cfg: ContainerConfig,
        actor_id: int,
        env: Env,
        out_channel,
        snapshot: PolicySnapshot,
        clock: Clock | None = None,
        pending_capacity: int | None = None,
    ):
        self.cfg = cfg
        self.actor_id = actor_id
        self.env = env
        self.out = out_channel
        self.clock = clock or Clock()
        self.qnet = build_qnet(env, cfg.hidden_dim, cfg.mixing_dim)
        self.params = init_container_params(self.qnet, cfg.run_seed, cfg.container_id)
        self.episode_index = 0
        self.generated = 0
        self.env_steps = 0
        self.steps_at_snapshot = 0
        self.eps_base = 0
        self.snapshot_version = -1
        self.install_snapshot(snapshot)
        self.latency = LatencyTracker()
        self.pipe = BoundedPipe(
            out_channel,
            pending_capacity or cfg.actor_queue_capacity,
            clock=self.clock,
            latency=self.latency,
        )

    def install_snapshot(self, snap: PolicySnapshot) -> None:
        if snap.version <= self.snapshot_version:
            return
        self.params.load_arrays(snap.arrays)
        self.snapshot_version = snap.version
        self.eps_base = snap.eps_step_base
        self.steps_at_snapshot = self.env_steps

    def current_epsilon(self) -> float:
        # between snapshots, extrapolate the system step count from our own
        # progress (k actors per container, symmetric containers)
        delta = self.env_steps - self.steps_at_snapshot
        estimate = self.eps_base + delta * self.cfg.k_actors * self.cfg.n_containers
        return self.cfg.epsilon.value(int(estimate))

    def run_episode(self) -> Trajectory:
        cfg = self.cfg
        env_rng = rngs.episode_rng(
            cfg.run_seed, cfg.container_id, self.actor_id, self.episode_index, rngs.ENV
        )
        exp_rng = rngs.episode_rng(
            cfg.run_seed, cfg.container_id, self.actor_id, self.episode_index, rngs.EXPLORE
        )
        self.episode_index += 1
        env = self.env
        n, a = env.spec.n_agents, env.spec.n_actions
        obs, state = env.reset(env_rng)
        masks = env.avail_actions()
        hidden = self.qnet.agent.initial_state(n)
        last_onehot = np.zeros((n, a))

        obs_l, state_l, avail_l = [np.array(obs)], [np.array(state)], [np.array(masks, dtype=float)]
        act_l, rew_l, term_l = [], [], []
        done = False
        with ad.no_grad():
            while not done:
                x = ad.constant(np.concatenate([np.array(obs), last_onehot], axis=1))
                q, h = self.qnet.agent.forward(self.params, x, ad.constant(hidden))
                hidden = h.value
                eps = self.current_epsilon()
                actions = np.array(
                    [epsilon_greedy(q.value[i], masks[i], eps, exp_rng) for i in range(n)]
                )
                res = env.step(actions)
                self.env_steps += 1
                obs, masks = res.next_obs, res.avail_actions
                last_onehot = np.zeros((n, a))
                last_onehot[np.arange(n), actions] = 1.0
                obs_l.append(np.array(obs))
                state_l.append(np.array(res.next_state))
                avail_l.append(np.array(masks, dtype=float))
                act_l.append(actions)
                rew_l.append(res.reward)
                term_l.append(float(res.terminated))
                done = res.terminated

        traj = Trajectory(
            obs=np.array(obs_l),
            state=np.array(state_l),
            avail=np.array(avail_l),
            actions=np.array(act_l),
            rewards=np.array(rew_l),
            terminated=np.array(term_l),
            container_id=cfg.container_id,
            priority=0.0,
            uid=(cfg.container_id, self.actor_id, self.episode_index - 1),
        )
        self.generated += 1
        return traj

    def tick(self) -> bool:
        self.pipe.push(self.run_episode())
        return True

    def counters(self) -> dict:
        return {
            "generated": self.generated,
            "dropped": self.pipe.dropped,
            "env_steps": self.env_steps,
            "enqueue_p99_ms": self.latency.quantile(0.99) * 1e3,
        }


# -- multi-queue manager ------------------------------------------------------------


class MultiQueueManager:
    """Gathers episodes from all actor queues; on the shared signal,
    compacts everything gathered into one batch, runs it through the
    initial priority calculator, forwards it, and clears the signal."""

    def __init__(
        self,
        actor_queues: list,
        signal,
        priority_stage: Callable[[list[Trajectory]], list[Trajectory]],
        forward: Callable[[list[Trajectory]], None],
        transfer: Callable[[list[Trajectory]], None] | None = None,
    ):
        self.queues = actor_queues
        self.signal = signal
        self.priority_stage = priority_stage
        self.forward = forward
        self.transfer = transfer
        self.accumulation: list[Trajectory] = []
        self.gathered = 0
        self.forwarded = 0
        self.flushes = 0

    def poll_once(self) -> bool:
        moved = False
        for q in self.queues:
            while True:
                try:
                    item = q.get_nowait()
                except ChannelEmpty:
                    break
                self.accumulation.append(item)
                self.gathered += 1
                moved = True
        if self.signal.is_set() and self.accumulation:
            batch = self.priority_stage(self.accumulation)
            self.accumulation = []
            if self.transfer is not None:
                self.transfer(batch)
            self.forward(batch)
            self.forwarded += len(batch)
            self.flushes += 1
            self.signal.clear()
            moved = True
        return moved

    def counters(self) -> dict:
        return {
            "gathered": self.gathered,
            "forwarded": self.forwarded,
            "accumulated": len(self.accumulation),
            "flushes": self.flushes,
        }


def initial_priority_stage(
    batch: list[Trajectory], bounds: tuple[float, float], eps: float
) -> list[Trajectory]:
    """Annotate every trajectory with its normalized-return priority,
    preserving batch order."""
    low, high = bounds
    for tr in batch:
        tr.priority = compute_priority(tr.episode_return, low, high, eps)
    return batch


# -- buffer manager -----------------------------------------------------------------


class BufferManager:
    """Sole owner of the container buffer: inserts incoming batches and
    keeps the learner fed with sampled batches; raises the shared signal
    whenever it is ready for new experience."""

    def __init__(
        self,
        buffer: PrioritizedBuffer,
        inbox,
        signal,
        learner_outbox,
        batch_size: int,
        min_to_sample: int,
        rng: np.random.Generator,
    ):
        self.buffer = buffer
        self.inbox = inbox
        self.signal = signal
        self.learner_outbox = learner_outbox
        self.batch_size = batch_size
        self.min_to_sample = min_to_sample
        self.rng = rng
        self.batches_in = 0
        self.batches_sampled = 0

    def tick(self, sample: bool = True) -> bool:
        moved = False
        while True:
            try:
                batch = self.inbox.get_nowait()
            except ChannelEmpty:
                break
            self.buffer.insert_batch(batch)
            self.batches_in += 1
            moved = True
        self.signal.set()
        if sample and len(self.buffer) >= self.min_to_sample:
            sampled = self.buffer.sample(self.batch_size, self.rng)
            if sampled is not None:
                try:
                    self.learner_outbox.put_nowait(sampled)
                    self.batches_sampled += 1
                    moved = True
                except ChannelFull:
                    pass
        return moved


# -- sibling policy store --------------------------------------------------------------


class SiblingStore:
    """Latest known head block per container; the own slot stays live."""

    def __init__(self, qnet: QNetwork, run_seed: int, own_id: int, n_containers: int):
        self.own_id = own_id
        self.heads: dict[int, dict[str, np.ndarray] | None] = {}
        for cid in range(n_containers):
            self.heads[cid] = None if cid == own_id else initial_head_arrays(qnet, run_seed, cid)

    def update(self, cid: int, arrays: dict[str, np.ndarray]) -> None:
        if cid != self.own_id:
            self.heads[cid] = arrays

    def as_list(self) -> list[dict[str, np.ndarray] | None]:
        return [self.heads[cid] for cid in sorted(self.heads)]


# -- learner -----------------------------------------------------------------------


class ContainerLearner:
    """Optimizes the container loss (TD + diversity hinge) over batches the
    buffer manager hands over; trains only the head and mixer blocks."""

    def __init__(
        self,
        cfg: ContainerConfig,
        qnet: QNetwork,
        params: ParamSet,
        inbox,
        siblings: SiblingStore,
        clock: Clock | None = None,
    ):
        self.cfg = cfg
        self.qnet = qnet
        self.params = params
        self.target = params.clone()
        self.inbox = inbox
        self.siblings = siblings
        self.clock = clock or Clock()
        trainable = QNetwork.head_names(params) + QNetwork.mixer_names(params)
        self.opt = RMSprop(
            params,
            names=trainable,
            learning_rate=cfg.learning_rate,
            alpha=cfg.rms_alpha,
            eps=cfg.rms_eps,
        )
        self.limiter = RateLimiter(self.clock, cfg.learner_min_interval_s)
        self.updates = 0
        self.last_td = 0.0
        self.last_kl = 0.0
        self._warned_missing = False

    def install_shared(self, arrays: dict[str, np.ndarray]) -> None:
        self.params.load_arrays(arrays)
        self.target.load_arrays(arrays)

    def step_batch(self, trajs: list[Trajectory]) -> dict:
        cfg = self.cfg
        batch = PaddedBatch.from_trajectories(trajs)
        targets = build_targets(self.qnet, self.target, batch, cfg.gamma)
        sibling_heads = self.siblings.as_list()
        beta = cfg.beta
        if beta != 0.0 and any(
            h is None and cid != self.siblings.own_id
            for cid, h in enumerate(sibling_heads)
        ):
            if not self._warned_missing:
                log.warning("missing sibling heads; training with beta=0 this step")
                self._warned_missing = True
            beta = 0.0
        loss, info = combined_loss(
            self.qnet,
            self.params,
            batch,
            targets,
            beta=beta,
            kl_target=cfg.kl_target,
            temperature=cfg.temperature,
            sibling_heads=sibling_heads,
        )
        self.opt.zero_grad()
        ad.backward(loss)
        self.opt.step()
        self.updates += 1
        if self.updates % cfg.target_copy_period == 0:
            self.target.copy_from(self.params)
        self.last_td = info["td_loss"]
        self.last_kl = info["kl_mean"]
        return info

    def diversity_diagnostic(self, trajs: list[Trajectory]) -> float:
        """Batch-mean KL of this container's policy against the container
        average, computed without touching parameters (used by the
        no-diversity ablation so the metric stays comparable)."""
        cfg = self.cfg
        batch = PaddedBatch.from_trajectories(trajs)
        b, t_max = batch.rewards.shape
        n, a = self.qnet.n_agents, self.qnet.n_actions
        qs, hiddens = unroll_values(self.qnet, self.params, batch, t_max)
        avail = batch.avail.transpose(1, 0, 2, 3).reshape(t_max + 1, b * n, a)
        total = 0.0
        heads = self.siblings.as_list()
        for t in range(t_max):
            legal = avail[t] > 0
            pi_own = boltzmann_batch(qs[t], legal, cfg.temperature)
            mean_pi = np.zeros_like(pi_own)
            for head in heads:
                if head is None:
                    mean_pi += pi_own
                    continue
                q_sib = hiddens[t] @ head["agent.fc_out.w"] + head["agent.fc_out.b"]
                mean_pi += boltzmann_batch(q_sib, legal, cfg.temperature)
            mean_pi /= len(heads)
            support = pi_own > 0
            terms = np.zeros_like(pi_own)
            terms[support] = pi_own[support] * (
                np.log(pi_own[support]) - np.log(mean_pi[support])
            )
            kl = terms.sum(axis=1).reshape(b, n)
            total += float((kl * batch.mask[:, t : t + 1]).sum())
        self.last_kl = total / b
        return self.last_kl

    def tick(self) -> bool:
        if not self.limiter.ready():
            return False
        try:
            trajs = self.inbox.get_nowait()
        except ChannelEmpty:
            return False
        self.limiter.fire()
        if self.cfg.local_learning:
            self.step_batch(trajs)
        else:
            self.diversity_diagnostic(trajs)
        return True
