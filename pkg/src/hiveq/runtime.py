"""Wiring of container roles, and the deterministic whole-system runner.

``ContainerRuntime`` assembles one container's queue manager, buffer
manager, and learner around injected channels and a centralizer link; the
production process runs its ticks on threads, the deterministic runner
interleaves the same ticks on a logical clock.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable

import numpy as np

from . import rngs, wire
from .centralizer import CentralConfig, Centralizer
from .container import (
    ActorWorker,
    BufferManager,
    ContainerConfig,
    ContainerLearner,
    MultiQueueManager,
    PolicySnapshot,
    SiblingStore,
    build_qnet,
    init_container_params,
    initial_priority_stage,
)
from .fabric import (
    ChannelEmpty,
    Clock,
    DeterministicScheduler,
    LocalChannel,
    RateLimiter,
    SharedSignal,
)
from .links import LocalLink
from .nets import QNetwork
from .replay import PrioritizedBuffer, select_top_fraction

log = logging.getLogger(__name__)

AGENT_PREFIX = "agent."


class ContainerRuntime:
    """One container's roles wired together; transport and channels are
    injected so production and deterministic modes share this code."""

    def __init__(
        self,
        cfg: ContainerConfig,
        link,
        actor_queues: list,
        step_counters: list[Callable[[], int]],
        publish: Callable[[PolicySnapshot], None],
        channel_factory: Callable[[int], object] = LocalChannel,
        clock: Clock | None = None,
    ):
        self.cfg = cfg
        self.link = link
        self.clock = clock or Clock()
        self.step_counters = step_counters
        self.publish = publish

        env0 = cfg.make_env()
        self.qnet = build_qnet(env0, cfg.hidden_dim, cfg.mixing_dim)
        self.params = init_container_params(self.qnet, cfg.run_seed, cfg.container_id)
        self.siblings = SiblingStore(self.qnet, cfg.run_seed, cfg.container_id, cfg.n_containers)
        self.signal = SharedSignal()
        self.buffer = PrioritizedBuffer(cfg.buffer_capacity)
        self.buffer_inbox = channel_factory(0)
        self.learner_inbox = channel_factory(2)
        self.learner = ContainerLearner(
            cfg, self.qnet, self.params, self.learner_inbox, self.siblings, self.clock
        )
        self.transfer_rng = rngs.stream_rng(cfg.run_seed, 5, cfg.container_id)
        self.queue_manager = MultiQueueManager(
            actor_queues,
            self.signal,
            priority_stage=partial(
                initial_priority_stage, bounds=cfg.return_bounds, eps=cfg.priority_eps
            ),
            forward=self._to_buffer,
            transfer=self._transfer,
        )
        self.buffer_manager = BufferManager(
            self.buffer,
            self.buffer_inbox,
            self.signal,
            self.learner_inbox,
            cfg.batch_size,
            cfg.min_buffer_to_learn,
            rngs.stream_rng(cfg.run_seed, 6, cfg.container_id),
        )
        self.global_steps_base = 0
        self.steps_at_base = 0
        self.weights_version = 0
        self.snap_version = 0
        self.snap_limiter = RateLimiter(self.clock, cfg.snapshot_interval_s)
        self.stats_limiter = RateLimiter(self.clock, cfg.stats_interval_s)
        self.head_limiter = RateLimiter(self.clock, cfg.head_upload_interval_s)
        self.actor_counters: dict[int, dict] = {}
        self.transferred = 0

    # -- plumbing callbacks -------------------------------------------------------

    def _to_buffer(self, batch) -> None:
        self.buffer_inbox.put_nowait(batch)

    def _transfer(self, batch) -> None:
        selected = select_top_fraction(batch, self.cfg.eta_percent, self.transfer_rng)
        if selected:
            self.link.send_batch(selected)
            self.transferred += len(selected)

    # -- step accounting -----------------------------------------------------------

    def container_steps(self) -> int:
        return int(sum(fn() for fn in self.step_counters))

    def eps_step_estimate(self) -> int:
        local_delta = self.container_steps() - self.steps_at_base
        return int(self.global_steps_base + local_delta * self.cfg.n_containers)

    # -- snapshots -------------------------------------------------------------------

    def make_snapshot(self) -> PolicySnapshot:
        names = [n for n in self.params.names() if n.startswith(AGENT_PREFIX)]
        self.snap_version += 1
        return PolicySnapshot(
            arrays=self.params.to_arrays(names),
            version=self.snap_version,
            eps_step_base=self.eps_step_estimate(),
        )

    def publish_snapshot(self, force: bool = False) -> None:
        if not force and not self.snap_limiter.ready():
            return
        self.snap_limiter.fire()
        self.publish(self.make_snapshot())

    # -- comms (runs on the learner's thread: it touches parameters) -----------------

    def comms_tick(self) -> bool:
        moved = False
        for msg in self.link.poll_inbound():
            if msg["type"] != wire.WEIGHTS:
                continue
            arrays = msg["arrays"]
            shared = {}
            heads: dict[int, dict[str, np.ndarray]] = {}
            central_head = {}
            for key, value in arrays.items():
                if key.startswith("shared/"):
                    shared[key[len("shared/") :]] = value
                elif key.startswith("central/"):
                    central_head[key[len("central/") :]] = value
                elif key.startswith("head/"):
                    _, cid, name = key.split("/", 2)
                    heads.setdefault(int(cid), {})[name] = value
            self.learner.install_shared(shared)
            for cid, head in heads.items():
                self.siblings.update(cid, head)
            if self.cfg.follow_central and central_head:
                self.params.load_arrays(central_head)
            self.global_steps_base = msg["global_env_steps"]
            self.steps_at_base = self.container_steps()
            self.weights_version = msg["version"]
            self.publish_snapshot(force=True)
            moved = True
        if self.head_limiter.ready():
            self.head_limiter.fire()
            heads = self.params.to_arrays(QNetwork.head_names(self.params))
            self.link.send_head(self.learner.updates, heads)
        if self.stats_limiter.ready():
            self.stats_limiter.fire()
            self.link.send_stats(self.stats_payload())
        return moved

    def learner_tick(self) -> bool:
        did = self.learner.tick()
        if did:
            self.publish_snapshot()
        return did

    def stats_payload(self) -> dict:
        dropped = sum(c.get("dropped", 0) for c in self.actor_counters.values())
        return {
            "container_id": self.cfg.container_id,
            "env_steps": self.container_steps(),
            "episodes_gathered": self.queue_manager.gathered,
            "forwarded": self.queue_manager.forwarded,
            "transferred": self.transferred,
            "dropped": dropped,
            "kl_mean": self.learner.last_kl,
            "td_loss": self.learner.last_td,
            "learner_updates": self.learner.updates,
            "buffer_size": len(self.buffer),
            "weights_version": self.weights_version,
            **self.link.counters.snapshot(),
        }


# -- deterministic whole-system runner ---------------------------------------------


@dataclass
class DetContainer:
    cfg: ContainerConfig
    runtime: ContainerRuntime
    actors: list[ActorWorker]
    link: LocalLink
    done: bool = False


class DeterministicRun:
    """The full system in one process on a logical clock.

    Containers, their actors, and the centralizer become scheduler workers;
    message transport is reliable in-memory delivery. Runs are exactly
    reproducible for a given (config, seed) and can be checkpointed at
    quiescent points and resumed bit-identically.
    """

    def __init__(
        self,
        container_cfgs: list[ContainerConfig],
        central_cfg: CentralConfig,
        schedule_seed: int = 0,
    ):
        self.scheduler = DeterministicScheduler(seed=schedule_seed)
        clock = self.scheduler.clock
        self.central_incoming = LocalChannel()
        self.links: dict[int, LocalLink] = {}
        self.centralizer = Centralizer(
            central_cfg,
            self.central_incoming,
            send=self._send_to_container,
            clock=clock,
            local_mode=True,
        )
        self.containers: list[DetContainer] = []
        for cfg in container_cfgs:
            link = LocalLink(cfg.container_id)
            self.links[cfg.container_id] = link
            queues = [LocalChannel(cfg.actor_queue_capacity) for _ in range(cfg.k_actors)]
            actors: list[ActorWorker] = []
            runtime = ContainerRuntime(
                cfg,
                link,
                queues,
                step_counters=[],
                publish=lambda snap, acts=actors: [a.install_snapshot(snap) for a in acts],
                channel_factory=LocalChannel,
                clock=clock,
            )
            snap0 = runtime.make_snapshot()
            for aid in range(cfg.k_actors):
                actors.append(
                    ActorWorker(cfg, aid, cfg.make_env(), queues[aid], snap0, clock=clock)
                )
            runtime.step_counters = [lambda a=a: a.env_steps for a in actors]
            det = DetContainer(cfg=cfg, runtime=runtime, actors=actors, link=link)
            self.containers.append(det)
            self.central_incoming.put_nowait(
                {"type": wire.HELLO, "container_id": cfg.container_id}
            )
        self._register_workers()

    def _send_to_container(self, cid: int, payload: dict, droppable: bool = False) -> bool:
        self.links[cid].inbound.put_nowait(payload)
        return True

    def _hub_tick(self) -> bool:
        moved = False
        for link in self.links.values():
            while True:
                try:
                    msg = link.outgoing.get_nowait()
                except ChannelEmpty:
                    break
                self.central_incoming.put_nowait(msg)
                if msg["type"] == wire.TRAJ_BATCH:
                    pass  # receiver acks on consumption
                moved = True
        return moved

    def _register_workers(self) -> None:
        sched = self.scheduler
        for det in self.containers:
            cid = det.cfg.container_id
            for aid, actor in enumerate(det.actors):
                sched.add(f"c{cid}-actor{aid}", partial(self._actor_tick, det, actor))
            sched.add(f"c{cid}-qm", det.runtime.queue_manager.poll_once)
            sched.add(f"c{cid}-bm", det.runtime.buffer_manager.tick)
            sched.add(f"c{cid}-learner", partial(self._learner_tick, det))
        sched.add("hub", self._hub_tick)
        sched.add("central-recv", self.centralizer.receiver_tick)
        sched.add("central-buffer", self.centralizer.buffer_tick)
        sched.add("central-learn", self.centralizer.learner_tick)
        sched.add("central-broadcast", self.centralizer.broadcaster_tick)
        sched.add("central-eval", self.centralizer.evaluator_tick)

    def _actor_tick(self, det: DetContainer, actor: ActorWorker) -> bool:
        if det.done or det.runtime.container_steps() >= det.cfg.step_budget:
            det.done = True
            actor.pipe.flush()
            return False
        actor.tick()
        return True

    def _learner_tick(self, det: DetContainer) -> bool:
        det.runtime.comms_tick()
        # deterministic mode keeps actor counters current every tick
        det.runtime.actor_counters = {a.actor_id: a.counters() for a in det.actors}
        return det.runtime.learner_tick()

    # -- driving --------------------------------------------------------------------

    def all_done(self) -> bool:
        return all(det.done for det in self.containers)

    def run(self, max_ticks: int = 10_000_000, drain_ticks: int = 2_000) -> None:
        self.scheduler.run(max_ticks=max_ticks, until=self.all_done)
        self.drain(drain_ticks)
        self.centralizer.evaluator_tick(force=True)

    def drain(self, max_rounds: int = 2_000) -> None:
        """Tick every non-producing role in fixed order until no work
        remains in channels, accumulators, or links."""
        for _ in range(max_rounds):
            busy = False
            for det in self.containers:
                for actor in det.actors:
                    actor.pipe.flush()
                    busy |= bool(actor.pipe.pending)
                busy |= det.runtime.queue_manager.poll_once()
                busy |= det.runtime.buffer_manager.tick(sample=False)
                busy |= self._learner_tick(det)
            busy |= self._hub_tick()
            busy |= self.centralizer.receiver_tick()
            busy |= self.centralizer.buffer_tick()
            busy |= self.centralizer.learner_tick(allow_floor=False)
            self.scheduler.clock.advance(self.scheduler.quantum)
            if not busy and self._quiescent():
                return
        log.warning("drain did not reach quiescence in %d rounds", max_rounds)

    def _quiescent(self) -> bool:
        for det in self.containers:
            r = det.runtime
            if any(len(q) for q in r.queue_manager.queues):
                return False
            if r.queue_manager.accumulation or len(r.buffer_inbox) or len(r.learner_inbox):
                return False
            if any(a.pipe.pending for a in det.actors):
                return False
            if len(det.link.outgoing) or len(det.link.inbound):
                return False
        c = self.centralizer
        if len(self.central_incoming) or c.accumulation or c.buffer_inbox or c.learner_inbox:
            return False
        return True

    def write_results(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.centralizer.write_result(out)
        for det in self.containers:
            payload = det.runtime.stats_payload()
            payload["actors"] = {str(a.actor_id): a.counters() for a in det.actors}
            payload["acked_seqs"] = sorted(det.link.counters.acked_seqs)
            (out / f"container_{det.cfg.container_id}.json").write_text(
                json.dumps(payload, indent=2)
            )
