"""Checkpointing and resume.

Two checkpoint kinds share one directory layout and manifest:

* production checkpoints carry the central learner (parameters, target,
  optimizer slots, head store, counters); a resumed run continues training
  with fresh container buffers;
* deterministic checkpoints additionally capture the entire system state at
  a quiescent point (buffers, counters, RNG streams, logical clock), so a
  resumed deterministic run is bit-identical to the original continuing.

Array payloads use the parameter checkpoint codec (digest-protected);
trajectories use the wire codec; everything else lives in ``manifest.json``.
A version field guards format changes and corrupt files fail loudly before
any state is applied.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import wire
from .checkpoint import load_arrays, save_arrays
from .errors import IntegrityError
from .replay import PrioritizedBuffer

CHECKPOINT_VERSION = 1


def _rng_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def _set_rng_state(gen: np.random.Generator, state: dict) -> None:
    gen.bit_generator.state = state


def _save_buffer(path: Path, buffer: PrioritizedBuffer) -> None:
    chunks = [struct.pack("<III", buffer.capacity, buffer.write, buffer.size)]
    filled = [(i, t) for i, t in enumerate(buffer.storage) if t is not None]
    chunks.append(struct.pack("<I", len(filled)))
    for i, traj in filled:
        enc = wire.encode_trajectory(traj)
        chunks.append(struct.pack("<II", i, len(enc)))
        chunks.append(enc)
    path.write_bytes(b"".join(chunks))


def _load_buffer(path: Path, buffer: PrioritizedBuffer) -> None:
    blob = path.read_bytes()
    capacity, write, size = struct.unpack_from("<III", blob, 0)
    if capacity != buffer.capacity:
        raise IntegrityError(
            f"buffer capacity mismatch: checkpoint {capacity}, config {buffer.capacity}"
        )
    (count,) = struct.unpack_from("<I", blob, 12)
    offset = 16
    for _ in range(count):
        slot, length = struct.unpack_from("<II", blob, offset)
        offset += 8
        traj, consumed = wire.decode_trajectory(blob, offset)
        if consumed - offset != length:
            raise IntegrityError("trajectory length mismatch in buffer checkpoint")
        offset = consumed
        buffer.storage[slot] = traj
        buffer.tree.set(slot, traj.priority)
    buffer.write = write
    buffer.size = size


def _manifest_path(ckpt_dir: Path) -> Path:
    return ckpt_dir / "manifest.json"


def read_manifest(ckpt_dir: str | Path) -> dict:
    path = _manifest_path(Path(ckpt_dir))
    if not path.exists():
        raise IntegrityError(f"no manifest at {path}")
    manifest = json.loads(path.read_text())
    found = manifest.get("checkpoint_version")
    if found != CHECKPOINT_VERSION:
        raise IntegrityError(
            f"checkpoint version mismatch: file has {found}, "
            f"this build reads {CHECKPOINT_VERSION}"
        )
    return manifest


# -- production checkpoints -----------------------------------------------------------


def save_central_checkpoint(ckpt_dir: str | Path, central, config_hash: str) -> None:
    out = Path(ckpt_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_arrays(out / "central_params.hqp", central.params.to_arrays())
    save_arrays(out / "central_target.hqp", central.target.to_arrays())
    save_arrays(out / "central_opt.hqp", central.opt.state_arrays())
    heads = {
        f"head/{cid}/{name}": arr
        for cid, head in central.head_store.items()
        for name, arr in head.items()
    }
    save_arrays(out / "heads.hqp", heads)
    manifest = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "mode": "production",
        "config_hash": config_hash,
        "update_counter": central.update_counter,
        "broadcast_version": central.broadcast_version,
        "head_versions": {str(k): v for k, v in central.head_versions.items()},
        "env_steps_total": central.env_steps_total(),
    }
    _manifest_path(out).write_text(json.dumps(manifest, indent=2))


def load_central_checkpoint(ckpt_dir: str | Path, central) -> dict:
    ckpt = Path(ckpt_dir)
    manifest = read_manifest(ckpt)
    central.params.load_arrays(load_arrays(ckpt / "central_params.hqp"))
    central.target.load_arrays(load_arrays(ckpt / "central_target.hqp"))
    central.opt.load_state_arrays(load_arrays(ckpt / "central_opt.hqp"))
    heads: dict[int, dict] = {}
    for key, arr in load_arrays(ckpt / "heads.hqp").items():
        _, cid, name = key.split("/", 2)
        heads.setdefault(int(cid), {})[name] = arr
    central.head_store.update(heads)
    central.head_versions.update(
        {int(k): v for k, v in manifest["head_versions"].items()}
    )
    central.update_counter = manifest["update_counter"]
    central.broadcast_version = manifest["broadcast_version"]
    return manifest


# -- deterministic full-state checkpoints ------------------------------------------------


def save_det_checkpoint(ckpt_dir: str | Path, run, config_hash: str) -> None:
    """Drain the system to a quiescent point and snapshot everything."""
    run.drain()
    out = Path(ckpt_dir)
    out.mkdir(parents=True, exist_ok=True)
    central = run.centralizer
    save_central_checkpoint(out, central, config_hash)
    _save_buffer(out / "central_buffer.bin", central.buffer)

    containers = []
    for det in run.containers:
        cid = det.cfg.container_id
        r = det.runtime
        save_arrays(out / f"c{cid}_params.hqp", r.params.to_arrays())
        save_arrays(out / f"c{cid}_target.hqp", r.learner.target.to_arrays())
        save_arrays(out / f"c{cid}_opt.hqp", r.learner.opt.state_arrays())
        sib = {
            f"head/{scid}/{name}": arr
            for scid, head in r.siblings.heads.items()
            if head is not None
            for name, arr in head.items()
        }
        save_arrays(out / f"c{cid}_siblings.hqp", sib)
        _save_buffer(out / f"c{cid}_buffer.bin", r.buffer)
        for actor in det.actors:
            save_arrays(out / f"c{cid}_actor{actor.actor_id}_params.hqp", actor.params.to_arrays())
        containers.append(
            {
                "container_id": cid,
                "done": det.done,
                "learner": {
                    "updates": r.learner.updates,
                    "last_td": r.learner.last_td,
                    "last_kl": r.learner.last_kl,
                    "limiter_last": r.learner.limiter._last,
                },
                "qm": r.queue_manager.counters(),
                "bm": {
                    "batches_in": r.buffer_manager.batches_in,
                    "batches_sampled": r.buffer_manager.batches_sampled,
                    "rng": _rng_state(r.buffer_manager.rng),
                },
                "buffer_stats": r.buffer.stats.snapshot(),
                "transfer_rng": _rng_state(r.transfer_rng),
                "transferred": r.transferred,
                "global_steps_base": r.global_steps_base,
                "steps_at_base": r.steps_at_base,
                "weights_version": r.weights_version,
                "snap_version": r.snap_version,
                "limiters": {
                    "snap": r.snap_limiter._last,
                    "stats": r.stats_limiter._last,
                    "head": r.head_limiter._last,
                },
                "link": {
                    "next_seq": det.link.next_seq,
                    "acked_seqs": sorted(det.link.counters.acked_seqs),
                    **det.link.counters.snapshot(),
                },
                "actors": [
                    {
                        "episode_index": a.episode_index,
                        "env_steps": a.env_steps,
                        "generated": a.generated,
                        "snapshot_version": a.snapshot_version,
                        "eps_base": a.eps_base,
                        "steps_at_snapshot": a.steps_at_snapshot,
                        "pushed": a.pipe.pushed,
                        "dropped": a.pipe.dropped,
                    }
                    for a in det.actors
                ],
            }
        )

    det_state = {
        "clock": run.scheduler.clock.t,
        "quantum": run.scheduler.quantum,
        "sched_rng": _rng_state(run.scheduler.rng),
        "central": {
            "sample_rng": _rng_state(central.sample_rng),
            "updates_at_broadcast": central.updates_at_broadcast,
            "seen_seqs": {str(k): sorted(v) for k, v in central.seen_seqs.items()},
            "received_counts": {str(k): v for k, v in central.received_counts.items()},
            "duplicate_batches": central.duplicate_batches,
            "container_stats": {str(k): v for k, v in central.container_stats.items()},
            "connected": sorted(central.connected),
            "ever_connected": sorted(central.ever_connected),
            "last_td": central.last_td,
            "start_time": central.start_time,
            "buffer_stats": central.buffer.stats.snapshot(),
            "limiters": {
                "broadcast": central.broadcast_limiter._last,
                "eval": central.eval_limiter._last,
                "learn": central.learn_limiter._last,
                "floor": central.floor_limiter._last,
            },
        },
        "containers": containers,
    }
    manifest = json.loads(_manifest_path(out).read_text())
    manifest["mode"] = "deterministic"
    manifest["det_state"] = det_state
    _manifest_path(out).write_text(json.dumps(manifest, indent=2))


def load_det_checkpoint(ckpt_dir: str | Path, run) -> dict:
    """Restore a DeterministicRun built from the same configs."""
    ckpt = Path(ckpt_dir)
    manifest = read_manifest(ckpt)
    if manifest.get("mode") != "deterministic":
        raise IntegrityError("checkpoint is not a deterministic full-state checkpoint")
    state = manifest["det_state"]
    central = run.centralizer
    load_central_checkpoint(ckpt, central)
    _load_buffer(ckpt / "central_buffer.bin", central.buffer)
    cs = state["central"]
    _set_rng_state(central.sample_rng, cs["sample_rng"])
    central.updates_at_broadcast = cs["updates_at_broadcast"]
    central.seen_seqs = {int(k): set(v) for k, v in cs["seen_seqs"].items()}
    central.received_counts = {int(k): v for k, v in cs["received_counts"].items()}
    central.duplicate_batches = cs["duplicate_batches"]
    central.container_stats = {int(k): v for k, v in cs["container_stats"].items()}
    central.connected = set(cs["connected"])
    central.ever_connected = set(cs["ever_connected"])
    central.last_td = cs["last_td"]
    central.start_time = cs["start_time"]
    central.buffer.stats.inserted = cs["buffer_stats"]["inserted"]
    central.buffer.stats.evicted = cs["buffer_stats"]["evicted"]
    central.buffer.stats.sampled = cs["buffer_stats"]["sampled"]
    central.broadcast_limiter._last = cs["limiters"]["broadcast"]
    central.eval_limiter._last = cs["limiters"]["eval"]
    central.learn_limiter._last = cs["limiters"]["learn"]
    central.floor_limiter._last = cs["limiters"]["floor"]

    run.scheduler.clock.t = state["clock"]
    run.scheduler.quantum = state["quantum"]
    _set_rng_state(run.scheduler.rng, state["sched_rng"])

    by_cid = {det.cfg.container_id: det for det in run.containers}
    for entry in state["containers"]:
        det = by_cid[entry["container_id"]]
        cid = entry["container_id"]
        r = det.runtime
        det.done = entry["done"]
        r.params.load_arrays(load_arrays(ckpt / f"c{cid}_params.hqp"))
        r.learner.target.load_arrays(load_arrays(ckpt / f"c{cid}_target.hqp"))
        r.learner.opt.load_state_arrays(load_arrays(ckpt / f"c{cid}_opt.hqp"))
        for key, arr in load_arrays(ckpt / f"c{cid}_siblings.hqp").items():
            _, scid, name = key.split("/", 2)
            r.siblings.heads.setdefault(int(scid), {})[name] = arr
        _load_buffer(ckpt / f"c{cid}_buffer.bin", r.buffer)
        r.learner.updates = entry["learner"]["updates"]
        r.learner.last_td = entry["learner"]["last_td"]
        r.learner.last_kl = entry["learner"]["last_kl"]
        r.learner.limiter._last = entry["learner"]["limiter_last"]
        r.queue_manager.gathered = entry["qm"]["gathered"]
        r.queue_manager.forwarded = entry["qm"]["forwarded"]
        r.queue_manager.flushes = entry["qm"]["flushes"]
        r.buffer_manager.batches_in = entry["bm"]["batches_in"]
        r.buffer_manager.batches_sampled = entry["bm"]["batches_sampled"]
        _set_rng_state(r.buffer_manager.rng, entry["bm"]["rng"])
        r.buffer.stats.inserted = entry["buffer_stats"]["inserted"]
        r.buffer.stats.evicted = entry["buffer_stats"]["evicted"]
        r.buffer.stats.sampled = entry["buffer_stats"]["sampled"]
        _set_rng_state(r.transfer_rng, entry["transfer_rng"])
        r.transferred = entry["transferred"]
        r.global_steps_base = entry["global_steps_base"]
        r.steps_at_base = entry["steps_at_base"]
        r.weights_version = entry["weights_version"]
        r.snap_version = entry["snap_version"]
        r.snap_limiter._last = entry["limiters"]["snap"]
        r.stats_limiter._last = entry["limiters"]["stats"]
        r.head_limiter._last = entry["limiters"]["head"]
        det.link.next_seq = entry["link"]["next_seq"]
        det.link.counters.acked_seqs = set(entry["link"]["acked_seqs"])
        det.link.counters.batches_queued = entry["link"]["batches_queued"]
        det.link.counters.batches_acked = entry["link"]["batches_acked"]
        for actor, astate in zip(det.actors, entry["actors"]):
            actor.params.load_arrays(
                load_arrays(ckpt / f"c{cid}_actor{actor.actor_id}_params.hqp")
            )
            actor.episode_index = astate["episode_index"]
            actor.env_steps = astate["env_steps"]
            actor.generated = astate["generated"]
            actor.snapshot_version = astate["snapshot_version"]
            actor.eps_base = astate["eps_base"]
            actor.steps_at_snapshot = astate["steps_at_snapshot"]
            actor.pipe.pushed = astate["pushed"]
            actor.pipe.dropped = astate["dropped"]
    return manifest
