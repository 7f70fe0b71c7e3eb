"""Experiment runner: launches the centralizer and N container processes
(or the deterministic in-process system), supervises container crashes,
collects results, and handles resume."""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .errors import ConfigurationError
from .metrics import read_metrics_csv
from .procs import CentralHost, container_process_main
from .runstate import (
    load_central_checkpoint,
    load_det_checkpoint,
    read_manifest,
    save_central_checkpoint,
    save_det_checkpoint,
)
from .runtime import DeterministicRun

log = logging.getLogger(__name__)

CONTAINER_RETRY_BUDGET = 2


@dataclass
class SeedResult:
    seed: int
    out_dir: Path
    central: dict = field(default_factory=dict)
    containers: dict = field(default_factory=dict)
    final_eval_mean: float | None = None
    final_eval_median: float | None = None
    env_steps_total: int = 0
    wall_s: float = 0.0

    @classmethod
    def collect(cls, seed: int, out_dir: Path, wall_s: float) -> "SeedResult":
        res = cls(seed=seed, out_dir=out_dir, wall_s=wall_s)
        central_path = out_dir / "central_result.json"
        if central_path.exists():
            res.central = json.loads(central_path.read_text())
            res.env_steps_total = res.central.get("env_steps_total", 0)
        for path in sorted(out_dir.glob("container_*.json")):
            cid = path.stem.split("_", 1)[1]
            res.containers[cid] = json.loads(path.read_text())
        csv_path = out_dir / "metrics.csv"
        if csv_path.exists():
            data = read_metrics_csv(csv_path)
            if len(data["eval_mean_return"]):
                res.final_eval_mean = float(data["eval_mean_return"][-1])
                res.final_eval_median = float(data["eval_median_return"][-1])
        return res


def seed_dir(cfg: RunConfig, seed: int) -> Path:
    return Path(cfg.out_dir) / cfg.name / f"seed_{seed}"


def prepare_run_root(cfg: RunConfig) -> Path:
    root = Path(cfg.out_dir) / cfg.name
    root.mkdir(parents=True, exist_ok=True)
    cfg.save(root / "config.yaml")
    (root / "settings_hash.txt").write_text(cfg.content_hash() + "\n")
    return root


def run_seed_deterministic(
    cfg: RunConfig,
    seed: int,
    out_dir: Path,
    resume_from: Path | None = None,
    checkpoint_at_end: bool = True,
) -> SeedResult:
    t0 = time.monotonic()
    container_cfgs = [cfg.container_cfg(cid, seed) for cid in range(cfg.n_containers)]
    central_cfg = cfg.central_cfg(seed, str(out_dir))
    run = DeterministicRun(container_cfgs, central_cfg, schedule_seed=seed)
    if resume_from is not None:
        load_det_checkpoint(resume_from, run)
        (out_dir / "resume.json").write_text(
            json.dumps({"resumed_from": str(resume_from), "clock": run.scheduler.clock.t})
        )
    max_ticks = 200_000 + cfg.step_budget * 60
    run.run(max_ticks=max_ticks)
    run.write_results(out_dir)
    if checkpoint_at_end:
        save_det_checkpoint(out_dir / "checkpoint", run, cfg.content_hash())
    run.centralizer.close()
    return SeedResult.collect(seed, out_dir, time.monotonic() - t0)


def run_seed_production(
    cfg: RunConfig,
    seed: int,
    out_dir: Path,
    collect_samples: bool = False,
    link_outage: tuple[float, float] | None = None,
    resume_from: Path | None = None,
    stop_when=None,
) -> SeedResult:
    t0 = time.monotonic()
    central_cfg = cfg.central_cfg(seed, str(out_dir))
    host = CentralHost(central_cfg, cfg.host, cfg.port)
    consumed = 0
    if resume_from is not None:
        manifest = load_central_checkpoint(resume_from, host.central)
        consumed = manifest.get("env_steps_total", 0)
        (out_dir / "resume.json").write_text(
            json.dumps({"resumed_from": str(resume_from), "env_steps_consumed": consumed})
        )
    host.start()

    remaining = max(0, cfg.step_budget - consumed)
    ctx = mp.get_context("fork")
    address = (cfg.host, host.port)
    procs: dict[int, mp.Process] = {}
    retries = {cid: 0 for cid in range(cfg.n_containers)}
    external_stop = ctx.Event()

    def spawn(cid: int) -> None:
        ccfg = cfg.container_cfg(cid, seed)
        ccfg.step_budget = -(-remaining // cfg.n_containers)
        p = ctx.Process(
            target=container_process_main,
            args=(ccfg, address, str(out_dir), collect_samples, external_stop),
            daemon=False,
        )
        p.start()
        procs[cid] = p

    outage_started = None
    outage_done = link_outage is None
    try:
        if remaining > 0:
            for cid in range(cfg.n_containers):
                spawn(cid)
            deadline = t0 + cfg.max_wall_s
            while procs and time.monotonic() < deadline:
                for cid, p in list(procs.items()):
                    if p.is_alive():
                        continue
                    if p.exitcode not in (0, None) and retries[cid] < CONTAINER_RETRY_BUDGET:
                        retries[cid] += 1
                        log.warning("container %d crashed (%s); restarting", cid, p.exitcode)
                        spawn(cid)
                    else:
                        procs.pop(cid)
                if stop_when is not None and not external_stop.is_set():
                    if stop_when(host.central):
                        log.info("stop condition met; winding containers down")
                        external_stop.set()
                if not outage_done:
                    elapsed = time.monotonic() - t0
                    if outage_started is None and elapsed >= link_outage[0]:
                        log.info("injecting centralizer link outage")
                        host.pause_link()
                        outage_started = time.monotonic()
                    elif (
                        outage_started is not None
                        and time.monotonic() - outage_started >= link_outage[1]
                    ):
                        log.info("restoring centralizer link")
                        host.resume_link()
                        outage_done = True
                time.sleep(0.05)
            for p in procs.values():
                if p.is_alive():
                    p.terminate()
                p.join(timeout=5.0)
        time.sleep(0.2)  # let trailing frames land
    finally:
        if not outage_done:
            host.resume_link()
        host.stop(out_dir)
        save_central_checkpoint(out_dir / "checkpoint", host.central, cfg.content_hash())
    return SeedResult.collect(seed, out_dir, time.monotonic() - t0)


def run(cfg: RunConfig, collect_samples: bool = False) -> list[SeedResult]:
    cfg.validate()
    prepare_run_root(cfg)
    results = []
    for seed in cfg.seeds:
        out_dir = seed_dir(cfg, seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.deterministic:
            results.append(run_seed_deterministic(cfg, seed, out_dir))
        else:
            results.append(run_seed_production(cfg, seed, out_dir, collect_samples))
    return results


def resume(run_root: str | Path, seed: int | None = None) -> list[SeedResult]:
    root = Path(run_root)
    cfg_path = root / "config.yaml"
    if not cfg_path.exists():
        raise ConfigurationError(f"no config.yaml under {root}")
    cfg = RunConfig.load(cfg_path)
    results = []
    seeds = [seed] if seed is not None else cfg.seeds
    for s in seeds:
        out_dir = root / f"seed_{s}"
        ckpt = out_dir / "checkpoint"
        manifest = read_manifest(ckpt)
        if manifest.get("config_hash") != cfg.content_hash():
            raise ConfigurationError(
                "checkpoint was produced by a different configuration "
                f"({manifest.get('config_hash')} vs {cfg.content_hash()})"
            )
        if manifest.get("mode") == "deterministic":
            results.append(run_seed_deterministic(cfg, s, out_dir, resume_from=ckpt))
        else:
            results.append(run_seed_production(cfg, s, out_dir, resume_from=ckpt))
    return results
