"""Experiment configuration.

A RunConfig describes one experiment: the task, the container layout
(N containers x k actors), transfer fraction, diversity coefficients,
schedules, budgets, and seeds. Configs load from YAML files (a flat
key-value tree, same keys as the dataclass fields); named presets shipped
under ``configs/`` apply the ablation layouts on top of a base config.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .centralizer import CentralConfig
from .container import ContainerConfig
from .envs import RETURN_BOUNDS, REGISTRY
from .errors import ConfigurationError
from .policy import EpsilonSchedule

PRESET_DIR = Path(__file__).resolve().parent / "presets"


@dataclass
class RunConfig:
    name: str = "run"
    env_name: str = "climb"
    env_params: dict = field(default_factory=dict)
    n_containers: int = 3
    k_actors: int = 4
    eta_percent: float = 20.0
    beta: float = 0.1
    kl_target: float = 0.5
    temperature: float = 1.0
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal_steps: int = 50_000
    learning_rate: float = 5e-4
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    batch_size: int = 32
    buffer_capacity: int = 5000
    priority_eps: float = 0.01
    return_bounds: tuple[float, float] | None = None
    target_copy_period: int = 200
    t_global_update_time: float = 5.0
    learner_floor_sps: float = 10.0
    container_learner_min_interval_s: float = 0.0
    central_learner_min_interval_s: float = 0.0
    eval_interval_s: float = 5.0
    eval_episodes: int = 8
    snapshot_interval_s: float = 0.25
    stats_interval_s: float = 1.0
    head_upload_interval_s: float = 2.0
    actor_queue_capacity: int = 64
    actor_nice: int = 0
    min_buffer_to_learn: int = 8
    hidden_dim: int = 64
    mixing_dim: int = 32
    step_budget: int = 50_000
    time_budget_s: float | None = None
    max_wall_s: float = 3600.0
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "runs"
    follow_central: bool = False
    local_learning: bool = True
    deterministic: bool = False
    host: str = "127.0.0.1"
    port: int = 0

    # -- validation ---------------------------------------------------------------

    def validate(self) -> "RunConfig":
        if self.env_name not in REGISTRY:
            raise ConfigurationError(
                f"unknown env {self.env_name!r}; choices: {sorted(REGISTRY)}"
            )
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.n_containers < 1 or self.k_actors < 1:
            raise ConfigurationError("need at least one container and one actor")
        if not 0 < self.eta_percent <= 100:
            raise ConfigurationError("eta_percent must be in (0, 100]")
        if self.beta < 0 or self.kl_target < 0:
            raise ConfigurationError("beta and kl_target must be non-negative")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ConfigurationError("epsilon schedule must satisfy 0 <= end <= start <= 1")
        if self.eps_anneal_steps <= 0:
            raise ConfigurationError("eps_anneal_steps must be positive")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must be in [0, 1)")
        if self.step_budget < 0:
            raise ConfigurationError("step_budget must be non-negative")
        if self.time_budget_s is not None and self.time_budget_s <= 0:
            raise ConfigurationError("time_budget_s must be positive when set")
        bounds = self.resolved_bounds()
        if bounds[1] <= bounds[0]:
            raise ConfigurationError("return bounds must satisfy H > L")
        return self

    def resolved_bounds(self) -> tuple[float, float]:
        if self.return_bounds is not None:
            return tuple(self.return_bounds)  # type: ignore[return-value]
        return RETURN_BOUNDS.get(self.env_name, (0.0, 1.0))

    # -- derived configs ---------------------------------------------------------------

    def epsilon_schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.eps_start, self.eps_end, self.eps_anneal_steps)

    def container_step_budget(self) -> int:
        return -(-self.step_budget // self.n_containers)  # ceil division

    def container_cfg(self, container_id: int, seed: int) -> ContainerConfig:
        return ContainerConfig(
            container_id=container_id,
            n_containers=self.n_containers,
            k_actors=self.k_actors,
            env_name=self.env_name,
            env_params=dict(self.env_params),
            eta_percent=self.eta_percent,
            beta=0.0 if self.follow_central else self.beta,
            kl_target=self.kl_target,
            temperature=self.temperature,
            gamma=self.gamma,
            epsilon=self.epsilon_schedule(),
            learning_rate=self.learning_rate,
            rms_alpha=self.rms_alpha,
            rms_eps=self.rms_eps,
            batch_size=self.batch_size,
            buffer_capacity=self.buffer_capacity,
            priority_eps=self.priority_eps,
            return_bounds=self.resolved_bounds(),
            actor_queue_capacity=self.actor_queue_capacity,
            actor_nice=self.actor_nice,
            target_copy_period=self.target_copy_period,
            head_upload_interval_s=self.head_upload_interval_s,
            stats_interval_s=self.stats_interval_s,
            snapshot_interval_s=self.snapshot_interval_s,
            learner_min_interval_s=self.container_learner_min_interval_s,
            min_buffer_to_learn=self.min_buffer_to_learn,
            hidden_dim=self.hidden_dim,
            mixing_dim=self.mixing_dim,
            run_seed=seed,
            step_budget=self.container_step_budget(),
            time_budget_s=self.time_budget_s,
            follow_central=self.follow_central,
            local_learning=self.local_learning and not self.follow_central,
        )

    def central_cfg(self, seed: int, out_dir: str | None) -> CentralConfig:
        return CentralConfig(
            env_name=self.env_name,
            env_params=dict(self.env_params),
            n_containers=self.n_containers,
            gamma=self.gamma,
            learning_rate=self.learning_rate,
            rms_alpha=self.rms_alpha,
            rms_eps=self.rms_eps,
            batch_size=self.batch_size,
            buffer_capacity=self.buffer_capacity,
            min_buffer_to_learn=self.min_buffer_to_learn,
            target_copy_period=self.target_copy_period,
            broadcast_interval_s=self.t_global_update_time,
            learner_floor_sps=self.learner_floor_sps,
            learner_min_interval_s=self.central_learner_min_interval_s,
            eval_interval_s=self.eval_interval_s,
            eval_episodes=self.eval_episodes,
            hidden_dim=self.hidden_dim,
            mixing_dim=self.mixing_dim,
            run_seed=seed,
            out_dir=out_dir,
        )

    # -- serialization -------------------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["return_bounds"] is not None:
            d["return_bounds"] = list(d["return_bounds"])
        return d

    def content_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if cfg.return_bounds is not None:
            cfg.return_bounds = tuple(cfg.return_bounds)  # type: ignore[assignment]
        if isinstance(cfg.seeds, int):
            cfg.seeds = [cfg.seeds]
        return cfg.validate()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: expected a key-value mapping")
        return cls.from_dict(data)

    def with_preset(self, preset: str) -> "RunConfig":
        path = PRESET_DIR / f"{preset}.yaml"
        if not path.exists():
            raise ConfigurationError(
                f"unknown preset {preset!r}; available: "
                f"{sorted(p.stem for p in PRESET_DIR.glob('*.yaml'))}"
            )
        overrides = yaml.safe_load(path.read_text()) or {}
        known = {f.name for f in fields(type(self))}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigurationError(f"preset {preset!r} has unknown keys: {sorted(unknown)}")
        merged = replace(self, **overrides)
        merged.name = f"{self.name}_{preset}" if self.name != "run" else preset
        return merged.validate()
