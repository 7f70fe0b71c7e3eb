import json

import pytest
import yaml

from hiveq.cli import main
from hiveq.config import PRESET_DIR, RunConfig
from hiveq.errors import ConfigurationError

TABLE_PRESETS = ["no_diversity", "2_containers", "1_container", "8_actors", "2_actors"]


class TestPresets:
    def test_every_ablation_preset_ships_as_one_file(self):
        found = {p.stem for p in PRESET_DIR.glob("*.yaml")}
        assert set(TABLE_PRESETS) <= found

    def test_no_diversity_forces_central_following(self):
        cfg = RunConfig().with_preset("no_diversity")
        assert cfg.follow_central and not cfg.local_learning and cfg.beta == 0.0
        ccfg = cfg.container_cfg(0, 0)
        assert ccfg.beta == 0.0 and ccfg.follow_central and not ccfg.local_learning

    @pytest.mark.parametrize(
        "preset,n,k",
        [("1_container", 1, 13), ("2_containers", 2, 13), ("8_actors", 3, 8), ("2_actors", 3, 2)],
    )
    def test_layout_presets(self, preset, n, k):
        cfg = RunConfig().with_preset(preset)
        assert (cfg.n_containers, cfg.k_actors) == (n, k)

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            RunConfig().with_preset("nope")


class TestConfig:
    def test_yaml_roundtrip(self, tmp_path):
        cfg = RunConfig(name="x", env_name="gather", seeds=[1, 2, 3], beta=0.25)
        cfg.save(tmp_path / "c.yaml")
        loaded = RunConfig.load(tmp_path / "c.yaml")
        assert loaded == cfg

    def test_unknown_keys_rejected(self, tmp_path):
        (tmp_path / "c.yaml").write_text("envname: climb\n")
        with pytest.raises(ConfigurationError, match="envname"):
            RunConfig.load(tmp_path / "c.yaml")

    @pytest.mark.parametrize(
        "bad",
        [
            {"env_name": "sc2"},
            {"seeds": []},
            {"eta_percent": 0},
            {"eta_percent": 101},
            {"beta": -1},
            {"eps_start": 0.3, "eps_end": 0.5},
            {"gamma": 1.0},
            {"n_containers": 0},
            {"return_bounds": (5, 5)},
            {"time_budget_s": 0},
        ],
    )
    def test_validation_rejects(self, bad):
        cfg = RunConfig(**bad)
        with pytest.raises(ConfigurationError):
            cfg.validate()

    def test_bounds_default_per_env(self):
        assert RunConfig(env_name="climb").resolved_bounds() == (-5.0, 10.0)
        assert RunConfig(env_name="aloha").resolved_bounds() == (-50.0, 5.0)
        assert RunConfig(env_name="climb", return_bounds=(0, 1)).resolved_bounds() == (0, 1)

    def test_content_hash_tracks_changes(self):
        a, b = RunConfig(), RunConfig(beta=0.9)
        assert a.content_hash() != b.content_hash()
        assert a.content_hash() == RunConfig().content_hash()

    def test_budget_split_is_ceiling(self):
        cfg = RunConfig(n_containers=3, step_budget=100)
        assert cfg.container_step_budget() == 34


class TestCliCommands:
    def test_dry_run_echoes_plan(self, tmp_path, capsys):
        cfg_file = tmp_path / "c.yaml"
        RunConfig(name="dry", step_budget=10).save(cfg_file)
        rc = main(["train", "--config", str(cfg_file), "--dry-run"])
        assert rc == 0
        plan = json.loads(capsys.readouterr().out)
        assert plan["config"]["name"] == "dry"
        assert plan["processes"]["containers"] == 3
        assert "settings_hash" in plan

    def test_dry_run_with_preset_and_seed(self, tmp_path, capsys):
        cfg_file = tmp_path / "c.yaml"
        RunConfig(name="dry").save(cfg_file)
        rc = main(
            ["train", "--config", str(cfg_file), "--preset", "2_actors", "--seed", "7", "--dry-run"]
        )
        assert rc == 0
        plan = json.loads(capsys.readouterr().out)
        assert plan["config"]["k_actors"] == 2
        assert plan["config"]["seeds"] == [7]

    def test_invalid_config_fails_before_spawn(self, tmp_path):
        cfg_file = tmp_path / "bad.yaml"
        cfg_file.write_text(yaml.safe_dump({"env_name": "starcraft"}))
        with pytest.raises(ConfigurationError):
            main(["train", "--config", str(cfg_file), "--dry-run"])

    def test_train_eval_report_cycle(self, tmp_path, capsys):
        cfg = RunConfig(
            name="cycle",
            env_name="climb",
            env_params={"n_agents": 3},
            n_containers=1,
            k_actors=2,
            step_budget=80,
            hidden_dim=8,
            mixing_dim=4,
            eps_anneal_steps=60,
            t_global_update_time=0.05,
            eval_interval_s=0.3,
            eval_episodes=2,
            snapshot_interval_s=0.02,
            stats_interval_s=0.02,
            batch_size=4,
            min_buffer_to_learn=4,
            container_learner_min_interval_s=0.05,
            deterministic=True,
            out_dir=str(tmp_path / "runs"),
            seeds=[0],
        )
        cfg_file = tmp_path / "c.yaml"
        cfg.save(cfg_file)
        assert main(["train", "--config", str(cfg_file)]) == 0
        capsys.readouterr()

        ckpt = tmp_path / "runs/cycle/seed_0/checkpoint"
        assert (
            main(["eval", "--checkpoint", str(ckpt), "--config", str(cfg_file), "--episodes", "3"])
            == 0
        )
        result = json.loads(capsys.readouterr().out)
        assert len(result["returns"]) == 3

        assert main(["report", "--dir", str(tmp_path / "runs")]) == 0
        out = capsys.readouterr().out
        assert "cycle" in out
        assert (tmp_path / "runs/summary.md").exists()
