import logging

import numpy as np
import pytest

from hiveq.container import (
    ActorWorker,
    ContainerConfig,
    ContainerLearner,
    PolicySnapshot,
    SiblingStore,
    build_qnet,
    init_central_params,
    init_container_params,
    initial_head_arrays,
    initial_priority_stage,
)
from hiveq.envs import make_env
from hiveq.fabric import LocalChannel
from hiveq.nets import QNetwork
from hiveq.policy import EpsilonSchedule
from hiveq.replay import Trajectory


def cfg_for(env_name="climb", **kw):
    kw.setdefault("env_params", {"n_agents": 3})
    kw.setdefault("hidden_dim", 8)
    kw.setdefault("mixing_dim", 4)
    return ContainerConfig(env_name=env_name, **kw)


def snapshot_for(cfg):
    env = cfg.make_env()
    qnet = build_qnet(env, cfg.hidden_dim, cfg.mixing_dim)
    params = init_container_params(qnet, cfg.run_seed, cfg.container_id)
    names = [n for n in params.names() if n.startswith("agent.")]
    return PolicySnapshot(arrays=params.to_arrays(names), version=1, eps_step_base=0)


def make_traj(ret, t=2):
    return Trajectory(
        obs=np.zeros((t + 1, 2, 3)),
        state=np.zeros((t + 1, 2)),
        avail=np.ones((t + 1, 2, 2)),
        actions=np.zeros((t, 2), dtype=np.int64),
        rewards=np.full(t, ret / t),
        terminated=np.array([0.0] * (t - 1) + [1.0]),
    )


class TestInitialPriorityStage:
    def test_endpoints(self):
        batch = [make_traj(0.0), make_traj(10.0)]
        out = initial_priority_stage(batch, bounds=(0.0, 10.0), eps=0.01)
        assert out[0].priority == pytest.approx(0.01)
        assert out[1].priority == pytest.approx(1.01)

    def test_empty_batch(self):
        assert initial_priority_stage([], bounds=(0.0, 1.0), eps=0.01) == []

    def test_elementwise_and_order_preserved(self):
        returns = [3.0, -1.0, 7.5, 0.0]
        batch = [make_traj(r) for r in returns]
        out = initial_priority_stage(batch, bounds=(-5.0, 10.0), eps=0.02)
        from hiveq.replay import compute_priority

        assert out is not None and [t.episode_return for t in out] == pytest.approx(returns)
        for tr, r in zip(out, returns):
            assert tr.priority == pytest.approx(compute_priority(r, -5.0, 10.0, 0.02))


class TestActorWorker:
    def test_greedy_actor_on_deterministic_env_repeats_trajectory(self):
        cfg = cfg_for(epsilon=EpsilonSchedule(0.0, 0.0, 1))
        out = LocalChannel()
        actor = ActorWorker(cfg, 0, cfg.make_env(), out, snapshot_for(cfg))
        t1 = actor.run_episode()
        t2 = actor.run_episode()
        assert np.array_equal(t1.actions, t2.actions)
        assert np.array_equal(t1.rewards, t2.rewards)

    def test_distinct_actors_get_distinct_streams(self):
        cfg = cfg_for(epsilon=EpsilonSchedule(1.0, 1.0, 1))
        snap = snapshot_for(cfg)
        a0 = ActorWorker(cfg, 0, cfg.make_env(), LocalChannel(), snap)
        a1 = ActorWorker(cfg, 1, cfg.make_env(), LocalChannel(), snap)
        acts0 = [a0.run_episode().actions.tolist() for _ in range(6)]
        acts1 = [a1.run_episode().actions.tolist() for _ in range(6)]
        assert acts0 != acts1

    def test_episode_records_are_consistent(self):
        cfg = cfg_for("disperse", env_params={"n_agents": 3, "episode_limit": 4})
        actor = ActorWorker(cfg, 0, cfg.make_env(), LocalChannel(), snapshot_for(cfg))
        tr = actor.run_episode()
        assert tr.length == 4
        assert tr.obs.shape[0] == tr.length + 1
        assert tr.terminated[-1] == 1.0
        assert tr.uid == (0, 0, 0)
        assert actor.env_steps == 4

    def test_snapshot_version_gating(self):
        cfg = cfg_for()
        actor = ActorWorker(cfg, 0, cfg.make_env(), LocalChannel(), snapshot_for(cfg))
        stale = PolicySnapshot(arrays={}, version=0, eps_step_base=99)
        actor.install_snapshot(stale)  # ignored: version not newer
        assert actor.snapshot_version == 1


class TestSiblingStore:
    def test_initial_heads_are_deterministic_and_complete(self):
        cfg = cfg_for(n_containers=3, container_id=1)
        qnet = build_qnet(cfg.make_env(), cfg.hidden_dim, cfg.mixing_dim)
        store = SiblingStore(qnet, run_seed=5, own_id=1, n_containers=3)
        heads = store.as_list()
        assert heads[1] is None
        for cid in (0, 2):
            expect = initial_head_arrays(qnet, 5, cid)
            for name, arr in expect.items():
                assert np.array_equal(heads[cid][name], arr)

    def test_update_ignores_own_slot(self):
        cfg = cfg_for(n_containers=2)
        qnet = build_qnet(cfg.make_env(), cfg.hidden_dim, cfg.mixing_dim)
        store = SiblingStore(qnet, run_seed=0, own_id=0, n_containers=2)
        store.update(0, {"agent.fc_out.w": np.zeros((8, 3))})
        assert store.heads[0] is None

    def test_container_params_share_trunk_with_central(self):
        cfg = cfg_for(n_containers=2, container_id=1)
        qnet = build_qnet(cfg.make_env(), cfg.hidden_dim, cfg.mixing_dim)
        central = init_central_params(qnet, 7)
        cont = init_container_params(qnet, 7, 1)
        shared = QNetwork.shared_names(central)
        assert central.equal_bytes(cont, shared)
        head = QNetwork.head_names(central)
        assert not central.equal_bytes(cont, head)


class TestContainerLearner:
    def build(self, n_containers=2, beta=0.1, local_learning=True):
        cfg = cfg_for(
            n_containers=n_containers,
            beta=beta,
            kl_target=0.4,
            batch_size=4,
            local_learning=local_learning,
            target_copy_period=3,
        )
        env = cfg.make_env()
        qnet = build_qnet(env, cfg.hidden_dim, cfg.mixing_dim)
        params = init_container_params(qnet, cfg.run_seed, cfg.container_id)
        siblings = SiblingStore(qnet, cfg.run_seed, cfg.container_id, n_containers)
        inbox = LocalChannel(2)
        learner = ContainerLearner(cfg, qnet, params, inbox, siblings)
        return cfg, qnet, params, learner

    def trajs(self, qnet, n=4, t=3, seed=0):
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            out.append(
                Trajectory(
                    obs=rng.normal(size=(t + 1, qnet.n_agents, qnet.obs_dim)),
                    state=rng.normal(size=(t + 1, qnet.state_dim)),
                    avail=np.ones((t + 1, qnet.n_agents, qnet.n_actions)),
                    actions=rng.integers(qnet.n_actions, size=(t, qnet.n_agents)),
                    rewards=rng.normal(size=t),
                    terminated=np.array([0.0] * (t - 1) + [1.0]),
                    priority=0.5,
                )
            )
        return out

    def test_trains_only_head_and_mixer(self):
        cfg, qnet, params, learner = self.build()
        shared_before = params.to_arrays(QNetwork.shared_names(params))
        head_before = params.to_arrays(QNetwork.head_names(params))
        learner.step_batch(self.trajs(qnet))
        for name, arr in shared_before.items():
            assert np.array_equal(params[name].value, arr), name
        changed = any(
            not np.array_equal(params[n].value, head_before[n]) for n in head_before
        )
        assert changed

    def test_target_copy_period(self):
        cfg, qnet, params, learner = self.build()
        batch = self.trajs(qnet)
        learner.step_batch(batch)
        learner.step_batch(batch)
        assert not learner.target.equal_bytes(params, QNetwork.head_names(params))
        learner.step_batch(batch)  # third update copies the target
        assert learner.target.equal_bytes(params)

    def test_kl_metric_positive_with_distinct_heads(self):
        cfg, qnet, params, learner = self.build()
        info = learner.step_batch(self.trajs(qnet))
        assert info["kl_mean"] > 0.0

    def test_diagnostic_zero_for_identical_heads(self):
        cfg, qnet, params, learner = self.build(local_learning=False)
        own = params.to_arrays(QNetwork.head_names(params))
        learner.siblings.heads[1] = dict(own)
        kl = learner.diversity_diagnostic(self.trajs(qnet))
        assert kl == pytest.approx(0.0, abs=1e-12)

    def test_diagnostic_positive_for_distinct_heads(self):
        cfg, qnet, params, learner = self.build(local_learning=False)
        kl = learner.diversity_diagnostic(self.trajs(qnet))
        assert kl > 0.0

    def test_missing_sibling_falls_back_to_pure_td(self, caplog):
        cfg, qnet, params, learner = self.build()
        learner.siblings.heads[1] = None  # simulate an absent sibling
        with caplog.at_level(logging.WARNING):
            info = learner.step_batch(self.trajs(qnet))
        assert info["kl_mean"] == 0.0
        assert any("missing sibling" in r.message for r in caplog.records)
