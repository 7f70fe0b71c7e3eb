import numpy as np
import pytest

from hiveq import wire
from hiveq.centralizer import CentralConfig, Centralizer, evaluate_policy
from hiveq.container import build_qnet, init_central_params
from hiveq.envs import make_env
from hiveq.fabric import LocalChannel
from hiveq.replay import Trajectory


def central(n_containers=2, **kw):
    kw.setdefault("env_name", "climb")
    kw.setdefault("env_params", {"n_agents": 3})
    kw.setdefault("hidden_dim", 8)
    kw.setdefault("mixing_dim", 4)
    kw.setdefault("min_buffer_to_learn", 2)
    kw.setdefault("batch_size", 4)
    kw.setdefault("broadcast_interval_s", 0.0)
    kw.setdefault("eval_interval_s", 1e9)
    cfg = CentralConfig(n_containers=n_containers, **kw)
    incoming = LocalChannel()
    sent = []

    def send(cid, payload, droppable=False):
        sent.append((cid, payload))
        return True

    return Centralizer(cfg, incoming, send, local_mode=True), incoming, sent


def traj(uid, ret=5.0, t=1):
    return Trajectory(
        obs=np.ones((t + 1, 3, 1)),
        state=np.ones((t + 1, 1)),
        avail=np.ones((t + 1, 3, 3)),
        actions=np.zeros((t, 3), dtype=np.int64),
        rewards=np.full(t, ret),
        terminated=np.array([1.0] * t),
        container_id=uid[0],
        priority=0.5,
        uid=uid,
    )


def batch_msg(cid, seq, trajs):
    return {"type": wire.TRAJ_BATCH, "container_id": cid, "batch_seq": seq, "trajectories": trajs}


class TestReceiver:
    def test_union_from_two_containers_with_counters(self):
        c, incoming, sent = central()
        incoming.put_nowait({"type": wire.HELLO, "container_id": 0})
        incoming.put_nowait({"type": wire.HELLO, "container_id": 1})
        incoming.put_nowait(batch_msg(0, 0, [traj((0, 0, i)) for i in range(3)]))
        incoming.put_nowait(batch_msg(1, 0, [traj((1, 0, i)) for i in range(2)]))
        c.receiver_tick()
        c.buffer_tick()
        assert len(c.buffer) == 5
        assert c.received_counts == {0: 1, 1: 1}
        acks = [p for _, p in sent if p["type"] == wire.ACK]
        assert len(acks) == 2

    def test_duplicate_batches_deduplicated_and_reacked(self):
        c, incoming, sent = central()
        msg = batch_msg(0, 7, [traj((0, 0, 0))])
        incoming.put_nowait(msg)
        incoming.put_nowait(msg)
        c.receiver_tick()
        c.buffer_tick()
        assert len(c.buffer) == 1
        assert c.duplicate_batches == 1
        acks = [p for _, p in sent if p["type"] == wire.ACK and p["batch_seq"] == 7]
        assert len(acks) == 2  # retries are re-acknowledged

    def test_learner_waits_when_nothing_connected(self):
        c, incoming, _ = central()
        assert not c.learner_tick()
        assert c.update_counter == 0

    def test_stats_tracked_per_container(self):
        c, incoming, _ = central()
        incoming.put_nowait(
            {"type": wire.STATS, "payload": {"container_id": 0, "env_steps": 120, "kl_mean": 0.5}}
        )
        incoming.put_nowait(
            {"type": wire.STATS, "payload": {"container_id": 1, "env_steps": 80, "kl_mean": 0.1}}
        )
        c.receiver_tick()
        assert c.env_steps_total() == 200

    def test_head_upload_versions(self):
        c, incoming, _ = central()
        new_head = {"agent.fc_out.w": np.zeros((8, 3)), "agent.fc_out.b": np.zeros(3)}
        incoming.put_nowait(
            {"type": wire.HEAD_UPLOAD, "container_id": 1, "version": 5, "arrays": new_head}
        )
        c.receiver_tick()
        assert np.array_equal(c.head_store[1]["agent.fc_out.b"], np.zeros(3))
        stale = {"agent.fc_out.b": np.ones(3)}
        incoming.put_nowait(
            {"type": wire.HEAD_UPLOAD, "container_id": 1, "version": 4, "arrays": stale}
        )
        c.receiver_tick()
        assert np.array_equal(c.head_store[1]["agent.fc_out.b"], np.zeros(3))


class TestLearner:
    def fill(self, c, incoming, n=6):
        incoming.put_nowait({"type": wire.HELLO, "container_id": 0})
        incoming.put_nowait(batch_msg(0, 0, [traj((0, 0, i)) for i in range(n)]))
        c.receiver_tick()
        c.buffer_tick()

    def test_batch_arrival_triggers_one_step(self):
        c, incoming, _ = central()
        self.fill(c, incoming)
        assert c.learner_tick()
        assert c.update_counter == 1

    def test_target_refresh_every_period(self):
        c, incoming, _ = central(target_copy_period=2, learner_floor_sps=1e9)
        self.fill(c, incoming)
        c.learner_tick()
        assert not c.target.equal_bytes(c.params)
        c.learner_tick()  # floor step; counter hits the period
        assert c.target.equal_bytes(c.params)

    def test_floor_keeps_learning_when_input_stalls(self):
        c, incoming, _ = central(learner_floor_sps=1e9)
        self.fill(c, incoming)
        c.learner_tick()
        before = c.update_counter
        for _ in range(5):
            c.learner_tick()
        assert c.update_counter > before


class TestBroadcast:
    def test_versions_strictly_increase_and_payload_complete(self):
        c, incoming, sent = central(learner_floor_sps=1e9)
        incoming.put_nowait({"type": wire.HELLO, "container_id": 0})
        incoming.put_nowait(batch_msg(0, 0, [traj((0, 0, i)) for i in range(4)]))
        c.receiver_tick()
        c.buffer_tick()
        versions = []
        for _ in range(3):
            c.learner_tick()
            assert c.broadcaster_tick()
            weights = [p for _, p in sent if p["type"] == wire.WEIGHTS][-1]
            versions.append(weights["version"])
            keys = weights["arrays"].keys()
            assert any(k.startswith("shared/") for k in keys)
            assert any(k.startswith("central/") for k in keys)
            assert any(k.startswith("head/0/") for k in keys)
            assert any(k.startswith("head/1/") for k in keys)
        assert versions == sorted(set(versions))

    def test_no_broadcast_without_new_updates(self):
        c, incoming, sent = central()
        incoming.put_nowait({"type": wire.HELLO, "container_id": 0})
        c.receiver_tick()
        assert not c.broadcaster_tick()  # nothing learned yet


class TestEvaluate:
    def test_same_params_same_seed_identical_statistics(self):
        env = make_env("climb", n_agents=3)
        qnet = build_qnet(env, 8, 4)
        params = init_central_params(qnet, 3)
        a = evaluate_policy(env, qnet, params, episodes=6, seed=11)
        b = evaluate_policy(make_env("climb", n_agents=3), qnet, params, episodes=6, seed=11)
        assert a == b

    def test_untrained_policy_well_below_optimum(self):
        env = make_env("climb", n_agents=3)
        qnet = build_qnet(env, 8, 4)
        params = init_central_params(qnet, 0)
        res = evaluate_policy(env, qnet, params, episodes=10, seed=0)
        assert res["mean"] < 10.0

    def test_hand_built_disperse_policy_zero_punishment(self):
        """A head whose Q prefers the announced hospital achieves zero
        punishment on every episode."""
        env = make_env("disperse", n_agents=4, episode_limit=6)
        qnet = build_qnet(env, 8, 4)
        params = init_central_params(qnet, 0)
        # bypass the network: evaluate with a handcrafted greedy policy by
        # constructing observations -> the announced hospital is obs[4:8]
        import hiveq.autodiff as ad

        returns = []
        for ep in range(5):
            obs, _ = env.reset(ep)
            total, done = 0.0, False
            while not done:
                actions = [int(np.argmax(o[4:8])) for o in obs]
                res = env.step(actions)
                total += res.reward
                obs = res.next_obs
                done = res.terminated
            returns.append(total)
        assert returns == [0.0] * 5


class TestMetricsRow:
    def test_evaluator_writes_schema_row(self, tmp_path):
        c, incoming, _ = central(out_dir=str(tmp_path), eval_interval_s=0.0, eval_episodes=2)
        incoming.put_nowait(
            {"type": wire.STATS, "payload": {"container_id": 0, "env_steps": 10, "kl_mean": 0.2,
                                             "buffer_size": 3, "dropped": 1}}
        )
        c.receiver_tick()
        assert c.evaluator_tick(force=True)
        c.close()
        from hiveq.metrics import read_metrics_csv

        data = read_metrics_csv(tmp_path / "metrics.csv")
        assert data["env_steps_total"][-1] == 10
        assert data["kl_mean_per_container"][-1] == pytest.approx(0.2)
        assert data["dropped_episodes"][-1] == 1
