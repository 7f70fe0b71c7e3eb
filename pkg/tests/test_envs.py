import numpy as np
import pytest

from hiveq.envs import Aloha, ClimbGame, Disperse, Gather, Hallway, make_env
from hiveq.envs.hallway import LEFT, RIGHT, STAY
from hiveq.errors import ConfigurationError, ContractViolation


def rollout_rewards(env, seed, actions_fn, steps=200):
    env.reset(seed)
    rewards = []
    for _ in range(steps):
        masks = env.avail_actions()
        res = env.step(actions_fn(masks))
        rewards.append(res.reward)
        if res.terminated:
            break
    return rewards


def random_legal(masks, rng):
    return [int(rng.choice(np.flatnonzero(m))) for m in masks]


@pytest.mark.parametrize("name", ["climb", "aloha", "disperse", "hallway", "gather"])
def test_replaying_recorded_actions_reproduces_rewards(name):
    env = make_env(name)
    rng = np.random.default_rng(0)
    env.reset(123)
    actions, rewards = [], []
    for _ in range(50):
        masks = env.avail_actions()
        act = random_legal(masks, rng)
        res = env.step(act)
        actions.append(act)
        rewards.append(res.reward)
        if res.terminated:
            break
    env2 = make_env(name)
    env2.reset(123)
    for act, rew in zip(actions, rewards):
        assert env2.step(act).reward == rew


@pytest.mark.parametrize("name", ["climb", "aloha", "disperse", "hallway", "gather"])
def test_spec_shapes_match_observations(name):
    env = make_env(name)
    obs, state = env.reset(0)
    spec = env.spec
    assert len(obs) == spec.n_agents
    assert all(o.shape == (spec.obs_dim,) for o in obs)
    assert state.shape == (spec.state_dim,)
    masks = env.avail_actions()
    assert all(m.shape == (spec.n_actions,) and m.any() for m in masks)


@pytest.mark.parametrize("name", ["climb", "aloha", "disperse", "hallway", "gather"])
def test_same_seed_identical_reset(name):
    e1, e2 = make_env(name), make_env(name)
    obs1, st1 = e1.reset(77)
    obs2, st2 = e2.reset(77)
    assert np.array_equal(np.array(obs1), np.array(obs2))
    assert np.array_equal(st1, st2)


class TestClimb:
    def test_payoffs(self):
        env = ClimbGame(n_agents=4)
        cases = [([0, 0, 0, 0], 10.0), ([0, 1, 0, 0], 0.0), ([1, 2, 1, 2], 5.0)]
        for actions, expected in cases:
            env.reset(0)
            res = env.step(actions)
            assert res.reward == expected
            assert res.terminated

    def test_step_after_done_raises(self):
        env = ClimbGame()
        env.reset(0)
        env.step([0, 0, 0, 0])
        with pytest.raises(ContractViolation):
            env.step([0, 0, 0, 0])


class TestAloha:
    def test_reset_backlogs_all_one(self):
        env = Aloha()
        env.reset(0)
        assert np.array_equal(env.backlogs, np.ones(10, dtype=int))

    def test_adjacent_senders_collide(self):
        env = Aloha(arrival_prob=0.0)
        env.reset(0)
        # islands 0 and 1 are horizontal neighbours on the 2x5 grid
        res = env.step([1, 1] + [0] * 8)
        assert res.reward == -10.0
        assert env.backlogs[0] == 1 and env.backlogs[1] == 1  # resent, not popped

    def test_isolated_sender_succeeds(self):
        env = Aloha(arrival_prob=0.0)
        env.reset(0)
        res = env.step([1] + [0] * 9)
        assert res.reward == pytest.approx(0.1)
        assert env.backlogs[0] == 0

    def test_send_illegal_when_backlog_empty(self):
        env = Aloha(arrival_prob=0.0)
        env.reset(0)
        env.step([1] + [0] * 9)
        masks = env.avail_actions()
        assert not masks[0][1]
        with pytest.raises(ContractViolation):
            env.step([1] + [0] * 9)

    def test_backlog_bounds_over_random_play(self):
        env = Aloha()
        rng = np.random.default_rng(5)
        env.reset(5)
        for _ in range(500):
            res = env.step(random_legal(env.avail_actions(), rng))
            assert env.backlogs.min() >= 0 and env.backlogs.max() <= 5
            if res.terminated:
                env.reset(rng.integers(1 << 30))

    def test_arrival_rate_statistics(self):
        # hold backlogs below max by never sending; every idle step is a
        # Bernoulli(0.6) arrival chance per island while below the cap
        env = Aloha(max_backlog=10**9, episode_limit=10**9)
        env.reset(42)
        arrivals = 0
        trials = 0
        steps = 10_000  # 10 islands -> 1e5 island-steps
        prev = env.backlogs.copy()
        for _ in range(steps):
            env.step([0] * 10)
            arrivals += int((env.backlogs - prev).sum())
            trials += 10
            prev = env.backlogs.copy()
        assert abs(arrivals / trials - 0.6) < 0.01


class TestDisperse:
    def test_reset_single_hospital_with_need(self):
        env = Disperse()
        env.reset(3)
        assert 0 <= env.selected < 4
        assert 1 <= env.need <= 6

    def test_shortfall_punished_by_difference(self):
        env = Disperse(n_agents=12, initial_need=(0, 4))
        env.reset(0)
        actions = [0] * 1 + [1] * 11  # one agent goes to hospital 0, need 4
        res = env.step(actions)
        assert res.reward == -3.0

    def test_meeting_need_no_punishment(self):
        env = Disperse(n_agents=12, initial_need=(2, 5))
        env.reset(0)
        res = env.step([2] * 5 + [0] * 7)
        assert res.reward == 0.0

    def test_observations_reveal_announcement(self):
        env = Disperse(n_agents=4, initial_need=(1, 2))
        obs, state = env.reset(0)
        for o in obs:
            assert np.array_equal(o[4:8], np.array([0, 1, 0, 0.0]))
            assert o[8] == pytest.approx(2 / 4)


class TestHallway:
    def test_horizon_is_max_length_plus_ten(self):
        env = Hallway(seed=9)
        assert env.spec.episode_limit == env.lengths.max() + 10

    def test_chain_lengths_in_range_and_seeded(self):
        a, b = Hallway(seed=4), Hallway(seed=4)
        assert np.array_equal(a.lengths, b.lengths)
        assert a.lengths.min() >= 4 and a.lengths.max() <= 8

    def test_group_win_requires_simultaneous_arrival(self):
        env = Hallway(n_agents=2, n_groups=1, length_range=(3, 3), seed=0)
        env.reset(1)
        env.positions[:] = [1, 1]
        res = env.step([LEFT, LEFT])
        assert res.reward == 1.0
        assert not env.alive.any()
        assert res.terminated

    def test_early_arrival_removes_group_without_reward(self):
        env = Hallway(n_agents=2, n_groups=1, length_range=(3, 3), seed=0)
        env.reset(1)
        env.positions[:] = [1, 2]
        res = env.step([LEFT, STAY])
        assert res.reward == 0.0
        assert not env.alive.any()

    def test_goal_contention_blocks_and_punishes(self):
        env = Hallway(n_agents=2, n_groups=2, length_range=(3, 3), seed=0)
        env.reset(1)
        env.positions[:] = [1, 1]
        res = env.step([LEFT, LEFT])
        assert res.reward == pytest.approx(-1.0)  # two groups attempting
        assert np.array_equal(env.positions, [1, 1])  # kept motionless
        assert env.alive.all()

    def test_removed_agents_noop_only(self):
        env = Hallway(n_agents=4, n_groups=2, length_range=(3, 3), seed=0)
        env.reset(1)
        env.positions[:] = [1, 2, 2, 2]
        env.step([LEFT, STAY, STAY, STAY])  # agent 0 arrives early; group 0 out
        masks = env.avail_actions()
        assert masks[0].tolist() == [True, False, False]
        assert masks[1].tolist() == [True, False, False]
        obs = env.observations()
        assert not obs[0].any()

    def test_right_edge_masked(self):
        env = Hallway(n_agents=2, n_groups=1, length_range=(3, 3), seed=0)
        env.reset(1)
        env.positions[:] = [3, 3]
        masks = env.avail_actions()
        assert not masks[0][RIGHT]


class TestGather:
    def make(self, **kw):
        kw.setdefault("n_agents", 3)
        kw.setdefault("size", 5)
        kw.setdefault("goals", ((0, 2), (4, 0), (4, 4)))
        return Gather(**kw)

    def place(self, env, cells):
        env.pos = np.array(cells, dtype=np.int64)

    def stage_arrival(self, env, targets):
        """Place each agent adjacent to its target cell and return the moves
        that step everyone onto their targets simultaneously."""
        starts, moves = [], []
        for r, c in targets:
            if r + 1 < env.size:
                starts.append((r + 1, c))
                moves.append(1)  # up
            else:
                starts.append((r - 1, c))
                moves.append(2)  # down
        self.place(env, starts)
        return moves

    def test_all_at_optimal_pays_ten(self):
        env = self.make()
        env.reset(0)
        g = env.goals[env.optimal]
        moves = self.stage_arrival(env, [g, g, g])
        res = env.step(moves)
        assert res.terminated
        assert res.reward == 10.0

    def test_all_at_other_goals_pays_five(self):
        env = self.make()
        env.reset(0)
        others = [g for i, g in enumerate(env.goals) if i != env.optimal]
        moves = self.stage_arrival(env, [others[0], others[0], others[1]])
        res = env.step(moves)
        assert res.terminated
        assert res.reward == 5.0

    def test_partial_gather_at_optimal_pays_minus_five(self):
        env = self.make()
        env.reset(0)
        opt = env.goals[env.optimal]
        other = env.goals[(env.optimal + 1) % 3]
        moves = self.stage_arrival(env, [opt, opt, other])
        res = env.step(moves)
        assert res.terminated
        assert res.reward == -5.0

    def test_no_reward_while_someone_off_goal(self):
        env = self.make()
        env.reset(0)
        self.place(env, [(2, 2), (2, 2), (2, 2)])
        res = env.step([0, 0, 0])
        assert res.reward == 0.0
        assert not res.terminated

    def test_knowledge_only_near_optimal_goal(self):
        env = Gather(n_agents=5, know_radius=2)
        found_informed, found_ignorant = False, False
        for seed in range(30):
            env.reset(seed)
            opt = np.array(env.goals[env.optimal])
            dist = np.abs(env.pos - opt).max(axis=1)
            assert np.array_equal(env.knows, dist <= 2)
            obs = env.observations()
            for i in range(5):
                if env.knows[i]:
                    found_informed = True
                    assert obs[i][14:].sum() == 1.0
                else:
                    found_ignorant = True
                    assert obs[i][14:].sum() == 0.0
        assert found_informed and found_ignorant

    def test_border_moves_masked(self):
        env = self.make()
        env.reset(0)
        self.place(env, [(0, 0), (2, 2), (4, 4)])
        masks = env.avail_actions()
        assert not masks[0][1] and not masks[0][3]  # can't go up or left at (0,0)
        assert masks[1].all()
        with pytest.raises(ContractViolation):
            env.step([1, 0, 0])


def test_unknown_env_name():
    with pytest.raises(ConfigurationError):
        make_env("starcraft")
