import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiveq.errors import ConfigurationError
from hiveq.replay import (
    PrioritizedBuffer,
    SumTree,
    Trajectory,
    compute_priority,
    select_top_fraction,
)

from oracles import weighted_pick_linear_scan


def traj(priority=1.0, ret=0.0, uid=(0, 0, 0)):
    t = 2
    return Trajectory(
        obs=np.zeros((t + 1, 2, 3)),
        state=np.zeros((t + 1, 2)),
        avail=np.ones((t + 1, 2, 2)),
        actions=np.zeros((t, 2), dtype=np.int64),
        rewards=np.array([ret / 2] * 2),
        terminated=np.array([0.0, 1.0]),
        priority=priority,
        uid=uid,
    )


class TestComputePriority:
    def test_upper_endpoint(self):
        assert compute_priority(10.0, 0.0, 10.0, 0.01) == pytest.approx(1.01)

    def test_lower_endpoint_keeps_floor(self):
        assert compute_priority(0.0, 0.0, 10.0, 0.01) == pytest.approx(0.01)

    def test_interior_value(self):
        assert compute_priority(-22.5, -50.0, 5.0, 0.01) == pytest.approx(0.51)

    def test_out_of_range_clamped(self):
        assert compute_priority(99.0, 0.0, 10.0, 0.01) == pytest.approx(1.01)
        assert compute_priority(-99.0, 0.0, 10.0, 0.01) == pytest.approx(0.01)

    def test_accepts_trajectory(self):
        assert compute_priority(traj(ret=5.0), 0.0, 10.0, 0.01) == pytest.approx(0.51)

    def test_invalid_bounds_and_eps(self):
        with pytest.raises(ConfigurationError):
            compute_priority(1.0, 5.0, 5.0)
        with pytest.raises(ConfigurationError):
            compute_priority(1.0, 10.0, 5.0)
        with pytest.raises(ConfigurationError):
            compute_priority(1.0, 0.0, 5.0, eps=0.0)

    @given(st.floats(-100, 100), st.floats(-50, 0), st.floats(1, 50))
    @settings(max_examples=100, deadline=None)
    def test_matches_direct_formula(self, ret, low, high):
        got = compute_priority(ret, low, high, 0.01)
        expect = min(max((ret - low) / (high - low), 0.0), 1.0) + 0.01
        assert got == pytest.approx(expect, abs=1e-12)


class TestBuffer:
    def test_fifo_eviction(self):
        buf = PrioritizedBuffer(capacity=2)
        for i in range(3):
            buf.insert(traj(priority=1.0 + i, uid=(0, 0, i)))
        assert len(buf) == 2
        stored = {t.uid for t in buf.storage if t is not None}
        assert stored == {(0, 0, 1), (0, 0, 2)}
        assert buf.stats.evicted == 1

    def test_zero_capacity_rejected(self):
        with pytest.raises(ConfigurationError):
            PrioritizedBuffer(capacity=0)
        with pytest.raises(ConfigurationError):
            SumTree(0)

    def test_empty_sample_returns_not_ready(self):
        buf = PrioritizedBuffer(capacity=4)
        assert buf.sample(3, np.random.default_rng(0)) is None

    def test_single_item_always_returned(self):
        buf = PrioritizedBuffer(capacity=4)
        buf.insert(traj(uid=(1, 2, 3)))
        out = buf.sample(5, np.random.default_rng(0))
        assert len(out) == 5 and all(t.uid == (1, 2, 3) for t in out)

    def test_nonpositive_priority_rejected(self):
        buf = PrioritizedBuffer(capacity=4)
        with pytest.raises(ConfigurationError):
            buf.insert(traj(priority=0.0))

    def test_sampling_proportional_to_priority(self):
        buf = PrioritizedBuffer(capacity=8)
        buf.insert(traj(priority=1.0, uid=(0, 0, 0)))
        buf.insert(traj(priority=3.0, uid=(0, 0, 1)))
        rng = np.random.default_rng(1)
        n = 100_000
        hits = sum(t.uid[2] for t in buf.sample(n, rng))
        assert abs(hits / n - 0.75) < 0.01

    def test_uniform_priorities_sample_uniformly(self):
        buf = PrioritizedBuffer(capacity=16)
        k = 8
        for i in range(k):
            buf.insert(traj(priority=0.5, uid=(0, 0, i)))
        rng = np.random.default_rng(2)
        n = 100_000
        counts = np.zeros(k)
        for t in buf.sample(n, rng):
            counts[t.uid[2]] += 1
        # chi-square against uniform: stat should be under the p=0.01 cutoff
        expected = n / k
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 18.48  # chi2(df=7) at p=0.01

    def test_insert_batch_and_empty_batch(self):
        buf = PrioritizedBuffer(capacity=4)
        buf.insert_batch([])
        assert len(buf) == 0
        buf.insert_batch([traj(), traj()])
        assert len(buf) == 2


class TestSumTreeConsistency:
    @given(st.lists(st.tuples(st.integers(0, 2), st.floats(0.01, 10.0)), min_size=1, max_size=200))
    @settings(max_examples=50, deadline=None)
    def test_random_op_sequences_match_linear_scan(self, ops):
        """Insert/evict/sample interleavings keep the cumulative structure
        consistent with a naive list implementation."""
        capacity = 8
        buf = PrioritizedBuffer(capacity=capacity)
        naive: list[float] = []  # priorities in insertion order, capped FIFO
        rng = np.random.default_rng(0)
        counter = 0
        for op, prio in ops:
            if op in (0, 1) or len(buf) == 0:
                buf.insert(traj(priority=prio, uid=(0, 0, counter)))
                counter += 1
                naive.append(prio)
                if len(naive) > capacity:
                    naive.pop(0)
            else:
                total = buf.tree.total
                u = rng.random() * total
                idx = buf.tree.find_prefix(u)
                got = buf.storage[idx]
                # the tree's leaves are the slots in index order, so the same
                # draw against a naive cumulative scan must pick the same slot
                slot_prios = [
                    buf.storage[s].priority if buf.storage[s] is not None else 0.0
                    for s in range(capacity)
                ]
                pick = weighted_pick_linear_scan(slot_prios, u)
                assert got is buf.storage[pick]
            assert buf.tree.total == pytest.approx(sum(naive), rel=1e-12)
            assert sorted(
                t.priority for t in buf.storage if t is not None
            ) == sorted(naive)


class TestTopFraction:
    def test_eta_100_returns_whole_batch(self):
        batch = [traj(priority=p) for p in (0.2, 0.5, 0.9)]
        out = select_top_fraction(batch, 100.0, np.random.default_rng(0))
        assert out == batch

    def test_single_item_ceiling(self):
        batch = [traj(priority=0.4)]
        out = select_top_fraction(batch, 1.0, np.random.default_rng(0))
        assert out == batch

    def test_without_replacement_and_size(self):
        batch = [traj(priority=p, uid=(0, 0, i)) for i, p in enumerate([0.5] * 10)]
        out = select_top_fraction(batch, 50.0, np.random.default_rng(1))
        assert len(out) == 5
        assert len({t.uid for t in out}) == 5

    def test_high_priority_pair_preferred(self):
        rng = np.random.default_rng(2)
        hits = 0
        trials = 10_000
        for _ in range(trials):
            batch = [
                traj(priority=p, uid=(0, 0, i))
                for i, p in enumerate([0.9, 0.1, 0.9, 0.1])
            ]
            out = select_top_fraction(batch, 50.0, rng)
            chosen = {t.uid[2] for t in out}
            if chosen == {0, 2}:
                hits += 1
        assert hits / trials >= 0.70

    def test_eta_bounds(self):
        with pytest.raises(ConfigurationError):
            select_top_fraction([traj()], 0.0, np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            select_top_fraction([traj()], 101.0, np.random.default_rng(0))

    def test_empty_batch(self):
        assert select_top_fraction([], 50.0, np.random.default_rng(0)) == []
