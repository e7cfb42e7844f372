"""Partition peeling, action randomization, statistics, and edge admission."""

import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toprank_lab.env import Action, document_model, sample_clicks
from toprank_lab.toprank import (
    CONFIDENCE_C,
    PairStats,
    Partition,
    RelationGraph,
    TopRankState,
    choose_action,
    compute_partition,
    edge_threshold,
    sample_action,
    snapshot,
    state_from_snapshot,
    step,
    update,
)


def clicks_vec(L, *on):
    c = np.zeros(L, dtype=np.int8)
    for i in on:
        c[i - 1] = 1
    return c


class TestComputePartition:
    def test_three_edge_example(self):
        p = compute_partition(RelationGraph.from_pairs([(3, 1), (5, 2), (5, 3)]), 5)
        assert p.blocks == ((1, 2, 4), (3,), (5,))
        assert p.slots == ((1, 2, 3), (4,), (5,))
        assert not p.cycle_fallback

    def test_empty_relation_single_block(self):
        p = compute_partition(RelationGraph(frozenset()), 4)
        assert p.blocks == ((1, 2, 3, 4),)
        assert p.slots == ((1, 2, 3, 4),)

    def test_two_cycle_falls_back_to_one_block(self):
        p = compute_partition([(1, 2), (2, 1)], 2)
        assert p.blocks == ((1, 2),)
        assert p.cycle_fallback

    def test_cycle_after_one_peel(self):
        p = compute_partition([(1, 2), (2, 1)], 3)
        assert p.blocks == ((3,), (1, 2))
        assert p.slots == ((1,), (2, 3))
        assert p.cycle_fallback

    def test_rejects_items_beyond_L(self):
        with pytest.raises(ValueError):
            compute_partition([(9, 1)], 5)

    def test_rejects_self_loops(self):
        with pytest.raises(ValueError):
            compute_partition([(2, 2)], 3)

    @settings(max_examples=100, deadline=None)
    @given(data=st.data())
    def test_partition_properties(self, data):
        L = data.draw(st.integers(min_value=1, max_value=6))
        all_pairs = [(j, i) for j in range(1, L + 1) for i in range(1, L + 1) if i != j]
        edges = data.draw(st.sets(st.sampled_from(all_pairs)) if all_pairs else st.just(set()))
        p = compute_partition(RelationGraph.from_pairs(edges), L)
        items = [i for b in p.blocks for i in b]
        assert sorted(items) == list(range(1, L + 1))  # disjoint and exhaustive
        flat_slots = [s for ss in p.slots for s in ss]
        assert flat_slots == list(range(1, L + 1))  # consecutive ranges
        for block, slots in zip(p.blocks, p.slots):
            assert len(block) == len(slots)
        if not p.cycle_fallback:
            # Each block is exactly the minimum of what remained.
            remaining = set(range(1, L + 1))
            for block in p.blocks:
                minimal = {
                    i
                    for i in remaining
                    if not any((i, j) in edges for j in remaining)
                }
                assert set(block) == minimal
                remaining -= minimal


class TestEdgeThreshold:
    def test_single_observation_value(self):
        # sqrt(2 ln(c / 0.05)) with the exact constant
        assert edge_threshold(1, 0.05) == pytest.approx(2.8992423818375532, abs=1e-12)

    def test_requires_positive_count(self):
        with pytest.raises(ValueError):
            edge_threshold(0, 0.05)

    def test_delta_range(self):
        with pytest.raises(ValueError):
            edge_threshold(1, 0.0)
        with pytest.raises(ValueError):
            edge_threshold(1, 1.0)

    def test_matches_high_precision_oracle(self):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 40
        c = 4 * mp.sqrt(2 / mp.pi) / mp.erf(mp.sqrt(2))
        for n, delta in [(1, 0.05), (100, 0.01), (7, 0.5), (10_000, 1e-6)]:
            want = mp.sqrt(2 * n * mp.log(c / mp.mpf(str(delta)) * mp.sqrt(n)))
            assert edge_threshold(n, delta) == pytest.approx(float(want), rel=1e-13)

    def test_constant_from_closed_form(self):
        assert CONFIDENCE_C == 4.0 * math.sqrt(2.0 / math.pi) / math.erf(math.sqrt(2.0))
        assert CONFIDENCE_C == pytest.approx(3.3437, abs=5e-5)
        state = TopRankState(3, 2, 0.1)
        assert state.c == CONFIDENCE_C


class TestPairStats:
    def test_index_layout(self):
        ps = PairStats(5)
        seen = set()
        for i in range(1, 6):
            for j in range(i + 1, 6):
                seen.add(ps.index(i, j))
        assert seen == set(range(10))

    def test_antisymmetry_views(self):
        ps = PairStats(3)
        ps.s[ps.index(1, 3)] = 4
        ps.n[ps.index(1, 3)] = 6
        assert ps.s_of(1, 3) == 4 and ps.s_of(3, 1) == -4
        assert ps.n_of(1, 3) == 6 and ps.n_of(3, 1) == 6
        S, N = ps.matrices()
        assert (S == -S.T).all()
        assert (N == N.T).all()


class TestUpdate:
    def test_equal_clicks_leave_stats_unchanged(self):
        st_ = TopRankState(3, 3, 0.05)
        part = st_.partition
        update(st_, part, Action((1, 2, 3)), clicks_vec(3, 1, 2, 3))
        assert st_.stats.s.sum() == 0 and st_.stats.n.sum() == 0
        assert st_.t == 1

    def test_cross_block_pairs_untouched(self):
        st_ = state_from_snapshot(
            {
                "L": 3,
                "K": 3,
                "delta": 0.05,
                "round": 0,
                "cycle_events": 0,
                "edges": [[3, 1], [3, 2]],  # 3 worse than both others
                "S_upper": [0, 0, 0],
                "N_upper": [0, 0, 0],
            }
        )
        part = st_.partition
        assert part.blocks == ((1, 2), (3,))
        update(st_, part, Action((1, 2, 3)), clicks_vec(3, 1))
        assert st_.stats.s_of(1, 2) == 1 and st_.stats.n_of(1, 2) == 1
        assert st_.stats.n_of(1, 3) == 0 and st_.stats.n_of(2, 3) == 0

    def test_single_difference_admits_no_edge(self):
        # S = N = 1 stays below the N = 1 boundary of about 2.9.
        st_ = TopRankState(2, 2, 0.05)
        new = update(st_, st_.partition, Action((1, 2)), clicks_vec(2, 1))
        assert new == []
        assert len(st_.relation) == 0

    def test_repeated_wins_admit_edge(self):
        # With delta = 0.9 the boundary at N = 5 is about 4.6 < 5.
        st_ = TopRankState(2, 2, 0.9)
        admitted = []
        for _ in range(5):
            admitted += update(st_, st_.partition, Action((1, 2)), clicks_vec(2, 1))
        assert admitted == [(2, 1)]
        assert (2, 1) in st_.relation
        assert st_.partition.blocks == ((1,), (2,))

    def test_round_counter_always_advances(self):
        st_ = TopRankState(2, 2, 0.5)
        update(st_, st_.partition, Action((1, 2)), clicks_vec(2))
        assert st_.t == 1

    def test_monotone_relation_growth(self):
        rng = np.random.default_rng(5)
        model = document_model((0.9, 0.6, 0.2), 3)
        st_ = TopRankState(3, 3, 0.3)
        previous = set()
        for _ in range(400):
            step(st_, model, rng)
            current = set(st_.relation.edges)
            assert previous <= current
            previous = current
        S, N = st_.stats.matrices()
        assert (np.abs(S) <= N).all()
        assert (N <= st_.t).all()

    def test_replay_reproduces_relation_trajectory(self):
        rng = np.random.default_rng(17)
        model = document_model((0.9, 0.5, 0.1), 2)
        st_ = TopRankState(3, 2, 0.2)
        history = []
        for _ in range(300):
            part = st_.partition
            a = choose_action(st_, part, rng)
            c = sample_clicks(model, a, rng)
            update(st_, part, a, c)
            history.append((a, c, json.dumps(snapshot(st_), sort_keys=True)))
        replay = TopRankState(3, 2, 0.2)
        for a, c, snap in history:
            update(replay, replay.partition, a, c)
            assert json.dumps(snapshot(replay), sort_keys=True) == snap


class TestChooseAction:
    def test_singleton_blocks_unique_action(self):
        st_ = state_from_snapshot(
            {
                "L": 3,
                "K": 2,
                "delta": 0.05,
                "round": 0,
                "cycle_events": 0,
                "edges": [[2, 1], [3, 1], [3, 2]],
                "S_upper": [0, 0, 0],
                "N_upper": [0, 0, 0],
            }
        )
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert choose_action(st_, st_.partition, rng).slots == (1, 2, 3)

    def test_three_edge_example_fixed_positions(self):
        part = compute_partition([(3, 1), (5, 2), (5, 3)], 5)
        rng = np.random.default_rng(2)
        st_ = TopRankState(5, 4, 0.05)
        for _ in range(200):
            a = choose_action(st_, part, rng)
            assert a.position_of(3) == 4
            assert a.position_of(5) == 5
            assert set(a.slots[:3]) == {1, 2, 4}

    def test_blocks_fill_their_slot_ranges(self):
        part = compute_partition([(4, 1), (4, 2), (5, 1), (5, 2)], 5)
        assert part.blocks == ((1, 2, 3), (4, 5))
        rng = np.random.default_rng(9)
        for _ in range(100):
            a = sample_action(part, 5, rng)
            assert set(a.slots[:3]) == {1, 2, 3}
            assert set(a.slots[3:]) == {4, 5}

    def test_blocks_beyond_cutoff_deterministic_ascending(self):
        part = compute_partition([(4, 1), (4, 2), (4, 3), (5, 1), (5, 2), (5, 3)], 5)
        assert part.blocks == ((1, 2, 3), (4, 5))
        rng = np.random.default_rng(4)
        for _ in range(50):
            a = sample_action(part, 2, rng)  # tail block sits entirely beyond K=2
            assert a.slots[3:] == (4, 5)

    def test_uniform_over_block_orderings(self):
        part = compute_partition(RelationGraph(frozenset()), 3)
        rng = np.random.default_rng(123)
        counts = {perm: 0 for perm in itertools.permutations((1, 2, 3))}
        draws = 6000
        for _ in range(draws):
            counts[sample_action(part, 3, rng).slots] += 1
        expected = draws / 6
        chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
        assert chi2 < 20.5  # 99.9% critical value at 5 degrees of freedom

    def test_within_block_exchangeability(self):
        # Same-block items must share a position distribution this round.
        part = compute_partition([(3, 1), (3, 2)], 3)
        rng = np.random.default_rng(77)
        draws = 20_000
        pos_counts = {1: np.zeros(3), 2: np.zeros(3)}
        for _ in range(draws):
            a = sample_action(part, 3, rng)
            for item in (1, 2):
                pos_counts[item][a.position_of(item) - 1] += 1
        for k in range(2):  # block occupies slots 1 and 2
            f1 = pos_counts[1][k] / draws
            f2 = pos_counts[2][k] / draws
            se = math.sqrt(2 * 0.5 * 0.5 / draws)
            assert abs(f1 - f2) <= 4 * se


class TestStep:
    def test_first_round_uniform_over_all_permutations(self):
        model = document_model((0.9, 0.5, 0.1), 2)
        counts = {perm: 0 for perm in itertools.permutations((1, 2, 3))}
        for seed in range(600):
            st_ = TopRankState(3, 2, 0.05)
            a, _, _ = step(st_, model, np.random.default_rng(seed))
            counts[a.slots] += 1
        assert all(c > 0 for c in counts.values())

    def test_totally_ordered_relation_plays_optimally(self):
        st_ = state_from_snapshot(
            {
                "L": 3,
                "K": 2,
                "delta": 0.05,
                "round": 10,
                "cycle_events": 0,
                "edges": [[2, 1], [3, 1], [3, 2]],
                "S_upper": [5, 5, 5],
                "N_upper": [5, 5, 5],
            }
        )
        model = document_model((0.9, 0.5, 0.1), 2)
        rng = np.random.default_rng(0)
        for _ in range(20):
            _, _, regret = step(st_, model, rng)
            assert regret == pytest.approx(0.0, abs=1e-12)

    def test_dimension_mismatch(self):
        st_ = TopRankState(3, 2, 0.05)
        with pytest.raises(ValueError):
            step(st_, document_model((0.9, 0.5), 1), np.random.default_rng(0))


class TestSnapshot:
    def test_roundtrip_preserves_everything(self):
        rng = np.random.default_rng(21)
        model = document_model((0.9, 0.4, 0.1), 2)
        st_ = TopRankState(3, 2, 0.3)
        for _ in range(200):
            step(st_, model, rng)
        snap = snapshot(st_)
        json.dumps(snap)  # must be serializable as-is
        restored = state_from_snapshot(snap)
        assert snapshot(restored) == snap
        assert restored.partition == st_.partition

    def test_rejects_inconsistent_stats(self):
        with pytest.raises(ValueError):
            state_from_snapshot(
                {
                    "L": 2,
                    "K": 1,
                    "delta": 0.1,
                    "round": 1,
                    "cycle_events": 0,
                    "edges": [],
                    "S_upper": [5],
                    "N_upper": [1],
                }
            )

    def test_cycle_fallback_counted_once_per_recompute(self):
        st_ = state_from_snapshot(
            {
                "L": 2,
                "K": 2,
                "delta": 0.5,
                "round": 12,
                "cycle_events": 0,
                "edges": [[1, 2], [2, 1]],
                "S_upper": [0],
                "N_upper": [12],
            }
        )
        part = st_.partition
        assert part.cycle_fallback
        assert st_.cycle_events == 1
        assert st_.partition is part  # cached, not recounted
        assert st_.cycle_events == 1
