import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathlora.alloc import (PruneSchedule, TripletScore, budget_at, dropped_mass, local_selection,
                            prune_rebuild, select_top_b, triplet_scores)
from pathlora.errors import DimensionError
from pathlora.ig import ScoreField
from pathlora.linalg import Prng, SvdView, canonicalize, frobenius_norm, svd_product


def random_view(seed, d1=6, r=4, d2=5):
    g = Prng(seed)
    return canonicalize(svd_product(g.normal(d1 * r).reshape(d1, r), g.normal(r * d2).reshape(r, d2)))


def uniform_field(views, u):
    return ScoreField([np.full(v.p.shape, u) for v in views], [np.full(v.q.shape, u) for v in views])


class TestTripletScores:
    def test_zero_snr(self):
        v = random_view(0)
        s = triplet_scores([v], uniform_field([v], 0.0))
        np.testing.assert_array_equal([t.value for t in s], v.lam)

    def test_zero_lambda_uniform_snr(self):
        v = SvdView(np.eye(3)[:, :2], np.zeros(2), np.eye(2, 4))
        s = triplet_scores([v], uniform_field([v], 0.25))
        assert [t.value for t in s] == [0.5, 0.5]

    def test_hand_built(self):
        v = SvdView(np.eye(2), np.array([3.0, 1.0]), np.eye(2))
        f = ScoreField([np.array([[0.5, 0.2], [0.5, 0.2]])], [np.array([[0.4, 0.4], [0.1, 0.1]])])
        s = triplet_scores([v], f)
        np.testing.assert_allclose([t.value for t in s], [3.9, 1.3], rtol=1e-15)

    def test_shape_mismatch(self):
        v = random_view(1)
        with pytest.raises(DimensionError):
            triplet_scores([v], uniform_field([random_view(1, r=3)], 0.0))


def beats(a, b):
    """Pairwise preference between two triplets, written independently of the sort key."""
    if a.value != b.value:
        return a.value > b.value
    if abs(a.lam) != abs(b.lam):
        return abs(a.lam) > abs(b.lam)
    if a.layer_id != b.layer_id:
        return a.layer_id < b.layer_id
    return a.triplet_index < b.triplet_index


class TestSelect:
    def scores(self):
        vals = [2.0, 1.0, 2.0, 0.5, 1.0, 2.0]
        lams = [0.3, 0.9, 0.7, 0.1, 0.2, 0.5]
        return [TripletScore(i // 3, i % 3, v, l) for i, (v, l) in enumerate(zip(vals, lams))]

    def test_all(self):
        s = self.scores()
        assert select_top_b(s, 6) == {(t.layer_id, t.triplet_index) for t in s}

    def test_distinct_matches_sort(self):
        g = Prng(8)
        s = [TripletScore(i % 2, i, float(v), 1.0) for i, v in enumerate(g.random(10))]
        top = sorted(s, key=lambda t: -t.value)[:4]
        assert select_top_b(s, 4) == {(t.layer_id, t.triplet_index) for t in top}

    def test_ties_exhaustive(self):
        s = self.scores()
        orders = [p for p in itertools.permutations(s)
                  if all(beats(a, b) for a, b in zip(p, p[1:]))]
        assert len(orders) == 1
        for b in range(1, 7):
            assert select_top_b(s, b) == {(t.layer_id, t.triplet_index) for t in orders[0][:b]}

    def test_layer_then_index_tiebreak(self):
        s = [TripletScore(1, 0, 1.0, 1.0), TripletScore(0, 1, 1.0, 1.0), TripletScore(0, 0, 1.0, 1.0)]
        assert select_top_b(s, 1) == {(0, 0)}
        assert select_top_b(s, 2) == {(0, 0), (0, 1)}

    def test_budget_range(self):
        with pytest.raises(ValueError):
            select_top_b(self.scores(), 0)
        with pytest.raises(ValueError):
            select_top_b(self.scores(), 7)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=2, max_size=12), st.floats(0.01, 100))
    def test_scale_invariance(self, values, t):
        s = [TripletScore(i % 3, i, v, 1.0) for i, v in enumerate(values)]
        scaled = [TripletScore(x.layer_id, x.triplet_index, x.value * t, x.lam) for x in s]
        b = max(1, len(s) // 2)
        # scaling preserves strict order; ties stay ties unless rounding breaks them
        order = sorted(set(values))
        if all((bb * t) > (aa * t) for aa, bb in zip(order, order[1:])):
            assert select_top_b(s, b) == select_top_b(scaled, b)

    def test_local_selection(self):
        assert local_selection({(1, 2), (0, 3), (1, 0)}, 3) == [[3], [0, 2], []]


class TestPruneRebuild:
    def test_select_all(self):
        v = random_view(2)
        a, b = prune_rebuild(v, range(v.rank))
        src = v.reconstruct()
        assert frobenius_norm(a @ b - src) / frobenius_norm(src) <= 1e-12

    def test_select_none(self):
        with pytest.raises(ValueError):
            prune_rebuild(random_view(2), [])

    def test_outer_product_oracle(self):
        v = random_view(3, d1=5, r=3, d2=4)
        a, b = prune_rebuild(v, {0, 2})
        assert a.shape == (5, 2) and b.shape == (2, 4)
        expected = sum(v.lam[i] * np.outer(v.p[:, i], v.q[i]) for i in (0, 2))
        np.testing.assert_allclose(a @ b, expected, atol=1e-12)

    def test_drift_bound(self):
        v = random_view(4)
        for keep in ([0], [1, 3], [0, 1, 2]):
            a, b = prune_rebuild(v, keep)
            drift = frobenius_norm(v.reconstruct() - a @ b)
            assert drift <= dropped_mass(v, keep) + 1e-10

    def test_negative_lambda(self):
        v = SvdView(np.eye(2), np.array([1.0, -0.5]), np.eye(2))
        with pytest.raises(ValueError):
            prune_rebuild(v, [0, 1])


class TestSchedule:
    def sched(self, **kw):
        base = dict(r0=8, b_final=8, n_layers=2, start_epoch=2.0, end_epoch=4.0, interval=0.5)
        base.update(kw)
        return PruneSchedule(**base)

    def test_before_and_after(self):
        s = self.sched()
        assert budget_at(s, 0, 10) == 16 and budget_at(s, 19, 10) == 16
        assert budget_at(s, 40, 10) == 8 and budget_at(s, 10_000, 10) == 8

    def test_midpoint(self):
        assert budget_at(self.sched(), 30, 10) == 9

    def test_quantized_between_boundaries(self):
        s = self.sched()
        assert budget_at(s, 31, 10) == budget_at(s, 34, 10) == 9

    def test_validation(self):
        with pytest.raises(ValueError):
            self.sched(b_final=17)
        with pytest.raises(ValueError):
            self.sched(start_epoch=5.0)
        with pytest.raises(ValueError):
            self.sched(interval=0.0)

    def test_default_boundaries(self):
        s = PruneSchedule()
        start, end, every = s.steps(16)
        assert (start, end, every) == (32, 80, 4)
        assert s.boundaries(16)[-1] == 80

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 16), st.integers(1, 4), st.integers(1, 64), st.floats(0.05, 1.0))
    def test_monotone(self, r0, layers, spe, interval):
        s = PruneSchedule(r0=r0, b_final=max(1, r0 * layers // 2), n_layers=layers,
                          start_epoch=1.0, end_epoch=3.0, interval=interval)
        budgets = [budget_at(s, t, spe) for t in range(0, 4 * spe + 2)]
        assert all(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:]))
        assert budgets[0] == s.b_init and budgets[-1] == s.b_final
