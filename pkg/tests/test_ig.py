import math

import numpy as np
import pytest

from pathlora.errors import ShapeDriftError
from pathlora.ig import (BoundInputs, NetworkPath, QuadratureSpec, ScalarPath, ScoreField,
                         aggregate_epoch, completeness, completeness_gap, estimate_b, estimate_c2,
                         ig_full, ig_full_path, ig_stochastic, ig_stochastic_path, simpson,
                         stochastic_from_values, theorem1_bound, trapezoid)
from pathlora.linalg import Prng, canonicalize, svd_product
from pathlora.model import AdapterLayer, Batch, Network
from pathlora.tasks import probe_problem


def one_entry(v):
    return ScoreField([np.array([[v]])], [np.zeros((1, 0))])


@pytest.fixture(scope="module")
def probe():
    net, batch = probe_problem(seed=3)
    views = [canonicalize(svd_product(l.a, l.b)) for l in net.layers]
    return net, views, batch


class TestQuadratureSpec:
    def test_validation(self):
        QuadratureSpec(n=1, mode="full")
        with pytest.raises(ValueError):
            QuadratureSpec(n=1, mode="stochastic")
        with pytest.raises(ValueError):
            QuadratureSpec(n=0, mode="full")
        with pytest.raises(ValueError):
            QuadratureSpec(mode="adaptive")


class TestFullTrapezoid:
    def test_zero_weight_scores_zero(self):
        path = ScalarPath([0.0, 2.0], lambda a: 5.0 + a)
        assert ig_full_path(path, 8)[0] == 0.0

    def test_constant_gradient_exact(self):
        path = ScalarPath([1.5, -2.0], lambda a: -0.4)
        for n in (1, 2, 7, 20):
            np.testing.assert_allclose(ig_full_path(path, n), [0.6, 0.8], rtol=1e-15)

    def test_alpha_squared_probe(self):
        path = ScalarPath([1.0], lambda a: a * a)
        score = ig_full_path(path, 2)[0]
        assert score == 0.375
        err = score - 1.0 / 3.0
        assert err == pytest.approx(0.041666666666666664, abs=1e-15)
        # the discretization term is attained with equality at C2 = 2
        assert err <= theorem1_bound(1.0, BoundInputs(2.0, 0.0), 2, 1) + 1e-15

    def test_homogeneity(self):
        g = lambda a: math.sin(3 * a) - 0.2
        base = ig_full_path(ScalarPath([0.7], g), 16)[0]
        assert ig_full_path(ScalarPath([1.4], g), 16)[0] == 2.0 * base
        assert ig_full_path(ScalarPath([0.7 * 3.3], g), 16)[0] == pytest.approx(3.3 * base,
                                                                                rel=1e-15)

    def test_network_evaluation_count(self, probe):
        path = NetworkPath(*probe)
        ig_full_path(path, 20)
        assert path.evaluations == 21

    def test_field_shapes(self, probe):
        net, views, batch = probe
        f = ig_full(net, views, batch, QuadratureSpec(n=4, mode="full"))
        assert f.shapes == [(v.p.shape, v.q.shape) for v in views]
        assert all((x >= 0).all() for x in f.p + f.q)

    def test_simpson_exact_on_cubics(self):
        x = np.linspace(0, 1, 9)
        assert simpson(x ** 3) == pytest.approx(0.25, abs=1e-15)
        with pytest.raises(ValueError):
            simpson(np.ones(4))


class TestStochastic:
    def test_singleton_interior_matches_full(self, probe):
        path = NetworkPath(*probe)
        s = ig_stochastic_path(path, 2, Prng(0))
        np.testing.assert_array_equal(s, ig_full_path(path, 2))

    def test_constant_gradient(self):
        path = ScalarPath([2.0], lambda a: 0.5)
        for n in (2, 5, 20):
            assert ig_stochastic_path(path, n, Prng(1))[0] == pytest.approx(2.0 / n, rel=1e-15)

    def test_three_evaluations(self, probe):
        path = NetworkPath(*probe)
        ig_stochastic_path(path, 20, Prng(2))
        assert path.evaluations == 3

    def test_enumeration_n5(self):
        # g = 1 + a on [0, 1]: full trapezoid is exact (1.5); verbatim weighting keeps
        # only |w|/10 * (1 + 2*mean(g_k) + 2) = 0.6 * |w| on average
        w = 2.0
        path = ScalarPath([w], lambda a: 1.0 + a)
        full = ig_full_path(path, 5)[0]
        assert full == pytest.approx(1.5 * w, rel=1e-15)
        verbatim = np.mean([ig_stochastic_path(path, 5, node=k)[0] for k in range(1, 5)])
        unbiased = np.mean([ig_stochastic_path(path, 5, weighting="unbiased", node=k)[0]
                            for k in range(1, 5)])
        assert verbatim == pytest.approx(0.6 * w, rel=1e-14)
        assert unbiased == pytest.approx(full, rel=1e-14)

    def test_labeled_stream_reproducible(self, probe):
        net, views, batch = probe
        spec = QuadratureSpec(n=20)
        a = ig_stochastic(net, views, batch, spec, Prng(9, "ig"))
        b = ig_stochastic(net, views, batch, spec, Prng(9, "ig"))
        np.testing.assert_array_equal(a.flat(), b.flat())

    def test_node_at_one(self):
        w, g0, g1 = np.array([1.0]), np.array([1.0]), np.array([3.0])
        s = stochastic_from_values(w, g0, g1, g1, 4)
        assert s[0] == pytest.approx((1 + 6 + 3) / 8)


class TestAggregate:
    def test_identity(self):
        f = one_entry(0.3)
        np.testing.assert_array_equal(aggregate_epoch([f], 1).flat(), f.flat())

    def test_equal_fields(self):
        f = one_entry(0.3)
        np.testing.assert_allclose(aggregate_epoch([f, f, f], 3).flat(), [0.3], rtol=1e-15)

    def test_mean(self):
        out = aggregate_epoch([one_entry(0.2), one_entry(0.4), one_entry(0.6)], 3)
        assert out.flat()[0] == pytest.approx(0.4, abs=1e-15)

    def test_shape_drift(self):
        other = ScoreField([np.zeros((1, 2))], [np.zeros((2, 0))])
        with pytest.raises(ShapeDriftError):
            aggregate_epoch([one_entry(0.1), other])

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            aggregate_epoch([one_entry(0.1)], 2)


class TestBound:
    def test_zero(self):
        assert theorem1_bound(1.0, BoundInputs(0.0, 0.0), 10, 4) == 0.0

    def test_discretization_term(self):
        assert theorem1_bound(1.0, BoundInputs(12.0, 0.0), 10, 4) == pytest.approx(0.01, abs=1e-16)

    def test_sampling_term(self):
        value = theorem1_bound(1.0, BoundInputs(0.0, 2.0, delta=math.exp(-1)), 10, 4)
        assert value == pytest.approx(1.0, abs=1e-15)

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            theorem1_bound(1.0, BoundInputs(1.0, 1.0, delta=1.0), 10, 4)

    def test_broadcast(self):
        out = theorem1_bound(np.array([1.0, -2.0]), BoundInputs(np.array([12.0, 12.0]), 0.0), 10, 1)
        np.testing.assert_allclose(out, [0.01, 0.02])


class TestEstimates:
    def test_c2_constant(self):
        assert estimate_c2(ScalarPath([1.0], lambda a: 3.0), entry=0) <= 1e-6

    def test_c2_alpha_squared(self):
        assert estimate_c2(ScalarPath([1.0], lambda a: a * a), entry=0) == pytest.approx(2.0, abs=1e-3)

    def test_c2_stable_on_default_net(self, default_path):
        coarse = estimate_c2(default_path, probes=16).max()
        fine = estimate_c2(default_path, probes=32).max()
        assert math.isfinite(fine) and abs(fine / coarse - 1.0) <= 0.25

    def test_b_zero_and_constant(self):
        assert estimate_b(ScalarPath([1.0, 2.0], lambda a: 0.0), 20) == 0.0
        assert estimate_b(ScalarPath([1.0], lambda a: -0.75), 20) == 0.75

    def test_b_dominates_nodes(self, default_path):
        b = estimate_b(default_path, 20)
        for k in range(1, 20):
            assert np.all(np.abs(default_path(k / 20)) <= b)


class TestCompleteness:
    def test_zero_update(self, probe):
        net, _, batch = probe
        zeroed = net.with_factors([(l.a, np.zeros_like(l.b)) for l in net.layers])
        views = [canonicalize(svd_product(l.a, l.b)) for l in zeroed.layers]
        c = completeness(zeroed, views, batch, 64)
        assert c.delta_loss == 0.0 and c.gap == 0.0

    def test_linear_quadratic_exact(self):
        g = Prng(21)
        w0 = g.normal(20).reshape(5, 4)
        a, b = g.normal(10).reshape(5, 2), g.normal(8).reshape(2, 4)
        net = Network([AdapterLayer(w0, a, b)], loss_kind="mse")
        batch = Batch(g.normal(35).reshape(7, 5), g.normal(28).reshape(7, 4))
        views = [canonicalize(svd_product(a, b))]
        assert completeness_gap(net, views, batch, 1024) <= 1e-10

    def test_default_net(self, probe):
        c = completeness(*probe, n_dense=1024)
        assert c.gap <= 1e-3
        # each group closes on its own; together they count the loss change three times
        assert c.total == pytest.approx(3.0 * c.delta_loss, rel=1e-6)
