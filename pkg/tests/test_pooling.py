import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpdropout import pooling as P
from mpdropout.errors import GeometryError, ParameterError, PreconditionError
from mpdropout.tensor import RngStream
from oracles import (
    empirical_distribution,
    enumerate_masks,
    linf,
    mask_expectation,
    numerical_grad,
    rel_error,
    stochastic_expectation,
)

FIG1 = [1.0, 6.0, 5.0, 3.0]
POOL22 = P.PoolSpec.square(2)
P_GRID = [round(0.1 * k, 1) for k in range(1, 10)]


def as_region_tensor(values, copies=1):
    """Tile a 4-value region as (copies, 1, 2, 2) so each sample is one 2x2 window."""
    return np.tile(np.asarray(values, float).reshape(1, 1, 2, 2), (copies, 1, 1, 1))


region_values = st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=10)
probs = st.sampled_from(P_GRID)


# ---------------------------------------------------------------- geometry

class TestExtractRegion:
    def test_single_region(self):
        x = np.array([[1.0, 6.0], [5.0, 3.0]]).reshape(1, 1, 2, 2)
        values, coords = P.extract_region(x, POOL22, 0, 0, 0, 0)
        assert values == FIG1
        assert coords == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_tiling_covers_all_cells_once(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        cells = []
        for i in range(2):
            for j in range(2):
                cells += P.extract_region(x, POOL22, 0, 0, i, j)[1]
        assert sorted(cells) == [(h, w) for h in range(4) for w in range(4)]

    def test_overlapping_3p2(self):
        spec = P.PoolSpec.square(3, 2)
        assert spec.output_hw(5, 5) == (2, 2)
        x = np.arange(25.0).reshape(1, 1, 5, 5)
        left = set(P.extract_region(x, spec, 0, 0, 0, 0)[1])
        right = set(P.extract_region(x, spec, 0, 0, 0, 1)[1])
        assert left & right == {(0, 2), (1, 2), (2, 2)}

    def test_out_of_bounds(self):
        with pytest.raises(GeometryError):
            P.extract_region(np.zeros((1, 1, 4, 4)), POOL22, 0, 0, 2, 0)
        with pytest.raises(GeometryError):
            P.max_pool_forward(np.zeros((1, 1, 1, 1)), POOL22)


# ---------------------------------------------------------------- max pooling

class TestMaxPool:
    def test_fig1_selects_strongest(self):
        trace = P.max_pool_forward(as_region_tensor(FIG1), POOL22)
        assert trace.pooled.item() == 6.0
        assert trace.chosen_index.item() == 1

    def test_tie_breaks_to_lowest_raster_index(self):
        trace = P.max_pool_forward(as_region_tensor([2, 2, 2, 2]), POOL22)
        assert trace.pooled.item() == 2.0
        assert trace.chosen_index.item() == 0

    def test_zero_region(self):
        assert P.max_pool_forward(as_region_tensor([0, 0, 0, 0]), POOL22).pooled.item() == 0.0

    def test_chosen_index_addresses_input(self):
        x = np.random.default_rng(0).random((2, 3, 7, 7))
        spec = P.PoolSpec.square(3, 2)
        trace = P.max_pool_forward(x, spec)
        assert np.array_equal(x.ravel()[trace.chosen_index], trace.pooled)


class TestMaxPoolDropout:
    def test_fig1_mask(self):
        mask = as_region_tensor([1, 0, 0, 1])
        trace = P.max_pool_dropout_forward(as_region_tensor(FIG1), POOL22, 0.5, mask=mask)
        assert trace.pooled.item() == 3.0
        assert trace.chosen_index.item() == 3

    def test_all_dropped_gives_zero_and_sentinel(self):
        trace = P.max_pool_dropout_forward(as_region_tensor(FIG1), POOL22, 0.5,
                                           mask=np.zeros((1, 1, 2, 2)))
        assert trace.pooled.item() == 0.0
        assert trace.chosen_index.item() == P.DROPPED

    def test_p1_equals_max_pool(self):
        x = np.random.default_rng(1).random((3, 2, 6, 6))
        for spec in (POOL22, P.PoolSpec.square(3, 2)):
            a = P.max_pool_forward(x, spec)
            b = P.max_pool_dropout_forward(x, spec, 1.0, RngStream(5))
            assert np.array_equal(a.pooled, b.pooled)
            assert np.array_equal(a.chosen_index, b.chosen_index)

    def test_rejects_negative_input(self):
        with pytest.raises(PreconditionError):
            P.max_pool_dropout_forward(as_region_tensor([1, -1, 0, 0]), POOL22, 0.5, RngStream(0))

    def test_rejects_bad_p(self):
        for p in (0.0, -0.1, 1.5):
            with pytest.raises(ParameterError):
                P.max_pool_dropout_forward(as_region_tensor(FIG1), POOL22, p, RngStream(0))

    def test_fig1_frequencies(self):
        x = as_region_tensor(FIG1, 10**6)
        pooled = P.max_pool_dropout_forward(x, POOL22, 0.5, RngStream(11)).pooled.ravel()
        expected = {0.0: 0.0625, 1.0: 0.0625, 3.0: 0.125, 5.0: 0.25, 6.0: 0.5}
        assert enumerate_masks(FIG1, 0.5) == pytest.approx(expected, abs=1e-15)
        assert linf(empirical_distribution(pooled), expected) < 0.005

    def test_chosen_unit_was_retained(self):
        rng = np.random.default_rng(3)
        x = rng.random((4, 3, 9, 9))
        trace = P.max_pool_dropout_forward(x, P.PoolSpec.square(3, 2), 0.4, RngStream(3))
        kept = trace.chosen_index != P.DROPPED
        assert np.all(trace.mask.ravel()[trace.chosen_index[kept]] == 1.0)
        assert np.array_equal(x.ravel()[trace.chosen_index[kept]], trace.pooled[kept])


# ---------------------------------------------------------------- index probabilities

class TestIndexProbs:
    def test_n4_half(self):
        got = P.dropout_index_probs(4, 0.5)
        np.testing.assert_array_equal(got, [0.0625, 0.0625, 0.125, 0.25, 0.5])
        # oracle: enumerate masks over distinct values 1..4
        dist = enumerate_masks([1.0, 2.0, 3.0, 4.0], 0.5)
        np.testing.assert_allclose(got, [dist[v] for v in (0.0, 1.0, 2.0, 3.0, 4.0)], atol=1e-15)

    def test_single_unit(self):
        np.testing.assert_allclose(P.dropout_index_probs(1, 0.3), [0.7, 0.3])

    @pytest.mark.parametrize("n", [1, 2, 4, 9])
    def test_p1(self, n):
        expected = np.zeros(n + 1)
        expected[-1] = 1.0
        np.testing.assert_array_equal(P.dropout_index_probs(n, 1.0), expected)

    def test_n0(self):
        with pytest.raises(ParameterError):
            P.dropout_index_probs(0, 0.5)

    @given(st.integers(1, 64), st.floats(1e-6, 1.0))
    def test_sums_to_one(self, n, p):
        probs = P.dropout_index_probs(n, p)
        assert abs(probs.sum() - 1.0) < 1e-12
        assert np.all((probs >= 0) & (probs <= 1))


# ---------------------------------------------------------------- multinomial sampler

class TestMultinomialSample:
    def test_p1_returns_max(self):
        values, _ = P.multinomial_pool_sample(FIG1, 1.0, RngStream(0), size=1000)
        assert np.all(values == 6.0)
        assert P.multinomial_pool_sample([4.0, 2.0], 1.0, RngStream(1)) == (4.0, 2)

    def test_single_unit(self):
        values, _ = P.multinomial_pool_sample([7.0], 0.4, RngStream(2), size=10**6)
        assert set(np.unique(values)) <= {0.0, 7.0}
        assert abs(np.mean(values == 7.0) - 0.4) < 0.005

    def test_matches_mask_sampler(self):
        n = 10**6
        multi, idx = P.multinomial_pool_sample(FIG1, 0.5, RngStream(21), size=n)
        masked = P.max_pool_dropout_forward(
            as_region_tensor(FIG1, n), POOL22, 0.5, RngStream(22)).pooled.ravel()
        d_multi, d_mask = empirical_distribution(multi), empirical_distribution(masked)
        assert linf(d_multi, d_mask) < 0.005
        assert linf(d_multi, enumerate_masks(FIG1, 0.5)) < 0.005
        assert np.all(np.concatenate(([0.0], sorted(FIG1)))[idx] == multi)

    def test_rejects_negative(self):
        with pytest.raises(PreconditionError):
            P.multinomial_pool_sample([1.0, -2.0], 0.5, RngStream(0))


# ---------------------------------------------------------------- test-time pooling

class TestScaledMax:
    def test_fig1(self):
        assert P.scaled_max_pool(as_region_tensor(FIG1), POOL22, 0.5).item() == 3.0

    def test_p1_equals_max(self):
        x = np.random.default_rng(4).random((2, 3, 8, 8))
        assert np.array_equal(P.scaled_max_pool(x, POOL22, 1.0),
                              P.max_pool_forward(x, POOL22).pooled)

    def test_zero_region(self):
        assert P.scaled_max_pool(as_region_tensor([0, 0, 0, 0]), POOL22, 0.3).item() == 0.0


class TestProbWeighted:
    @pytest.mark.parametrize("p, expected", [(0.5, 4.6875), (0.3, 3.3939)])
    def test_fig1(self, p, expected):
        got = P.prob_weighted_pool(as_region_tensor(FIG1), POOL22, p).item()
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(mask_expectation(FIG1, p), abs=1e-12)

    def test_p1_equals_max_exactly(self):
        x = np.random.default_rng(5).random((2, 3, 9, 9))
        for spec in (POOL22, P.PoolSpec.square(3, 2)):
            assert np.array_equal(P.prob_weighted_pool(x, spec, 1.0),
                                  P.max_pool_forward(x, spec).pooled)

    def test_rejects_negative(self):
        with pytest.raises(PreconditionError):
            P.prob_weighted_pool(as_region_tensor([1, -1, 0, 0]), POOL22, 0.5)

    @settings(max_examples=150, deadline=None)
    @given(region_values, probs)
    def test_equals_mask_expectation(self, region, p):
        spec = P.PoolSpec(1, len(region), 1)
        x = np.asarray(region).reshape(1, 1, 1, -1)
        assert P.prob_weighted_pool(x, spec, p).item() == pytest.approx(
            mask_expectation(region, p), abs=1e-10 * max(1.0, max(region)))

    @given(region_values, probs)
    def test_bounded(self, region, p):
        x = np.asarray(region).reshape(1, 1, 1, -1)
        out = P.prob_weighted_pool(x, P.PoolSpec(1, len(region), 1), p).item()
        assert 0.0 <= out <= max(region) * (1 + 1e-12)

    @given(region_values, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, region, rnd):
        shuffled = list(region)
        rnd.shuffle(shuffled)
        spec = P.PoolSpec(1, len(region), 1)
        a = np.asarray(region).reshape(1, 1, 1, -1)
        b = np.asarray(shuffled).reshape(1, 1, 1, -1)
        for p in (0.3, 0.7):
            assert P.prob_weighted_pool(a, spec, p).item() == pytest.approx(
                P.prob_weighted_pool(b, spec, p).item(), rel=1e-12, abs=1e-300)
        assert P.stochastic_pool_weighted(a, spec).item() == pytest.approx(
            P.stochastic_pool_weighted(b, spec).item(), rel=1e-12, abs=1e-300)
        assert P.max_pool_forward(a, spec).pooled.item() == P.max_pool_forward(b, spec).pooled.item()

    @given(region_values)
    def test_monotone_in_p(self, region):
        x = np.asarray(region).reshape(1, 1, 1, -1)
        spec = P.PoolSpec(1, len(region), 1)
        outs = [P.prob_weighted_pool(x, spec, p).item() for p in P_GRID + [1.0]]
        assert all(b >= a - 1e-12 * max(1.0, max(region)) for a, b in zip(outs, outs[1:]))


# ---------------------------------------------------------------- stochastic pooling

class TestStochasticPooling:
    def test_probs(self):
        np.testing.assert_allclose(P.stochastic_pool_probs(FIG1), np.array(FIG1) / 15)
        np.testing.assert_array_equal(P.stochastic_pool_probs([0, 0, 0, 0]), [0.25] * 4)
        np.testing.assert_array_equal(P.stochastic_pool_probs([5.0]), [1.0])
        with pytest.raises(PreconditionError):
            P.stochastic_pool_probs([1.0, -1.0])

    def test_sample(self):
        assert P.stochastic_pool_sample([0, 0, 0, 0], RngStream(0), size=100)[0].max() == 0.0
        assert P.stochastic_pool_sample([5.0], RngStream(0)) == (5.0, 0)
        values, _ = P.stochastic_pool_sample(FIG1, RngStream(7), size=10**6)
        assert abs(np.mean(values == 6.0) - 0.4) < 0.005

    def test_tensor_sampler_frequencies(self):
        x = as_region_tensor(FIG1, 10**6)
        trace = P.stochastic_pool_forward(x, POOL22, RngStream(8))
        freq = empirical_distribution(trace.pooled.ravel())
        assert linf(freq, {a: a / 15 for a in FIG1}) < 0.005
        assert np.array_equal(x.ravel()[trace.chosen_index], trace.pooled)

    def test_tensor_sampler_skips_zero_cells(self):
        x = as_region_tensor([0, 2, 0, 3], 10**5)
        pooled = P.stochastic_pool_forward(x, POOL22, RngStream(9)).pooled
        assert set(np.unique(pooled)) == {2.0, 3.0}
        zeros = P.stochastic_pool_forward(as_region_tensor([0, 0, 0, 0], 100), POOL22,
                                          RngStream(9)).pooled
        assert np.all(zeros == 0.0)

    def test_weighted(self):
        assert P.stochastic_pool_weighted(as_region_tensor(FIG1), POOL22).item() == \
            pytest.approx(71 / 15, abs=1e-12)
        assert stochastic_expectation(FIG1) == pytest.approx(71 / 15, abs=1e-12)
        assert P.stochastic_pool_weighted(as_region_tensor([0, 0, 0, 0]), POOL22).item() == 0.0
        assert P.stochastic_pool_weighted(as_region_tensor([2.5] * 4), POOL22).item() == \
            pytest.approx(2.5, rel=1e-15)

    @given(region_values)
    def test_weighted_bounds_and_oracle(self, region):
        x = np.asarray(region).reshape(1, 1, 1, -1)
        out = P.stochastic_pool_weighted(x, P.PoolSpec(1, len(region), 1)).item()
        tol = 1e-12 * max(1.0, max(region))
        if sum(region) > 0:
            assert min(region) - tol <= out <= max(region) + tol
        assert out == pytest.approx(stochastic_expectation(region), abs=tol)


# ---------------------------------------------------------------- backward

class TestPoolBackward:
    def test_routes_to_argmax(self):
        x = np.array([[1.0, 6.0, 0.0, 0.5], [5.0, 3.0, 2.0, 0.1],
                      [0.0, 0.0, 4.0, 4.0], [0.0, 9.0, 4.0, 1.0]]).reshape(1, 1, 4, 4)
        trace = P.max_pool_forward(x, POOL22)
        g = P.pool_backward(trace, np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        expected = np.zeros((4, 4))
        expected[0, 1], expected[1, 2], expected[3, 1], expected[2, 2] = 1, 2, 3, 4
        np.testing.assert_array_equal(g[0, 0], expected)

    def test_dropped_region_gets_no_gradient(self):
        x = as_region_tensor(FIG1)
        trace = P.max_pool_dropout_forward(x, POOL22, 0.5, mask=np.zeros_like(x))
        assert np.all(P.pool_backward(trace, np.ones((1, 1, 1, 1))) == 0.0)

    def test_shape_mismatch(self):
        trace = P.max_pool_forward(np.ones((1, 1, 4, 4)), POOL22)
        with pytest.raises(GeometryError):
            P.pool_backward(trace, np.ones((1, 1, 3, 3)))

    def test_overlapping_accumulates(self):
        x = np.zeros((1, 1, 3, 5))
        x[0, 0, 1, 2] = 1.0  # shared column of both 3x3 windows
        trace = P.max_pool_forward(x, P.PoolSpec.square(3, 2))
        g = P.pool_backward(trace, np.array([[[[2.0, 5.0]]]]))
        assert g[0, 0, 1, 2] == 7.0 and g.sum() == 7.0

    @pytest.mark.parametrize("mode", ["max", "max_dropout"])
    def test_finite_differences(self, mode):
        rng = np.random.default_rng(12)
        x = rng.random((2, 2, 6, 6)) + 0.1
        spec = P.PoolSpec.square(3, 2)
        mask = RngStream(4).bernoulli_mask(x.shape, 0.5)
        weights = rng.standard_normal((2, 2, 2, 2))

        def forward():
            if mode == "max":
                return P.max_pool_forward(x, spec)
            return P.max_pool_dropout_forward(x, spec, 0.5, mask=mask)

        analytic = P.pool_backward(forward(), weights)
        numeric = numerical_grad(lambda: float((forward().pooled * weights).sum()), x)
        assert rel_error(analytic, numeric) < 1e-6


# ---------------------------------------------------------------- model counts

class TestModelCount:
    def test_small(self):
        assert P.model_count(1, 16, 4) == (625, pytest.approx(4 * math.log10(5)))

    def test_mnist_first_pool(self):
        count = P.model_count(20, 576, 4)
        assert count.count == 5 ** 2880
        assert count.log10 == pytest.approx(2013.03, abs=0.01)
        assert P.model_count(40, 64, 4).log10 == pytest.approx(447.34, abs=0.01)

    @pytest.mark.parametrize("r, s", [(1, 1), (2, 8), (4, 16), (1, 64), (8, 8)])
    def test_t1_is_power_of_two(self, r, s):
        assert P.model_count(r, s, 1).count == 2 ** (r * s)

    def test_indivisible(self):
        with pytest.raises(ParameterError):
            P.model_count(1, 10, 4)

    def test_base(self):
        assert P.model_count_base(1) == 2.0
        assert P.model_count_base(4) == pytest.approx(5 ** 0.25)
        assert P.model_count_base(4) == pytest.approx(1.495349, abs=1e-6)
        assert P.model_count_base(4) < P.model_count_base(2) < P.model_count_base(1)
        with pytest.raises(ParameterError):
            P.model_count_base(0)

    @given(st.integers(1, 50))
    def test_base_range(self, t):
        assert 1.0 < P.model_count_base(t) <= 2.0
