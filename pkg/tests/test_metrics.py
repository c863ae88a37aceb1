import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coinflip.errors import InvalidArgumentError, InvalidStateError
from coinflip.metrics import (
    NORMALIZE_EPS,
    RunningStats,
    mean_and_se,
    normal_interval,
    spearman,
    variance_and_se,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestRunningStats:
    def test_constant_stream(self):
        s = RunningStats()
        for v in (1.0, 1.0, 1.0):
            s.update(v)
        assert s.mean == 1.0 and s.variance == 0.0

    def test_two_points_population_variance(self):
        s = RunningStats().update(0.0).update(2.0)
        assert s.mean == 1.0
        assert s.variance == 1.0

    def test_standard_normal_stream(self, rng):
        s = RunningStats().update_many(rng.standard_normal(10_000))
        assert abs(s.mean) < 0.03
        assert abs(s.variance - 1) < 0.05

    def test_vector_stats(self, rng):
        x = rng.normal(3.0, 2.0, size=(500, 4))
        s = RunningStats((4,)).update_many(x)
        assert np.allclose(s.mean, x.mean(axis=0), rtol=1e-10)
        assert np.allclose(s.variance, x.var(axis=0), rtol=1e-8)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            RunningStats().update(float("nan"))
        with pytest.raises(InvalidArgumentError):
            RunningStats().update(float("inf"))

    def test_rejects_wrong_shape(self):
        with pytest.raises(InvalidArgumentError):
            RunningStats((3,)).update(np.zeros(2))

    @given(st.lists(finite, min_size=1, max_size=60))
    def test_matches_two_pass(self, values):
        s = RunningStats().update_many(values)
        x = np.array(values)
        assert s.mean == pytest.approx(x.mean(), rel=1e-10, abs=1e-9)
        assert s.variance == pytest.approx(x.var(), rel=1e-8, abs=1e-6)

    @given(st.lists(finite, min_size=2, max_size=40), st.randoms())
    def test_order_independence(self, values, rnd):
        shuffled = list(values)
        rnd.shuffle(shuffled)
        a = RunningStats().update_many(values)
        b = RunningStats().update_many(shuffled)
        assert a.mean == pytest.approx(b.mean, rel=1e-8, abs=1e-8)
        assert a.variance == pytest.approx(b.variance, rel=1e-8, abs=1e-6)

    def test_state_round_trip(self, rng):
        s = RunningStats((2,)).update_many(rng.normal(size=(10, 2)))
        t = RunningStats.from_state_dict(s.state_dict())
        assert t.count == s.count
        assert np.array_equal(t.mean, s.mean) and np.array_equal(t.variance, s.variance)


class TestNormalize:
    def test_mean_maps_to_zero(self):
        s = RunningStats().update_many([1.0, 2.0, 6.0])
        assert s.normalize(s.mean) == 0.0

    def test_constant_stream_guard(self):
        s = RunningStats().update_many([4.0, 4.0])
        assert s.normalize(5.0) == pytest.approx(1.0 / np.sqrt(NORMALIZE_EPS))

    def test_standardized_stream(self, rng):
        x = rng.normal(5.0, 3.0, size=10_000)
        s = RunningStats().update_many(x)
        assert abs(np.var(s.normalize(x)) - 1) < 0.05

    def test_empty_raises(self):
        with pytest.raises(InvalidStateError):
            RunningStats().normalize(1.0)

    @given(st.lists(finite, min_size=1, max_size=20), finite, finite)
    def test_monotone(self, values, a, b):
        s = RunningStats().update_many(values)
        lo, hi = sorted((a, b))
        assert s.normalize(lo) <= s.normalize(hi)


class TestSpearman:
    def test_identity(self):
        assert spearman([1, 5, 2, 8], [1, 5, 2, 8]) == pytest.approx(1.0)

    def test_reversed(self):
        xs = [1.0, 2.0, 3.0, 4.0, 5.0]
        assert spearman(xs, xs[::-1]) == pytest.approx(-1.0)

    def test_hand_computed(self):
        # rank differences (0, 1, -1, 0): 1 - 6*2 / (4*15) = 0.8
        assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_ties_use_average_ranks(self):
        # ranks of ys: 1.5, 1.5, 3 -> Pearson with (1, 2, 3)
        r = np.array([1.5, 1.5, 3.0]) - 2.0
        expected = np.dot(r, [-1, 0, 1]) / np.sqrt(np.dot(r, r) * 2)
        assert spearman([1, 2, 3], [7, 7, 9]) == pytest.approx(expected)

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            spearman([1, 2, 3], [1, 2])

    def test_too_short(self):
        with pytest.raises(InvalidArgumentError):
            spearman([1], [1])

    @given(st.lists(st.tuples(finite, finite), min_size=2, max_size=30))
    def test_bounded(self, pairs):
        xs, ys = zip(*pairs)
        assert -1.0 - 1e-12 <= spearman(xs, ys) <= 1.0 + 1e-12


class TestStandardErrors:
    def test_mean_and_se(self):
        m, se = mean_and_se([1.0, 2.0, 3.0, 4.0])
        assert m == 2.5
        assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)

    def test_variance_se_shrinks(self, rng):
        _, se_small = variance_and_se(rng.standard_normal(1_000))
        _, se_big = variance_and_se(rng.standard_normal(100_000))
        assert se_big < se_small
        # for normal data se(var) ~ sqrt(2/n)
        assert se_big == pytest.approx(np.sqrt(2 / 100_000), rel=0.1)

    def test_normal_interval(self):
        lo, hi = normal_interval(1.0, 0.5)
        assert lo == pytest.approx(1.0 - 1.959964 * 0.5, rel=1e-6)
        assert hi == pytest.approx(1.0 + 1.959964 * 0.5, rel=1e-6)
