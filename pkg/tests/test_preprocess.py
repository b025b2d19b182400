import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from encpipe.core import ClipIndex
from encpipe.preprocess import (ZScorer, aggregate_word_vectors, apply_zscore, detrend_median,
                                fill_clipwise, fit_zscore, log_transform, oversample_labels)

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestZScore:
    def test_population_std(self):
        s = fit_zscore([[1.0], [2.0], [3.0]])
        assert s.means[0] == 2.0
        assert s.stds[0] == pytest.approx(math.sqrt(2 / 3), abs=1e-12)

    def test_constant_column(self):
        s = fit_zscore([[5.0], [5.0], [5.0]])
        assert (s.means[0], s.stds[0]) == (5.0, 0.0)
        np.testing.assert_array_equal(apply_zscore([[5.0], [5.0]], s), [[0.0], [0.0]])

    def test_columns_independent(self):
        s = fit_zscore([[1.0, 10.0], [3.0, 30.0]])
        np.testing.assert_allclose(s.means, [2.0, 20.0])
        np.testing.assert_allclose(s.stds, [1.0, 10.0])

    def test_apply_own_stats(self):
        x = np.array([[1.0], [2.0], [3.0]])
        np.testing.assert_allclose(apply_zscore(x, fit_zscore(x))[:, 0],
                                   [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)

    def test_train_stats_on_test_data(self):
        s = fit_zscore([[0.0], [2.0]])
        np.testing.assert_allclose(apply_zscore([[10.0], [12.0]], s)[:, 0], [9.0, 11.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_zscore(np.ones((3, 2)), fit_zscore(np.arange(3.0)[:, None]))

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            fit_zscore([[1.0, 2.0]])

    def test_estimator_roundtrip(self, rng):
        x = rng.standard_normal((20, 3)) * 4 + 1
        z = ZScorer().fit(x)
        np.testing.assert_allclose(z.inverse_transform(z.transform(x)), x, atol=1e-12)

    @given(arrays(np.float64, st.tuples(st.integers(3, 30), st.integers(1, 4)), elements=finite))
    def test_standardized_moments(self, x):
        z = apply_zscore(x, fit_zscore(x))
        assert np.all(np.abs(z.mean(axis=0)) < 1e-12 * max(1.0, np.abs(x).max()))
        ok = x.std(axis=0) > 1e-6 * max(1.0, np.abs(x).max())
        np.testing.assert_allclose(z.std(axis=0)[ok], 1.0, atol=1e-9)


class TestDetrend:
    def test_hand_computed(self):
        out = detrend_median(np.array([[1.0], [2.0], [9.0], [2.0], [1.0]]), 3)
        np.testing.assert_allclose(out[:, 0], [-0.5, 0.0, 7.0, 0.0, -0.5])

    def test_constant_series(self):
        np.testing.assert_array_equal(detrend_median(np.full((10, 2), 3.0), 5), 0.0)

    def test_oversized_window(self):
        np.testing.assert_allclose(detrend_median(np.array([[1.0], [2.0], [3.0]]), 5)[:, 0], [-1, 0, 1])

    def test_even_window(self):
        # window 2 covers t and t+1
        out = detrend_median(np.array([[0.0], [2.0], [4.0]]), 2)
        np.testing.assert_allclose(out[:, 0], [-1.0, -1.0, 0.0])

    @given(arrays(np.float64, st.tuples(st.integers(1, 25), st.integers(1, 3)), elements=finite),
           st.integers(1, 30), st.floats(-100, 100))
    def test_shift_invariant(self, x, w, c):
        np.testing.assert_allclose(detrend_median(x + c, w), detrend_median(x, w), atol=1e-9)


class TestLabelOps:
    def test_oversample(self):
        np.testing.assert_array_equal(oversample_labels([[1.0], [2.0]], 2)[:, 0], [1, 1, 2, 2])
        x = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(oversample_labels(x, 1), x)
        assert oversample_labels(np.ones((3, 1)), 3).shape == (9, 1)

    @given(arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 3)), elements=finite),
           st.integers(1, 5))
    def test_oversample_decimates_back(self, x, f):
        np.testing.assert_array_equal(oversample_labels(x, f)[::f], x)

    def test_fill_clipwise(self):
        idx = ClipIndex.from_lengths([2, 3], ["A", "B"])
        np.testing.assert_array_equal(fill_clipwise({"A": 5, "B": 7}, idx)[:, 0], [5, 5, 7, 7, 7])
        np.testing.assert_array_equal(fill_clipwise({"A": 2}, ClipIndex(("A",) * 4))[:, 0], [2] * 4)
        with pytest.raises(KeyError):
            fill_clipwise({"A": 5}, idx)

    def test_log(self):
        np.testing.assert_allclose(log_transform([[1.0], [math.e], [math.e ** 2]])[:, 0], [0, 1, 2])
        assert log_transform([[0.5]])[0, 0] == pytest.approx(-0.69315, abs=1e-5)
        with pytest.raises(ValueError, match="row 1"):
            log_transform([[1.0], [0.0]])


class TestWordVectors:
    def test_two_stage_mean(self):
        np.testing.assert_allclose(aggregate_word_vectors([[[(1, 0)], [(0, 1)]]]), [[0.5, 0.5]])
        np.testing.assert_allclose(aggregate_word_vectors([[[(2, 0), (0, 2)], [(1, 1)]]]), [[1, 1]])
        np.testing.assert_allclose(aggregate_word_vectors([[[(3, 4)]]]), [[3, 4]])

    def test_errors(self):
        with pytest.raises(ValueError):
            aggregate_word_vectors([[]])
        with pytest.raises(ValueError):
            aggregate_word_vectors([[[(1, 0)], [(1, 0, 0)]]])

    @given(st.data())
    def test_permutation_invariant(self, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 10_000)))
        scene = [rng.standard_normal((int(rng.integers(1, 4)), 3)).tolist()
                 for _ in range(int(rng.integers(1, 5)))]
        base = aggregate_word_vectors([scene])
        perm = [list(np.asarray(d)[rng.permutation(len(d))]) for d in scene]
        perm = [perm[i] for i in rng.permutation(len(perm))]
        np.testing.assert_allclose(aggregate_word_vectors([perm]), base, atol=1e-12)
