import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from encpipe.core import ClipIndex
from encpipe.regress import (DEFAULT_LAMBDA_GRID, LagEmbedder, RidgeCVRegressor, apply_pca,
                             cv_select_lambda, fit_pca, fit_ridge, fit_ridge_cv, inverse_pca,
                             make_folds, make_lagged, predict)


def naive_shift(m, delays):
    n, d = m.shape
    out = np.zeros((n, d * len(delays)))
    for k, lag in enumerate(delays):
        for t in range(n):
            src = t - lag
            if 0 <= src < n:
                out[t, k * d:(k + 1) * d] = m[src]
    return out


class TestLagged:
    def test_unit_shift(self):
        np.testing.assert_array_equal(make_lagged(np.arange(1.0, 6)[:, None], [1])[:, 0], [0, 1, 2, 3, 4])

    def test_zero_delay_identity(self, rng):
        x = rng.standard_normal((6, 3))
        np.testing.assert_array_equal(make_lagged(x, [0]), x)

    def test_future_shift(self):
        np.testing.assert_array_equal(make_lagged(np.array([[1.0], [2.0], [3.0]]), [-1])[:, 0], [2, 3, 0])

    def test_delays_longer_than_series(self):
        np.testing.assert_array_equal(make_lagged(np.ones((3, 1)), [-5, 5]), 0.0)

    def test_small_exhaustive(self, rng):
        x = rng.standard_normal((9, 2))
        for size in (1, 2, 3):
            for ds in itertools.combinations(range(-3, 4), size):
                np.testing.assert_array_equal(make_lagged(x, ds), naive_shift(x, ds))

    @given(st.integers(-4, 4), st.integers(-4, 4))
    def test_shift_composition(self, a, b):
        x = np.random.default_rng(abs(a * 10 + b)).standard_normal((20, 2))
        lhs = make_lagged(make_lagged(x, [b]), [a])
        rhs = make_lagged(x, [a + b])
        # equal wherever neither shift reads padding
        lo, hi = max(0, a, b, a + b), min(20, 20 + a, 20 + b, 20 + a + b)
        np.testing.assert_array_equal(lhs[lo:hi], rhs[lo:hi])

    def test_transformer(self, rng):
        x = rng.standard_normal((10, 2))
        lag = LagEmbedder((1, 2)).fit(x)
        np.testing.assert_array_equal(lag.transform(x), make_lagged(x, (1, 2)))
        with pytest.raises(ValueError):
            lag.transform(np.ones((3, 3)))
        assert clone(lag).get_params() == {"delays": (1, 2)}


class TestPCA:
    def test_rank_one_line(self):
        t = np.linspace(-2, 2, 11)
        p = fit_pca(np.column_stack([t, t]), 2)
        np.testing.assert_allclose(p.components[0], [2 ** -0.5, 2 ** -0.5], atol=1e-12)
        assert p.explained_variance[0] / p.explained_variance.sum() == pytest.approx(1.0, abs=1e-12)

    def test_projection_of_point(self):
        t = np.linspace(-2, 2, 11)
        p = fit_pca(np.column_stack([t, t]), 1)
        np.testing.assert_allclose(apply_pca([[2.0, 2.0]], p), [[2 * 2 ** 0.5]], atol=1e-12)

    def test_full_rank_reconstruction(self, rng):
        x = rng.standard_normal((30, 6))
        p = fit_pca(x, 6)
        assert np.abs(inverse_pca(apply_pca(x, p), p) - x).max() < 1e-9

    def test_mean_row_maps_to_zero(self, rng):
        x = rng.standard_normal((30, 4))
        p = fit_pca(x, 3)
        np.testing.assert_allclose(apply_pca(x.mean(axis=0)[None], p), 0.0, atol=1e-12)

    def test_isotropic_sample(self):
        x = np.random.default_rng(0).standard_normal((20000, 2))
        p = fit_pca(x, 2)
        np.testing.assert_allclose(p.components @ p.components.T, np.eye(2), atol=1e-12)
        assert p.explained_variance[1] / p.explained_variance[0] > 0.95

    def test_total_variance(self, rng):
        x = rng.standard_normal((40, 7)) * np.arange(1, 8)
        p = fit_pca(x, 7)
        assert p.explained_variance.sum() == pytest.approx(x.var(axis=0).sum(), abs=1e-9)

    def test_component_count_bounds(self, rng):
        with pytest.raises(ValueError):
            fit_pca(rng.standard_normal((4, 10)), 5)
        with pytest.raises(ValueError):
            fit_pca(rng.standard_normal((4, 10)), 0)


class TestRidge:
    def test_identity(self):
        np.testing.assert_allclose(fit_ridge(np.eye(2), np.eye(2), 0.0).weights, np.eye(2), atol=1e-14)

    def test_one_dimensional(self):
        m = fit_ridge([[1.0], [2.0], [3.0]], [[2.0], [4.0], [6.0]], 1.0)
        assert m.weights[0, 0] == pytest.approx(28 / 15, abs=1e-14)
        assert predict(m, [[2.0]])[0, 0] == pytest.approx(56 / 15, abs=1e-13)

    def test_shrinkage_limit(self, rng):
        m = fit_ridge(rng.standard_normal((20, 4)), rng.standard_normal((20, 2)), 1e12)
        assert np.linalg.norm(m.weights) < 1e-6

    def test_predict_trivial(self, rng):
        x = rng.standard_normal((5, 3))
        ident = fit_ridge(np.eye(3), np.eye(3), 0.0)
        np.testing.assert_allclose(predict(ident, x), x, atol=1e-14)
        zero = fit_ridge(np.eye(3), np.zeros((3, 2)), 1.0)
        np.testing.assert_array_equal(predict(zero, x), 0.0)

    def test_normal_equations(self, rng):
        x, y = rng.standard_normal((60, 8)), rng.standard_normal((60, 3))
        w = np.linalg.solve(x.T @ x + 0.5 * np.eye(8), x.T @ y)
        np.testing.assert_allclose(fit_ridge(x, y, 0.5).weights, w, rtol=1e-10, atol=1e-12)

    def test_per_target_lambdas(self, rng):
        x, y = rng.standard_normal((30, 4)), rng.standard_normal((30, 2))
        m = fit_ridge(x, y, [0.1, 10.0])
        for j, lam in enumerate((0.1, 10.0)):
            np.testing.assert_allclose(m.weights[:, j], fit_ridge(x, y[:, [j]], lam).weights[:, 0],
                                       atol=1e-12)

    def test_rank_deficient_min_norm(self, rng):
        x = rng.standard_normal((5, 8))
        y = rng.standard_normal((5, 1))
        m = fit_ridge(x, y, 0.0)
        assert m.rank_deficient
        np.testing.assert_allclose(m.weights, np.linalg.pinv(x) @ y, atol=1e-10)

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            fit_ridge(np.eye(2), np.eye(2), -1.0)

    def test_monotone_shrinkage(self, rng):
        x, y = rng.standard_normal((40, 6)), rng.standard_normal((40, 3))
        norms = [np.linalg.norm(fit_ridge(x, y, lam).weights) for lam in DEFAULT_LAMBDA_GRID]
        assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))


class TestFolds:
    def test_plain_blocks(self):
        f = make_folds(10, 3)
        assert np.all(np.diff(f.assignment) >= 0)
        assert sorted(np.bincount(f.assignment)) == [3, 3, 4]

    @given(st.lists(st.integers(1, 7), min_size=4, max_size=30), st.integers(2, 4))
    def test_clip_aligned(self, lengths, k):
        clips = ClipIndex.from_lengths(lengths)
        f = make_folds(len(clips), k, clips)
        assert np.all(np.diff(f.assignment) >= 0)
        assert f.n_folds == k
        for _, start, ln in clips.runs():
            assert len(set(f.assignment[start:start + ln])) == 1

    def test_errors(self):
        with pytest.raises(ValueError):
            make_folds(10, 1)
        with pytest.raises(ValueError):
            make_folds(3, 5)
        with pytest.raises(ValueError):
            make_folds(6, 4, ClipIndex.from_lengths([3, 3]))


class TestCV:
    def test_noiseless_picks_smallest(self, rng):
        x = rng.standard_normal((400, 5))
        y = x @ rng.standard_normal((5, 3))
        cv = cv_select_lambda(x, y, folds=make_folds(400, 10))
        assert cv.lambdas[0] == DEFAULT_LAMBDA_GRID[0]
        assert cv.cv_scores.min() > 0.999

    def test_noise_picks_largest(self, rng):
        x, y = rng.standard_normal((400, 5)), rng.standard_normal((400, 3))
        cv = cv_select_lambda(x, y, folds=make_folds(400, 10))
        assert cv.lambdas[0] == DEFAULT_LAMBDA_GRID[-1]

    def test_clean_target_gets_smaller_lambda(self):
        wins = 0
        for s in range(20):
            rng = np.random.default_rng(s)
            x = rng.standard_normal((300, 10))
            w = rng.standard_normal((10, 1))
            y = np.hstack([x @ w, x @ w * 0.2 + rng.standard_normal((300, 1)) * 3])
            cv = cv_select_lambda(x, y, folds=make_folds(300, 10), mode="per_target")
            wins += cv.lambdas[0] <= cv.lambdas[1]
        assert wins >= 10

    def test_single_target_modes_agree(self, rng):
        x = rng.standard_normal((200, 4))
        y = x[:, :1] + rng.standard_normal((200, 1))
        f = make_folds(200, 5)
        a = cv_select_lambda(x, y, folds=f, mode="shared")
        b = cv_select_lambda(x, y, folds=f, mode="per_target")
        np.testing.assert_array_equal(a.lambdas, b.lambdas)

    def test_fold_solver_matches_direct_refits(self, rng):
        x = rng.standard_normal((120, 30))
        y = x[:, :3] + rng.standard_normal((120, 3))
        f = make_folds(120, 4)
        cv = cv_select_lambda(x, y, (0.1, 1.0, 10.0), f, return_predictions=True)
        lam = cv.lambdas[0]
        oof = np.empty_like(y)
        for tr, te in f.split():
            oof[te] = predict(fit_ridge(x[tr], y[tr], lam), x[te])
        np.testing.assert_allclose(cv.predictions, oof, atol=1e-9)

    def test_threads_do_not_change_results(self, rng):
        x, y = rng.standard_normal((200, 12)), rng.standard_normal((200, 4))
        f = make_folds(200, 5)
        a = cv_select_lambda(x, y, folds=f, n_jobs=1)
        b = cv_select_lambda(x, y, folds=f, n_jobs=3)
        np.testing.assert_array_equal(a.fold_scores, b.fold_scores)

    def test_constant_target_scores_zero(self, rng):
        x = rng.standard_normal((100, 3))
        y = np.column_stack([np.ones(100), x[:, 0]])
        cv = cv_select_lambda(x, y, folds=make_folds(100, 5), mode="per_target")
        assert cv.cv_scores[0] == 0.0

    def test_grid_validation(self, rng):
        x, y = rng.standard_normal((50, 2)), rng.standard_normal((50, 1))
        with pytest.raises(ValueError):
            cv_select_lambda(x, y, (1.0, 0.1))
        with pytest.raises(ValueError):
            cv_select_lambda(x, y, (0.0, 1.0))

    def test_estimator(self, rng):
        x = rng.standard_normal((150, 4))
        y = x @ rng.standard_normal((4, 2))
        est = RidgeCVRegressor(n_folds=5).fit(x, y)
        assert est.score(x, y) > 0.999
        assert est.coef_.shape == (2, 4)
        assert est.oof_predictions_.shape == y.shape
        assert clone(est).get_params()["n_folds"] == 5
        with pytest.raises(Exception):
            RidgeCVRegressor().predict(x)

    def test_fit_ridge_cv_refits_on_all_rows(self, rng):
        x, y = rng.standard_normal((100, 3)), rng.standard_normal((100, 2))
        m = fit_ridge_cv(x, y, folds=make_folds(100, 5))
        np.testing.assert_allclose(m.weights, fit_ridge(x, y, m.lambdas).weights, atol=1e-14)
