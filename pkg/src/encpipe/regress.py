"""Lag embedding, PCA, SVD-based ridge regression and cross-validated
regularization selection.

Every regression stage of the pipeline goes through :func:`fit_ridge` and
:func:`cv_select_lambda`. No intercept is fitted anywhere; inputs are
expected to be centered or z-scored upstream.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import ClipIndex, DelaySpec, as_matrix
from .stats import columnwise_pearson

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-4, 4, 17))


# ---------------------------------------------------------------------------
# lag embedding


def make_lagged(m, delays) -> np.ndarray:
    """Stack time-shifted copies of ``m`` side by side.

    Block ``k`` (columns ``k*D`` to ``(k+1)*D - 1``) holds ``m[t - delays[k]]``
    at row ``t``; rows that fall outside the series are zero.

    >>> make_lagged([[1.], [2.], [3.]], [-1, 1])
    array([[2., 0.],
           [3., 1.],
           [0., 2.]])
    """
    x = as_matrix(m)
    spec = DelaySpec.coerce(delays)
    n, d = x.shape
    out = np.zeros((n, d * len(spec)))
    for k, lag in enumerate(spec):
        block = out[:, k * d:(k + 1) * d]
        if lag >= 0:
            if lag < n:
                block[lag:] = x[:n - lag]
        else:
            if -lag < n:
                block[:n + lag] = x[-lag:]
    return out


class LagEmbedder(TransformerMixin, BaseEstimator):
    """Transformer form of :func:`make_lagged`."""

    def __init__(self, delays=(3, 4, 5, 6)):
        self.delays = delays

    def fit(self, X, y=None):
        self.delays_ = DelaySpec.coerce(self.delays)
        self.n_features_in_ = as_matrix(X).shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "delays_")
        x = as_matrix(X)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {x.shape[1]}")
        return make_lagged(x, self.delays_)


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PCAModel:
    means: np.ndarray
    components: np.ndarray  # (n_components, D), orthonormal rows
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


def fit_pca(m, n_components: int) -> PCAModel:
    """Principal components of mean-centered data via a thin SVD.

    Component signs are fixed so the largest-magnitude coefficient of each
    component is positive. Explained variance uses the population (1/T)
    normalization.
    """
    x = as_matrix(m)
    n, d = x.shape
    n_components = int(n_components)
    if not 1 <= n_components <= min(n, d):
        raise ValueError(f"n_components={n_components} must be in [1, min(T, D)={min(n, d)}]")
    means = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - means, full_matrices=False)
    comps = vt[:n_components].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(n_components), pivot])
    signs[signs == 0] = 1.0
    comps *= signs[:, None]
    var = s[:n_components] ** 2 / n
    return PCAModel(means, comps, var)


def apply_pca(m, p: PCAModel) -> np.ndarray:
    x = as_matrix(m)
    if x.shape[1] != p.n_features:
        raise ValueError(f"PCA expects {p.n_features} columns, got {x.shape[1]}")
    return (x - p.means) @ p.components.T


def inverse_pca(z, p: PCAModel) -> np.ndarray:
    return as_matrix(z) @ p.components + p.means


# ---------------------------------------------------------------------------
# ridge


@dataclass
class RidgeModel:
    weights: np.ndarray  # (D_in, D_out)
    lambdas: np.ndarray  # shape (1,) when shared, (D_out,) per target
    cv_scores: np.ndarray | None = None
    rank_deficient: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def shared(self) -> bool:
        return self.lambdas.shape[0] == 1

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[0]

    @property
    def n_targets(self) -> int:
        return self.weights.shape[1]


class _SVDSolver:
    """Thin SVD of a design matrix, reused for every lambda and target."""

    def __init__(self, x: np.ndarray):
        self.u, self.s, self.vt = np.linalg.svd(x, full_matrices=False)
        tol = self.s.max(initial=0.0) * max(x.shape) * np.finfo(float).eps
        self.rank = int(np.sum(self.s > tol))
        self.tol = tol

    def shrink(self, lambdas: np.ndarray) -> np.ndarray:
        """Spectral filter ``s / (s^2 + lambda)``, shape (k, n_lambdas)."""
        s = self.s[:, None]
        lam = np.asarray(lambdas, dtype=float)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            f = s / (s ** 2 + lam)
        # lambda == 0 on a null direction: minimum-norm (pseudo-inverse) choice
        f[(self.s <= self.tol)[:, None] & (lam == 0)] = 0.0
        return f


def fit_ridge(x, y, lam) -> RidgeModel:
    """Minimize ``||y - xW||^2 + lam ||W||^2`` column by column.

    ``lam`` is a scalar shared by all targets or one value per target.
    With ``lam == 0`` and a rank-deficient ``x`` the minimum-norm solution is
    returned and ``rank_deficient`` is set.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"x has {x.shape[0]} rows, y has {y.shape[0]}")
    lambdas = np.atleast_1d(np.asarray(lam, dtype=float))
    if lambdas.ndim != 1 or lambdas.shape[0] not in (1, y.shape[1]):
        raise ValueError(f"need 1 or {y.shape[1]} lambdas, got {lambdas.shape}")
    if np.any(lambdas < 0) or not np.all(np.isfinite(lambdas)):
        raise ValueError("lambda must be finite and >= 0")
    solver = _SVDSolver(x)
    deficient = bool(np.any(lambdas == 0) and solver.rank < x.shape[1])
    # (k, 1) or (k, n_targets) filter, broadcast against U'y
    w = solver.vt.T @ (solver.shrink(lambdas) * (solver.u.T @ y))
    if deficient:
        logger.warning("lambda=0 on rank-deficient design (rank %d < %d); minimum-norm solution",
                       solver.rank, x.shape[1])
    return RidgeModel(w, lambdas, rank_deficient=deficient)


def predict(model: RidgeModel, x) -> np.ndarray:
    x = as_matrix(x, "x")
    if x.shape[1] != model.n_inputs:
        raise ValueError(f"model expects {model.n_inputs} input columns, got {x.shape[1]}")
    return x @ model.weights


# ---------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class FoldPlan:
    assignment: np.ndarray  # fold id per row

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int)
        object.__setattr__(self, "assignment", a)
        ids = np.unique(a)
        if ids.size == 0 or not np.array_equal(ids, np.arange(ids.size)):
            raise ValueError("fold ids must be 0..k-1, every fold non-empty")

    @property
    def n_folds(self) -> int:
        return int(self.assignment.max()) + 1

    def __len__(self):
        return self.assignment.shape[0]

    def split(self):
        for k in range(self.n_folds):
            test = self.assignment == k
            yield np.flatnonzero(~test), np.flatnonzero(test)


def make_folds(n_samples: int, n_folds: int = 10, clips: ClipIndex | None = None) -> FoldPlan:
    """Contiguous-block folds; with ``clips`` the block edges fall on clip edges."""
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if n_samples < n_folds:
        raise ValueError(f"{n_samples} samples cannot fill {n_folds} folds")
    if clips is None:
        edges = [round(k * n_samples / n_folds) for k in range(n_folds + 1)]
    else:
        if len(clips) != n_samples:
            raise ValueError(f"clip index covers {len(clips)} rows, data has {n_samples}")
        bounds = [start for _, start, _ in clips.runs()] + [n_samples]
        if len(bounds) - 1 < n_folds:
            raise ValueError(f"{len(bounds) - 1} clips cannot fill {n_folds} folds")
        edges = [0]
        for k in range(1, n_folds):
            target = k * n_samples / n_folds
            # leave at least one clip per remaining fold
            lo = bounds.index(edges[-1]) + 1
            hi = len(bounds) - 1 - (n_folds - k)
            cand = bounds[lo:hi + 1]
            edges.append(min(cand, key=lambda b: (abs(b - target), b)))
        edges.append(n_samples)
    assignment = np.empty(n_samples, dtype=int)
    for k in range(n_folds):
        assignment[edges[k]:edges[k + 1]] = k
    return FoldPlan(assignment)


@dataclass
class CVResult:
    grid: np.ndarray
    scores: np.ndarray  # (n_lambdas, n_targets) fold-mean Pearson r
    fold_scores: np.ndarray  # (n_folds, n_lambdas, n_targets)
    lambdas: np.ndarray  # selected, shape (1,) or (n_targets,)
    lambda_index: np.ndarray
    cv_scores: np.ndarray  # per-target score at the selected lambda(s)
    predictions: np.ndarray | None = None  # out-of-fold predictions at the selection


class _FoldSolver:
    """Held-out predictions for one CV fold over many lambdas.

    Uses the eigendecomposition of the training Gram matrix (the squared
    singular values and singular vectors of the training design), in the
    primal form when features <= samples and the dual form otherwise. The
    primal Gram of the training rows is obtained by subtracting the held-out
    rows' contribution from the full Gram matrix.
    """

    def __init__(self, x, y, train, test, gram=None, xty=None):
        xte = x[test]
        if x.shape[1] <= train.shape[0]:
            if gram is None:
                g = x[train].T @ x[train]
                b = x[train].T @ y[train]
            else:
                g = gram - xte.T @ xte
                b = xty - xte.T @ y[test]
            evals, v = np.linalg.eigh(g)
            self.a = xte @ v
            self.b = v.T @ b
        else:
            xtr = x[train]
            evals, u = np.linalg.eigh(xtr @ xtr.T)
            self.a = (xte @ xtr.T) @ u
            self.b = u.T @ y[train]
        self.evals = np.clip(evals, 0.0, None)

    def predict(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if lam.ndim == 0:
            return (self.a / (self.evals + lam)) @ self.b
        # one lambda per target column
        return np.einsum("tk,kd->td", self.a, self.b / (self.evals[:, None] + lam[None, :]))


def _fold_cell(x, y, train, test, grid, gram=None, xty=None):
    solver = _FoldSolver(x, y, train, test, gram, xty)
    yt = y[test]
    scores = np.empty((grid.shape[0], y.shape[1]))
    for i, lam in enumerate(grid):
        scores[i] = columnwise_pearson(solver.predict(lam), yt)
    # undefined r (constant prediction or target) scores as 0
    return np.nan_to_num(scores, nan=0.0)


def _fold_predictions(x, y, train, test, lambdas, gram=None, xty=None):
    solver = _FoldSolver(x, y, train, test, gram, xty)
    return solver.predict(lambdas[0] if lambdas.shape[0] == 1 else lambdas)


def _select(mean, fold, tie_tolerance):
    # mean: (L, T) scores; returns index per column, ties -> larger lambda
    n_folds = fold.shape[0]
    best = np.argmax(mean, axis=0)
    best_val = mean[best, np.arange(mean.shape[1])]
    if tie_tolerance == "se":
        sd = fold[:, best, np.arange(mean.shape[1])].std(axis=0, ddof=1)
        tol = sd / np.sqrt(n_folds)
    else:
        tol = np.full(mean.shape[1], float(tie_tolerance))
    ok = mean >= (best_val - tol)[None, :]
    # last grid index within the tie band
    return mean.shape[0] - 1 - np.argmax(ok[::-1], axis=0)


def cv_select_lambda(x, y, grid=DEFAULT_LAMBDA_GRID, folds: FoldPlan | None = None,
                     mode: str = "shared", tie_tolerance="se", return_predictions: bool = False,
                     n_jobs: int | None = 1) -> CVResult:
    """Pick ridge lambda(s) by K-fold CV with Pearson r as the score.

    For each lambda the model is fitted on K-1 folds and the held-out fold is
    scored per target; scores are averaged across folds (simple mean).
    ``mode="shared"`` maximizes the target-averaged score, ``"per_target"``
    picks independently per target. Ties go to the larger lambda: any
    lambda whose score is within ``tie_tolerance`` of the best counts as a
    tie. The default ``"se"`` uses one standard error of the best lambda's
    fold scores; pass ``0.0`` for exact ties only.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"x has {x.shape[0]} rows, y has {y.shape[0]}")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("lambda grid must be a non-empty list")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("lambda grid must be positive and strictly ascending")
    if mode not in ("shared", "per_target"):
        raise ValueError(f"unknown mode {mode!r}")
    if folds is None:
        folds = make_folds(x.shape[0], 10)
    if len(folds) != x.shape[0]:
        raise ValueError(f"fold plan covers {len(folds)} rows, data has {x.shape[0]}")
    splits = list(folds.split())
    for k, (_, test) in enumerate(splits):
        if test.shape[0] < 2:
            raise ValueError(f"fold {k} has {test.shape[0]} sample(s); Pearson r needs >= 2")

    gram = xty = None
    if x.shape[1] <= x.shape[0] // 2:
        gram, xty = x.T @ x, x.T @ y
    # fold cells are independent; results are gathered in fold order
    fold_scores = np.stack(_map(lambda sp: _fold_cell(x, y, sp[0], sp[1], grid, gram, xty),
                                splits, n_jobs))
    mean = fold_scores.mean(axis=0)

    if mode == "shared":
        idx = _select(mean.mean(axis=1, keepdims=True),
                      fold_scores.mean(axis=2, keepdims=True), tie_tolerance)
        per_target_idx = np.full(y.shape[1], idx[0])
    else:
        idx = _select(mean, fold_scores, tie_tolerance)
        per_target_idx = idx
    lambdas = grid[idx]
    cv_scores = mean[per_target_idx, np.arange(y.shape[1])]

    preds = None
    if return_predictions:
        preds = np.empty_like(y)
        parts = _map(lambda sp: _fold_predictions(x, y, sp[0], sp[1], lambdas, gram, xty),
                     splits, n_jobs)
        for (_, test), p in zip(splits, parts):
            preds[test] = p
    return CVResult(grid, mean, fold_scores, lambdas, idx, cv_scores, preds)


def _map(fn, items, n_jobs):
    if n_jobs is not None and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def fit_ridge_cv(x, y, grid=DEFAULT_LAMBDA_GRID, folds: FoldPlan | None = None,
                 mode: str = "shared", tie_tolerance="se", n_jobs: int | None = 1,
                 return_cv: bool = False):
    """CV-select lambda(s), then refit on all rows."""
    cv = cv_select_lambda(x, y, grid, folds, mode, tie_tolerance,
                          return_predictions=return_cv, n_jobs=n_jobs)
    model = fit_ridge(x, y, cv.lambdas)
    model.cv_scores = cv.cv_scores
    model.meta.update(mode=mode, grid=[float(g) for g in cv.grid])
    return (model, cv) if return_cv else model


class RidgeCVRegressor(RegressorMixin, BaseEstimator):
    """Multi-target ridge with contiguous-fold CV over a lambda grid.

    Parameters
    ----------
    alphas : sequence of float
        Ascending lambda grid.
    n_folds : int
        Number of contiguous CV blocks.
    mode : {"shared", "per_target"}
        One lambda for all targets, or one per target.
    tie_tolerance : "se" or float
        Tie band used when choosing among near-equal CV scores.
    n_jobs : int
        Threads for the fold loop.
    """

    def __init__(self, alphas=DEFAULT_LAMBDA_GRID, n_folds=10, mode="shared",
                 tie_tolerance="se", n_jobs=1):
        self.alphas = alphas
        self.n_folds = n_folds
        self.mode = mode
        self.tie_tolerance = tie_tolerance
        self.n_jobs = n_jobs

    def fit(self, X, y, clips: ClipIndex | None = None):
        x = as_matrix(X)
        folds = make_folds(x.shape[0], self.n_folds, clips)
        self.model_, self.cv_ = fit_ridge_cv(x, y, self.alphas, folds, self.mode,
                                             self.tie_tolerance, self.n_jobs, return_cv=True)
        self.coef_ = self.model_.weights.T
        self.alpha_ = self.model_.lambdas
        self.cv_scores_ = self.model_.cv_scores
        self.oof_predictions_ = self.cv_.predictions
        self.n_features_in_ = x.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, X)
