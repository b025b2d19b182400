"""Voxel-history refinement: predict every voxel from the recent past of a
set of well-predicted voxels, then blend with the encoder prediction."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import ClipIndex, DelaySpec, as_matrix
from .regress import DEFAULT_LAMBDA_GRID, fit_ridge_cv, make_folds, make_lagged, predict


def select_top_voxels(accuracies, m: int) -> np.ndarray:
    """Indices of the ``m`` highest scores, best first; ties go to the lower index."""
    a = np.asarray(accuracies, dtype=float).ravel()
    if m > a.shape[0]:
        raise ValueError(f"cannot select {m} of {a.shape[0]} voxels")
    if m < 1:
        raise ValueError("must select at least one voxel")
    return np.argsort(-a, kind="stable")[:m]


class Vox2Vox(RegressorMixin, BaseEstimator):
    """Autoregressive ridge from lagged selected voxels onto all voxels.

    Trained on measured responses. At inference ``predict`` reads the lags
    from whatever matrix it is given (normally the encoder prediction) and
    never feeds its own output back.

    Parameters
    ----------
    n_select : int
        Number of source voxels; capped at the voxel count.
    delays : sequence of int
    alphas, n_folds, tie_tolerance, n_jobs
        As in :class:`encpipe.regress.RidgeCVRegressor` (shared lambda).
    """

    def __init__(self, n_select=2000, delays=(1, 2, 3), alphas=DEFAULT_LAMBDA_GRID,
                 n_folds=10, tie_tolerance="se", n_jobs=1):
        self.n_select = n_select
        self.delays = delays
        self.alphas = alphas
        self.n_folds = n_folds
        self.tie_tolerance = tie_tolerance
        self.n_jobs = n_jobs

    def fit(self, X, selection_scores=None, clips: ClipIndex | None = None, selected=None):
        """Fit on measured responses ``X``.

        Source voxels are ``selected`` if given, else the top ``n_select`` by
        ``selection_scores`` (e.g. the encoder's CV accuracy).
        """
        r = as_matrix(X, "responses")
        if selected is None:
            if selection_scores is None:
                raise ValueError("need selection_scores or selected")
            selected = select_top_voxels(selection_scores, min(int(self.n_select), r.shape[1]))
        selected = np.asarray(selected, dtype=int)
        if selected.size == 0 or np.unique(selected).size != selected.size:
            raise ValueError("selected voxels must be non-empty and distinct")
        self.selected_voxels_ = selected
        design = make_lagged(r[:, selected], DelaySpec.coerce(self.delays))
        folds = make_folds(r.shape[0], self.n_folds, clips)
        self.ridge_ = fit_ridge_cv(design, r, self.alphas, folds, "shared",
                                   self.tie_tolerance, self.n_jobs)
        self.ridge_.meta.update(delays=list(DelaySpec.coerce(self.delays)))
        self.cv_accuracy_ = self.ridge_.cv_scores
        self.n_voxels_ = r.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "ridge_")
        base = as_matrix(X, "base_prediction")
        if base.shape[1] != self.n_voxels_:
            raise ValueError(f"expected {self.n_voxels_} voxel columns, got {base.shape[1]}")
        return predict(self.ridge_, make_lagged(base[:, self.selected_voxels_],
                                                DelaySpec.coerce(self.delays)))


def train_vox2vox(responses, selected, config: dict | None = None,
                  clips: ClipIndex | None = None) -> Vox2Vox:
    return Vox2Vox(**(config or {})).fit(responses, clips=clips, selected=selected)


def apply_vox2vox(model: Vox2Vox, base_prediction) -> np.ndarray:
    return model.predict(base_prediction)


def combine_predictions(pred_a, acc_a, pred_b, acc_b) -> np.ndarray:
    """Per-voxel blend weighted by relative (clamped) accuracy.

    Voxels where both accuracies are <= 0 keep ``pred_a``.
    """
    a = as_matrix(pred_a, "pred_a")
    b = as_matrix(pred_b, "pred_b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    wa = np.clip(np.broadcast_to(np.asarray(acc_a, dtype=float), (a.shape[1],)), 0.0, None)
    wb = np.clip(np.broadcast_to(np.asarray(acc_b, dtype=float), (a.shape[1],)), 0.0, None)
    total = wa + wb
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.where(total > 0, wa / total, 1.0)
    fb = 1.0 - fa
    out = a * fa + b * fb
    # exact copies where one side carries all the weight
    out[:, fa == 1.0] = a[:, fa == 1.0]
    out[:, fb == 1.0] = b[:, fb == 1.0]
    return out
