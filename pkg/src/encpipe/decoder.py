"""Label estimation: voxel-to-label readout, the direct feature-to-label
baseline (TL), decoding from measured responses (BD) and the end-to-end
brain-mediated pipeline (BTL)."""

from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import ClipIndex, DelaySpec, as_matrix
from .encoder import EncoderEnsemble, as_layer_dict, compute_ensemble_weights
from .preprocess import ZScorer
from .regress import (DEFAULT_LAMBDA_GRID, apply_pca, fit_pca, fit_ridge_cv, make_folds,
                      make_lagged, predict)
from .voxnet import Vox2Vox, combine_predictions, select_top_voxels

logger = logging.getLogger(__name__)


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name):
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as e:
        raise PipelineStageError(name, e) from e


def lead_delays(leads) -> DelaySpec:
    """Future offsets ``t + k`` expressed in lag convention (``-k``)."""
    return DelaySpec(tuple(sorted(-int(k) for k in leads)))


class Vox2Lab(RegressorMixin, BaseEstimator):
    """Ridge readout of labels at ``t`` from responses at ``t + k`` for each lead ``k``.

    Lambdas are cross-validated separately per label dimension. Near the end
    of a series the future responses are zero-padded, which attenuates the
    last ``max(leads)`` estimates.

    Parameters
    ----------
    leads : sequence of int
        Look-ahead offsets in samples.
    n_components : int or None
        Reduce the responses to this many principal components first.
    alphas, n_folds, tie_tolerance, n_jobs
        Cross-validation settings.
    """

    def __init__(self, leads=(3, 4, 5), n_components=None, alphas=DEFAULT_LAMBDA_GRID,
                 n_folds=10, tie_tolerance="se", n_jobs=1):
        self.leads = leads
        self.n_components = n_components
        self.alphas = alphas
        self.n_folds = n_folds
        self.tie_tolerance = tie_tolerance
        self.n_jobs = n_jobs

    def _design(self, r):
        if self.pca_ is not None:
            r = apply_pca(r, self.pca_)
        return make_lagged(r, lead_delays(self.leads))

    def fit(self, X, y, clips: ClipIndex | None = None):
        r = as_matrix(X, "responses")
        lab = as_matrix(y, "labels")
        if r.shape[0] != lab.shape[0]:
            raise ValueError(f"{r.shape[0]} response rows vs {lab.shape[0]} label rows")
        self.pca_ = None
        if self.n_components is not None:
            self.pca_ = fit_pca(r, min(int(self.n_components), *r.shape))
        folds = make_folds(r.shape[0], self.n_folds, clips)
        self.ridge_ = fit_ridge_cv(self._design(r), lab, self.alphas, folds, "per_target",
                                   self.tie_tolerance, self.n_jobs)
        self.ridge_.meta.update(leads=[int(k) for k in self.leads])
        self.cv_accuracy_ = self.ridge_.cv_scores
        self.n_features_in_ = r.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "ridge_")
        r = as_matrix(X, "responses")
        if r.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} response columns, got {r.shape[1]}")
        return predict(self.ridge_, self._design(r))

    def boundary_rows(self, n_samples: int) -> np.ndarray:
        """Trailing rows whose estimate uses zero-padded future samples."""
        k = max(int(v) for v in self.leads)
        return np.arange(max(0, n_samples - k), n_samples)


class BrainDecoder(Vox2Lab):
    """:class:`Vox2Lab` fitted on measured instead of predicted responses."""


def train_vox2lab(responses, labels, config: dict | None = None,
                  clips: ClipIndex | None = None) -> Vox2Lab:
    return Vox2Lab(**(config or {})).fit(responses, labels, clips)


def estimate_labels(model: Vox2Lab, responses) -> np.ndarray:
    return model.predict(responses)


class TransferLearning(BaseEstimator):
    """Direct feature-to-label regression, one model per layer, averaged per
    label dimension by CV estimation accuracy.

    Parameters
    ----------
    mode : {"single", "multi"}
        ``"single"`` uses features at ``t`` only; ``"multi"`` uses
        ``t - 1, t, t + 1``.
    n_components : int
    alphas, n_folds, tie_tolerance, n_jobs
    """

    def __init__(self, mode="single", n_components=1000, alphas=DEFAULT_LAMBDA_GRID,
                 n_folds=10, tie_tolerance="se", n_jobs=1):
        self.mode = mode
        self.n_components = n_components
        self.alphas = alphas
        self.n_folds = n_folds
        self.tie_tolerance = tie_tolerance
        self.n_jobs = n_jobs

    @property
    def offsets(self) -> DelaySpec:
        if self.mode == "single":
            return DelaySpec((0,))
        if self.mode == "multi":
            return DelaySpec((-1, 0, 1))
        raise ValueError(f"unknown TL mode {self.mode!r}")

    def fit(self, features, y, clips: ClipIndex | None = None):
        feats = as_layer_dict(features)
        lab = as_matrix(y, "labels")
        offsets = self.offsets
        self.layers_ = {}
        acc = []
        for name, x in feats.items():
            if x.shape[0] != lab.shape[0]:
                raise ValueError(f"layer {name}: {x.shape[0]} rows vs {lab.shape[0]} label rows")
            pca = fit_pca(x, min(int(self.n_components), *x.shape))
            folds = make_folds(x.shape[0], self.n_folds, clips)
            ridge = fit_ridge_cv(make_lagged(apply_pca(x, pca), offsets), lab, self.alphas, folds,
                                 "per_target", self.tie_tolerance, self.n_jobs)
            self.layers_[name] = (pca, ridge)
            acc.append(ridge.cv_scores)
        self.layer_accuracy_ = np.column_stack(acc)  # (n_labels, n_layers)
        self.weights_ = compute_ensemble_weights(self.layer_accuracy_)
        return self

    def predict_layers(self, features) -> np.ndarray:
        check_is_fitted(self, "layers_")
        feats = as_layer_dict(features, None if isinstance(features, Mapping) else list(self.layers_))
        missing = [n for n in self.layers_ if n not in feats]
        if missing:
            raise KeyError(f"missing layer input(s): {missing}")
        return np.stack([predict(ridge, make_lagged(apply_pca(feats[n], pca), self.offsets))
                         for n, (pca, ridge) in self.layers_.items()], axis=-1)

    def predict(self, features):
        return np.einsum("tdl,dl->td", self.predict_layers(features), self.weights_)


def train_tl(features_per_layer, labels, mode: str = "single", config: dict | None = None,
             clips: ClipIndex | None = None) -> TransferLearning:
    return TransferLearning(mode=mode, **(config or {})).fit(features_per_layer, labels, clips)


class BTLPipeline(BaseEstimator):
    """Features -> predicted responses -> (optional vox2vox) -> labels.

    The brain stages (:meth:`fit_brain`) need measured responses; the label
    stage (:meth:`fit_labels`) only needs features and labels, because it is
    trained on responses *predicted* for those stimuli. :meth:`fit` runs
    both on one dataset.

    With ``voxel_pca`` set, measured responses are projected onto that many
    principal components before any model is trained; every stage then
    works in component space, and vox2vox uses the ``voxel_pca_select``
    best-predicted components as sources.

    Labels are z-scored with training statistics; :meth:`predict` returns
    z-scored estimates.
    """

    def __init__(self, n_components=1000, encoder_delays=(3, 4, 5, 6), use_vox2vox=True,
                 n_select=2000, vox2vox_delays=(1, 2, 3), leads=(3, 4, 5), voxel_pca=None,
                 voxel_pca_select=10, alphas=DEFAULT_LAMBDA_GRID, n_folds=10,
                 tie_tolerance="se", n_jobs=1):
        self.n_components = n_components
        self.encoder_delays = encoder_delays
        self.use_vox2vox = use_vox2vox
        self.n_select = n_select
        self.vox2vox_delays = vox2vox_delays
        self.leads = leads
        self.voxel_pca = voxel_pca
        self.voxel_pca_select = voxel_pca_select
        self.alphas = alphas
        self.n_folds = n_folds
        self.tie_tolerance = tie_tolerance
        self.n_jobs = n_jobs

    def _cv(self):
        return dict(alphas=self.alphas, n_folds=self.n_folds,
                    tie_tolerance=self.tie_tolerance, n_jobs=self.n_jobs)

    def fit_brain(self, features, responses, clips: ClipIndex | None = None):
        r = as_matrix(responses, "responses")
        self.voxel_pca_ = None
        with _stage("voxel-pca"):
            if self.voxel_pca is not None:
                self.voxel_pca_ = fit_pca(r, min(int(self.voxel_pca), *r.shape))
                r = apply_pca(r, self.voxel_pca_)
        with _stage("cnn2vox"):
            self.encoder_ = EncoderEnsemble(self.n_components, self.encoder_delays,
                                            **self._cv()).fit(features, r, clips)
        self.vox2vox_ = None
        if self.use_vox2vox:
            with _stage("vox2vox"):
                m = self.voxel_pca_select if self.voxel_pca is not None else self.n_select
                sel = select_top_voxels(self.encoder_.cv_accuracy_, min(int(m), r.shape[1]))
                self.vox2vox_ = Vox2Vox(m, self.vox2vox_delays, **self._cv()).fit(
                    r, clips=clips, selected=sel)
        return self

    def target_responses(self, responses) -> np.ndarray:
        """Measured responses in the space the brain stages predict."""
        r = as_matrix(responses, "responses")
        return r if self.voxel_pca_ is None else apply_pca(r, self.voxel_pca_)

    def predict_responses(self, features) -> np.ndarray:
        check_is_fitted(self, "encoder_")
        with _stage("cnn2vox"):
            base = self.encoder_.predict(features)
        if self.vox2vox_ is None:
            return base
        with _stage("vox2vox"):
            ar = self.vox2vox_.predict(base)
            return combine_predictions(base, self.encoder_.cv_accuracy_, ar, self.vox2vox_.cv_accuracy_)

    def fit_labels(self, features, labels, clips: ClipIndex | None = None):
        lab = as_matrix(labels, "labels")
        with _stage("label-zscore"):
            self.label_scaler_ = ZScorer().fit(lab)
        pred = self.predict_responses(features)
        with _stage("vox2lab"):
            self.vox2lab_ = Vox2Lab(self.leads, None, **self._cv()).fit(
                pred, self.label_scaler_.transform(lab), clips)
        return self

    def fit(self, features, responses, labels, clips: ClipIndex | None = None):
        return self.fit_brain(features, responses, clips).fit_labels(features, labels, clips)

    def predict(self, features) -> np.ndarray:
        check_is_fitted(self, "vox2lab_")
        pred = self.predict_responses(features)
        with _stage("vox2lab"):
            return self.vox2lab_.predict(pred)


def run_btl_pipeline(bundle: BTLPipeline, features_per_layer) -> np.ndarray:
    return bundle.predict(features_per_layer)


def average_estimates(estimates: Sequence) -> np.ndarray:
    """Mean over per-participant estimates of identical shape."""
    mats = [as_matrix(e) for e in estimates]
    if not mats:
        raise ValueError("no estimates to average")
    if any(m.shape != mats[0].shape for m in mats):
        raise ValueError("estimates differ in shape")
    return np.mean(mats, axis=0)
