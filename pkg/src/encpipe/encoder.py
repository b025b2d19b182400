"""Feature-to-voxel encoding: one PCA + lagged-ridge model per feature layer,
merged per voxel by cross-validated accuracy."""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import ClipIndex, DelaySpec, as_matrix
from .regress import (DEFAULT_LAMBDA_GRID, apply_pca, fit_pca, fit_ridge_cv, make_folds,
                      make_lagged, predict)
from .stats import columnwise_pearson

logger = logging.getLogger(__name__)


def compute_ensemble_weights(accuracies) -> np.ndarray:
    """Row-normalize accuracies into convex weights.

    Negative accuracies are clamped to 0 first; a row whose clamped
    accuracies are all 0 gets uniform weights.

    >>> compute_ensemble_weights([[0.5, -0.1], [-0.2, -0.3]])
    array([[1. , 0. ],
           [0.5, 0.5]])
    """
    a = np.clip(as_matrix(accuracies, "accuracies"), 0.0, None)
    total = a.sum(axis=1, keepdims=True)
    uniform = np.full_like(a, 1.0 / a.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(total > 0, a / total, uniform)
    return w


def as_layer_dict(features, names: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Normalize a mapping or a sequence of per-layer matrices to a dict."""
    if isinstance(features, Mapping):
        return {str(k): as_matrix(v, f"features[{k!r}]") for k, v in features.items()}
    mats = list(features)
    if names is None:
        names = [f"layer{i}" for i in range(len(mats))]
    if len(names) != len(mats):
        raise ValueError(f"{len(mats)} feature matrices for {len(names)} layer names")
    return {n: as_matrix(m, f"features[{n!r}]") for n, m in zip(names, mats)}


class LayerEncoder(RegressorMixin, BaseEstimator):
    """PCA-reduced, lag-embedded ridge map from one feature layer to all voxels.

    Parameters
    ----------
    layer_name : str
    n_components : int
        PCA target dimensionality; capped at ``min(T, D)`` of the training
        features.
    delays : sequence of int
        Feature lags in samples (positive = past).
    alphas : sequence of float
        Ascending ridge lambda grid. One lambda is shared by all voxels.
    n_folds : int
    tie_tolerance : "se" or float
    n_jobs : int

    Attributes
    ----------
    pca_ : PCAModel
    ridge_ : RidgeModel
    cv_accuracy_ : ndarray of shape (n_voxels,)
        Fold-mean Pearson r at the selected lambda.
    oof_predictions_ : ndarray of shape (n_samples, n_voxels)
        Out-of-fold predictions at the selected lambda.
    """

    def __init__(self, layer_name="layer", n_components=1000, delays=(3, 4, 5, 6),
                 alphas=DEFAULT_LAMBDA_GRID, n_folds=10, tie_tolerance="se", n_jobs=1):
        self.layer_name = layer_name
        self.n_components = n_components
        self.delays = delays
        self.alphas = alphas
        self.n_folds = n_folds
        self.tie_tolerance = tie_tolerance
        self.n_jobs = n_jobs

    def fit(self, X, y, clips: ClipIndex | None = None):
        x = as_matrix(X, "features")
        r = as_matrix(y, "responses")
        if x.shape[0] != r.shape[0]:
            raise ValueError(f"{self.layer_name}: {x.shape[0]} feature rows vs {r.shape[0]} response rows")
        k = min(int(self.n_components), x.shape[0], x.shape[1])
        self.pca_ = fit_pca(x, k)
        design = make_lagged(apply_pca(x, self.pca_), DelaySpec.coerce(self.delays))
        folds = make_folds(x.shape[0], self.n_folds, clips)
        self.ridge_, cv = fit_ridge_cv(design, r, self.alphas, folds, "shared",
                                       self.tie_tolerance, self.n_jobs, return_cv=True)
        self.ridge_.meta.update(layer_name=self.layer_name, delays=list(DelaySpec.coerce(self.delays)))
        self.cv_accuracy_ = cv.cv_scores
        self.oof_predictions_ = cv.predictions
        self.folds_ = folds
        self.n_features_in_ = x.shape[1]
        logger.info("layer %s: %d PCs, lambda=%g, mean CV r=%.4f",
                    self.layer_name, k, self.ridge_.lambdas[0], float(np.mean(cv.cv_scores)))
        return self

    def predict(self, X):
        check_is_fitted(self, "ridge_")
        z = apply_pca(X, self.pca_)
        return predict(self.ridge_, make_lagged(z, DelaySpec.coerce(self.delays)))


def _fold_mean_pearson(pred, truth, folds) -> np.ndarray:
    scores = [np.nan_to_num(columnwise_pearson(pred[te], truth[te]), nan=0.0)
              for _, te in folds.split()]
    return np.mean(scores, axis=0)


class EncoderEnsemble(BaseEstimator):
    """Per-voxel accuracy-weighted average of :class:`LayerEncoder` predictions.

    ``fit`` takes a mapping ``layer_name -> feature matrix`` (or a list, in
    which case layers are named ``layer0, layer1, ...``). Every layer shares
    the hyperparameters given here.

    Attributes
    ----------
    layers_ : dict of LayerEncoder
    weights_ : ndarray of shape (n_voxels, n_layers)
    layer_accuracy_ : ndarray of shape (n_voxels, n_layers)
    cv_accuracy_ : ndarray of shape (n_voxels,)
        Fold-mean r of the weighted out-of-fold ensemble prediction.
    """

    def __init__(self, n_components=1000, delays=(3, 4, 5, 6), alphas=DEFAULT_LAMBDA_GRID,
                 n_folds=10, tie_tolerance="se", n_jobs=1):
        self.n_components = n_components
        self.delays = delays
        self.alphas = alphas
        self.n_folds = n_folds
        self.tie_tolerance = tie_tolerance
        self.n_jobs = n_jobs

    def fit(self, features, y, clips: ClipIndex | None = None):
        feats = as_layer_dict(features)
        if not feats:
            raise ValueError("no feature layers given")
        r = as_matrix(y, "responses")
        self.layers_ = {}
        for name, x in feats.items():
            enc = LayerEncoder(name, self.n_components, self.delays, self.alphas,
                               self.n_folds, self.tie_tolerance, self.n_jobs)
            self.layers_[name] = enc.fit(x, r, clips)
        self.layer_accuracy_ = np.column_stack([e.cv_accuracy_ for e in self.layers_.values()])
        self.weights_ = compute_ensemble_weights(self.layer_accuracy_)
        oof = np.stack([e.oof_predictions_ for e in self.layers_.values()], axis=-1)
        self.oof_predictions_ = np.einsum("tvl,vl->tv", oof, self.weights_)
        folds = next(iter(self.layers_.values())).folds_
        self.cv_accuracy_ = _fold_mean_pearson(self.oof_predictions_, r, folds)
        self.n_voxels_ = r.shape[1]
        return self

    @property
    def layer_names(self) -> list[str]:
        check_is_fitted(self, "layers_")
        return list(self.layers_)

    def predict_layers(self, features) -> np.ndarray:
        """Per-layer predictions stacked on the last axis: (T, N, L)."""
        check_is_fitted(self, "layers_")
        feats = as_layer_dict(features, names=self.layer_names if not isinstance(features, Mapping) else None)
        missing = [n for n in self.layers_ if n not in feats]
        if missing:
            raise KeyError(f"missing layer input(s): {missing}")
        preds = [enc.predict(feats[name]) for name, enc in self.layers_.items()]
        rows = {p.shape[0] for p in preds}
        if len(rows) != 1:
            raise ValueError(f"layer feature matrices disagree on row count: {sorted(rows)}")
        return np.stack(preds, axis=-1)

    def predict(self, features):
        return np.einsum("tvl,vl->tv", self.predict_layers(features), self.weights_)

    @classmethod
    def from_parts(cls, layers: Mapping[str, LayerEncoder], weights, cv_accuracy=None, **params):
        ens = cls(**params)
        ens.layers_ = dict(layers)
        ens.weights_ = as_matrix(weights)
        ens.layer_accuracy_ = np.column_stack([e.cv_accuracy_ for e in ens.layers_.values()])
        ens.cv_accuracy_ = None if cv_accuracy is None else np.asarray(cv_accuracy, dtype=float)
        ens.n_voxels_ = ens.weights_.shape[0]
        return ens


def train_layer_encoder(features, responses, config: dict | None = None,
                        clips: ClipIndex | None = None) -> LayerEncoder:
    return LayerEncoder(**(config or {})).fit(features, responses, clips)


def ensemble_predict(ens: EncoderEnsemble, features_per_layer) -> np.ndarray:
    return ens.predict(features_per_layer)
