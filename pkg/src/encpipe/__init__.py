"""encpipe: feature-to-brain-to-label regression pipelines for time series.

Stages
------
* :class:`EncoderEnsemble` maps per-layer stimulus features to voxel
  responses (PCA, lag embedding, cross-validated ridge, accuracy-weighted
  layer average).
* :class:`Vox2Vox` refines predicted responses from the recent history of
  well-predicted voxels.
* :class:`Vox2Lab` reads labels out of (predicted) responses a few
  samples ahead.
* :class:`BTLPipeline` chains the three; :class:`TransferLearning` is the
  direct feature-to-label baseline.
"""

from .core import (ClipIndex, DelaySpec, MatrixFormatError, TimeSeriesMatrix, load_clip_index,
                   load_matrix, save_clip_index, save_matrix, split_by_clips)
from .decoder import (BrainDecoder, BTLPipeline, PipelineStageError, TransferLearning, Vox2Lab,
                      average_estimates, estimate_labels, run_btl_pipeline, train_tl,
                      train_vox2lab)
from .encoder import (EncoderEnsemble, LayerEncoder, compute_ensemble_weights,
                      ensemble_predict, train_layer_encoder)
from .eval import (AccuracyReport, accuracy_report, bootstrap_compare, sample_size_sweep,
                   variability_correlation, variability_series)
from .preprocess import (ZScorer, aggregate_word_vectors, apply_zscore, detrend_median,
                         fill_clipwise, fit_zscore, log_transform, oversample_labels)
from .regress import (DEFAULT_LAMBDA_GRID, LagEmbedder, RidgeCVRegressor, cv_select_lambda,
                      fit_pca, fit_ridge, fit_ridge_cv, make_folds, make_lagged)
from .synth import SynthConfig, SynthWorld, generate
from .voxnet import Vox2Vox, apply_vox2vox, combine_predictions, select_top_voxels, train_vox2vox

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport", "BTLPipeline", "BrainDecoder", "ClipIndex", "DEFAULT_LAMBDA_GRID",
    "DelaySpec", "EncoderEnsemble", "LagEmbedder", "LayerEncoder", "MatrixFormatError",
    "PipelineStageError", "RidgeCVRegressor", "SynthConfig", "SynthWorld", "TimeSeriesMatrix",
    "TransferLearning", "Vox2Lab", "Vox2Vox", "ZScorer", "accuracy_report",
    "aggregate_word_vectors", "apply_vox2vox", "apply_zscore", "average_estimates",
    "bootstrap_compare", "combine_predictions", "compute_ensemble_weights",
    "cv_select_lambda", "detrend_median", "ensemble_predict", "estimate_labels",
    "fill_clipwise", "fit_pca", "fit_ridge", "fit_ridge_cv", "fit_zscore", "generate",
    "load_clip_index", "load_matrix", "log_transform", "make_folds", "make_lagged",
    "oversample_labels", "run_btl_pipeline", "sample_size_sweep", "save_clip_index",
    "save_matrix", "select_top_voxels", "split_by_clips", "train_layer_encoder", "train_tl",
    "train_vox2lab", "train_vox2vox", "variability_correlation", "variability_series",
]
