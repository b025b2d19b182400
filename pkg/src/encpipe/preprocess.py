"""Signal and label conditioning as pure matrix transforms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import ClipIndex, as_matrix


@dataclass(frozen=True)
class ZScoreStats:
    means: np.ndarray
    stds: np.ndarray

    def to_dict(self):
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["means"], dtype=float), np.asarray(d["stds"], dtype=float))


def fit_zscore(m) -> ZScoreStats:
    """Per-column mean and population standard deviation."""
    x = as_matrix(m)
    if x.shape[0] < 2:
        raise ValueError("z-scoring needs at least 2 rows")
    means, stds = x.mean(axis=0), x.std(axis=0)
    # exactly constant columns: no rounding residue in either statistic
    const = np.ptp(x, axis=0) == 0
    means[const], stds[const] = x[0, const], 0.0
    return ZScoreStats(means, stds)


def apply_zscore(m, stats: ZScoreStats) -> np.ndarray:
    """Standardize with precomputed stats; zero-std columns become zeros."""
    x = as_matrix(m)
    if x.shape[1] != stats.means.shape[0]:
        raise ValueError(f"matrix has {x.shape[1]} columns, stats have {stats.means.shape[0]}")
    out = x - stats.means
    ok = stats.stds > 0
    out[:, ok] /= stats.stds[ok]
    out[:, ~ok] = 0.0
    return out


class ZScorer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_zscore` / :func:`apply_zscore`."""

    def fit(self, X, y=None):
        stats = fit_zscore(X)
        self.mean_ = stats.means
        self.scale_ = stats.stds
        self.n_features_in_ = stats.means.shape[0]
        return self

    @property
    def stats_(self) -> ZScoreStats:
        check_is_fitted(self, "mean_")
        return ZScoreStats(self.mean_, self.scale_)

    def transform(self, X):
        return apply_zscore(X, self.stats_)

    def inverse_transform(self, X):
        x = as_matrix(X)
        return x * self.scale_ + self.mean_


def _running_median(col: np.ndarray, window: int) -> np.ndarray:
    # centered window [t - before, t + after], truncated at the edges
    before = (window - 1) // 2
    after = window - 1 - before
    padded = np.concatenate([np.full(before, np.nan), col, np.full(after, np.nan)])
    windows = np.lib.stride_tricks.sliding_window_view(padded, window)
    return np.nanmedian(windows, axis=1)


def detrend_median(m, window_s: int = 120) -> np.ndarray:
    """Subtract a centered running median from every column.

    Near the series edges the window shrinks to the available samples.
    For even windows the extra sample sits after the center.
    """
    if window_s < 1:
        raise ValueError("window_s must be >= 1")
    x = as_matrix(m)
    trend = np.column_stack([_running_median(x[:, j], int(window_s)) for j in range(x.shape[1])])
    return x - trend


def oversample_labels(m, factor: int) -> np.ndarray:
    """Repeat each row ``factor`` times (e.g. 2-s ratings to 1-s samples)."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    return np.repeat(as_matrix(m), int(factor), axis=0)


def fill_clipwise(values: Mapping[str, float], idx: ClipIndex) -> np.ndarray:
    """Broadcast one value per clip onto every sample of that clip."""
    missing = [c for c in idx.clips if c not in values]
    if missing:
        raise KeyError(f"no value for clip(s): {missing}")
    return np.array([[float(values[c])] for c in idx.clip_ids])


def log_transform(m) -> np.ndarray:
    x = as_matrix(m)
    bad = np.argwhere(x <= 0)
    if bad.size:
        r, c = bad[0]
        raise ValueError(f"log of non-positive value {x[r, c]!r} at row {r}, col {c}")
    return np.log(x)


def aggregate_word_vectors(descriptions: Sequence[Sequence[Sequence[Sequence[float]]]]) -> np.ndarray:
    """Average words within each description, then descriptions within a scene.

    ``descriptions[s][d]`` is the list of word vectors of description ``d``
    for scene ``s``. Returns one row per scene.
    """
    rows = []
    dim = None
    for s, scene in enumerate(descriptions):
        if len(scene) == 0:
            raise ValueError(f"scene {s} has no descriptions")
        means = []
        for d, words in enumerate(scene):
            w = np.asarray(words, dtype=float)
            if w.ndim != 2 or w.shape[0] == 0:
                raise ValueError(f"scene {s}, description {d} has no word vectors")
            if dim is None:
                dim = w.shape[1]
            elif w.shape[1] != dim:
                raise ValueError(
                    f"scene {s}, description {d}: vector dimension {w.shape[1]} != {dim}")
            means.append(w.mean(axis=0))
        rows.append(np.mean(means, axis=0))
    if not rows:
        raise ValueError("no scenes given")
    return np.vstack(rows)
