"""Scoring and statistics: accuracy, bootstrap comparison, individual
variability and training-size sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .core import ClipIndex, as_matrix
from .stats import columnwise_pearson, rankdata_average


def pearson(a, b) -> float:
    """Sample Pearson r; NaN when either vector has zero variance."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(columnwise_pearson(a, b)[0])


def spearman(a, b) -> float:
    """Pearson r of average ranks."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return pearson(rankdata_average(a), rankdata_average(b))


@dataclass
class AccuracyReport:
    per_target_r: np.ndarray  # NaN marks an undefined target
    mean_r: float
    n_samples: int
    n_undefined: int

    def rows(self):
        for j, r in enumerate(self.per_target_r):
            yield {"target": j, "r": None if math.isnan(r) else float(r)}

    def summary(self) -> dict:
        return {"mean_r": self.mean_r, "n_samples": self.n_samples,
                "n_targets": int(self.per_target_r.shape[0]), "n_undefined": self.n_undefined}


def accuracy_report(truth, estimate, exclude_rows=None) -> AccuracyReport:
    """Per-target Pearson r between measured and predicted/estimated series.

    Zero-variance targets are reported as undefined and left out of the mean.
    """
    t = as_matrix(truth, "truth")
    e = as_matrix(estimate, "estimate")
    if t.shape != e.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {e.shape}")
    if exclude_rows is not None:
        keep = np.setdiff1d(np.arange(t.shape[0]), np.asarray(exclude_rows, dtype=int))
        t, e = t[keep], e[keep]
    r = columnwise_pearson(t, e)
    undefined = int(np.isnan(r).sum())
    mean = float(np.nanmean(r)) if undefined < r.shape[0] else float("nan")
    return AccuracyReport(r, mean, t.shape[0], undefined)


def _mean_r_batch(truth, est, idx):
    # mean-over-targets Pearson r for each row of the resample index matrix
    t = truth[idx]  # (B, n, D)
    e = est[idx]
    tc = t - t.mean(axis=1, keepdims=True)
    ec = e - e.mean(axis=1, keepdims=True)
    num = np.einsum("bnd,bnd->bd", tc, ec)
    den = np.sqrt(np.einsum("bnd,bnd->bd", tc, tc) * np.einsum("bnd,bnd->bd", ec, ec))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = num / den
    # undefined r (degenerate resample) scores as 0
    r = np.where(den > 0, r, 0.0)
    return r.mean(axis=1)


def bootstrap_distribution(truth, est_a, est_b, n_boot: int = 1000, seed: int = 0,
                           unit: str = "timepoint", clips: ClipIndex | None = None,
                           batch: int = 200) -> np.ndarray:
    """Bootstrap samples of mean r(truth, a) - mean r(truth, b)."""
    t = as_matrix(truth, "truth")
    a = as_matrix(est_a, "est_a")
    b = as_matrix(est_b, "est_b")
    if not (t.shape == a.shape == b.shape):
        raise ValueError(f"shape mismatch: {t.shape}, {a.shape}, {b.shape}")
    if n_boot < 100:
        raise ValueError("n_boot must be >= 100")
    rng = np.random.default_rng(seed)
    n = t.shape[0]
    if unit == "timepoint":
        idx = rng.integers(0, n, size=(n_boot, n))
    elif unit == "clip":
        if clips is None or len(clips) != n:
            raise ValueError("clip resampling needs a clip index covering every row")
        runs = [np.arange(s, s + ln) for _, s, ln in clips.runs()]
        picks = rng.integers(0, len(runs), size=(n_boot, len(runs)))
        rows = [np.concatenate([runs[k] for k in p]) for p in picks]
        # clip resamples vary in length; trim/pad by cycling to n rows
        idx = np.stack([np.resize(r, n) for r in rows])
    else:
        raise ValueError(f"unknown bootstrap unit {unit!r}")
    out = np.empty(n_boot)
    for s in range(0, n_boot, batch):
        sl = idx[s:s + batch]
        out[s:s + batch] = _mean_r_batch(t, a, sl) - _mean_r_batch(t, b, sl)
    return out


def bootstrap_compare(truth, est_a, est_b, n_boot: int = 1000, seed: int = 0,
                      unit: str = "timepoint", clips: ClipIndex | None = None) -> float:
    """One-sided bootstrap p-value for "a scores higher than b".

    ``p = (#{delta* <= 0} + 1) / (n_boot + 1)``, so identical estimates give 1.
    """
    delta = bootstrap_distribution(truth, est_a, est_b, n_boot, seed, unit, clips)
    return float((np.count_nonzero(delta <= 0) + 1) / (n_boot + 1))


def variability_series(estimates: Sequence, window: int = 2, step: int = 1) -> np.ndarray:
    """Mean pairwise correlation distance across sources, per sliding window.

    Every source's window is flattened across rows and label dimensions
    before correlating. Output length is ``(T - window) // step + 1``.
    """
    mats = [as_matrix(e, f"estimates[{i}]") for i, e in enumerate(estimates)]
    if len(mats) < 2:
        raise ValueError("need at least 2 sources")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ValueError("all sources must share one shape")
    stack = np.stack(mats)  # (S, T, D)
    n_src, n, d = stack.shape
    if n < window:
        raise ValueError(f"series of {n} rows is shorter than the window ({window})")
    starts = range(0, n - window + 1, step)
    win = np.stack([stack[:, s:s + window].reshape(n_src, -1) for s in starts])  # (W, S, L)
    wc = win - win.mean(axis=2, keepdims=True)
    norm = np.sqrt(np.einsum("wsl,wsl->ws", wc, wc))
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = wc / norm[:, :, None]
    corr = np.einsum("wsl,wtl->wst", unit, unit)
    iu, ju = np.triu_indices(n_src, k=1)
    r = corr[:, iu, ju]
    scale = np.abs(win).max(axis=2)
    flat = norm <= np.sqrt(win.shape[2]) * 1e-13 * scale
    r = np.where(flat[:, iu] | flat[:, ju], 0.0, r)
    return np.clip(1.0 - r, 0.0, 2.0).mean(axis=1)


@dataclass
class VariabilityCorrelation:
    pearson_r: float
    spearman_rho: float
    t_stat: float
    p_value: float
    n: int


def variability_correlation(v1, v2) -> VariabilityCorrelation:
    """Pearson and Spearman correlation between two variability series,
    with a two-sided t-test on the Pearson r (``n - 2`` dof)."""
    a = np.asarray(v1, dtype=float).ravel()
    b = np.asarray(v2, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    n = a.shape[0]
    if n < 3:
        raise ValueError("need at least 3 windows")
    r = pearson(a, b)
    if math.isnan(r):
        raise ValueError("variability series has zero variance")
    rho = spearman(a, b)
    if abs(r) >= 1.0:
        t, p = math.copysign(math.inf, r), 0.0
    else:
        t = r * math.sqrt((n - 2) / (1 - r * r))
        p = float(2 * sps.t.sf(abs(t), n - 2))
    return VariabilityCorrelation(r, rho, t, p, n)


@dataclass
class SweepRow:
    size: int
    mean_r: float
    sd_r: float
    scores: list


def sample_size_sweep(train_x, train_y, test_x, test_y, sizes: Sequence[int], n_seeds: int,
                      trainer: Callable, clips: ClipIndex | None = None, seed: int = 0,
                      min_rows: int = 20, scorer: Callable | None = None) -> list[SweepRow]:
    """Train on growing subsets of the training rows and score on a fixed test set.

    For each seed the training clips are shuffled once; a size ``s`` takes
    whole clips from the front of that order until ``s`` rows are covered
    (the last clip is cut to hit ``s`` exactly). The chosen rows are passed
    to the trainer in their original time order. Without ``clips`` the
    series is treated as one clip and each seed draws a contiguous window
    of ``s`` rows, which keeps lag structure intact. ``trainer(x, y, clips)``
    must return an object with ``predict``. The score is the mean
    per-dimension Pearson r on the test set unless ``scorer`` is given.
    """
    sizes = [int(s) for s in sizes]
    n = len(train_y) if not isinstance(train_y, np.ndarray) else train_y.shape[0]
    if any(s > n for s in sizes):
        raise ValueError(f"sweep size exceeds the {n} available training rows")
    if any(s < min_rows for s in sizes):
        raise ValueError(f"sweep sizes must be >= {min_rows} rows")
    runs = None if clips is None else clips.runs()
    if scorer is None:
        def scorer(pred, truth):
            return accuracy_report(truth, pred).mean_r

    def subset(arr, rows):
        if isinstance(arr, (list, tuple)):
            return [np.asarray(a)[rows] for a in arr]
        return np.asarray(arr)[rows]

    table = []
    per_size = {s: [] for s in sizes}
    for k in range(n_seeds):
        rng = np.random.default_rng([seed, k])
        if runs is not None:
            order = rng.permutation(len(runs))
            rows_all = np.concatenate([np.arange(runs[i][1], runs[i][1] + runs[i][2]) for i in order])
        else:
            u = rng.random()
        for s in sizes:
            if runs is not None:
                rows = np.sort(rows_all[:s])
                sub_clips = clips.subset(rows)
            else:
                start = int(u * (n - s + 1))
                rows = np.arange(start, start + s)
                sub_clips = None
            model = trainer(subset(train_x, rows), subset(train_y, rows), sub_clips)
            per_size[s].append(float(scorer(model.predict(test_x), np.asarray(test_y))))
    for s in sizes:
        v = np.array(per_size[s])
        table.append(SweepRow(s, float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0,
                              per_size[s]))
    return table
