"""Column-wise correlation helpers shared by the regression and scoring code."""

from __future__ import annotations

import numpy as np


def columnwise_pearson(a, b) -> np.ndarray:
    """Pearson r between matching columns of ``a`` and ``b``.

    Columns where either side has zero variance yield NaN.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise ValueError("Pearson correlation needs at least 2 samples")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    num = np.einsum("ij,ij->j", ac, bc)
    ssa = np.einsum("ij,ij->j", ac, ac)
    ssb = np.einsum("ij,ij->j", bc, bc)
    # variance that is zero up to rounding counts as zero
    n = a.shape[0]
    flat_a = ssa <= n * (1e-13 * np.abs(a).max(axis=0)) ** 2
    flat_b = ssb <= n * (1e-13 * np.abs(b).max(axis=0)) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        r = num / np.sqrt(ssa * ssb)
    r = np.where(flat_a | flat_b, np.nan, r)
    return np.clip(r, -1.0, 1.0)


def rankdata_average(x: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties get the average rank (column-wise for 2-D)."""
    from scipy.stats import rankdata

    return rankdata(x, method="average", axis=0)
