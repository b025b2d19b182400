"""Shared data model and on-disk matrix formats.

All series are sampled at 1 Hz: one row per second, one column per channel
(feature dimension, voxel or label dimension).
"""

from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EMX_MAGIC = b"EMX1"
_EMX_HEADER = struct.Struct("<4sQQ")


class MatrixFormatError(ValueError):
    """Raised when a matrix file does not conform to its declared format."""


@dataclass(frozen=True, eq=False)
class TimeSeriesMatrix:
    """A T x D matrix of float64 values with optional channel names.

    The underlying array is copied on construction and marked read-only.
    ``np.asarray(m)`` returns that array, so a ``TimeSeriesMatrix`` can be
    passed anywhere an ndarray is accepted.
    """

    data: np.ndarray
    channel_names: tuple[str, ...] | None = None

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got {arr.ndim} dimensions")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"matrix must have at least one row and column, got {arr.shape}")
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            r, c = bad[0]
            raise ValueError(f"non-finite value at row {r}, col {c}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        if self.channel_names is not None:
            names = tuple(str(n) for n in self.channel_names)
            if len(names) != arr.shape[1]:
                raise ValueError(
                    f"{len(names)} channel names for {arr.shape[1]} columns")
            object.__setattr__(self, "channel_names", names)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is not None and np.dtype(dtype) != self.data.dtype:
            return self.data.astype(dtype)
        if copy:
            return self.data.copy()
        return self.data

    def __len__(self):
        return self.rows

    def take_rows(self, rows) -> "TimeSeriesMatrix":
        return TimeSeriesMatrix(self.data[np.asarray(rows, dtype=int)], self.channel_names)

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesMatrix):
            return NotImplemented
        return (self.channel_names == other.channel_names
                and self.shape == other.shape
                and np.array_equal(self.data, other.data))

    __hash__ = None


def as_matrix(x, name: str = "X") -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array.

    1-D input becomes a single column.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        r, c = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(f"{name} has a non-finite value at row {r}, col {c}")
    return arr


@dataclass(frozen=True)
class DelaySpec:
    """Ordered integer sample offsets.

    Positive values look into the past (row ``t`` reads ``t - k``), negative
    values look into the future.
    """

    delays: tuple[int, ...]

    def __post_init__(self):
        d = tuple(int(k) for k in self.delays)
        if not d:
            raise ValueError("delay set must be non-empty")
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"delays must be strictly increasing without duplicates: {d}")
        object.__setattr__(self, "delays", d)

    @classmethod
    def coerce(cls, delays) -> "DelaySpec":
        if isinstance(delays, DelaySpec):
            return delays
        return cls(tuple(delays))

    def __iter__(self):
        return iter(self.delays)

    def __len__(self):
        return len(self.delays)

    @property
    def max_abs(self) -> int:
        return max(abs(k) for k in self.delays)


@dataclass(frozen=True)
class ClipIndex:
    """Maps each sample (row) to the clip it came from.

    Clips must occupy contiguous runs of rows.
    """

    clip_ids: tuple[str, ...]
    contiguous: bool = field(default=True, init=False)

    def __post_init__(self):
        ids = tuple(str(c) for c in self.clip_ids)
        if not ids:
            raise ValueError("clip index is empty")
        seen = set()
        prev = None
        for i, c in enumerate(ids):
            if c != prev:
                if c in seen:
                    raise ValueError(f"clip {c!r} is not contiguous (re-appears at row {i})")
                seen.add(c)
                prev = c
        object.__setattr__(self, "clip_ids", ids)

    @classmethod
    def from_lengths(cls, lengths: Sequence[int], names: Sequence[str] | None = None) -> "ClipIndex":
        if names is None:
            names = [f"clip{i:04d}" for i in range(len(lengths))]
        ids: list[str] = []
        for name, n in zip(names, lengths):
            if n < 1:
                raise ValueError(f"clip {name!r} has non-positive length {n}")
            ids.extend([str(name)] * int(n))
        return cls(tuple(ids))

    @classmethod
    def uniform(cls, n_samples: int, clip_length: int) -> "ClipIndex":
        full, rest = divmod(n_samples, clip_length)
        lengths = [clip_length] * full + ([rest] if rest else [])
        return cls.from_lengths(lengths)

    def __len__(self):
        return len(self.clip_ids)

    @property
    def clips(self) -> list[str]:
        """Clip ids in order of first appearance."""
        return list(dict.fromkeys(self.clip_ids))

    def runs(self) -> list[tuple[str, int, int]]:
        """``(clip_id, start_row, length)`` per clip, in row order."""
        out = []
        start = 0
        ids = self.clip_ids
        for i in range(1, len(ids) + 1):
            if i == len(ids) or ids[i] != ids[start]:
                out.append((ids[start], start, i - start))
                start = i
        return out

    def rows_of(self, clips: Iterable[str]) -> np.ndarray:
        wanted = set(clips)
        return np.array([i for i, c in enumerate(self.clip_ids) if c in wanted], dtype=int)

    def subset(self, rows) -> "ClipIndex":
        return ClipIndex(tuple(self.clip_ids[i] for i in rows))


# ---------------------------------------------------------------------------
# file formats


def _parse_csv(text: str, source: str) -> TimeSeriesMatrix:
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MatrixFormatError(f"{source}: empty file")
    rows = list(csv.reader(lines))
    names = None
    first = rows[0]

    def _is_number(s):
        try:
            float(s)
            return True
        except ValueError:
            return False

    if not all(_is_number(c) for c in first):
        if any(not c.strip() for c in first):
            raise MatrixFormatError(f"{source}: malformed header at line 1 (empty column name)")
        names = [c.strip() for c in first]
        body = rows[1:]
        offset = 2
    else:
        body = rows
        offset = 1
    if not body:
        raise MatrixFormatError(f"{source}: no data rows")
    width = len(names) if names is not None else len(body[0])
    values = np.empty((len(body), width), dtype=np.float64)
    for i, row in enumerate(body):
        line_no = i + offset
        if len(row) != width:
            raise MatrixFormatError(f"{source}: ragged row at line {line_no}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise MatrixFormatError(
                    f"{source}: non-numeric cell {cell!r} at line {line_no}, col {j + 1}") from None
            if not math.isfinite(v):
                raise MatrixFormatError(
                    f"{source}: non-finite value {cell!r} at line {line_no}, col {j + 1}")
            values[i, j] = v
    return TimeSeriesMatrix(values, names)


def _parse_emx(blob: bytes, source: str) -> TimeSeriesMatrix:
    return TimeSeriesMatrix(decode_emx(blob, source))


def decode_emx(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(blob) < _EMX_HEADER.size:
        raise MatrixFormatError(f"{source}: truncated EMX header")
    magic, rows, cols = _EMX_HEADER.unpack_from(blob)
    if magic != EMX_MAGIC:
        raise MatrixFormatError(f"{source}: bad magic {magic!r}")
    expected = _EMX_HEADER.size + 8 * rows * cols
    if len(blob) != expected:
        raise MatrixFormatError(
            f"{source}: expected {expected} bytes for {rows}x{cols}, found {len(blob)}")
    arr = np.frombuffer(blob, dtype="<f8", offset=_EMX_HEADER.size).reshape(rows, cols)
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        r, c = bad[0]
        raise MatrixFormatError(f"{source}: non-finite value at row {r}, col {c}")
    return arr.astype(np.float64)


def encode_emx(arr) -> bytes:
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    if arr.ndim == 1:
        arr = arr[:, None]
    rows, cols = arr.shape
    return _EMX_HEADER.pack(EMX_MAGIC, rows, cols) + arr.tobytes(order="C")


def _format_of(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    if fmt not in ("csv", "emx"):
        raise MatrixFormatError(f"{path}: unknown matrix format {fmt!r} (expected csv or emx)")
    return fmt


def load_matrix(path, format: str | None = None) -> TimeSeriesMatrix:
    """Read a CSV or EMX matrix; ``format`` defaults to the file extension."""
    path = Path(path)
    fmt = _format_of(path, format)
    if fmt == "emx":
        return _parse_emx(path.read_bytes(), str(path))
    return _parse_csv(path.read_text(encoding="utf-8"), str(path))


def save_matrix(m, path, format: str | None = None) -> None:
    """Write ``m`` as CSV (with header) or EMX.

    CSV uses ``repr`` floats so a reload is value-exact. Columns without
    names are written as ``c0, c1, ...``.
    """
    path = Path(path)
    fmt = _format_of(path, format)
    if not isinstance(m, TimeSeriesMatrix):
        m = TimeSeriesMatrix(m)
    if fmt == "emx":
        path.write_bytes(encode_emx(m.data))
        return
    names = m.channel_names or tuple(f"c{j}" for j in range(m.cols))
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    for row in m.data:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def load_clip_index(path) -> ClipIndex:
    """Read a ``clip_id,start_row,length`` table."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["clip_id", "start_row", "length"]:
            raise MatrixFormatError(f"{path}: header must be clip_id,start_row,length")
        entries = []
        for i, rec in enumerate(reader, start=2):
            try:
                entries.append((rec["clip_id"].strip(), int(rec["start_row"]), int(rec["length"])))
            except (TypeError, ValueError):
                raise MatrixFormatError(f"{path}: malformed entry at line {i}") from None
    entries.sort(key=lambda e: e[1])
    expected = 0
    for clip, start, length in entries:
        if start != expected or length < 1:
            raise MatrixFormatError(
                f"{path}: clip {clip!r} starts at {start}, expected {expected} (clips must tile rows)")
        expected += length
    return ClipIndex.from_lengths([e[2] for e in entries], [e[0] for e in entries])


def save_clip_index(idx: ClipIndex, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("clip_id,start_row,length\n")
        for clip, start, length in idx.runs():
            fh.write(f"{clip},{start},{length}\n")


def split_by_clips(m, idx: ClipIndex, test_clips) -> tuple[TimeSeriesMatrix, TimeSeriesMatrix]:
    """Row-disjoint train/test partition that keeps every clip whole."""
    if not isinstance(m, TimeSeriesMatrix):
        m = TimeSeriesMatrix(m)
    if len(idx) != m.rows:
        raise ValueError(f"clip index covers {len(idx)} rows, matrix has {m.rows}")
    test_clips = set(str(c) for c in test_clips)
    unknown = test_clips - set(idx.clip_ids)
    if unknown:
        raise KeyError(f"unknown clip id(s): {sorted(unknown)}")
    is_test = np.array([c in test_clips for c in idx.clip_ids])
    if is_test.all():
        raise ValueError("empty training partition")
    if not is_test.any():
        raise ValueError("empty test partition")
    return m.take_rows(np.flatnonzero(~is_test)), m.take_rows(np.flatnonzero(is_test))


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
