"""Time-series data model: CSV ingestion, standard scaling, splitting,
window extraction, and the MAE metric.

All types are immutable after construction; every operation is a pure
function, so values can be shared freely across threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = [
    "Scaler",
    "TimeSeries",
    "WindowPair",
    "load_csv",
    "fit_scaler",
    "apply_scaler",
    "invert_scaler",
    "split",
    "window_at",
    "mae",
]

DEFAULT_TRAIN_FRACTION = 0.7


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Scaler:
    """Standard scaler with population statistics (divisor n).

    A zero-spread input yields a degenerate scaler that only centers, so the
    transform never divides by zero.
    """

    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"std must be non-negative, got {self.std}")

    @property
    def degenerate(self) -> bool:
        return self.std == 0.0

    def apply(self, values) -> np.ndarray:
        arr = np.asarray(values, dtype=np.float64)
        if self.degenerate:
            return arr - self.mean
        return (arr - self.mean) / self.std

    def invert(self, values) -> np.ndarray:
        arr = np.asarray(values, dtype=np.float64)
        if self.degenerate:
            return arr + self.mean
        return arr * self.std + self.mean


def fit_scaler(values) -> Scaler:
    """Fit mean and population standard deviation (divisor n)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot fit a scaler on empty input")
    return Scaler(mean=float(np.mean(arr)), std=float(np.std(arr)))


def apply_scaler(scaler: Scaler, values) -> np.ndarray:
    return scaler.apply(values)


def invert_scaler(scaler: Scaler, values) -> np.ndarray:
    return scaler.invert(values)


@dataclass(frozen=True)
class TimeSeries:
    """A named multivariate series with one designated target column.

    ``columns`` maps column name to a float array; ``column_names`` preserves
    header order. ``timestamps`` are opaque text carried for reporting only
    (windowing is purely positional); when present they must be strictly
    increasing under string comparison, which holds for ISO-8601 stamps.
    ``scalers`` is populated by :func:`split` when it standardizes columns.
    """

    name: str
    column_names: list[str]
    columns: dict[str, np.ndarray]
    target: str
    timestamps: list[str] | None = None
    scalers: dict[str, Scaler] | None = None

    def __post_init__(self):
        if not self.column_names:
            raise DataError("series must have at least one column")
        if set(self.column_names) != set(self.columns):
            raise DataError("column_names and columns disagree")
        if self.target not in self.columns:
            raise DataError(
                f"unknown target column {self.target!r}; available: {self.column_names}"
            )
        lengths = {name: len(col) for name, col in self.columns.items()}
        if len(set(lengths.values())) != 1:
            raise DataError(f"columns have unequal lengths: {lengths}")
        n = next(iter(lengths.values()))
        if n < 1:
            raise DataError("series must contain at least one row")
        object.__setattr__(
            self, "columns", {k: _readonly(v) for k, v in self.columns.items()}
        )
        if self.timestamps is not None:
            if len(self.timestamps) != n:
                raise DataError(
                    f"timestamp count {len(self.timestamps)} != row count {n}"
                )
            for prev, cur in zip(self.timestamps, self.timestamps[1:]):
                if not prev < cur:
                    raise DataError(
                        f"timestamps must be strictly increasing text; {cur!r} follows {prev!r}"
                    )

    def __len__(self) -> int:
        return len(self.columns[self.target])

    @property
    def target_values(self) -> np.ndarray:
        return self.columns[self.target]

    @property
    def target_scaler(self) -> Scaler | None:
        if self.scalers is None:
            return None
        return self.scalers.get(self.target)


def _parse_cell(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(
            f"non-numeric cell {cell!r} at row {row}, column {column!r}"
        ) from None
    if not math.isfinite(value):
        raise DataError(
            f"non-finite value {cell!r} at row {row}, column {column!r}"
        )
    return value


def load_csv(
    path,
    target: str,
    timestamp_column: str | None = None,
    name: str | None = None,
) -> TimeSeries:
    """Load a header-first CSV into a :class:`TimeSeries`.

    One timestamp column is optional: name it explicitly, or leave
    ``timestamp_column`` unset and the first column is treated as timestamps
    when its first data cell does not parse as a number. Every other cell
    must be a finite real; NaN/Inf and ragged rows are load-time errors.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]

    if not rows:
        raise DataError(f"{path}: no data rows")
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(
                f"{path}: ragged row {i} has {len(row)} cells, header has {len(header)}"
            )

    if timestamp_column is not None:
        if timestamp_column not in header:
            raise DataError(
                f"unknown timestamp column {timestamp_column!r}; header: {header}"
            )
        ts_name = timestamp_column
    else:
        ts_name = None
        try:
            float(rows[0][0])
        except ValueError:
            ts_name = header[0]

    value_names = [h for h in header if h != ts_name]
    if target not in value_names:
        raise DataError(f"unknown target column {target!r}; header: {header}")

    timestamps: list[str] | None = None
    if ts_name is not None:
        ts_idx = header.index(ts_name)
        timestamps = [row[ts_idx].strip() for row in rows]

    columns: dict[str, np.ndarray] = {}
    for col in value_names:
        idx = header.index(col)
        columns[col] = np.array(
            [_parse_cell(row[idx].strip(), i, col) for i, row in enumerate(rows, 1)]
        )

    series_name = name if name is not None else str(path)
    return TimeSeries(
        name=series_name,
        column_names=value_names,
        columns=columns,
        target=target,
        timestamps=timestamps,
    )


def split(
    series: TimeSeries,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    scale: bool = True,
) -> tuple[TimeSeries, TimeSeries]:
    """Chronological split at ``floor(n * train_fraction)``.

    With ``scale=True`` (the default) every column is standardized with a
    scaler fit on the train part only and applied to both parts; the fitted
    scalers ride along on the returned series so raw values stay recoverable.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(series)
    cut = int(math.floor(n * train_fraction))
    if cut < 1 or cut >= n:
        raise ValueError(
            f"train_fraction {train_fraction} leaves an empty part for length {n}"
        )

    scalers: dict[str, Scaler] | None = None
    if scale:
        scalers = {
            col: fit_scaler(series.columns[col][:cut]) for col in series.column_names
        }

    def _part(lo: int, hi: int) -> TimeSeries:
        cols = {}
        for col in series.column_names:
            piece = series.columns[col][lo:hi]
            cols[col] = scalers[col].apply(piece) if scalers else np.array(piece)
        ts = series.timestamps[lo:hi] if series.timestamps is not None else None
        return TimeSeries(
            name=series.name,
            column_names=list(series.column_names),
            columns=cols,
            target=series.target,
            timestamps=ts,
            scalers=scalers,
        )

    return _part(0, cut), _part(cut, n)


@dataclass(frozen=True)
class WindowPair:
    """An L-step context immediately followed by its H-step ground truth.

    ``origin`` is the index of the first truth element in the source series.
    """

    context: np.ndarray
    truth: np.ndarray
    origin: int

    def __post_init__(self):
        object.__setattr__(self, "context", _readonly(self.context))
        object.__setattr__(self, "truth", _readonly(self.truth))
        if len(self.context) < 2:
            raise ValueError("context length must be at least 2")
        if len(self.truth) < 1:
            raise ValueError("truth length must be at least 1")


def window_at(values, t: int, context_length: int, horizon: int) -> WindowPair:
    """Extract the (context, truth) pair whose truth starts at index ``t``."""
    arr = np.asarray(values, dtype=np.float64)
    if context_length < 2:
        raise ValueError(f"context_length must be >= 2, got {context_length}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if t - context_length < 0:
        raise ValueError(
            f"window origin {t} leaves no room for a context of {context_length}"
        )
    if t + horizon > arr.size:
        raise ValueError(
            f"window origin {t} with horizon {horizon} exceeds length {arr.size}"
        )
    return WindowPair(
        context=arr[t - context_length : t], truth=arr[t : t + horizon], origin=t
    )


def mae(pred, truth) -> float:
    """Mean absolute error: the average of elementwise absolute differences."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("mae of empty vectors is undefined")
    return float(np.mean(np.abs(p - t)))
