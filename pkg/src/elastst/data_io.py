"""CSV ingestion, contiguous time splits, standardization, window sampling.

The input format is a wide CSV: header row, first column a timestamp
(ISO-8601 or plain integer index), one column per variate after that.
Rows containing non-finite values are dropped (and counted); unparsable
cells and non-increasing timestamps are hard errors.

Multivariate series are consumed channel-independently: samplers emit
univariate windows tagged with their variate index, and all variates
share the model weights downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError, IngestionError, ParameterError, SizingError
from .patching import Window


@dataclass(frozen=True)
class Dataset:
    name: str
    timestamps: tuple[str, ...]
    values: np.ndarray  # (V, K)
    columns: tuple[str, ...]
    freq: str | None = None
    dropped_rows: int = 0

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_variates(self) -> int:
        return self.values.shape[1]


def _timestamp_key(raw: str, row: int):
    text = raw.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise IngestionError(
            f"row {row}: timestamp {raw!r} is neither an integer index nor ISO-8601"
        ) from None


def load_csv(path, freq: str | None = None) -> Dataset:
    """Load a wide CSV into a Dataset, dropping non-finite rows."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if len(header) < 2:
            raise FormatError(f"{path}: need a timestamp column plus at least one variate")
        columns = tuple(c.strip() for c in header[1:])

        timestamps: list[str] = []
        keys: list = []
        rows: list[list[float]] = []
        dropped = 0
        for i, cells in enumerate(reader, start=2):  # 1-based file rows; row 1 is the header
            if not cells:
                continue
            if len(cells) != len(header):
                raise FormatError(f"{path}: row {i} has {len(cells)} cells, expected {len(header)}")
            parsed = []
            for name, cell in zip(columns, cells[1:]):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {i}, column {name!r}: cannot parse {cell!r} as a number"
                    ) from None
            if not all(np.isfinite(parsed)):
                dropped += 1
                continue
            key = _timestamp_key(cells[0], i)
            if keys and not key > keys[-1]:
                raise IngestionError(
                    f"{path}: row {i}: timestamp {cells[0]!r} does not increase strictly"
                )
            keys.append(key)
            timestamps.append(cells[0].strip())
            rows.append(parsed)

    if not rows:
        raise IngestionError(f"{path}: no usable data rows")
    return Dataset(
        name=path.stem,
        timestamps=tuple(timestamps),
        values=np.array(rows, dtype=np.float64),
        columns=columns,
        freq=freq,
        dropped_rows=dropped,
    )


class Scaler:
    """Per-variate standardization fitted on the training split only."""

    STD_FLOOR = 1e-8  # constant-series guard

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        self.std = np.where(std < self.STD_FLOOR, 1.0, std)

    @classmethod
    def fit(cls, values: np.ndarray) -> "Scaler":
        return cls(values.mean(axis=0), values.std(axis=0))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def transform_variate(self, series: np.ndarray, k: int) -> np.ndarray:
        return (series - self.mean[k]) / self.std[k]

    def inverse_variate(self, series: np.ndarray, k: int) -> np.ndarray:
        return series * self.std[k] + self.mean[k]


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous train/val/test fractions applied along time, in order."""

    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        fractions = (self.train, self.val, self.test)
        if any(f <= 0 for f in fractions):
            raise ParameterError(f"split fractions must be positive, got {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ParameterError(f"split fractions must sum to 1, got {sum(fractions)}")


def split_and_scale(
    ds: Dataset,
    spec: SplitSpec = SplitSpec(),
    min_len: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, Scaler]:
    """Split along time, fit the scaler on train only, transform all three."""
    v = ds.n_steps
    end_train = int(v * spec.train)
    end_val = int(v * (spec.train + spec.val))
    bounds = {
        "train": (0, end_train),
        "val": (end_train, end_val),
        "test": (end_val, v),
    }
    if min_len is not None:
        for name, (lo, hi) in bounds.items():
            if hi - lo < min_len:
                raise SizingError(
                    f"{name} split has {hi - lo} steps, needs {min_len} "
                    f"(short by {min_len - (hi - lo)})"
                )
    train = ds.values[: bounds["train"][1]]
    scaler = Scaler.fit(train)
    return (
        scaler.transform(train),
        scaler.transform(ds.values[bounds["val"][0] : bounds["val"][1]]),
        scaler.transform(ds.values[bounds["test"][0] :]),
        scaler,
    )


class WindowSample(NamedTuple):
    window: Window
    target: np.ndarray  # (T,) ground truth immediately after the context
    variate: int
    start: int  # context start index within the split


def _check_split(values: np.ndarray, lookback: int, horizon: int) -> None:
    if values.ndim != 2:
        raise ParameterError(f"split values must be (V, K), got shape {values.shape}")
    needed = lookback + horizon
    if values.shape[0] < needed:
        raise SizingError(
            f"split has {values.shape[0]} steps, needs lookback + horizon = {needed} "
            f"(short by {needed - values.shape[0]})"
        )


def sample_windows(
    values: np.ndarray,
    lookback: int,
    horizon: int,
    count: int,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[WindowSample]:
    """Uniformly sample univariate (window, target) pairs with replacement."""
    _check_split(values, lookback, horizon)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
    variates = rng.integers(0, values.shape[1], size=count)
    starts = rng.integers(0, values.shape[0] - lookback - horizon + 1, size=count)
    out = []
    for k, s in zip(variates, starts):
        k, s = int(k), int(s)
        out.append(
            WindowSample(
                window=Window(values[s : s + lookback, k], horizon),
                target=values[s + lookback : s + lookback + horizon, k].copy(),
                variate=k,
                start=s,
            )
        )
    return out


def stride_windows(
    values: np.ndarray,
    lookback: int,
    horizon: int,
    stride: int | None = None,
) -> list[WindowSample]:
    """Deterministic left-to-right coverage, one variate after another."""
    _check_split(values, lookback, horizon)
    if stride is None:
        stride = horizon
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    last_start = values.shape[0] - lookback - horizon
    out = []
    for k in range(values.shape[1]):
        for s in range(0, last_start + 1, stride):
            out.append(
                WindowSample(
                    window=Window(values[s : s + lookback, k], horizon),
                    target=values[s + lookback : s + lookback + horizon, k].copy(),
                    variate=k,
                    start=s,
                )
            )
    return out
