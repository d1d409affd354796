"""Normalized error metrics and the varied-horizon evaluation harness.

Metrics are computed on the original (de-standardized) scale:

* NMAE  = sum |x - xhat| / sum |x|
* NRMSE = sqrt(mean((x - xhat)^2)) / mean(|x|)

with sums/means running over every variate (or window) and horizon step.
Both are undefined when the observations are identically zero; that is an
error, never a NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data_io
from .errors import DimensionError, MetricUndefinedError
from .model import ModelState, forward_batch


def _as_matrices(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape:
        raise DimensionError(f"metric inputs must match, got {a.shape} vs {p.shape}")
    return a, p


def nmae(actual, predicted) -> float:
    a, p = _as_matrices(actual, predicted)
    denom = np.abs(a).sum()
    if denom == 0.0:
        raise MetricUndefinedError("NMAE undefined: observations are identically zero")
    return float(np.abs(a - p).sum() / denom)


def nrmse(actual, predicted) -> float:
    a, p = _as_matrices(actual, predicted)
    denom = np.abs(a).mean()
    if denom == 0.0:
        raise MetricUndefinedError("NRMSE undefined: observations are identically zero")
    return float(np.sqrt(np.mean((a - p) ** 2)) / denom)


@dataclass(frozen=True)
class MetricRow:
    horizon: int
    nmae: float
    nrmse: float
    windows: int


@dataclass
class MetricReport:
    rows: list[MetricRow]
    dataset: str = ""
    checkpoint_id: str = ""
    lookback: int = 0

    def to_csv(self) -> str:
        lines = ["horizon,nmae,nrmse,windows"]
        for r in self.rows:
            lines.append(f"{r.horizon},{r.nmae!r},{r.nrmse!r},{r.windows}")
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        header = f"{'horizon':>8} {'NMAE':>12} {'NRMSE':>12} {'windows':>8}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(f"{r.horizon:>8} {r.nmae:>12.6f} {r.nrmse:>12.6f} {r.windows:>8}")
        return "\n".join(lines)


def varied_horizon_eval(
    state: ModelState,
    values: np.ndarray,
    lookback: int,
    horizons: list[int],
    scaler: data_io.Scaler,
    stride: int | None = None,
    dataset: str = "",
    checkpoint_id: str = "",
) -> MetricReport:
    """Evaluate one trained model across several forecast horizons.

    ``values`` is a standardized split; per horizon the split is covered
    with strided windows (default stride = horizon, non-overlapping), the
    forecasts are mapped back to the original scale, and one metric row is
    produced. Read-only on the model.
    """
    rows = []
    for horizon in horizons:
        samples = data_io.stride_windows(values, lookback, horizon, stride if stride else horizon)
        contexts = np.stack([s.window.context for s in samples])
        forecast = forward_batch(state, contexts, horizon)
        preds = np.stack(
            [scaler.inverse_variate(forecast.values[i], s.variate) for i, s in enumerate(samples)]
        )
        actual = np.stack([scaler.inverse_variate(s.target, s.variate) for s in samples])
        rows.append(
            MetricRow(
                horizon=horizon,
                nmae=nmae(actual, preds),
                nrmse=nrmse(actual, preds),
                windows=len(samples),
            )
        )
    return MetricReport(rows=rows, dataset=dataset, checkpoint_id=checkpoint_id, lookback=lookback)
