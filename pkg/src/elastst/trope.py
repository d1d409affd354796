"""Rotary position embedding with learnable period coefficients.

Each pair of embedding dimensions rotates by angle 2*pi*t / P_j at patch
index t. The periods P_j are initialized on an exponential grid between a
minimum and maximum period and are trained along with the rest of the
model. They are stored as natural logs so that any real-valued gradient
update keeps every period strictly positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import numerics as nm
from .errors import DimensionError, ParameterError
from .numerics import Tensor

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PeriodSpec:
    """Initialization range for the period coefficients of one head dim."""

    p_min: float
    p_max: float
    head_dim: int

    def __post_init__(self):
        if not (0.0 < self.p_min < self.p_max):
            raise ParameterError(f"need 0 < p_min < p_max, got {self.p_min}, {self.p_max}")
        if self.head_dim < 4 or self.head_dim % 2 != 0:
            raise ParameterError(f"head_dim must be even and >= 4, got {self.head_dim}")


class TunablePeriods:
    """The d/2 learnable period coefficients, stored as natural logs."""

    def __init__(self, log_periods: Tensor):
        if log_periods.data.ndim != 1:
            raise DimensionError(f"log_periods must be 1-D, got shape {log_periods.data.shape}")
        self.log_periods = log_periods

    @property
    def half_dim(self) -> int:
        return self.log_periods.data.shape[0]

    def periods(self) -> np.ndarray:
        """Current period values P_j = exp(log P_j)."""
        return np.exp(self.log_periods.data)

    def copy(self) -> "TunablePeriods":
        return TunablePeriods(Tensor(self.log_periods.data.copy(), requires_grad=True))


def init_periods(spec: PeriodSpec) -> TunablePeriods:
    """Exponentially spaced periods: P_j = p_min * exp(2*alpha*(j-1)) with
    alpha = ln(p_max/p_min) / (d-2), i.e. log-periods linearly spaced from
    ln(p_min) to ln(p_max) inclusive (both endpoints exact in log space)."""
    logs = np.linspace(math.log(spec.p_min), math.log(spec.p_max), spec.head_dim // 2)
    return TunablePeriods(Tensor(logs, requires_grad=True))


def rotate(x: Tensor, positions, periods: TunablePeriods) -> Tensor:
    """Rotate each (x_{2j-1}, x_{2j}) pair by 2*pi*t / P_j.

    ``x`` is (..., d) for a single position or (..., N, d) with one position
    per row along the second-to-last axis. Differentiable in both ``x`` and
    the log-periods.
    """
    xd = x.data
    logp = periods.log_periods
    half = periods.half_dim
    if xd.shape[-1] != 2 * half:
        raise DimensionError(f"rotate needs last dim {2 * half}, got shape {xd.shape}")
    pos = np.asarray(positions, dtype=np.float64)
    scalar_pos = pos.ndim == 0
    if scalar_pos:
        if xd.ndim != 1:
            raise DimensionError(f"scalar position needs a 1-D vector, got shape {xd.shape}")
        pos = pos.reshape(1)
        pair_shape: tuple[int, ...] = (1, half, 2)
    else:
        if xd.ndim < 2 or pos.shape != (xd.shape[-2],):
            raise DimensionError(f"positions {pos.shape} do not match input shape {xd.shape}")
        pair_shape = xd.shape[:-1] + (half, 2)

    ang = TWO_PI * (pos[:, None] / np.exp(logp.data))  # (N, half)
    c = np.cos(ang)
    s = np.sin(ang)
    yp = _kernels.rotate_forward(xd.reshape(pair_shape), c, s)
    out = Tensor(yp.reshape(xd.shape))

    def backward_fn(g: np.ndarray) -> None:
        dx, dlog = _kernels.rotate_backward(g.reshape(pair_shape), yp, c, s, ang)
        if x.requires_grad:
            nm._accum(x, dx.reshape(xd.shape), exclusive=True)
        if logp.requires_grad:
            nm._accum(logp, dlog, exclusive=True)

    return nm.record_op(out, (x, logp), backward_fn)


def _rotate_values(vec: np.ndarray, t: float, period_values: np.ndarray) -> np.ndarray:
    ang = TWO_PI * t / period_values
    c, s = np.cos(ang), np.sin(ang)
    out = np.empty_like(vec)
    out[0::2] = vec[0::2] * c - vec[1::2] * s
    out[1::2] = vec[0::2] * s + vec[1::2] * c
    return out


def relative_score(q, k, m: float, n: float, periods: TunablePeriods) -> float:
    """Inner product of position-rotated q and k; depends on m - n only."""
    qv = np.asarray(q, dtype=np.float64)
    kv = np.asarray(k, dtype=np.float64)
    d = 2 * periods.half_dim
    if qv.shape != (d,) or kv.shape != (d,):
        raise DimensionError(f"relative_score needs ({d},) vectors, got {qv.shape} and {kv.shape}")
    pv = periods.periods()
    return float(np.dot(_rotate_values(qv, m, pv), _rotate_values(kv, n, pv)))
