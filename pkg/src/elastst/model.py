"""The assembled forecaster: per-patch-size coders around a shared backbone.

Each patch size gets its own MLP encoder (patch -> D -> D, GELU hidden)
and decoder (D -> D -> patch). The transformer backbone and the rotary
periods are shared across sizes; sizes are processed sequentially and the
flattened per-size forecasts are averaged into the assembled forecast.
Instance normalization (per-window context mean/std, inverted on output)
is on by default; the loss is computed on the normalized scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from . import trope
from .backbone import AttentionConfig, LayerWeights, transformer_block
from .errors import DimensionError, FormatError, ParameterError
from .numerics import Tensor
from .patching import Window, grid_dims, segment_batch
from .trope import PeriodSpec, TunablePeriods, init_periods

CHECKPOINT_MAGIC = "ELASTST-CKPT v1"


@dataclass(frozen=True)
class ElasTSTConfig:
    patch_sizes: tuple[int, ...]
    period_spec: PeriodSpec
    attention: AttentionConfig
    lookback: int
    instance_norm: bool = True
    instance_norm_eps: float = 1e-5

    def __post_init__(self):
        sizes = tuple(int(p) for p in self.patch_sizes)
        if len(sizes) < 1:
            raise ParameterError("need at least one patch size")
        if any(p < 1 for p in sizes):
            raise ParameterError(f"patch sizes must be positive, got {sizes}")
        if len(set(sizes)) != len(sizes):
            raise ParameterError(f"patch sizes must be distinct, got {sizes}")
        object.__setattr__(self, "patch_sizes", tuple(sorted(sizes)))
        if self.lookback < 1:
            raise ParameterError(f"lookback must be >= 1, got {self.lookback}")


class SizeCoder:
    """Encoder/decoder MLP pair dedicated to one patch size."""

    def __init__(self, patch_size: int, d_model: int, rng: np.random.Generator):
        def w(rows, cols, fan_in):
            return Tensor(rng.standard_normal((rows, cols)) / math.sqrt(fan_in), requires_grad=True)

        self.patch_size = patch_size
        self.enc_w1 = w(patch_size, d_model, patch_size)
        self.enc_b1 = Tensor(np.zeros(d_model), requires_grad=True)
        self.enc_w2 = w(d_model, d_model, d_model)
        self.enc_b2 = Tensor(np.zeros(d_model), requires_grad=True)
        self.dec_w1 = w(d_model, d_model, d_model)
        self.dec_b1 = Tensor(np.zeros(d_model), requires_grad=True)
        self.dec_w2 = w(d_model, patch_size, d_model)
        self.dec_b2 = Tensor(np.zeros(patch_size), requires_grad=True)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [
            ("enc.w1", self.enc_w1),
            ("enc.b1", self.enc_b1),
            ("enc.w2", self.enc_w2),
            ("enc.b2", self.enc_b2),
            ("dec.w1", self.dec_w1),
            ("dec.b1", self.dec_b1),
            ("dec.w2", self.dec_w2),
            ("dec.b2", self.dec_b2),
        ]


class ModelState:
    """Complete parameter set: coders per size, shared backbone, periods."""

    def __init__(
        self,
        config: ElasTSTConfig,
        coders: dict[int, SizeCoder],
        layers: list[LayerWeights],
        periods: TunablePeriods,
    ):
        self.config = config
        self.coders = coders
        self.layers = layers
        self.periods = periods

    @classmethod
    def init(cls, config: ElasTSTConfig, seed: int = 0) -> "ModelState":
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        coders = {p: SizeCoder(p, config.attention.d_model, rng) for p in config.patch_sizes}
        layers = [LayerWeights(config.attention, rng) for _ in range(config.attention.n_layers)]
        return cls(config, coders, layers, init_periods(config.period_spec))

    def parameters(self) -> list[tuple[str, Tensor]]:
        """Fixed, documented order: per patch size ascending (encoder then
        decoder), backbone layers in depth order, rotary periods last."""
        named: list[tuple[str, Tensor]] = []
        for p in self.config.patch_sizes:
            named += [(f"size{p}.{n}", t) for n, t in self.coders[p].parameters()]
        for i, layer in enumerate(self.layers):
            named += [(f"backbone.{i}.{n}", t) for n, t in layer.parameters()]
        named.append(("trope.log_periods", self.periods.log_periods))
        return named

    def copy(self) -> "ModelState":
        clone = ModelState.init(self.config, seed=0)
        for (_, dst), (_, src) in zip(clone.parameters(), self.parameters()):
            dst.data = src.data.copy()
            dst.grad = None
        return clone


@dataclass
class Forecast:
    """Per-size and assembled forecasts for one batch of windows.

    ``per_size`` and ``assembled`` are graph tensors of shape (B, T) on the
    normalized scale (loss inputs). ``values`` carries the assembled
    forecast mapped back to the model-input scale.
    """

    per_size: list[Tensor]
    assembled: Tensor
    offset: np.ndarray  # (B,) instance-norm mean (zeros when normalization is off)
    denom: np.ndarray  # (B,) instance-norm scale (ones when normalization is off)
    values: np.ndarray  # (B, T)
    per_size_values: list[np.ndarray] = field(default_factory=list)

    @property
    def horizon_len(self) -> int:
        return self.assembled.data.shape[1]

    def series(self, window: int = 0) -> np.ndarray:
        return self.values[window]


def forward_batch(
    state: ModelState,
    contexts: np.ndarray,
    horizon: int,
    use_key_mask: bool = True,
) -> Forecast:
    """Run the model over a batch of equal-length contexts.

    ``use_key_mask=False`` disables the structured key mask (ablation only;
    it forfeits horizon invariance).
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.ndim != 2 or contexts.shape[1] < 1:
        raise ParameterError(f"contexts must be (B, L) with L >= 1, got {contexts.shape}")
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    cfg = state.config
    b, length = contexts.shape

    if cfg.instance_norm:
        offset = contexts.mean(axis=1)
        denom = contexts.std(axis=1) + cfg.instance_norm_eps
        normed = (contexts - offset[:, None]) / denom[:, None]
    else:
        offset = np.zeros(b)
        denom = np.ones(b)
        normed = contexts

    per_size: list[Tensor] = []
    for p in cfg.patch_sizes:
        n_c, n_h, _, _ = grid_dims(length, horizon, p)
        patches = Tensor(segment_batch(normed, horizon, p))
        key_mask = np.arange(n_c + n_h) < n_c if use_key_mask else np.ones(n_c + n_h, dtype=bool)

        coder = state.coders[p]
        hidden = nm.gelu(nm.bias_add(nm.matmul(patches, coder.enc_w1), coder.enc_b1))
        h = nm.bias_add(nm.matmul(hidden, coder.enc_w2), coder.enc_b2)
        for layer in state.layers:
            h = transformer_block(h, key_mask, state.periods, layer)
        hor = nm.slice_axis(h, 1, n_c, n_c + n_h)
        dec_hidden = nm.gelu(nm.bias_add(nm.matmul(hor, coder.dec_w1), coder.dec_b1))
        dec = nm.bias_add(nm.matmul(dec_hidden, coder.dec_w2), coder.dec_b2)  # (B, n_h, p)
        series = nm.slice_axis(nm.reshape(dec, (b, n_h * p)), 1, 0, horizon)
        per_size.append(series)

    acc = per_size[0]
    for series in per_size[1:]:
        acc = nm.add(acc, series)
    assembled = nm.scale(acc, 1.0 / len(per_size))

    restore = lambda a: a * denom[:, None] + offset[:, None]
    return Forecast(
        per_size=per_size,
        assembled=assembled,
        offset=offset,
        denom=denom,
        values=restore(assembled.data),
        per_size_values=[restore(s.data) for s in per_size],
    )


def forward(state: ModelState, window: Window, use_key_mask: bool = True) -> Forecast:
    """Single-window convenience wrapper around :func:`forward_batch`."""
    return forward_batch(state, window.context[None, :], window.horizon_len, use_key_mask)


def composite_loss(forecast: Forecast, target: np.ndarray, weights: np.ndarray) -> Tensor:
    """Mean of the per-size weighted losses and the assembled one.

    ``target`` is on the model-input scale and is normalized here with the
    forecast's instance statistics; ``weights`` carry all normalization
    (a 1-D weight vector is tiled across the batch unchanged).
    """
    shape = forecast.assembled.data.shape
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 1:
        target = target[None, :]
    if target.shape != shape:
        raise DimensionError(f"target shape {target.shape} does not match forecast {shape}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim == 1:
        weights = np.broadcast_to(weights, shape)
    if weights.shape != shape:
        raise DimensionError(f"weights shape {weights.shape} does not match forecast {shape}")

    normalized = (target - forecast.offset[:, None]) / forecast.denom[:, None]
    target_t = Tensor(normalized)
    weights_t = Tensor(weights)
    acc = nm.mse(forecast.per_size[0], target_t, weights_t)
    for series in forecast.per_size[1:]:
        acc = nm.add(acc, nm.mse(series, target_t, weights_t))
    acc = nm.add(acc, nm.mse(forecast.assembled, target_t, weights_t))
    return nm.scale(acc, 1.0 / (len(forecast.per_size) + 1))


# ---------------------------------------------------------------------------
# checkpoint format: text header + config echo, then named float64 blocks


def _config_echo(config: ElasTSTConfig) -> dict[str, str]:
    return {
        "patch_sizes": ",".join(str(p) for p in config.patch_sizes),
        "d_model": str(config.attention.d_model),
        "n_heads": str(config.attention.n_heads),
        "head_dim": str(config.attention.head_dim),
        "d_ff": str(config.attention.d_ff),
        "n_layers": str(config.attention.n_layers),
        "lookback": str(config.lookback),
        "instance_norm": "true" if config.instance_norm else "false",
        "instance_norm_eps": repr(config.instance_norm_eps),
        "p_min": repr(config.period_spec.p_min),
        "p_max": repr(config.period_spec.p_max),
    }


def config_from_echo(echo: dict[str, str]) -> ElasTSTConfig:
    try:
        attention = AttentionConfig(
            d_model=int(echo["d_model"]),
            n_heads=int(echo["n_heads"]),
            head_dim=int(echo["head_dim"]),
            d_ff=int(echo["d_ff"]),
            n_layers=int(echo["n_layers"]),
        )
        spec = PeriodSpec(
            p_min=float(echo["p_min"]),
            p_max=float(echo["p_max"]),
            head_dim=int(echo["head_dim"]),
        )
        return ElasTSTConfig(
            patch_sizes=tuple(int(p) for p in echo["patch_sizes"].split(",")),
            period_spec=spec,
            attention=attention,
            lookback=int(echo["lookback"]),
            instance_norm=echo.get("instance_norm", "true") == "true",
            instance_norm_eps=float(echo.get("instance_norm_eps", "1e-05")),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint config echo is incomplete or invalid: {exc}") from exc


def write_checkpoint(
    path,
    state: ModelState,
    extra_echo: dict[str, str] | None = None,
    extra_arrays: list[tuple[str, np.ndarray]] | None = None,
) -> None:
    """Write the checkpoint file.

    Model parameters appear in the documented order; any ``extra_arrays``
    (e.g. optimizer moments) follow after the model block.
    """
    echo = _config_echo(state.config)
    echo.update(extra_echo or {})
    with open(path, "wb") as f:
        f.write((CHECKPOINT_MAGIC + "\n").encode())
        for key, value in echo.items():
            f.write(f"{key}={value}\n".encode())
        f.write(b"\n")
        blocks = [(name, t.data) for name, t in state.parameters()]
        blocks += list(extra_arrays or [])
        for name, arr in blocks:
            mat = np.atleast_2d(np.asarray(arr, dtype=np.float64))
            f.write(f"{name} {mat.shape[0]} {mat.shape[1]}\n".encode())
            f.write(mat.astype("<f8").tobytes(order="C"))


def read_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray], list[str]]:
    """Parse a checkpoint into (config echo, arrays by name, name order)."""
    data = Path(path).read_bytes()
    try:
        end = data.index(b"\n")
    except ValueError:
        raise FormatError(f"{path}: not a checkpoint file") from None
    if data[:end].decode(errors="replace") != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic line, expected {CHECKPOINT_MAGIC!r}")
    pos = end + 1
    echo: dict[str, str] = {}
    while True:
        nl = data.index(b"\n", pos)
        line = data[pos:nl].decode()
        pos = nl + 1
        if not line:
            break
        if "=" not in line:
            raise FormatError(f"{path}: malformed config echo line {line!r}")
        key, value = line.split("=", 1)
        echo[key] = value
    arrays: dict[str, np.ndarray] = {}
    order: list[str] = []
    while pos < len(data):
        nl = data.index(b"\n", pos)
        header = data[pos:nl].decode()
        pos = nl + 1
        try:
            name, rows, cols = header.rsplit(" ", 2)
            rows, cols = int(rows), int(cols)
        except ValueError:
            raise FormatError(f"{path}: malformed parameter header {header!r}") from None
        count = rows * cols * 8
        raw = data[pos : pos + count]
        if len(raw) != count:
            raise FormatError(f"{path}: truncated data for parameter {name!r}")
        pos += count
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
        order.append(name)
    return echo, arrays, order


def state_from_arrays(config: ElasTSTConfig, arrays: dict[str, np.ndarray]) -> ModelState:
    state = ModelState.init(config, seed=0)
    for name, tensor in state.parameters():
        if name not in arrays:
            raise FormatError(f"checkpoint is missing parameter {name!r}")
        arr = arrays[name]
        if arr.size != tensor.data.size:
            raise FormatError(
                f"checkpoint parameter {name!r} has {arr.size} values, expected {tensor.data.size}"
            )
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"checkpoint parameter {name!r} contains non-finite values")
        tensor.data = arr.reshape(tensor.data.shape).copy()
        tensor.grad = None
    return state


def load_model(path) -> tuple[ModelState, dict[str, str], dict[str, np.ndarray]]:
    echo, arrays, _ = read_checkpoint(path)
    config = config_from_echo(echo)
    return state_from_arrays(config, arrays), echo, arrays
