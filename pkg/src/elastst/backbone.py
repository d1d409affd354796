"""Masked multi-head self-attention encoder blocks.

Two departures from a stock pre-norm encoder: query/key vectors are
position-rotated with the tunable periods before scoring, and keys whose
patch consists solely of placeholders are excluded from the softmax via
an additive -inf bias. Placeholder *queries* still attend to context
keys; only their key side is blocked. Exclusion (rather than multiplying
raw scores by zero) is what keeps every pre-existing row's output
bit-identical when more placeholder patches are appended.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from . import trope
from .errors import ContractError, ParameterError
from .numerics import Tensor


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int
    head_dim: int
    d_ff: int
    n_layers: int

    def __post_init__(self):
        if self.n_heads < 1 or self.n_layers < 1:
            raise ParameterError("n_heads and n_layers must be >= 1")
        if self.head_dim < 2 or self.head_dim % 2 != 0:
            raise ParameterError(f"head_dim must be even, got {self.head_dim}")
        if min(self.d_model, self.d_ff) < 1:
            raise ParameterError("d_model and d_ff must be >= 1")


class LayerWeights:
    """One encoder layer: per-head q/k/v maps, output projection, norms, FFN."""

    def __init__(self, config: AttentionConfig, rng: np.random.Generator):
        d, h, hd = config.d_model, config.n_heads, config.head_dim

        def w(rows, cols, fan_in):
            return Tensor(rng.standard_normal((rows, cols)) / math.sqrt(fan_in), requires_grad=True)

        self.config = config
        self.wq = [w(d, hd, d) for _ in range(h)]
        self.wk = [w(d, hd, d) for _ in range(h)]
        self.wv = [w(d, hd, d) for _ in range(h)]
        self.wo = w(h * hd, d, h * hd)
        self.ln1_gain = Tensor(np.ones(d), requires_grad=True)
        self.ln1_bias = Tensor(np.zeros(d), requires_grad=True)
        self.ln2_gain = Tensor(np.ones(d), requires_grad=True)
        self.ln2_bias = Tensor(np.zeros(d), requires_grad=True)
        self.ffn_w1 = w(d, config.d_ff, d)
        self.ffn_b1 = Tensor(np.zeros(config.d_ff), requires_grad=True)
        self.ffn_w2 = w(config.d_ff, d, config.d_ff)
        self.ffn_b2 = Tensor(np.zeros(d), requires_grad=True)

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, (q, k, v) in enumerate(zip(self.wq, self.wk, self.wv)):
            named += [(f"head{i}.wq", q), (f"head{i}.wk", k), (f"head{i}.wv", v)]
        named += [
            ("wo", self.wo),
            ("ln1.gain", self.ln1_gain),
            ("ln1.bias", self.ln1_bias),
            ("ln2.gain", self.ln2_gain),
            ("ln2.bias", self.ln2_bias),
            ("ffn.w1", self.ffn_w1),
            ("ffn.b1", self.ffn_b1),
            ("ffn.w2", self.ffn_w2),
            ("ffn.b2", self.ffn_b2),
        ]
        return named


def _with_batch(h: Tensor) -> tuple[Tensor, bool]:
    if h.data.ndim == 2:
        n, d = h.data.shape
        return nm.reshape(h, (1, n, d)), True
    if h.data.ndim == 3:
        return h, False
    raise ContractError(f"attention input must be (N, D) or (B, N, D), got {h.data.shape}")


def _attention(
    h: Tensor,
    key_mask: np.ndarray,
    periods: trope.TunablePeriods,
    weights: LayerWeights,
) -> tuple[Tensor, Tensor]:
    """Returns (output (B, N, D), attention probabilities (B, heads, N, N))."""
    key_mask = np.asarray(key_mask, dtype=bool)
    if not key_mask.any():
        raise ContractError("key mask blocks every patch; nothing to attend to")
    cfg = weights.config
    b, n, _ = h.data.shape
    if key_mask.shape != (n,):
        raise ContractError(f"key mask must have shape ({n},), got {key_mask.shape}")
    hd, heads = cfg.head_dim, cfg.n_heads

    def project(mats):
        stacked = nm.matmul(h, nm.concat(mats, axis=1))  # (B, N, heads*hd)
        split = nm.reshape(stacked, (b, n, heads, hd))
        return nm.transpose(split, (0, 2, 1, 3))  # (B, heads, N, hd)

    positions = np.arange(n)
    q = trope.rotate(project(weights.wq), positions, periods)
    k = trope.rotate(project(weights.wk), positions, periods)
    v = project(weights.wv)

    scores = nm.scale(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    key_bias = Tensor(np.where(key_mask, 0.0, -np.inf))
    probs = nm.softmax_lastdim(nm.bias_add(scores, key_bias))
    mixed = nm.matmul(probs, v)  # (B, heads, N, hd)
    merged = nm.reshape(nm.transpose(mixed, (0, 2, 1, 3)), (b, n, heads * hd))
    return nm.matmul(merged, weights.wo), probs


def masked_attention(
    h: Tensor,
    key_mask: np.ndarray,
    periods: trope.TunablePeriods,
    weights: LayerWeights,
) -> Tensor:
    """Multi-head attention over context-carrying keys only."""
    batched, squeeze = _with_batch(h)
    out, _ = _attention(batched, key_mask, periods, weights)
    if squeeze:
        out = nm.reshape(out, out.data.shape[1:])
    return out


def attention_probabilities(
    h: Tensor,
    key_mask: np.ndarray,
    periods: trope.TunablePeriods,
    weights: LayerWeights,
) -> np.ndarray:
    """Attention weights (B, heads, N, N); rows sum to 1 over unmasked keys."""
    batched, _ = _with_batch(h)
    _, probs = _attention(batched, key_mask, periods, weights)
    return probs.data


def transformer_block(
    h: Tensor,
    key_mask: np.ndarray,
    periods: trope.TunablePeriods,
    weights: LayerWeights,
) -> Tensor:
    """Pre-norm residual block: x + Attn(LN(x)), then x + FFN(LN(x))."""
    batched, squeeze = _with_batch(h)
    normed = nm.layer_norm(batched, weights.ln1_gain, weights.ln1_bias)
    attn_out, _ = _attention(normed, key_mask, periods, weights)
    mid = nm.add(batched, attn_out)

    normed2 = nm.layer_norm(mid, weights.ln2_gain, weights.ln2_bias)
    hidden = nm.gelu(nm.bias_add(nm.matmul(normed2, weights.ffn_w1), weights.ffn_b1))
    ffn_out = nm.bias_add(nm.matmul(hidden, weights.ffn_w2), weights.ffn_b2)
    out = nm.add(mid, ffn_out)
    if squeeze:
        out = nm.reshape(out, out.data.shape[1:])
    return out
