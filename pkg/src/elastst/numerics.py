"""Dense float64 tensors with a reverse-mode tape.

The engine is deliberately small: just enough operations to express a
patch-transformer forward pass and train it. Two properties drive the
implementation and are worth knowing before touching anything here:

* Forward evaluation is bitwise deterministic, and *prefix-stable*: when
  rows are appended to an operand (more patches for a longer horizon),
  the results for the pre-existing rows do not change at the bit level.
  Reductions over data-dependent axes therefore run strictly left to
  right, and products against weight matrices are computed in fixed-size
  row blocks so every BLAS call sees identical dimensions regardless of
  how many rows the input has.
* The backward pass has no cross-shape stability requirement (gradients
  are only compared between runs with identical shapes), so it uses plain
  vectorized numpy for speed.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ._kernels import batched_matmul_seq, gelu_backward, gelu_forward, seq_sum_last
from .errors import ContractError, DimensionError, ParameterError

_ROW_BLOCK = 128  # fixed GEMM row-block size; do not vary per call site


class Tensor:
    """A float64 array that may participate in the recorded graph."""

    __slots__ = ("data", "requires_grad", "grad", "graph", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.graph: "Graph | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Graph:
    """Ordered tape of executed differentiable operations.

    Ops record onto the innermost active graph (``with Graph() as g: ...``).
    The record order equals execution order; ``backward`` walks it in
    reverse. ``clear`` drops the recorded nodes (and with them the
    intermediate activations); parameters live outside the tape and are
    untouched.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Graph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _GRAPH_STACK.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def clear(self) -> None:
        self._nodes.clear()


_GRAPH_STACK: list[Graph] = []


def _active_graph() -> Graph | None:
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


def record_op(out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Attach ``out`` to the active tape if anything requires gradients."""
    out.requires_grad = any(t.requires_grad for t in inputs)
    graph = _active_graph()
    if graph is not None and out.requires_grad:
        out.graph = graph
        graph._nodes.append((out, inputs, backward_fn))
    return out


def _accum(t: Tensor, g: np.ndarray, exclusive: bool = False) -> None:
    """Accumulate into ``t.grad``. ``exclusive`` marks arrays the caller
    freshly allocated and will not touch again, letting us adopt them."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if exclusive else np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Repeated calls without resetting parameter grads accumulate into them;
    intermediate grads are recomputed from scratch on each call.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    graph = loss.graph
    if graph is None:
        raise ContractError("loss was not produced by recorded operations")
    for out, _, _ in graph._nodes:
        if out is not loss:
            out.grad = None
    loss.grad = np.ones_like(loss.data)
    for out, _, backward_fn in reversed(graph._nodes):
        if out.grad is not None:
            backward_fn(out.grad)


# ---------------------------------------------------------------------------
# deterministic reduction kernels


def _seq_sum_all(arr: np.ndarray) -> np.ndarray:
    """Sequential full reduction: innermost axis first, then outward."""
    out = np.asarray(arr, dtype=np.float64)
    while out.ndim > 0:
        out = seq_sum_last(out)
    return out


def _block_rows_matmul(a2: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(M, k) @ (k, n) where every underlying GEMM call has fixed dims.

    Rows are processed in blocks of ``_ROW_BLOCK``; the last partial block
    is zero-padded. With fixed call dimensions each output row is a pure
    function of its own input row and ``w``, which is what makes forward
    results independent of how many rows follow.
    """
    m, k = a2.shape
    n = w.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    for i0 in range(0, m, _ROW_BLOCK):
        blk = a2[i0 : i0 + _ROW_BLOCK]
        r = blk.shape[0]
        if r == _ROW_BLOCK:
            np.matmul(blk, w, out=out[i0 : i0 + r])
        else:
            buf = np.zeros((_ROW_BLOCK, k), dtype=np.float64)
            buf[:r] = blk
            out[i0 : i0 + r] = np.matmul(buf, w)[:r]
    return out


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. ``b`` is either a 2-D weight (applied row-wise to the
    flattened leading axes of ``a``) or a batched operand with the same
    leading dimensions as ``a``."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {ad.shape} and {bd.shape}")
    if bd.ndim == 2:
        k = ad.shape[-1]
        if k != bd.shape[0]:
            raise DimensionError(f"matmul inner dimensions disagree: {ad.shape} vs {bd.shape}")
        flat = ad.reshape(-1, k)
        out_data = _block_rows_matmul(flat, bd).reshape(ad.shape[:-1] + (bd.shape[1],))
        out = Tensor(out_data)

        def backward_fn(g: np.ndarray) -> None:
            gf = g.reshape(-1, bd.shape[1])
            if a.requires_grad:
                _accum(a, np.matmul(gf, bd.T).reshape(ad.shape), exclusive=True)
            if b.requires_grad:
                _accum(b, np.matmul(flat.T, gf), exclusive=True)

        return record_op(out, (a, b), backward_fn)

    if ad.ndim != bd.ndim or ad.shape[:-2] != bd.shape[:-2] or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul shapes incompatible: {ad.shape} vs {bd.shape}")
    out = Tensor(batched_matmul_seq(ad, bd))

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, np.matmul(g, bd.swapaxes(-1, -2)), exclusive=True)
        if b.requires_grad:
            _accum(b, np.matmul(ad.swapaxes(-1, -2), g), exclusive=True)

    return record_op(out, (a, b), backward_fn)


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op} needs equal shapes, got {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def backward_fn(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, g)

    return record_op(out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)

    def backward_fn(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, -g)

    return record_op(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)

    def backward_fn(g: np.ndarray) -> None:
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return record_op(out, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    """Scalar-by-tensor product (the one permitted broadcast)."""
    c = float(c)
    out = Tensor(a.data * c)

    def backward_fn(g: np.ndarray) -> None:
        _accum(a, g * c)

    return record_op(out, (a,), backward_fn)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector along the last axis (explicit, not implicit broadcast)."""
    if b.data.ndim != 1 or b.data.shape[0] != x.data.shape[-1]:
        raise DimensionError(f"bias_add needs ({x.data.shape[-1]},) bias, got {b.data.shape}")
    out = Tensor(x.data + b.data)

    def backward_fn(g: np.ndarray) -> None:
        _accum(x, g)
        if b.requires_grad:
            _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return record_op(out, (x, b), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]

    def backward_fn(g: np.ndarray) -> None:
        start = 0
        for t, s in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + s)
            _accum(t, g[tuple(sl)])
            start += s

    return record_op(out, tuple(tensors), backward_fn)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(x.data[sl].copy())

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[sl] = g
            _accum(x, full)

    return record_op(out, (x,), backward_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def backward_fn(g: np.ndarray) -> None:
        _accum(x, g.reshape(x.data.shape))

    return record_op(out, (x,), backward_fn)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = Tensor(np.transpose(x.data, axes))
    inverse = tuple(np.argsort(axes))

    def backward_fn(g: np.ndarray) -> None:
        _accum(x, np.transpose(g, inverse))

    return record_op(out, (x,), backward_fn)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation; the gradient is of the approximation."""
    xd = x.data
    y, t = gelu_forward(xd)
    out = Tensor(y)

    def backward_fn(g: np.ndarray) -> None:
        _accum(x, gelu_backward(g, xd, t), exclusive=True)

    return record_op(out, (x,), backward_fn)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last axis with max-subtraction.

    -inf entries map to exactly 0. A row that is entirely -inf yields the
    zero row (the caller treats that as "fully masked").
    """
    xd = x.data
    if xd.ndim < 1 or xd.shape[-1] < 1:
        raise DimensionError(f"softmax_lastdim needs a non-empty last axis, got {xd.shape}")
    m = np.max(xd, axis=-1, keepdims=True)
    dead = ~np.isfinite(m)  # all -inf rows
    shifted = xd - np.where(dead, 0.0, m)  # keeps -inf - -inf from producing NaN
    e = np.exp(shifted)  # exp(-inf) == 0.0 exactly
    denom = seq_sum_last(e)[..., None]
    y = e / np.where(denom == 0.0, 1.0, denom)
    out = Tensor(y)

    def backward_fn(g: np.ndarray) -> None:
        inner = np.sum(g * y, axis=-1, keepdims=True)
        _accum(x, y * (g - inner), exclusive=True)

    return record_op(out, (x,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization over the last axis, then affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm affine must match last dim {d}, got {gain.data.shape} and {bias.data.shape}"
        )
    # The feature axis has a config-fixed length, so np.sum's reduction tree
    # is identical for every row and every horizon; no sequential loop needed.
    xd = x.data
    mu = np.sum(xd, axis=-1, keepdims=True) / d
    xc = xd - mu
    var = np.sum(xc * xc, axis=-1, keepdims=True) / d
    inv = 1.0 / np.sqrt(var + eps)
    ynorm = xc * inv
    out = Tensor(ynorm * gain.data + bias.data)

    def backward_fn(g: np.ndarray) -> None:
        if gain.requires_grad:
            _accum(gain, np.sum(g * ynorm, axis=tuple(range(g.ndim - 1))))
        if bias.requires_grad:
            _accum(bias, np.sum(g, axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            gg = g * gain.data
            mean_gg = np.mean(gg, axis=-1, keepdims=True)
            mean_ggy = np.mean(gg * ynorm, axis=-1, keepdims=True)
            dx = gg
            dx -= mean_gg
            dx -= ynorm * mean_ggy
            dx *= inv
            _accum(x, dx, exclusive=True)

    return record_op(out, (x, gain, bias), backward_fn)


def mean(x: Tensor) -> Tensor:
    """Mean of all entries (sequential reduction, innermost axis first)."""
    n = x.data.size
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    out = Tensor(_seq_sum_all(x.data) / n)

    def backward_fn(g: np.ndarray) -> None:
        _accum(x, np.full_like(x.data, float(g) / n))

    return record_op(out, (x,), backward_fn)


def mse(pred: Tensor, target: Tensor, weights: Tensor) -> Tensor:
    """Weighted squared error: sum of weights * (pred - target)^2.

    No hidden normalization; the weights carry all of it.
    """
    _require_same_shape("mse", pred, target)
    _require_same_shape("mse", pred, weights)
    diff = pred.data - target.data
    out = Tensor(_seq_sum_all(weights.data * diff * diff))

    def backward_fn(g: np.ndarray) -> None:
        gs = float(g)
        if pred.requires_grad:
            _accum(pred, gs * 2.0 * weights.data * diff, exclusive=True)
        if target.requires_grad:
            _accum(target, gs * -2.0 * weights.data * diff, exclusive=True)
        if weights.requires_grad:
            _accum(weights, gs * diff * diff, exclusive=True)

    return record_op(out, (pred, target, weights), backward_fn)


# ---------------------------------------------------------------------------
# verification harness


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` evaluates the scalar loss from the current contents of ``params``.
    Relative error is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    return max(finite_diff_report(f, [(str(i), p) for i, p in enumerate(params)], step).values())


def finite_diff_report(
    f: Callable[[], Tensor],
    named_params: Sequence[tuple[str, Tensor]],
    step: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter-group version of :func:`finite_diff_check`."""
    if step <= 0:
        raise ParameterError(f"finite-difference step must be positive, got {step}")
    for _, p in named_params:
        p.grad = None
    with Graph():
        loss = f()
    if loss.graph is not None:  # a loss independent of every parameter records nothing
        backward(loss)
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in named_params
    }
    report: dict[str, float] = {}
    for name, p in named_params:
        flat = p.data.reshape(-1)
        a = analytic[name].reshape(-1)
        worst = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = float(f().data)
            flat[idx] = orig - step
            f_minus = float(f().data)
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(a[idx] - numeric) / max(1e-8, abs(a[idx]) + abs(numeric))
            worst = max(worst, err)
        report[name] = worst
    return report
