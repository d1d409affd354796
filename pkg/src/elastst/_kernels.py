"""Compiled inner loops for the tensor engine.

Every kernel spells out its floating-point evaluation order explicitly:
reductions run left to right over the contracted axis and each output
element depends only on its own input rows. numba (when importable)
compiles the loops as written; ``fastmath`` stays off so the compiler may
not reassociate the sums. Without numba the numpy fallbacks implement the
identical accumulation order, just with more interpreter overhead.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _bmm_seq_jit(a, b):  # (Q, m, k) @ (Q, k, n), k accumulated in order
    q, m, k = a.shape
    n = b.shape[2]
    out = np.zeros((q, m, n))
    for bi in range(q):
        for i in range(m):
            for j in range(k):
                aij = a[bi, i, j]
                for t in range(n):
                    out[bi, i, t] += aij * b[bi, j, t]
    return out


def _bmm_seq_np(a, b):
    k = a.shape[-1]
    out = a[..., :, 0:1] * b[..., 0:1, :]
    if k > 1:
        tmp = np.empty_like(out)
        for i in range(1, k):
            np.multiply(a[..., :, i : i + 1], b[..., i : i + 1, :], out=tmp)
            out += tmp
    return out


def batched_matmul_seq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched product with a strict left-to-right sum over the inner axis."""
    if a.shape[-1] == 0:
        return np.zeros(a.shape[:-1] + (b.shape[-1],))
    if not HAVE_NUMBA:
        return _bmm_seq_np(a, b)
    batch = a.shape[:-2]
    a3 = np.ascontiguousarray(a.reshape((-1,) + a.shape[-2:]))
    b3 = np.ascontiguousarray(b.reshape((-1,) + b.shape[-2:]))
    return _bmm_seq_jit(a3, b3).reshape(batch + (a.shape[-2], b.shape[-1]))


@njit(cache=True)
def _row_sum_seq_jit(x):  # (R, n) -> (R,), each row summed left to right
    r, n = x.shape
    out = np.empty(r)
    for i in range(r):
        acc = x[i, 0]
        for j in range(1, n):
            acc += x[i, j]
        out[i] = acc
    return out


def seq_sum_last(arr: np.ndarray) -> np.ndarray:
    """Left-to-right sum over the last axis (prefix-stable, unlike np.sum)."""
    n = arr.shape[-1]
    if n == 0:
        return np.zeros(arr.shape[:-1])
    if HAVE_NUMBA:
        rows = np.ascontiguousarray(arr.reshape(-1, n))
        return _row_sum_seq_jit(rows).reshape(arr.shape[:-1])
    acc = arr[..., 0].copy()
    for i in range(1, n):
        acc += arr[..., i]
    return acc


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


@njit(cache=True)
def _gelu_fwd_jit(x):
    n = x.shape[0]
    y = np.empty(n)
    t = np.empty(n)
    for i in range(n):
        xi = x[i]
        ti = np.tanh(_GELU_C * (xi + _GELU_A * xi * xi * xi))
        t[i] = ti
        y[i] = 0.5 * xi * (1.0 + ti)
    return y, t


@njit(cache=True)
def _gelu_bwd_jit(g, x, t):
    n = x.shape[0]
    dx = np.empty(n)
    for i in range(n):
        xi = x[i]
        ti = t[i]
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xi * xi)
        dx[i] = g[i] * (0.5 * (1.0 + ti) + 0.5 * xi * (1.0 - ti * ti) * du)
    return dx


def gelu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tanh-approximation GELU; returns (value, tanh cache)."""
    if HAVE_NUMBA:
        flat = np.ascontiguousarray(x.reshape(-1))
        y, t = _gelu_fwd_jit(flat)
        return y.reshape(x.shape), t.reshape(x.shape)
    sq = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * sq * x))
    return 0.5 * x * (1.0 + t), t


def gelu_backward(g: np.ndarray, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    if HAVE_NUMBA:
        flat_g = np.ascontiguousarray(g.reshape(-1))
        flat_x = np.ascontiguousarray(x.reshape(-1))
        flat_t = np.ascontiguousarray(t.reshape(-1))
        return _gelu_bwd_jit(flat_g, flat_x, flat_t).reshape(x.shape)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    dx = 1.0 + t
    dx += x * (1.0 - t * t) * du
    dx *= 0.5 * g
    return dx


@njit(cache=True)
def _rotate_fwd_jit(xp, c, s):  # xp (Q, N, half, 2), c/s (N, half)
    q, n, half, _ = xp.shape
    y = np.empty_like(xp)
    for bi in range(q):
        for ni in range(n):
            for j in range(half):
                x0 = xp[bi, ni, j, 0]
                x1 = xp[bi, ni, j, 1]
                y[bi, ni, j, 0] = x0 * c[ni, j] - x1 * s[ni, j]
                y[bi, ni, j, 1] = x0 * s[ni, j] + x1 * c[ni, j]
    return y


@njit(cache=True)
def _rotate_bwd_jit(gp, yp, c, s, ang):
    q, n, half, _ = gp.shape
    dx = np.empty_like(gp)
    dlog = np.zeros(half)
    for bi in range(q):
        for ni in range(n):
            for j in range(half):
                g0 = gp[bi, ni, j, 0]
                g1 = gp[bi, ni, j, 1]
                dx[bi, ni, j, 0] = g0 * c[ni, j] + g1 * s[ni, j]
                dx[bi, ni, j, 1] = -g0 * s[ni, j] + g1 * c[ni, j]
                dphi = g1 * yp[bi, ni, j, 0] - g0 * yp[bi, ni, j, 1]
                dlog[j] -= dphi * ang[ni, j]
    return dx, dlog


def rotate_forward(xp: np.ndarray, c: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Pairwise rotation; ``xp`` is (..., N, half, 2), c/s are (N, half)."""
    if HAVE_NUMBA:
        lead = xp.shape[:-3]
        x4 = np.ascontiguousarray(xp.reshape((-1,) + xp.shape[-3:]))
        return _rotate_fwd_jit(x4, c, s).reshape(lead + xp.shape[-3:])
    x0 = xp[..., 0]
    x1 = xp[..., 1]
    y = np.empty_like(xp)
    y[..., 0] = x0 * c - x1 * s
    y[..., 1] = x0 * s + x1 * c
    return y


def rotate_backward(
    gp: np.ndarray, yp: np.ndarray, c: np.ndarray, s: np.ndarray, ang: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the rotation w.r.t. its input and the log-periods."""
    if HAVE_NUMBA:
        lead = gp.shape[:-3]
        g4 = np.ascontiguousarray(gp.reshape((-1,) + gp.shape[-3:]))
        y4 = np.ascontiguousarray(yp.reshape((-1,) + yp.shape[-3:]))
        dx, dlog = _rotate_bwd_jit(g4, y4, c, s, ang)
        return dx.reshape(lead + gp.shape[-3:]), dlog
    g0 = gp[..., 0]
    g1 = gp[..., 1]
    dx = np.empty_like(gp)
    dx[..., 0] = g0 * c + g1 * s
    dx[..., 1] = -g0 * s + g1 * c
    dphi = g1 * yp[..., 0] - g0 * yp[..., 1]
    half = ang.shape[-1]
    dlog = -(dphi * ang).reshape(-1, half).sum(axis=0)
    return dx, dlog
