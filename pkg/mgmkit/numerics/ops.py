"""
Ops Module
The closed op set the toy transformer and the quantizer codecs are built from:
matmul, elementwise arithmetic, softmax, RMS normalization, rotary position
rotation, embedding gather/scatter, attention and cross-entropy.

Forward passes are plain numpy; every op registers its own backward closure
on the output Tensor. All ops preserve the dtype of their inputs so that the
same graph runs in float32 for training and float64 for gradient checks.
"""
from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from mgmkit.heartofitall.errors import DomainError, ShapeError, expect_shape
from mgmkit.numerics.tensor import Tensor

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # sum out the axes numpy broadcast over
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor.from_op(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Tensor.from_op(a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor.from_op(a.data * b.data, (a, b),
                          lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    return Tensor.from_op(a.data * s, (a,), lambda g: (g * s,))


def total(a: Tensor) -> Tensor:
    return Tensor.from_op(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor.from_op(np.sum(a.data) / n, (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def gelu(x: Tensor) -> Tensor:
    # tanh approximation
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return Tensor.from_op(out, (x,), backward)


def silu_gate(gate: Tensor, up: Tensor) -> Tensor:
    """silu(gate) * up, the SwiGLU-shaped feed-forward gate."""
    sig = 1.0 / (1.0 + np.exp(-gate.data))
    act = gate.data * sig
    out = act * up.data

    def backward(g):
        d_act = sig * (1.0 + gate.data * (1.0 - sig))
        return g * up.data * d_act, g * act

    return Tensor.from_op(out, (gate, up), backward)


# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return Tensor.from_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, w: Tensor) -> Tensor:
    """x @ w.T with w stored as [d_out x d_in]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    return Tensor.from_op(x.data @ w.data.T, (x, w), lambda g: (g @ w.data, g.T @ x.data))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return Tensor.from_op(np.concatenate([p.data for p in parts], axis=0), parts, backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return Tensor.from_op(a.data[start:stop], (a,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table`; the backward pass scatter-adds into them."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError(f"embedding id outside [0, {table.shape[0]}): min {ids.min()}, max {ids.max()}")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return Tensor.from_op(table.data[ids], (table,), backward)


# normalisation and attention

def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1]
    r = 1.0 / np.sqrt(np.mean(x.data * x.data, axis=-1, keepdims=True) + eps)
    normed = x.data * r
    out = normed * gain.data

    def backward(g):
        gn = g * gain.data
        dx = r * gn - x.data * (r ** 3) * np.sum(gn * x.data, axis=-1, keepdims=True) / d
        dgain = np.sum(g * normed, axis=0)
        return dx, dgain

    return Tensor.from_op(out, (x, gain), backward)


def rope_tables(positions: np.ndarray, head_dim: int, base: float, dtype) -> Tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    inv_freq = base ** (-np.arange(half, dtype=np.float64) * 2.0 / head_dim)
    angles = np.outer(np.asarray(positions, dtype=np.float64), inv_freq)
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def rope(x: Tensor, n_heads: int, base: float, positions: Optional[np.ndarray] = None) -> Tensor:
    """Rotary position rotation on [T x d_model], half-split pairing per head."""
    T, d = x.shape
    hd = d // n_heads
    half = hd // 2
    if positions is None:
        positions = np.arange(T)
    cos, sin = rope_tables(positions, hd, base, x.dtype)
    cos, sin = cos[:, None, :], sin[:, None, :]
    xh = x.data.reshape(T, n_heads, hd)
    x1, x2 = xh[..., :half], xh[..., half:2 * half]
    out = xh.copy()
    out[..., :half] = x1 * cos - x2 * sin
    out[..., half:2 * half] = x1 * sin + x2 * cos

    def backward(g):
        gh = g.reshape(T, n_heads, hd)
        g1, g2 = gh[..., :half], gh[..., half:2 * half]
        dx = gh.copy()
        dx[..., :half] = g1 * cos + g2 * sin
        dx[..., half:2 * half] = -g1 * sin + g2 * cos
        return (dx.reshape(T, d),)

    return Tensor.from_op(out.reshape(T, d), (x,), backward)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int) -> Tensor:
    """Bidirectional multi-head attention: every position attends to every position."""
    T, d = q.shape
    hd = d // n_heads
    s = 1.0 / math.sqrt(hd)
    qh = q.data.reshape(T, n_heads, hd)
    kh = k.data.reshape(T, n_heads, hd)
    vh = v.data.reshape(T, n_heads, hd)
    scores = np.einsum("ihd,jhd->hij", qh, kh) * s
    weights = softmax(scores, axis=-1)
    out = np.einsum("hij,jhd->ihd", weights, vh).reshape(T, d)

    def backward(g):
        gh = g.reshape(T, n_heads, hd)
        gw = np.einsum("ihd,jhd->hij", gh, vh)
        gs = weights * (gw - np.sum(weights * gw, axis=-1, keepdims=True))
        gq = s * np.einsum("hij,jhd->ihd", gs, kh)
        gk = s * np.einsum("hij,ihd->jhd", gs, qh)
        gv = np.einsum("hij,ihd->jhd", weights, gh)
        return gq.reshape(T, d), gk.reshape(T, d), gv.reshape(T, d)

    return Tensor.from_op(out, (q, k, v), backward)


# losses

def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> Tuple[np.generic, np.ndarray]:
    """
    Weighted sum of per-position cross-entropies and its gradient.

    Args:
        logits: [n x V]
        targets: token ids [n] in [0, V)
        weights: per-position 0/1 flags [n]

    Returns:
        (loss, grad) where grad has logits' shape and is zero on weight-0 rows
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [n x V], got {logits.shape}")
    n, V = logits.shape
    expect_shape("targets", targets.shape, (n,))
    expect_shape("weights", weights.shape, (n,))
    if not np.isin(weights, (0, 1)).all():
        raise DomainError("weights must be binary")

    grad = np.zeros_like(logits)
    rows = np.flatnonzero(weights)
    if rows.size == 0:
        return logits.dtype.type(0.0), grad
    t = targets[rows]
    if t.min() < 0 or t.max() >= V:
        raise DomainError(f"target id outside [0, {V}): min {t.min()}, max {t.max()}")

    # only weighted rows are read, so other rows cannot influence the result
    sub_logits = logits[rows]
    m = np.max(sub_logits, axis=1, keepdims=True)
    shifted = sub_logits - m
    exp = np.exp(shifted)
    denom = np.sum(exp, axis=1, keepdims=True)
    nll = np.log(denom[:, 0]) - shifted[np.arange(rows.size), t]
    loss = np.sum(nll)

    probs = exp / denom
    probs[np.arange(rows.size), t] -= 1.0
    grad[rows] = probs
    return loss, grad


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    loss, grad = softmax_cross_entropy(logits.data, targets, weights)
    return Tensor.from_op(np.asarray(loss), (logits,), lambda g: (g * grad,))


def squared_error(a: Tensor, b: Tensor) -> Tensor:
    """mean over rows of the squared L2 distance between a and b."""
    diff = a.data - b.data
    n = diff.shape[0] if diff.ndim else 1

    def backward(g):
        ga = g * 2.0 * diff / n
        return ga, -ga

    return Tensor.from_op(np.sum(diff * diff) / n, (a, b), backward)


def add_all(parts: List[Tensor]) -> Tensor:
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out
