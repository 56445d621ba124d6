"""Small differentiable substrate: LSTM/BiLSTM, pyramidal reduction, linear,
embedding, dropout, softmax and cross-entropy.

Everything is batched and time-major: sequences are ``(T, B, D)`` arrays with
a ``(T, B)`` 0/1 mask marking real frames.  Each ``*_forward`` returns its
output and a cache; the matching ``*_backward`` consumes the cache.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from . import kernels


class Params(OrderedDict):
    """Named parameter tensors."""

    def zeros_like(self) -> "Params":
        return Params((k, np.zeros_like(v, dtype=np.float64)) for k, v in self.items())

    def copy(self) -> "Params":
        return Params((k, v.copy()) for k, v in self.items())

    def astype(self, dtype) -> "Params":
        return Params((k, v.astype(dtype)) for k, v in self.items())

    def num_values(self) -> int:
        return sum(v.size for v in self.values())

    def add(self, name: str, value: np.ndarray):
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        self[name] = value


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def init_uniform(rng: np.random.Generator, shape, scale: float = 0.05) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


# -- LSTM ---------------------------------------------------------------------


def init_lstm(params: Params, prefix: str, d_in: int, hidden: int, rng, forget_bias=1.0):
    params.add(f"{prefix}.wx", init_uniform(rng, (d_in, 4 * hidden)))
    params.add(f"{prefix}.wh", init_uniform(rng, (hidden, 4 * hidden)))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = forget_bias
    params.add(f"{prefix}.b", b)


def lstm_step(x_t, h_prev, c_prev, w_x, w_h, b):
    """One LSTM cell update; returns ``(h_t, c_t, cache)``.

    Works on a single vector or a batch of row vectors.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != w_x.shape[0] or h_prev.shape[-1] != w_h.shape[0]:
        raise ValueError(
            f"shape mismatch: x {x_t.shape}, h {np.shape(h_prev)} vs W_x {w_x.shape}, W_h {w_h.shape}"
        )
    H = w_h.shape[0]
    z = x_t @ w_x + h_prev @ w_h + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    c_t = f * c_prev + i * g
    tc = np.tanh(c_t)
    h_t = o * tc
    return h_t, c_t, (x_t, h_prev, c_prev, i, f, o, g, tc)


def lstm_step_backward(dh_t, dc_t, cache, w_x, w_h):
    """Returns ``(dx, dh_prev, dc_prev, dw_x, dw_h, db)`` for batched rows."""
    x_t, h_prev, c_prev, i, f, o, g, tc = cache
    dc = dc_t + dh_t * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dh_t * tc * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ],
        axis=-1,
    )
    dx = dz @ w_x.T
    dh_prev = dz @ w_h.T
    dc_prev = dc * f
    return dx, dh_prev, dc_prev, x_t.T @ dz, h_prev.T @ dz, dz.sum(axis=0)


def lstm_forward(x, mask, w_x, w_h, b, reverse=False):
    """Unidirectional LSTM over a padded batch.  x: (T, B, D) -> (T, B, H)."""
    if x.shape[-1] != w_x.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} does not match W_x {w_x.shape}")
    xproj = x @ w_x + b
    out, h_prev, c_prev, acts, tanh_c = kernels.lstm_seq_forward(xproj, w_h, mask, reverse)
    return out, (x, mask, w_x, w_h, reverse, h_prev, c_prev, acts, tanh_c)


def lstm_backward(dout, cache):
    x, mask, w_x, w_h, reverse, h_prev, c_prev, acts, tanh_c = cache
    dxproj, dw_h = kernels.lstm_seq_backward(
        dout, w_h, mask, reverse, h_prev, c_prev, acts, tanh_c
    )
    T, B, D = x.shape
    flat = dxproj.reshape(T * B, -1)
    dx = (flat @ w_x.T).reshape(T, B, D)
    dw_x = x.reshape(T * B, D).T @ flat
    db = flat.sum(axis=0)
    return dx, dw_x, dw_h, db


def init_bilstm(params: Params, prefix: str, d_in: int, hidden: int, rng):
    init_lstm(params, f"{prefix}.fw", d_in, hidden, rng)
    init_lstm(params, f"{prefix}.bw", d_in, hidden, rng)


def bilstm_forward(x, mask, params: Params, prefix: str):
    """Concatenated forward-time and backward-time hidden sequences: (T, B, 2H)."""
    fw, cf = lstm_forward(x, mask, *(params[f"{prefix}.fw.{n}"] for n in ("wx", "wh", "b")))
    bw, cb = lstm_forward(
        x, mask, *(params[f"{prefix}.bw.{n}"] for n in ("wx", "wh", "b")), reverse=True
    )
    return np.concatenate([fw, bw], axis=-1), (cf, cb, fw.shape[-1])


def bilstm_backward(dout, cache, grads: Params, prefix: str):
    cf, cb, H = cache
    dx_f, *gf = lstm_backward(np.ascontiguousarray(dout[..., :H]), cf)
    dx_b, *gb = lstm_backward(np.ascontiguousarray(dout[..., H:]), cb)
    for direction, g in (("fw", gf), ("bw", gb)):
        for name, value in zip(("wx", "wh", "b"), g):
            grads[f"{prefix}.{direction}.{name}"] += value
    return dx_f + dx_b


def bilstm_layer(X, params: Params, prefix: str = "layer"):
    """Unbatched BiLSTM: X (T, D) -> (T, 2H)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("expected a non-empty (T, D) matrix")
    out, _ = bilstm_forward(X[:, None, :], np.ones((X.shape[0], 1)), params, prefix)
    return out[:, 0, :]


# -- pyramidal time reduction -------------------------------------------------


def reduced_lengths(lengths):
    return (np.asarray(lengths) + 1) // 2


def pyramidal_forward(x, lengths):
    """Concatenate frame pairs (2k, 2k+1).  Odd lengths repeat their last frame.

    x: (T, B, D) with per-item true ``lengths``; returns ((U, B, 2D), new lengths).
    """
    T, B, D = x.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    new_lengths = reduced_lengths(lengths)
    U = (T + 1) // 2
    k = np.arange(U)[:, None]
    first = np.minimum(2 * k, lengths[None, :] - 1)
    second = np.minimum(2 * k + 1, lengths[None, :] - 1)
    valid = k < new_lengths[None, :]
    first = np.where(valid, first, 0)
    second = np.where(valid, second, 0)
    cols = np.arange(B)[None, :]
    out = np.concatenate([x[first, cols], x[second, cols]], axis=-1)
    out *= valid[..., None]
    return out, new_lengths, (first, second, valid, x.shape)


def pyramidal_backward(dout, cache):
    first, second, valid, shape = cache
    T, B, D = shape
    dx = np.zeros(shape)
    cols = np.broadcast_to(np.arange(B)[None, :], first.shape)
    d = dout * valid[..., None]
    np.add.at(dx, (first, cols), d[..., :D])
    np.add.at(dx, (second, cols), d[..., D:])
    return dx


def pyramidal_reduce(X):
    """Unbatched form: (T, D) -> (ceil(T/2), 2D)."""
    X = np.asarray(X, dtype=np.float64)
    out, _, _ = pyramidal_forward(X[:, None, :], [X.shape[0]])
    return out[:, 0, :]


# -- dense pieces -------------------------------------------------------------


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dy, x, w):
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dy = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, flat_x.T @ flat_dy, flat_dy.sum(axis=0)


def embedding_forward(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("symbol index out of range")
    return table[ids]


def embedding_backward(dy, ids, table_shape):
    dtable = np.zeros(table_shape)
    np.add.at(dtable, np.asarray(ids, dtype=np.int64), dy)
    return dtable


def dropout_mask(rng: Optional[np.random.Generator], shape, rate: float, training: bool):
    """Inverted-dropout multiplier, or None when inactive."""
    if not training or rate <= 0.0 or rng is None:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[axis] == 0:
        raise ValueError("log_softmax of an empty vector")
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(dist, target: int) -> float:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.size == 0:
        raise ValueError("cross-entropy of an empty distribution")
    p = dist[target]
    return float(-np.log(p)) if p > 0 else float("inf")


# -- gradient utilities -------------------------------------------------------


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Params, max_norm: float) -> Tuple[Params, float]:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = Params((k, v * scale) for k, v in grads.items())
    return grads, norm


def numerical_gradient(f, params: Params, names: Optional[Iterable[str]] = None, step=1e-4):
    """Central finite differences of scalar ``f(params)`` for each parameter."""
    out = Params()
    for name in names if names is not None else params.keys():
        p = params[name]
        g = np.zeros_like(p, dtype=np.float64)
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = f(params)
            flat[idx] = orig - step
            down = f(params)
            flat[idx] = orig
            g.reshape(-1)[idx] = (up - down) / (2 * step)
        out[name] = g
    return out


def max_relative_error(a, b, floor=1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
