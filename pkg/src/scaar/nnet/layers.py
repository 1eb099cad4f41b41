"""Layer primitives. Activations are channels-last: (batch, length, channels)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_len(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1 if length >= kernel else 0


def _im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # (N, L, Cin) -> (N, Lout, k*Cin), row-major over (k, Cin)
    win = sliding_window_view(x, kernel, axis=1)[:, ::stride]
    n, lout, cin, k = win.shape
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n, lout, k * cin)


def _wmat(w: np.ndarray) -> np.ndarray:
    cout, cin, k = w.shape
    return np.ascontiguousarray(w.transpose(0, 2, 1)).reshape(cout, k * cin)


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    """w has shape (Cout, Cin, k). Returns output and the im2col cache."""
    cols = _im2col(x, w.shape[2], stride)
    out = cols @ _wmat(w).T
    out += b
    return out, cols


def conv1d_backward(dout, cols, w, stride, in_len, need_dx=True):
    cout, cin, k = w.shape
    n, lout, _ = dout.shape
    d2 = dout.reshape(n * lout, cout)
    dw = (d2.T @ cols.reshape(n * lout, k * cin)).reshape(cout, k, cin).transpose(0, 2, 1)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ _wmat(w)).reshape(n, lout, k, cin)
    dx = np.zeros((n, in_len, cin), dtype=dout.dtype)
    span = stride * (lout - 1) + 1
    for j in range(k):
        dx[:, j : j + span : stride, :] += dcols[:, :, j, :]
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dout, out):
    return dout * (out > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
