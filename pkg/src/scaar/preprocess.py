"""Trace conditioning: standardization, shifting, alignment, smoothing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .traces import Trace, TraceSet


class ZeroVarianceError(ValueError):
    pass


@dataclass(frozen=True)
class ShiftConfig:
    ratio: float = 0.0
    seed: int = 0
    pad_value: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError("shift ratio must lie in [0, 1)")


def standardize_array(x: np.ndarray) -> np.ndarray:
    """Row-wise zero mean / unit population std. Works on 1-D or 2-D input."""
    x64 = np.asarray(x, dtype=np.float64)
    if x64.shape[-1] < 2:
        raise ValueError("standardize needs at least two samples")
    mu = x64.mean(axis=-1, keepdims=True)
    sd = x64.std(axis=-1, keepdims=True)
    if np.any(sd == 0):
        raise ZeroVarianceError("cannot standardize a constant trace")
    return ((x64 - mu) / sd).astype(np.float32)


def standardize(t: Trace) -> Trace:
    return t.replace(samples=standardize_array(t.samples))


def shift_array(x: np.ndarray, offset: int, pad_value: float = 0.0) -> np.ndarray:
    n = x.shape[-1]
    if abs(offset) >= n:
        raise ValueError(f"|offset| {abs(offset)} must be smaller than the trace length {n}")
    out = np.full_like(x, pad_value)
    if offset >= 0:
        out[..., offset:] = x[..., : n - offset]
    else:
        out[..., :offset] = x[..., -offset:]
    return out


def shift(t: Trace, offset: int, pad_value: float = 0.0) -> Trace:
    """Positive offsets move content right; vacated samples take pad_value."""
    return t.replace(samples=shift_array(t.samples, int(offset), pad_value))


def shift_matrix(x: np.ndarray, offsets, pad_value: float = 0.0) -> np.ndarray:
    """Shift every row of an (N, L) matrix by its own offset."""
    x = np.asarray(x)
    n, length = x.shape
    offsets = np.asarray(offsets, dtype=np.int64)
    if np.any(np.abs(offsets) >= length):
        raise ValueError("every |offset| must be smaller than the trace length")
    src = np.arange(length)[None, :] - offsets[:, None]
    valid = (src >= 0) & (src < length)
    out = np.take_along_axis(x, np.clip(src, 0, length - 1), axis=1)
    out[~valid] = pad_value
    return out


def draw_offsets(n: int, length: int, cfg: ShiftConfig) -> np.ndarray:
    m = int(math.floor(cfg.ratio * length))
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5F1F7]))
    return rng.integers(-m, m + 1, size=n)


def random_shift(ts: TraceSet, cfg: ShiftConfig) -> TraceSet:
    if ts.fixed_len is None:
        raise ValueError("random_shift requires a fixed-length trace set")
    offs = draw_offsets(len(ts), ts.fixed_len, cfg)
    if not np.any(offs):
        return ts
    return ts.with_samples(shift_matrix(ts.matrix, offs, cfg.pad_value))


def _lag_order(max_lag: int):
    yield 0
    for k in range(1, max_lag + 1):
        yield -k
        yield k


def xcorr_lag(reference: np.ndarray, x: np.ndarray, max_lag: int) -> int:
    """Lag maximizing the Pearson correlation of reference[i] against x[i + lag]."""
    r = np.asarray(reference, dtype=np.float64)
    s = np.asarray(x, dtype=np.float64)
    if r.shape != s.shape:
        raise ValueError("reference and trace lengths differ")
    n = r.shape[0]
    if not 0 <= max_lag < n:
        raise ValueError("max_lag must lie in [0, length)")
    if r.std() == 0 or s.std() == 0:
        raise ZeroVarianceError("cross-correlation of a constant trace is undefined")
    best, best_lag = -np.inf, 0
    for lag in _lag_order(max_lag):
        if lag >= 0:
            a, b = r[: n - lag], s[lag:]
        else:
            a, b = r[-lag:], s[: n + lag]
        a = a - a.mean()
        b = b - b.mean()
        den = math.sqrt(float(a @ a) * float(b @ b))
        if den == 0:
            continue
        c = float(a @ b) / den
        # strict comparison keeps the earlier lag in the tie order
        if c > best:
            best, best_lag = c, lag
    return best_lag


def align_xcorr(reference: Trace, t: Trace, max_lag: int) -> tuple[Trace, int]:
    lag = xcorr_lag(reference.samples, t.samples, max_lag)
    return shift(t, -lag, 0.0), lag


def align_set(ts: TraceSet, reference: np.ndarray, max_lag: int) -> tuple[TraceSet, np.ndarray]:
    lags = np.array([xcorr_lag(reference, row, max_lag) for row in ts.matrix], dtype=np.int64)
    return ts.with_samples(shift_matrix(ts.matrix, -lags, 0.0)), lags


def moving_average_array(x: np.ndarray, window: int) -> np.ndarray:
    if window < 1:
        raise ValueError("window must be >= 1")
    x64 = np.asarray(x, dtype=np.float64)
    c = np.cumsum(x64, axis=-1)
    out = c.copy()
    out[..., window:] = c[..., window:] - c[..., :-window]
    counts = np.minimum(np.arange(1, x64.shape[-1] + 1), window)
    return (out / counts).astype(np.float32)


def moving_average(t: Trace, window: int) -> Trace:
    """Causal mean over the last `window` samples; the first windows are truncated."""
    return t.replace(samples=moving_average_array(t.samples, window))


def decimate_array(x: np.ndarray, factor: int) -> np.ndarray:
    if factor < 1:
        raise ValueError("decimation factor must be >= 1")
    return np.ascontiguousarray(np.asarray(x)[..., ::factor])


def decimate(t: Trace, factor: int) -> Trace:
    return t.replace(samples=decimate_array(t.samples, factor))
