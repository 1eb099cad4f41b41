"""Leakage assessment: pointwise Welch t-test (TVLA) and SEMA summaries."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .traces import TraceSet

TVLA_THRESHOLD = 4.5


class DegenerateStatisticError(ValueError):
    pass


def welch_t(a, b) -> float:
    """Welch's t with unbiased (n-1) variances."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least two samples")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0 and vb == 0:
        raise DegenerateStatisticError("both groups have zero variance")
    return float((a.mean() - b.mean()) / np.sqrt(va / a.size + vb / b.size))


def welch_t_columns(xa: np.ndarray, xb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column t for (nA, L) and (nB, L) matrices.

    Returns (t, degenerate); columns where both variances vanish get t = 0
    and degenerate = True.
    """
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    na, nb = xa.shape[0], xb.shape[0]
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least two traces")
    ma, mb = xa.mean(axis=0), xb.mean(axis=0)
    va = ((xa - ma) ** 2).sum(axis=0) / (na - 1)
    vb = ((xb - mb) ** 2).sum(axis=0) / (nb - 1)
    se2 = va / na + vb / nb
    degenerate = se2 == 0
    t = np.zeros_like(ma)
    ok = ~degenerate
    t[ok] = (ma[ok] - mb[ok]) / np.sqrt(se2[ok])
    return t, degenerate


def leaky_windows(t: np.ndarray, threshold: float = TVLA_THRESHOLD) -> list[tuple[int, int]]:
    """Maximal half-open runs [start, end) where |t| > threshold."""
    hot = np.abs(np.asarray(t)) > threshold
    if not hot.any():
        return []
    edges = np.diff(np.concatenate([[0], hot.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


@dataclass
class TvlaReport:
    t: np.ndarray
    threshold: float
    windows: list
    n_a: int
    n_b: int
    degenerate: np.ndarray = field(default=None, repr=False)

    @property
    def max_abs_t(self) -> float:
        return float(np.max(np.abs(self.t))) if self.t.size else 0.0

    @property
    def argmax(self) -> int:
        return int(np.argmax(np.abs(self.t)))

    def max_window(self) -> tuple[int, int] | None:
        """The window holding the largest |t|, if any."""
        k = self.argmax
        for s, e in self.windows:
            if s <= k < e:
                return (s, e)
        return None

    def flagged(self) -> np.ndarray:
        mask = np.zeros(self.t.shape[0], dtype=bool)
        for s, e in self.windows:
            mask[s:e] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "length": int(self.t.shape[0]),
            "max_abs_t": round(self.max_abs_t, 10),
            "argmax": self.argmax,
            "windows": [list(w) for w in self.windows],
            "degenerate_indices": np.flatnonzero(self.degenerate).tolist() if self.degenerate is not None else [],
        }

    def write_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "t"])
            for i, v in enumerate(self.t):
                w.writerow([i, repr(float(v))])


def tvla_matrices(xa: np.ndarray, xb: np.ndarray, threshold: float = TVLA_THRESHOLD) -> TvlaReport:
    if xa.shape[1] != xb.shape[1]:
        raise ValueError(f"group lengths differ: {xa.shape[1]} vs {xb.shape[1]}")
    t, deg = welch_t_columns(xa, xb)
    return TvlaReport(t, threshold, leaky_windows(t, threshold), xa.shape[0], xb.shape[0], deg)


def tvla(set_a: TraceSet, set_b: TraceSet, threshold: float = TVLA_THRESHOLD) -> TvlaReport:
    if set_a.fixed_len is None or set_b.fixed_len is None:
        raise ValueError("TVLA needs fixed-length trace sets")
    return tvla_matrices(set_a.matrix, set_b.matrix, threshold)


def class_vs_rest(ts: TraceSet, target: int = 0, seed: int = 0) -> tuple[TraceSet, TraceSet]:
    """Traces of `target` against an equally sized uniform sample of the other classes."""
    labels = ts.labels
    own = np.flatnonzero(labels == target)
    rest = np.flatnonzero(labels != target)
    if own.size < 2 or rest.size < 2:
        raise ValueError(f"class {target} vs rest needs two traces on each side")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E57]))
    k = min(own.size, rest.size)
    pick = np.sort(rng.choice(rest, size=k, replace=False))
    return ts.subset(own[:k] if own.size > k else own), ts.subset(pick)


def class_vs_class(ts: TraceSet, a: int, b: int) -> tuple[TraceSet, TraceSet]:
    la = np.flatnonzero(ts.labels == a)
    lb = np.flatnonzero(ts.labels == b)
    return ts.subset(la), ts.subset(lb)


def random_halves(ts: TraceSet, target: int = 0, seed: int = 0) -> tuple[TraceSet, TraceSet]:
    """Two disjoint random halves of one class; a same-distribution null pair."""
    own = np.flatnonzero(ts.labels == target)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4A1F]))
    perm = rng.permutation(own)
    h = perm.size // 2
    return ts.subset(np.sort(perm[:h])), ts.subset(np.sort(perm[h : 2 * h]))


@dataclass
class SemaSummary:
    mean_a: np.ndarray
    mean_b: np.ndarray
    difference: np.ndarray


def sema_summary(set_a: TraceSet, set_b: TraceSet) -> SemaSummary:
    if len(set_a) == 0 or len(set_b) == 0:
        raise ValueError("SEMA summary needs two nonempty groups")
    if set_a.fixed_len != set_b.fixed_len or set_a.fixed_len is None:
        raise ValueError("SEMA summary needs fixed-length groups of equal length")
    ma = set_a.matrix.astype(np.float64).mean(axis=0)
    mb = set_b.matrix.astype(np.float64).mean(axis=0)
    return SemaSummary(ma, mb, ma - mb)
