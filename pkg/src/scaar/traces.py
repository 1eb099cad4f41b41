"""Trace and trace-set data model plus deterministic profiling/attack splitting."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np


class SplitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Trace:
    """One captured (or simulated) emission with its class-attribute label."""

    samples: np.ndarray
    label: int
    session_id: int = 0
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32)
        if s.ndim != 1:
            raise ValueError("trace samples must be one-dimensional")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "session_id", int(self.session_id))
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self) -> int:
        return self.samples.shape[0]

    def replace(self, samples=None, label=None) -> "Trace":
        return Trace(
            self.samples if samples is None else samples,
            self.label if label is None else label,
            self.session_id,
            self.meta,
        )


@dataclass(frozen=True, eq=False)
class TraceSet:
    traces: tuple
    n_classes: int
    fixed_len: int | None = None
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        object.__setattr__(self, "meta", dict(self.meta))
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")

    @classmethod
    def from_arrays(
        cls,
        samples: np.ndarray,
        labels: Sequence[int],
        n_classes: int,
        session_id: int = 0,
        meta: Mapping[str, object] | None = None,
    ) -> "TraceSet":
        """Build a fixed-length set from an (N, L) matrix."""
        x = np.ascontiguousarray(samples, dtype=np.float32)
        if x.ndim != 2:
            raise ValueError("samples must be an (N, L) matrix")
        traces = tuple(Trace(x[i], labels[i], session_id) for i in range(x.shape[0]))
        ts = cls(traces, n_classes, x.shape[1], meta or {})
        # reuse the contiguous block instead of re-stacking rows
        x.setflags(write=False)
        ts.__dict__["matrix"] = x
        return ts

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    def __getitem__(self, i) -> Trace:
        return self.traces[i]

    @cached_property
    def matrix(self) -> np.ndarray:
        """Samples stacked as an (N, L) float32 matrix; fixed-length sets only."""
        if self.fixed_len is None:
            raise ValueError("matrix view requires a fixed-length trace set")
        if not self.traces:
            return np.zeros((0, self.fixed_len), dtype=np.float32)
        m = np.stack([t.samples for t in self.traces])
        m.setflags(write=False)
        return m

    @cached_property
    def labels(self) -> np.ndarray:
        lab = np.array([t.label for t in self.traces], dtype=np.int64)
        lab.setflags(write=False)
        return lab

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices: Iterable[int]) -> "TraceSet":
        idx = np.asarray(list(indices), dtype=np.int64)
        sub = TraceSet(tuple(self.traces[i] for i in idx), self.n_classes, self.fixed_len, self.meta)
        if "matrix" in self.__dict__:
            m = self.matrix[idx]
            m.setflags(write=False)
            sub.__dict__["matrix"] = m
        return sub

    def with_samples(self, samples: np.ndarray) -> "TraceSet":
        """Same labels/sessions/meta, new fixed-length sample matrix."""
        x = np.ascontiguousarray(samples, dtype=np.float32)
        if x.shape[0] != len(self):
            raise ValueError("row count must match the number of traces")
        traces = tuple(t.replace(samples=x[i]) for i, t in enumerate(self.traces))
        ts = TraceSet(traces, self.n_classes, x.shape[1], self.meta)
        x.setflags(write=False)
        ts.__dict__["matrix"] = x
        return ts

    def with_labels(self, labels: Sequence[int]) -> "TraceSet":
        traces = tuple(t.replace(label=int(l)) for t, l in zip(self.traces, labels))
        ts = TraceSet(traces, self.n_classes, self.fixed_len, self.meta)
        if "matrix" in self.__dict__:
            ts.__dict__["matrix"] = self.matrix
        return ts


def validate(ts: TraceSet) -> list[tuple[int, str]]:
    """Return every invariant violation as (trace index, message); empty means ok.

    Set-level problems use index -1.
    """
    out = []
    if len(ts) == 0:
        out.append((-1, "empty trace set"))
    if ts.fixed_len is not None and ts.fixed_len < 1:
        out.append((-1, "fixed_len must be >= 1"))
    for i, t in enumerate(ts.traces):
        if len(t) < 1:
            out.append((i, "empty trace"))
        elif not np.all(np.isfinite(t.samples)):
            bad = int(np.flatnonzero(~np.isfinite(t.samples))[0])
            out.append((i, f"non-finite sample at position {bad}"))
        if not 0 <= t.label < ts.n_classes:
            out.append((i, f"label out of range: {t.label} not in [0, {ts.n_classes})"))
        if ts.fixed_len is not None and len(t) != ts.fixed_len:
            out.append((i, f"length {len(t)} != fixed_len {ts.fixed_len}"))
    return out


@dataclass(frozen=True)
class SplitConfig:
    profiling_fraction: float = 0.9
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.profiling_fraction < 1.0:
            raise ValueError("profiling_fraction must lie in (0, 1)")


def split_indices(labels: np.ndarray, n_classes: int, cfg: SplitConfig) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    n = labels.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5C1]))
    rho = cfg.profiling_fraction
    if not cfg.stratified:
        perm = rng.permutation(n)
        k = int(round(rho * n))
        return np.sort(perm[:k]), np.sort(perm[k:])

    prof, att = [], []
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        k = int(round(rho * idx.size))
        # both sides must receive at least one trace of every present class
        if k < 1 or k > idx.size - 1:
            raise SplitError(
                f"class {c} has {idx.size} trace(s); too few for a stratified split at fraction {rho}"
            )
        perm = rng.permutation(idx)
        prof.append(perm[:k])
        att.append(perm[k:])
    return np.sort(np.concatenate(prof)), np.sort(np.concatenate(att))


def split(ts: TraceSet, cfg: SplitConfig) -> tuple[TraceSet, TraceSet]:
    """Disjoint, seed-deterministic profiling/attack partition."""
    problems = validate(ts)
    if problems:
        raise ValueError(f"invalid trace set: {problems[:3]}")
    p, a = split_indices(ts.labels, ts.n_classes, cfg)
    return ts.subset(p), ts.subset(a)


def stratified_subsample(labels: np.ndarray, n_classes: int, n: int, seed: int) -> np.ndarray:
    """Choose n indices with per-class counts as even as the pool allows."""
    labels = np.asarray(labels)
    if n > labels.shape[0]:
        raise SplitError(f"requested {n} traces but only {labels.shape[0]} available")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5AB]))
    pools = [rng.permutation(np.flatnonzero(labels == c)) for c in range(n_classes)]
    counts = np.array([p.size for p in pools])
    take = np.zeros(n_classes, dtype=np.int64)
    remaining = n
    # round-robin fill keeps classes balanced up to pool exhaustion
    while remaining > 0:
        open_ = np.flatnonzero(take < counts)
        share = max(remaining // open_.size, 1)
        for c in open_:
            add = min(share, counts[c] - take[c], remaining)
            take[c] += add
            remaining -= add
            if remaining == 0:
                break
    chosen = np.concatenate([pools[c][: take[c]] for c in range(n_classes)])
    return np.sort(chosen)
