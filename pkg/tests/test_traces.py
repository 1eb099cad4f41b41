import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scaar.traces import SplitConfig, SplitError, Trace, TraceSet, split, stratified_subsample, validate


def small_set(n=3, c=10, length=5):
    rng = np.random.default_rng(0)
    return TraceSet.from_arrays(rng.normal(size=(n, length)), np.arange(n) % c, c)


def test_validate_ok():
    assert validate(small_set()) == []


def test_validate_nan_sample():
    ts = small_set()
    x = ts.matrix.copy()
    x[1, 2] = np.nan
    bad = TraceSet.from_arrays(x, ts.labels, 10)
    problems = validate(bad)
    assert [i for i, _ in problems] == [1]
    assert "non-finite" in problems[0][1]


def test_validate_label_out_of_range():
    bad = TraceSet((Trace(np.ones(4), 10),), n_classes=10, fixed_len=4)
    problems = validate(bad)
    assert problems == [(0, "label out of range: 10 not in [0, 10)")]


def test_validate_length_mismatch_and_empty():
    ts = TraceSet((Trace(np.ones(4), 0), Trace(np.ones(3), 0)), 2, fixed_len=4)
    assert [i for i, _ in validate(ts)] == [1]
    assert validate(TraceSet((), 2)) == [(-1, "empty trace set")]


def test_trace_is_immutable():
    t = Trace(np.arange(3.0), 1)
    with pytest.raises(ValueError):
        t.samples[0] = 5


def labelled(n_per_class, c):
    labels = np.repeat(np.arange(c), n_per_class)
    x = np.arange(labels.size, dtype=np.float32)[:, None] + np.zeros((1, 3), dtype=np.float32)
    return TraceSet.from_arrays(x, labels, c)


def test_split_paper_sizes():
    ts = labelled(1000, 10)
    p, a = split(ts, SplitConfig(0.9, seed=1))
    assert (len(p), len(a)) == (9000, 1000)
    assert np.all(p.class_counts() == 900)


def test_split_single_class():
    p, a = split(labelled(10, 1), SplitConfig(0.9))
    assert (len(p), len(a)) == (9, 1)


def test_split_deterministic_and_disjoint():
    ts = labelled(37, 4)
    p1, a1 = split(ts, SplitConfig(0.7, seed=5))
    p2, a2 = split(ts, SplitConfig(0.7, seed=5))
    ids = lambda s: s.matrix[:, 0].tolist()
    assert ids(p1) == ids(p2) and ids(a1) == ids(a2)
    assert set(ids(p1)).isdisjoint(ids(a1))
    assert sorted(ids(p1) + ids(a1)) == ids(ts)
    p3, _ = split(ts, SplitConfig(0.7, seed=6))
    assert ids(p3) != ids(p1)


def test_split_names_deficient_class():
    labels = np.array([0] * 10 + [1])
    ts = TraceSet.from_arrays(np.ones((11, 2)), labels, 2)
    with pytest.raises(SplitError, match="class 1"):
        split(ts, SplitConfig(0.9))


def test_unstratified_split():
    p, a = split(labelled(10, 3), SplitConfig(0.5, seed=0, stratified=False))
    assert len(p) == 15 and len(a) == 15


@settings(max_examples=60, deadline=None)
@given(
    counts=st.lists(st.integers(2, 40), min_size=1, max_size=6),
    rho=st.floats(0.2, 0.8),
    seed=st.integers(0, 2**32),
)
def test_stratified_proportion_property(counts, rho, seed):
    labels = np.concatenate([np.full(n, c) for c, n in enumerate(counts)])
    ts = TraceSet.from_arrays(np.arange(labels.size)[:, None] * np.ones((1, 2)), labels, len(counts))
    try:
        p, a = split(ts, SplitConfig(rho, seed))
    except SplitError:
        return
    for c, n in enumerate(counts):
        assert abs(p.class_counts()[c] - round(rho * n)) <= 1
        assert p.class_counts()[c] + a.class_counts()[c] == n


def test_stratified_subsample_one_per_class():
    labels = np.repeat(np.arange(10), 20)
    idx = stratified_subsample(labels, 10, 10, seed=3)
    assert sorted(labels[idx].tolist()) == list(range(10))
    with pytest.raises(SplitError):
        stratified_subsample(labels, 10, 201, seed=3)
