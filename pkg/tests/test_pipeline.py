import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scaar import pipeline
from scaar.config import default_config
from scaar.pipeline import (
    Conditioner,
    TrainCache,
    cross_session,
    run_attack,
    score,
    sweep_shift,
    sweep_traces,
    write_sweep_csv,
)
from scaar.traces import SplitError

SMALL = {
    "victim": {"layers": [["conv", 32], ["conv", 16], ["fc", 8]], "input_dim": 16, "n_classes": 4},
    "leakage": {"sigma": 0.5},
    "dataset": {"n_per_class": 50},
    "train": {"epochs": 10, "batch_size": 32, "learning_rate": 1e-2},
    "model": {"convs": [[7, 4, 2], [5, 8, 2], [3, 8, 2]]},
}


def small(**over):
    return default_config(**SMALL).with_overrides(**over)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_confusion_consistency(data):
    c = data.draw(st.integers(2, 6))
    n = data.draw(st.integers(1, 60))
    truth = np.array(data.draw(st.lists(st.integers(0, c - 1), min_size=n, max_size=n)))
    pred = np.array(data.draw(st.lists(st.integers(0, c - 1), min_size=n, max_size=n)))
    acc, conf = score(pred, truth, c)
    np.testing.assert_array_equal(conf.sum(axis=1), np.bincount(truth, minlength=c))
    assert acc == np.trace(conf) / n


@pytest.fixture(scope="module")
def cache():
    return TrainCache()


def test_run_attack_deterministic_report(cache):
    a = run_attack(small())
    b = run_attack(small(), cache)
    assert a.to_json() == b.to_json()
    assert a.n_profiling == 180 and a.n_attack == 20
    assert a.confusion.sum() == 20
    assert a.config_digest == small().digest()


def test_small_run_learns(cache):
    assert run_attack(small(), cache).accuracy > 0.5


def test_attack_phase_sees_only_samples():
    import inspect

    assert list(inspect.signature(pipeline.attack_phase).parameters) == ["model", "samples"]


def test_output_mode_reports_provenance(cache):
    rep = run_attack(small(mode="output_attribute"), cache)
    assert rep.mode == "output_attribute"
    assert '"mode": "output_attribute"' in rep.to_json()


def test_sweep_traces_boundaries(cache):
    pts = sweep_traces(small(), [4, 40, 180], cache)
    assert [n for n, _ in pts] == [4, 40, 180]
    assert all(r.n_attack == 20 for _, r in pts)
    assert pts[0][1].n_profiling == 4
    again = sweep_traces(small(), [4, 40, 180], cache)
    assert [r.accuracy for _, r in pts] == [r.accuracy for _, r in again]
    with pytest.raises(SplitError):
        sweep_traces(small(), [181], cache)
    with pytest.raises(ValueError):
        sweep_traces(small(), [40, 4], cache)


def test_sweep_shift_zero_equals_baseline(cache):
    pts = sweep_shift(small(), [0.0, 0.2], cache)
    assert pts[0][1].accuracy == run_attack(small(), cache).accuracy
    np.testing.assert_array_equal(pts[0][1].confusion, run_attack(small(), cache).confusion)


def test_cross_session_identical_seeds(cache):
    out = cross_session(small(), [0, 0], cache)
    assert out[0][1].accuracy == out[1][1].accuracy
    with pytest.raises(ValueError):
        cross_session(small(), [0], cache)


def test_conditioner_align_requires_fit():
    from scaar.config import PreprocessConfig

    c = Conditioner(PreprocessConfig(align=True, max_lag=3))
    with pytest.raises(RuntimeError):
        c(np.random.default_rng(0).normal(size=(2, 20)))
    x = np.random.default_rng(0).normal(size=(4, 20))
    assert c.fit(x)(x).shape == (4, 20)


def test_conditioner_decimates():
    from scaar.config import PreprocessConfig

    x = np.random.default_rng(1).normal(size=(3, 20))
    out = Conditioner(PreprocessConfig(moving_average=3, decimate=2))(x)
    assert out.shape == (3, 10)


def test_sweep_csv(tmp_path, cache):
    pts = sweep_traces(small(), [4, 40], cache)
    write_sweep_csv(pts, tmp_path / "s.csv", "n_traces")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["n_traces", "accuracy", "n_profiling", "n_attack"]
    assert [r[0] for r in rows[1:]] == ["4", "40"]
