import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scaar.attribution import AttributionMap, grad_cam, interval_iou, peak_window, receptive_centers
from scaar.nnet.model import AttackModel, LengthMismatchError, ModelSpec

SPEC = ModelSpec(120, 3, ((7, 4, 2), (5, 6, 2), (3, 8, 2)), seed=1)


def amap(r):
    return AttributionMap(np.asarray(r, dtype=np.float64), 0, 2)


def brute_window(r, p):
    total = r.sum()
    for width in range(1, r.size + 1):
        for s in range(r.size - width + 1):
            if r[s : s + width].sum() >= p * total * (1 - 1e-12):
                return (s, s + width)


def test_spike_window():
    r = np.zeros(50)
    r[17] = 1
    assert peak_window(amap(r), 0.9) == (17, 18)


@pytest.mark.parametrize("length", [10, 11, 1792])
def test_uniform_window_starts_at_zero(length):
    assert peak_window(amap(np.ones(length)), 0.5) == (0, -(-length // 2))


def test_peak_window_errors():
    with pytest.raises(ValueError):
        peak_window(amap(np.zeros(5)), 0.5)
    with pytest.raises(ValueError):
        peak_window(amap(np.ones(5)), 0)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1)), st.floats(0.05, 1.0))
def test_peak_window_matches_brute_force(r, p):
    if r.sum() <= 0:
        return
    assert peak_window(amap(r), p) == brute_window(r, p)


def test_zero_gradient_gives_flagged_zero_map():
    m = AttackModel(SPEC)
    m.params["dense.w"][:] = 0
    out = grad_cam(m, np.random.default_rng(0).normal(size=120), 1)
    assert out.all_zero and np.all(out.relevance == 0) and out.relevance.size == 120


def test_last_block_matches_closed_form():
    # logit_c = mean_t(A) . w_c + b_c, so every position's gradient is w_c / T
    m = AttackModel(SPEC, np.float64)
    x = np.random.default_rng(2).normal(size=120)
    for c in range(3):
        out = grad_cam(m, x, c, layer="conv2")
        acts = m.forward_cached(x).acts[2][0]
        cam = np.maximum(acts @ m.params["dense.w"][:, c], 0)
        ref = np.interp(np.arange(120), receptive_centers(m, 2), cam)
        if ref.max() > 0:
            np.testing.assert_allclose(out.relevance, ref / ref.max(), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 120, elements=st.floats(-5, 5)), st.integers(0, 2), st.sampled_from(["conv0", "conv1", "conv2"]))
def test_map_shape_range_and_purity(x, c, layer):
    m = AttackModel(SPEC)
    out = grad_cam(m, x, c, layer)
    assert out.relevance.shape == (120,)
    assert np.all(out.relevance >= 0)
    assert out.all_zero or out.relevance.max() == pytest.approx(1.0)
    assert grad_cam(m, x, c, layer).relevance.tobytes() == out.relevance.tobytes()


def test_bad_layer_and_length():
    m = AttackModel(SPEC)
    with pytest.raises(ValueError):
        grad_cam(m, np.zeros(120), 0, "dense")
    with pytest.raises(ValueError):
        grad_cam(m, np.zeros(120), 0, 5)
    with pytest.raises(LengthMismatchError):
        grad_cam(m, np.zeros(100), 0)


def test_receptive_centers():
    m = AttackModel(SPEC)
    # block 0: kernel 7 stride 2 -> centers 3, 5, 7, ...
    np.testing.assert_array_equal(receptive_centers(m, 0)[:3], [3, 5, 7])
    assert receptive_centers(m, 2)[-1] < 120


def test_interval_iou():
    assert interval_iou((0, 10), (5, 15)) == pytest.approx(5 / 15)
    assert interval_iou((0, 10), (0, 10)) == 1.0
    assert interval_iou((0, 3), (5, 8)) == 0.0


def test_csv_export(tmp_path):
    a = amap([0.0, 0.5, 1.0])
    a.write_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines == ["index,relevance", "0,0.0", "1,0.5", "2,1.0"]
