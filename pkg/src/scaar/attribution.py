"""1D Grad-CAM over the attack model's convolutional blocks."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .nnet.model import AttackModel


@dataclass
class AttributionMap:
    relevance: np.ndarray
    cls: int
    layer: int
    all_zero: bool = False

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "relevance"])
            for i, v in enumerate(self.relevance):
                w.writerow([i, repr(float(v))])


def _resolve_layer(model: AttackModel, layer) -> int:
    n = len(model.spec.convs)
    if isinstance(layer, str):
        if not (layer.startswith("conv") and layer[4:].isdigit()):
            raise ValueError(f"unknown layer {layer!r}; expected conv0..conv{n - 1}")
        layer = int(layer[4:])
    if layer < 0:
        layer += n
    if not 0 <= layer < n:
        raise ValueError(f"no conv block {layer}; model has {n}")
    return layer


def receptive_centers(model: AttackModel, layer: int) -> np.ndarray:
    """Input-sample coordinate of the receptive-field center of every position in a block."""
    jump, rf = 1, 1
    for c in model.spec.convs[: layer + 1]:
        rf += (c.kernel - 1) * jump
        jump *= c.stride
    n_out = model.spec.block_lengths()[layer]
    return np.arange(n_out) * jump + (rf - 1) / 2.0


def grad_cam(model: AttackModel, trace, cls: int, layer="conv2") -> AttributionMap:
    """Relevance of every input sample for class `cls`.

    Channel weights are the position-averaged gradients of the class logit
    w.r.t. the tapped block's activations; the rectified weighted channel sum
    is linearly interpolated back to input resolution and max-normalized.
    """
    li = _resolve_layer(model, layer)
    if not 0 <= cls < model.spec.n_classes:
        raise ValueError(f"class {cls} out of range")
    x = np.asarray(trace, dtype=np.float64)
    m64 = model.copy(np.float64)
    cache = m64.forward_cached(x)
    dlogits = np.zeros_like(cache.logits)
    dlogits[0, cls] = 1.0
    _, act_grads = m64.backward(cache, dlogits, need_act_grads=True)
    acts = cache.acts[li][0]
    alpha = act_grads[li][0].mean(axis=0)
    cam = np.maximum(acts @ alpha, 0.0)
    relevance = np.interp(np.arange(model.spec.input_len), receptive_centers(model, li), cam)
    peak = relevance.max()
    if peak <= 0:
        return AttributionMap(np.zeros(model.spec.input_len), cls, li, all_zero=True)
    return AttributionMap(relevance / peak, cls, li)


def peak_window(amap: AttributionMap, fraction: float) -> tuple[int, int]:
    """Smallest [start, end) holding at least `fraction` of the relevance mass; earliest on ties."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    r = np.asarray(amap.relevance, dtype=np.float64)
    total = r.sum()
    if total <= 0:
        raise ValueError("cannot locate a peak window in an all-zero map")
    need = fraction * total * (1.0 - 1e-12)
    csum = np.concatenate([[0.0], np.cumsum(r)])
    best = (0, r.size)
    end = 0
    for start in range(r.size):
        end = max(end, start + 1)
        while end < r.size and csum[end] - csum[start] < need:
            end += 1
        if csum[end] - csum[start] < need:
            break
        if end - start < best[1] - best[0]:
            best = (start, end)
    return best


def interval_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0
