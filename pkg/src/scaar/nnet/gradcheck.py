"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AttackModel


@dataclass
class GradCheckResult:
    max_rel_error: float
    rel_errors: np.ndarray
    checked: list  # (param name, flat index)
    skipped_kinks: int


def _relu_pattern(model: AttackModel, x) -> list:
    return [a > 0 for a in model.forward_cached(x).acts]


def relative_error(a: float, n: float, floor: float = 1e-8) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def gradient_check(
    model: AttackModel,
    x: np.ndarray,
    y: np.ndarray,
    n_params: int = 100,
    h: float = 1e-3,
    seed: int = 0,
    floor: float = 1e-8,
) -> GradCheckResult:
    """Compare analytic gradients (in the model's dtype) with central differences.

    The difference quotient is always evaluated in float64 on the same
    parameter values, so a float32 model is judged on its own gradient
    arithmetic rather than on float32 cancellation in the loss. Parameters
    whose +-h perturbation flips any ReLU are skipped and replaced: the
    difference quotient is not a derivative across a kink.
    """
    _, grads = model.loss_and_grads(x, y)
    ref = model.copy(np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    base = _relu_pattern(ref, x64)
    index = [(k, i) for k, v in ref.params.items() for i in range(v.size)]
    order = np.random.default_rng(seed).permutation(len(index))
    errs, checked, skipped = [], [], 0
    for j in order:
        if len(checked) == n_params:
            break
        name, i = index[j]
        flat = ref.params[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        lp = ref.loss(x64, y)
        kink = any(np.any(p != b) for p, b in zip(_relu_pattern(ref, x64), base))
        flat[i] = orig - h
        lm = ref.loss(x64, y)
        kink = kink or any(np.any(p != b) for p, b in zip(_relu_pattern(ref, x64), base))
        flat[i] = orig
        if kink:
            skipped += 1
            continue
        numeric = (lp - lm) / (2 * h)
        errs.append(relative_error(float(grads[name].reshape(-1)[i]), numeric, floor))
        checked.append((name, int(i)))
    errs = np.array(errs)
    return GradCheckResult(float(errs.max()) if errs.size else 0.0, errs, checked, skipped)
