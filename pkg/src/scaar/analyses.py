"""Simulation analogs of the supporting analyses: leak localization (TVLA and
Grad-CAM against the simulator's ground truth), zero-vs-random SEMA, and the
LLM token-length / token-distinguishability checks."""

from __future__ import annotations

import numpy as np

from . import assess
from .attribution import AttributionMap, grad_cam, interval_iou, peak_window
from .config import ExperimentConfig
from .leaksim import LeakageModel, gen_llm_set, simulate_inference, simulate_llm, trace_rng
from .pipeline import TrainCache, make_dataset, profile
from .traces import TraceSet, split


def _intersects(a, b) -> bool:
    return a is not None and b is not None and min(a[1], b[1]) > max(a[0], b[0])


def leak_localization(
    cfg: ExperimentConfig,
    layer: int = 0,
    target_class: int = 0,
    fraction: float = 0.8,
    cache: TrainCache | None = None,
) -> dict:
    """Compare TVLA windows and Grad-CAM peak windows with the leaking layer's sample range."""
    m = cfg.leakage
    if m.zero_skip == "time":
        raise ValueError("localization needs fixed op timing; use zero_skip 'off' or 'amplitude'")
    region = cfg.victim.layer_region(layer, m)
    ds = make_dataset(cfg)
    ga, gb = assess.class_vs_rest(ds, target_class, cfg.seed)
    rep = assess.tvla(ga, gb)
    flagged = rep.flagged()
    in_region = int(flagged[region[0] : region[1]].sum())
    tvla_max = rep.max_window()

    p, a = split(ds, cfg.split)
    prof = profile(cfg, p, cache)
    x = prof.conditioner(a.matrix)
    if x.shape[1] != ds.fixed_len:
        raise ValueError("Grad-CAM localization requires length-preserving preprocessing")
    pred = prof.model.predict(x)
    correct = np.flatnonzero(pred == a.labels)
    ious, hits, mean_rel = [], 0, np.zeros(x.shape[1])
    for i in correct:
        amap = grad_cam(prof.model, x[i], int(pred[i]))
        if amap.all_zero:
            ious.append(0.0)
            continue
        win = peak_window(amap, fraction)
        ious.append(interval_iou(win, region))
        hits += _intersects(win, tvla_max)
        mean_rel += amap.relevance
    ious = np.array(ious)
    mean_map = AttributionMap(mean_rel / max(mean_rel.max(), 1e-300), -1, len(prof.model.spec.convs) - 1)
    mean_win = peak_window(mean_map, fraction)
    return {
        "region": list(region),
        "tvla": {
            "max_abs_t": rep.max_abs_t,
            "argmax": rep.argmax,
            "n_windows": len(rep.windows),
            "max_window": list(tvla_max) if tvla_max else None,
            "max_window_coverage": (
                max(0, min(tvla_max[1], region[1]) - max(tvla_max[0], region[0])) / (region[1] - region[0])
                if tvla_max
                else 0.0
            ),
            "region_coverage": in_region / (region[1] - region[0]),
            "precision": in_region / int(flagged.sum()) if flagged.any() else 0.0,
        },
        "gradcam": {
            "fraction": fraction,
            "n_correct": int(correct.size),
            "attack_accuracy": float(correct.size / len(a)),
            "iou_median": float(np.median(ious)) if ious.size else 0.0,
            "share_iou_ge_0.5": float(np.mean(ious >= 0.5)) if ious.size else 0.0,
            "mean_map_window": list(mean_win),
            "mean_map_iou": interval_iou(mean_win, region),
            "share_intersecting_tvla": hits / max(correct.size, 1),
        },
        "tvla_gradcam_intersect": _intersects(mean_win, tvla_max),
    }


def zero_vs_random(cfg: ExperimentConfig, n: int = 500) -> dict:
    """All-zeros inputs against uniformly random inputs, in amplitude and time zero-skip modes."""
    spec = cfg.victim
    out = {}
    for mode in ("amplitude", "time"):
        m = LeakageModel(**{**cfg.leakage.to_dict(), "zero_skip": mode})
        zeros, rand, act_z, act_r = [], [], [], []
        for i in range(n):
            tz = simulate_inference(np.zeros(spec.input_dim, dtype=np.uint8), spec, m, cfg.seed, index=2 * i)
            rng = trace_rng(cfg.seed, 2 * i + 1)
            x = rng.integers(0, 256, spec.input_dim)
            tr = simulate_inference(x, spec, m, cfg.seed, rng=rng)
            zeros.append(tz.samples)
            rand.append(tr.samples)
            act_z.append(int(tz.meta["active_len"]))
            act_r.append(int(tr.meta["active_len"]))
        za = TraceSet.from_arrays(np.array(zeros), [0] * n, 2)
        ra = TraceSet.from_arrays(np.array(rand), [1] * n, 2)
        sema = assess.sema_summary(za, ra)
        rep = assess.tvla(za, ra)
        out[mode] = {
            "mean_difference": float(sema.difference.mean()),
            "max_abs_t": rep.max_abs_t,
            "n_windows": len(rep.windows),
            "active_len_zeros": float(np.mean(act_z)),
            "active_len_random": float(np.mean(act_r)),
        }
    return out


def llm_analysis(
    cfg: ExperimentConfig,
    max_tokens: int = 6,
    n_traces: int = 500,
    token_pair: tuple[int, int] = (0, 1),
    null_reps: int = 20,
) -> dict:
    """Output-length leakage and pairwise token distinguishability for the LLM simulator."""
    spec = cfg.llm
    lengths = [len(simulate_llm(list(range(k)), spec, cfg.seed)) for k in range(max_tokens + 1)]
    seg = spec.segment_len

    def pair_t(tok_a, tok_b, seed):
        sa = gen_llm_set([[tok_a]] * n_traces, spec, seed)
        sb = gen_llm_set([[tok_b]] * n_traces, spec, seed + 1_000_003)
        return assess.tvla_matrices(sa.matrix[:, :seg], sb.matrix[:, :seg])

    distinct = pair_t(token_pair[0], token_pair[1], cfg.seed)
    null_flags = []
    for r in range(null_reps):
        rep = pair_t(token_pair[0], token_pair[0], cfg.seed + 7919 * (r + 1))
        null_flags.append(bool(rep.windows))
    return {
        "lengths": lengths,
        "strictly_increasing": all(b > a for a, b in zip(lengths, lengths[1:])),
        "segment_len": seg,
        "distinct_tokens": list(token_pair),
        "distinct_max_abs_t": distinct.max_abs_t,
        "distinct_windows": [list(w) for w in distinct.windows],
        "null_reps": null_reps,
        "null_reps_with_window": int(sum(null_flags)),
    }
