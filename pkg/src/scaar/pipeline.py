"""Experiment orchestration: profiling -> attack runs and the sweeps built on them."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import preprocess as pp
from .config import ExperimentConfig, PreprocessConfig
from .leaksim import gen_dataset
from .nnet.model import AttackModel, accuracy
from .nnet.train import TrainConfig, TrainResult, train
from .traces import SplitError, TraceSet, split, stratified_subsample

log = logging.getLogger(__name__)


@dataclass
class AttackReport:
    accuracy: float
    confusion: np.ndarray
    n_profiling: int
    n_attack: int
    seed: int
    config_digest: str
    mode: str = "input_attribute"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "n_profiling": self.n_profiling,
            "n_attack": self.n_attack,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "mode": self.mode,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write_json(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())


def score(pred: np.ndarray, truth: np.ndarray, n_classes: int) -> tuple[float, np.ndarray]:
    """Accuracy and the (true x predicted) confusion matrix."""
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (np.asarray(truth), np.asarray(pred)), 1)
    return accuracy(pred, truth), conf


def attack_phase(model: AttackModel, samples: np.ndarray) -> np.ndarray:
    """Predict attributes from unlabeled, already conditioned traces."""
    return model.predict(samples)


@dataclass
class Conditioner:
    """Per-experiment trace conditioning; the reference trace is fixed at profiling time."""

    cfg: PreprocessConfig
    reference: np.ndarray | None = None

    def fit(self, x: np.ndarray) -> "Conditioner":
        if self.cfg.align:
            base = pp.standardize_array(x) if self.cfg.standardize else np.asarray(x, dtype=np.float32)
            self.reference = base.astype(np.float64).mean(axis=0)
        return self

    def __call__(self, x: np.ndarray, offsets: np.ndarray | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if self.cfg.standardize:
            x = pp.standardize_array(x)
        if offsets is not None and np.any(offsets):
            x = pp.shift_matrix(x, offsets, 0.0)
        if self.cfg.align:
            if self.reference is None:
                raise RuntimeError("alignment requested before fit()")
            lags = np.array([pp.xcorr_lag(self.reference, row, self.cfg.max_lag) for row in x])
            x = pp.shift_matrix(x, -lags, 0.0)
        if self.cfg.moving_average > 1:
            x = pp.moving_average_array(x, self.cfg.moving_average)
        if self.cfg.decimate > 1:
            x = pp.decimate_array(x, self.cfg.decimate)
        return x


class TrainCache:
    """Memo of training results keyed by (data, labels, model spec, train config)."""

    def __init__(self):
        self._store: dict[str, TrainResult] = {}

    @staticmethod
    def key(x, y, model: AttackModel, cfg: TrainConfig) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(x).tobytes())
        h.update(np.ascontiguousarray(y).tobytes())
        h.update(json.dumps(model.spec.to_dict(), sort_keys=True).encode())
        h.update(model.digest().encode())
        h.update(json.dumps(cfg.to_dict(), sort_keys=True, default=str).encode())
        return h.hexdigest()

    def train(self, model, x, y, cfg) -> TrainResult:
        k = self.key(x, y, model, cfg)
        if k not in self._store:
            self._store[k] = train(model, x, y, cfg)
        return self._store[k]


def _train(cache: TrainCache | None, model, x, y, cfg) -> TrainResult:
    return cache.train(model, x, y, cfg) if cache is not None else train(model, x, y, cfg)


def make_dataset(cfg: ExperimentConfig, session: int | None = None) -> TraceSet:
    return gen_dataset(
        cfg.victim,
        cfg.leakage,
        cfg.n_per_class,
        cfg.session if session is None else session,
        label_noise=cfg.label_noise,
    )


@dataclass
class Profiled:
    """A trained attack model together with the conditioning it was trained under."""

    model: AttackModel
    conditioner: Conditioner
    loss_history: list
    n_profiling: int


def profile(cfg: ExperimentConfig, prof: TraceSet, cache: TrainCache | None = None) -> Profiled:
    cond = Conditioner(cfg.preprocess).fit(prof.matrix)
    x = cond(prof.matrix)
    model = AttackModel(cfg.model_spec(x.shape[1], prof.n_classes))
    res = _train(cache, model, x, prof.labels, cfg.train)
    return Profiled(res.model, cond, list(res.loss_history), len(prof))


def evaluate(
    cfg: ExperimentConfig,
    prof: Profiled,
    attack: TraceSet,
    offsets: np.ndarray | None = None,
    extra: dict | None = None,
) -> AttackReport:
    x = prof.conditioner(attack.matrix, offsets)
    pred = attack_phase(prof.model, x)
    acc, conf = score(pred, attack.labels, attack.n_classes)
    return AttackReport(acc, conf, prof.n_profiling, len(attack), cfg.seed, cfg.digest(), cfg.mode, extra or {})


def run_attack(cfg: ExperimentConfig, cache: TrainCache | None = None, data: TraceSet | None = None) -> AttackReport:
    """Generate (or take) data, split, profile, attack, and score."""
    ds = data if data is not None else make_dataset(cfg)
    p, a = split(ds, cfg.split)
    prof = profile(cfg, p, cache)
    return evaluate(cfg, prof, a)


def run_repeated(cfg: ExperimentConfig, seeds=(0, 1, 2), cache: TrainCache | None = None) -> dict:
    """Mean and population std of accuracy over independent seeds."""
    reports = [run_attack(cfg.with_overrides(seed=s, dataset={"session": None}, split={"seed": None},
                                              model={"seed": None}, train={"seed": None}), cache)
               for s in seeds]
    accs = np.array([r.accuracy for r in reports])
    return {"seeds": list(seeds), "accuracies": accs.tolist(), "mean": float(accs.mean()), "std": float(accs.std())}


def _check_increasing(values):
    if not values:
        raise ValueError("sweep list must be nonempty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be strictly increasing")


def sweep_traces(cfg: ExperimentConfig, n_list, cache: TrainCache | None = None) -> list[tuple[int, AttackReport]]:
    """One profiling run per trace budget against a single fixed attack set."""
    n_list = [int(n) for n in n_list]
    _check_increasing(n_list)
    ds = make_dataset(cfg)
    p, a = split(ds, cfg.split)
    if n_list[-1] > len(p):
        raise SplitError(f"requested {n_list[-1]} profiling traces but the pool holds {len(p)}")
    out = []
    for n in n_list:
        idx = stratified_subsample(p.labels, p.n_classes, n, cfg.split.seed)
        prof = profile(cfg, p.subset(idx), cache)
        rep = evaluate(cfg, prof, a, extra={"axis": "n_traces", "value": n})
        log.info("n_traces=%d accuracy=%.4f", n, rep.accuracy)
        out.append((n, rep))
    return out


def sweep_shift(cfg: ExperimentConfig, ratios, cache: TrainCache | None = None) -> list[tuple[float, AttackReport]]:
    """Train once; re-attack with the attack set randomly shifted at each ratio."""
    ratios = [float(r) for r in ratios]
    _check_increasing(ratios)
    ds = make_dataset(cfg)
    p, a = split(ds, cfg.split)
    prof = profile(cfg, p, cache)
    out = []
    for i, r in enumerate(ratios):
        sub = int(np.random.SeedSequence([cfg.seed, 0x5A1F, i]).generate_state(1)[0])
        offs = pp.draw_offsets(len(a), a.fixed_len, pp.ShiftConfig(r, sub))
        rep = evaluate(cfg, prof, a, offsets=offs, extra={"axis": "shift_ratio", "value": r, "shift_seed": sub})
        log.info("shift_ratio=%.3f accuracy=%.4f", r, rep.accuracy)
        out.append((r, rep))
    return out


def cross_session(cfg: ExperimentConfig, session_seeds, cache: TrainCache | None = None) -> list[tuple[int, AttackReport]]:
    """Profile on the first session, attack the held-out split of every session.

    Sessions share class templates and differ only in their noise seed.
    """
    session_seeds = [int(s) for s in session_seeds]
    if len(session_seeds) < 2:
        raise ValueError("cross-session analysis needs at least two sessions")
    p0, _ = split(make_dataset(cfg, session_seeds[0]), cfg.split)
    prof = profile(cfg, p0, cache)
    out = []
    for s in session_seeds:
        _, a = split(make_dataset(cfg, s), cfg.split)
        rep = evaluate(cfg, prof, a, extra={"profiling_session": session_seeds[0], "attack_session": s})
        out.append((s, rep))
    return out


def write_sweep_csv(points, path, axis: str):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([axis, "accuracy", "n_profiling", "n_attack"])
        for v, rep in points:
            w.writerow([v, repr(rep.accuracy), rep.n_profiling, rep.n_attack])
