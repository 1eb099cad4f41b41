from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..preprocess import ShiftConfig, shift_matrix
from .model import AttackModel

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augmentation: ShiftConfig | None = None
    # fixed shard count keeps the reduction order independent of worker count
    shards: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.shards < 1 or self.workers < 1:
            raise ValueError("shards and workers must be >= 1")
        if isinstance(self.augmentation, dict):
            object.__setattr__(self, "augmentation", ShiftConfig(**self.augmentation))

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.augmentation is None:
            d["augmentation"] = None
        return d


class Adam:
    def __init__(self, params: dict, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            params[k] -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: dict, lr):
        self.lr = lr

    def step(self, params: dict, grads: dict):
        for k, g in grads.items():
            params[k] -= self.lr * g


@dataclass
class TrainResult:
    model: AttackModel
    loss_history: list = field(default_factory=list)


def _sharded_loss_and_grads(model: AttackModel, x, y, shards: int, pool):
    n = y.shape[0]
    bounds = np.linspace(0, n, min(shards, n) + 1).astype(int)
    parts = [(x[a:b], y[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if pool is None:
        results = [model.loss_and_grads(px, py) for px, py in parts]
    else:
        results = list(pool.map(lambda p: model.loss_and_grads(*p), parts))
    # weighted sum in shard order, never in completion order
    loss = 0.0
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    for (px, py), (l, g) in zip(parts, results):
        w = py.shape[0] / n
        loss += w * l
        for k in grads:
            grads[k] += g[k] * model.dtype.type(w)
    return loss, grads


def train(model: AttackModel, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Mini-batch training on an (N, L) matrix; the passed model is left untouched.

    ``on_epoch(epoch, loss, model)`` is called after every epoch.
    """
    x = np.asarray(x, dtype=model.dtype)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("training data must be a nonempty (N, L) matrix with N labels")
    model = model.copy()
    if cfg.optimizer == "adam":
        opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    else:
        opt = SGD(model.params, cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7A11]))
    result = TrainResult(model)
    n = x.shape[0]
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 and cfg.shards > 1 else None
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                xb = x[idx]
                if cfg.augmentation is not None and cfg.augmentation.ratio > 0:
                    m = int(math.floor(cfg.augmentation.ratio * x.shape[1]))
                    offs = rng.integers(-m, m + 1, size=idx.size)
                    xb = shift_matrix(xb, offs, cfg.augmentation.pad_value)
                if cfg.shards > 1:
                    loss, grads = _sharded_loss_and_grads(model, xb, y[idx], cfg.shards, pool)
                else:
                    loss, grads = model.loss_and_grads(xb, y[idx])
                if not math.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss {loss} at epoch {epoch}, batch starting {start}; "
                        f"try a smaller learning rate than {cfg.learning_rate}"
                    )
                opt.step(model.params, grads)
                total += loss * idx.size
            result.loss_history.append(total / n)
            log.debug("epoch %d loss %.5f", epoch, total / n)
            if on_epoch is not None:
                on_epoch(epoch, total / n, model)
    finally:
        if pool is not None:
            pool.shutdown()
    return result
