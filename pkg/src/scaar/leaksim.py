"""Parametric EM-emission simulator standing in for the victim device.

Every operation of a victim inference consumes one 8-bit operand and emits
``samples_per_op`` amplitudes ``b + a * HW(operand) + N(0, sigma^2)``.
Zero operands can be skipped: in ``amplitude`` mode the baseline vanishes,
in ``time`` mode the operation emits nothing at all.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .traces import Trace, TraceSet

ZERO_SKIP_MODES = ("off", "amplitude", "time")

HW_TABLE = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


class OverflowLengthError(ValueError):
    pass


class UnknownTokenError(ValueError):
    pass


def hamming_weight(v: int) -> int:
    v = int(v)
    if not 0 <= v <= 255:
        raise ValueError(f"{v} is not an 8-bit unsigned value")
    return int(HW_TABLE[v])


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer; a fixed, seed-independent 64-bit mixing hash."""
    z = np.asarray(x, dtype=np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def trace_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for one trace."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


@dataclass(frozen=True)
class LeakageModel:
    a: float = 1.0
    b: float = 0.5
    sigma: float = 1.0
    zero_skip: str = "amplitude"
    samples_per_op: int = 4
    # optional per-layer multiplier on `a`, used to place the dominant leak
    layer_gain: tuple | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.samples_per_op < 1:
            raise ValueError("samples_per_op must be >= 1")
        if self.zero_skip not in ZERO_SKIP_MODES:
            raise ValueError(f"zero_skip must be one of {ZERO_SKIP_MODES}")
        if self.layer_gain is not None:
            object.__setattr__(self, "layer_gain", tuple(float(g) for g in self.layer_gain))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_gain"] = list(self.layer_gain) if self.layer_gain is not None else None
        return d


def emit_op(operand: int, m: LeakageModel, rng: np.random.Generator, gain: float = 1.0) -> np.ndarray:
    hw = hamming_weight(operand)
    if operand == 0 and m.zero_skip == "time":
        return np.zeros(0, dtype=np.float32)
    level = 0.0 if (operand == 0 and m.zero_skip == "amplitude") else m.b + gain * m.a * hw
    noise = rng.standard_normal(m.samples_per_op) * m.sigma if m.sigma > 0 else np.zeros(m.samples_per_op)
    return (level + noise).astype(np.float32)


def _make_templates(n_classes: int, d: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E3B]))
    min_dist = 0.5 * np.sqrt(d)
    out = []
    for c in range(n_classes):
        for _ in range(10_000):
            # sparse bright foreground on a zero background, loosely image-like
            cand = (rng.random(d) < 0.5) * rng.uniform(0.75, 1.0, d)
            if all(np.linalg.norm(cand - t) >= min_dist for t in out):
                out.append(cand)
                break
        else:
            raise RuntimeError(f"could not place template {c} at distance >= {min_dist:.3f}")
    return np.array(out)


@dataclass(frozen=True)
class VictimSpec:
    layers: tuple = (("conv", 256), ("conv", 128), ("fc", 64))
    input_dim: int = 64
    n_classes: int = 10
    input_noise: float = 0.1
    template_seed: int = 0

    def __post_init__(self):
        layers = tuple((str(k), int(n)) for k, n in self.layers)
        object.__setattr__(self, "layers", layers)
        for kind, n in layers:
            if kind not in ("conv", "fc"):
                raise ValueError(f"unknown op kind {kind!r}")
            if n < 1:
                raise ValueError("every layer needs at least one op")
        if self.input_dim < 1 or self.n_classes < 1:
            raise ValueError("input_dim and n_classes must be positive")
        if self.input_noise < 0:
            raise ValueError("input_noise must be >= 0")

    @cached_property
    def templates(self) -> np.ndarray:
        return _make_templates(self.n_classes, self.input_dim, self.template_seed)

    @property
    def n_ops(self) -> int:
        return sum(n for _, n in self.layers)

    @cached_property
    def op_layer(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.layers)), [n for _, n in self.layers])

    @cached_property
    def op_source(self) -> np.ndarray:
        """Input position feeding each op: x[h(j) mod d] over the global op index j."""
        return (mix64(np.arange(self.n_ops, dtype=np.uint64)) % np.uint64(self.input_dim)).astype(np.int64)

    def trace_len(self, m: LeakageModel) -> int:
        return self.n_ops * m.samples_per_op

    def layer_region(self, layer: int, m: LeakageModel) -> tuple[int, int]:
        """Sample range [start, end) of one layer for fixed-timing modes."""
        start = sum(n for _, n in self.layers[:layer])
        return start * m.samples_per_op, (start + self.layers[layer][1]) * m.samples_per_op

    def to_dict(self) -> dict:
        return {
            "layers": [list(x) for x in self.layers],
            "input_dim": self.input_dim,
            "n_classes": self.n_classes,
            "input_noise": self.input_noise,
            "template_seed": self.template_seed,
        }


def _op_gains(spec: VictimSpec, m: LeakageModel) -> np.ndarray:
    if m.layer_gain is None:
        return np.ones(spec.n_ops)
    if len(m.layer_gain) != len(spec.layers):
        raise ValueError("layer_gain needs one entry per victim layer")
    return np.asarray(m.layer_gain)[spec.op_layer]


def _emit(operands, gains, m: LeakageModel, rng, fixed_len: int | None):
    levels = m.b + gains * m.a * HW_TABLE[operands]
    zero = operands == 0
    if m.zero_skip == "amplitude":
        levels = np.where(zero, 0.0, levels)
    elif m.zero_skip == "time":
        levels = levels[~zero]
    body = np.repeat(levels, m.samples_per_op)
    active = body.shape[0]
    total = active if fixed_len is None else fixed_len
    if total < active:
        raise OverflowLengthError(f"emitted {active} samples exceed fixed_len {fixed_len}")
    out = np.zeros(total)
    out[:active] = body
    if m.sigma > 0:
        out += rng.standard_normal(total) * m.sigma
    return out.astype(np.float32), active


def simulate_inference(
    x,
    spec: VictimSpec,
    m: LeakageModel,
    seed: int,
    fixed_len: int | None = None,
    index: int = 0,
    label: int = 0,
    rng: np.random.Generator | None = None,
) -> Trace:
    """Emission of one victim inference on the u8 input vector ``x``.

    In time mode the trace is padded with pure noise up to ``fixed_len``
    (default: the no-skip length). ``meta['active_len']`` holds the emitted,
    unpadded length.
    """
    x = np.asarray(x)
    if x.shape != (spec.input_dim,):
        raise ValueError(f"input length {x.shape} != input_dim {spec.input_dim}")
    if np.any((x < 0) | (x > 255)):
        raise ValueError("input must be 8-bit unsigned")
    if fixed_len is None:
        fixed_len = spec.trace_len(m)
    rng = rng if rng is not None else trace_rng(seed, index)
    operands = x.astype(np.int64)[spec.op_source]
    samples, active = _emit(operands, _op_gains(spec, m), m, rng, fixed_len)
    return Trace(samples, label, 0, {"active_len": str(active)})


def quantize(v: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)


def gen_dataset(
    spec: VictimSpec,
    m: LeakageModel,
    n_per_class: int,
    seed: int,
    label_noise: float = 0.0,
    fixed_len: int | None = None,
) -> TraceSet:
    """Balanced labelled corpus: ``n_per_class`` traces per class, blocked by class.

    With ``label_noise`` > 0 each trace is annotated with a victim "output"
    label that differs from the input class with that probability.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if not 0.0 <= label_noise < 1.0:
        raise ValueError("label_noise must lie in [0, 1)")
    c_n = spec.n_classes
    length = fixed_len if fixed_len is not None else spec.trace_len(m)
    gains = _op_gains(spec, m)
    tpl = spec.templates
    x_all = np.empty((c_n * n_per_class, length), dtype=np.float32)
    labels = np.empty(c_n * n_per_class, dtype=np.int64)
    tmeta = []
    for c in range(c_n):
        for k in range(n_per_class):
            i = c * n_per_class + k
            rng = trace_rng(seed, i)
            v = tpl[c] + spec.input_noise * rng.standard_normal(spec.input_dim) if spec.input_noise > 0 else tpl[c]
            x = quantize(v).astype(np.int64)
            x_all[i], active = _emit(x[spec.op_source], gains, m, rng, length)
            lab = c
            if label_noise > 0 and rng.random() < label_noise:
                lab = int((c + rng.integers(1, c_n)) % c_n)
            labels[i] = lab
            if label_noise > 0:
                tmeta.append({"input_label": str(c)})
    meta = {
        "generator": "scaar.leaksim",
        "sample_rate_hz": 0,
        "seed": int(seed),
        "victim": spec.to_dict(),
        "leakage": m.to_dict(),
        "label_noise": label_noise,
    }
    ts = TraceSet.from_arrays(x_all, labels, c_n, session_id=seed, meta=meta)
    if tmeta:
        traces = tuple(t.__class__(t.samples, t.label, t.session_id, tm) for t, tm in zip(ts.traces, tmeta))
        out = TraceSet(traces, c_n, length, meta)
        out.__dict__["matrix"] = ts.matrix
        return out
    return ts


@dataclass(frozen=True)
class LlmSpec:
    vocab_size: int = 256
    ops_per_token: int = 32
    operand_seed: int = 0
    leakage: LeakageModel = field(default_factory=LeakageModel)

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.ops_per_token < 1:
            raise ValueError("ops_per_token must be >= 1")
        if isinstance(self.leakage, dict):
            object.__setattr__(self, "leakage", LeakageModel(**self.leakage))

    @cached_property
    def operands(self) -> np.ndarray:
        # nonzero operands: every token does work, so length grows with token count
        rng = np.random.default_rng(np.random.SeedSequence([self.operand_seed, 0x11A]))
        return rng.integers(1, 256, size=(self.vocab_size, self.ops_per_token))

    @property
    def segment_len(self) -> int:
        return self.ops_per_token * self.leakage.samples_per_op


def simulate_llm(tokens, spec: LlmSpec, seed: int, index: int = 0) -> Trace:
    """Variable-length emission of generating ``tokens`` one after another."""
    tokens = [int(t) for t in tokens]
    for t in tokens:
        if not 0 <= t < spec.vocab_size:
            raise UnknownTokenError(f"token id {t} outside vocabulary of {spec.vocab_size}")
    rng = trace_rng(seed, index)
    m = spec.leakage
    if not tokens:
        return Trace(np.zeros(0, dtype=np.float32), 0, 0, {"n_tokens": "0"})
    operands = spec.operands[tokens].ravel()
    samples, _ = _emit(operands, np.ones(operands.size), m, rng, None)
    return Trace(samples, tokens[0], 0, {"n_tokens": str(len(tokens))})


def gen_llm_set(token_lists, spec: LlmSpec, seed: int) -> TraceSet:
    traces = [simulate_llm(tl, spec, seed, i) for i, tl in enumerate(token_lists)]
    lens = {len(t) for t in traces}
    fixed = lens.pop() if len(lens) == 1 else None
    meta = {"generator": "scaar.leaksim.llm", "sample_rate_hz": 0, "seed": int(seed)}
    return TraceSet(tuple(traces), spec.vocab_size, fixed, meta)
