"""Four-layer 1D-CNN attack model: three Conv1d+ReLU blocks, global average
pooling, and a dense softmax head."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L


class LengthMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    channels: int
    stride: int


DEFAULT_CONVS = (ConvSpec(11, 8, 2), ConvSpec(9, 16, 2), ConvSpec(7, 32, 2))


@dataclass(frozen=True)
class ModelSpec:
    input_len: int
    n_classes: int
    convs: tuple = DEFAULT_CONVS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "convs", tuple(c if isinstance(c, ConvSpec) else ConvSpec(*c) for c in self.convs)
        )
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        n = self.input_len
        for i, c in enumerate(self.convs):
            n = L.conv_out_len(n, c.kernel, c.stride)
            if n < 1:
                raise ValueError(f"conv block {i} has empty output for input length {self.input_len}")

    def block_lengths(self) -> list[int]:
        out, n = [], self.input_len
        for c in self.convs:
            n = L.conv_out_len(n, c.kernel, c.stride)
            out.append(n)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["convs"] = [[c.kernel, c.channels, c.stride] for c in self.convs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["input_len"], d["n_classes"], tuple(ConvSpec(*c) for c in d["convs"]), d.get("seed", 0))


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # block inputs
    cols: list = field(default_factory=list)
    acts: list = field(default_factory=list)  # post-ReLU block outputs
    pooled: np.ndarray | None = None
    logits: np.ndarray | None = None


class AttackModel:
    def __init__(self, spec: ModelSpec, dtype=np.float32, params: dict | None = None):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.params = params if params is not None else self._init_params()
        self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in self.params.items()}

    def _init_params(self) -> dict:
        rng = np.random.default_rng(np.random.SeedSequence([self.spec.seed, 0x1417]))
        p = {}
        cin = 1
        for i, c in enumerate(self.spec.convs):
            fan_in = cin * c.kernel
            p[f"conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (c.channels, cin, c.kernel))
            p[f"conv{i}.b"] = np.zeros(c.channels)
            cin = c.channels
        p["dense.w"] = rng.normal(0.0, np.sqrt(2.0 / cin), (cin, self.spec.n_classes))
        p["dense.b"] = np.zeros(self.spec.n_classes)
        return p

    @property
    def param_names(self) -> list[str]:
        return list(self.params)

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def copy(self, dtype=None) -> "AttackModel":
        return AttackModel(self.spec, dtype or self.dtype, {k: v.copy() for k, v in self.params.items()})

    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.spec.input_len:
            raise LengthMismatchError(
                f"trace length {x.shape[1]} does not match model input length {self.spec.input_len}"
            )
        return x.astype(self.dtype, copy=False)[:, :, None]

    def forward_cached(self, x: np.ndarray) -> ForwardCache:
        h = self._prepare(x)
        cache = ForwardCache()
        for i, c in enumerate(self.spec.convs):
            cache.inputs.append(h)
            z, cols = L.conv1d_forward(h, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"], c.stride)
            h = L.relu_forward(z)
            cache.cols.append(cols)
            cache.acts.append(h)
        cache.pooled = h.mean(axis=1)
        cache.logits = cache.pooled @ self.params["dense.w"] + self.params["dense.b"]
        return cache

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x).logits

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities, shape (N, C) (or (C,) for a single trace)."""
        single = np.asarray(x).ndim == 1
        p = L.softmax(self.logits(x))
        return p[0] if single else p

    def backward(self, cache: ForwardCache, dlogits: np.ndarray, need_act_grads=False):
        """Gradients of sum(dlogits * logits) w.r.t. parameters (and block activations)."""
        grads = {}
        grads["dense.w"] = cache.pooled.T @ dlogits
        grads["dense.b"] = dlogits.sum(axis=0)
        dpooled = dlogits @ self.params["dense.w"].T
        act = cache.acts[-1]
        dh = np.broadcast_to(dpooled[:, None, :] / act.shape[1], act.shape)
        act_grads = [None] * len(self.spec.convs)
        for i in reversed(range(len(self.spec.convs))):
            act_grads[i] = dh
            dz = L.relu_backward(dh, cache.acts[i])
            dx, dw, db = L.conv1d_backward(
                dz,
                cache.cols[i],
                self.params[f"conv{i}.w"],
                self.spec.convs[i].stride,
                cache.inputs[i].shape[1],
                need_dx=i > 0,
            )
            grads[f"conv{i}.w"] = dw
            grads[f"conv{i}.b"] = db
            dh = dx
        grads = {k: grads[k] for k in self.params}
        if need_act_grads:
            return grads, act_grads
        return grads

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean cross-entropy over the batch and its parameter gradients."""
        y = np.asarray(y, dtype=np.int64)
        if y.size == 0:
            raise ValueError("empty batch")
        cache = self.forward_cached(x)
        logp = L.log_softmax(cache.logits)
        n = y.shape[0]
        loss = float(-logp[np.arange(n), y].mean())
        dlogits = np.exp(logp)
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        return loss, self.backward(cache, dlogits.astype(self.dtype))

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        logp = L.log_softmax(self.logits(x))
        y = np.asarray(y, dtype=np.int64)
        return float(-logp[np.arange(y.shape[0]), y].mean())

    def predict(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Argmax class per trace; numpy argmax already breaks ties toward the lowest index."""
        x = np.asarray(x)
        if x.ndim == 1:
            x = x[None, :]
        out = [np.argmax(self.logits(x[i : i + batch_size]), axis=1) for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f4").tobytes())
        return h.hexdigest()


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if pred.size == 0:
        raise ValueError("cannot score an empty prediction vector")
    return float(np.mean(pred == truth))


# checkpoint: u32 LE header length, JSON header, float32 LE parameter block
def save_checkpoint(model: AttackModel, path, epoch: int = 0, extra: dict | None = None) -> int:
    header = {
        "format": "scaar-model/1",
        "spec": model.spec.to_dict(),
        "seed": model.spec.seed,
        "epoch": epoch,
        "params": [[k, list(v.shape)] for k, v in model.params.items()],
    }
    if extra:
        header["extra"] = extra
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    block = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in model.params.values())
    data = struct.pack("<I", len(hb)) + hb + block
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def load_checkpoint(path) -> tuple[AttackModel, dict]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise ValueError("checkpoint too short")
    (hlen,) = struct.unpack_from("<I", data, 0)
    header = json.loads(data[4 : 4 + hlen].decode("utf-8"))
    if header.get("format") != "scaar-model/1":
        raise ValueError(f"not a model checkpoint: {header.get('format')!r}")
    pos = 4 + hlen
    params = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        if pos + 4 * count > len(data):
            raise ValueError("checkpoint parameter block is truncated")
        params[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * count
    if pos != len(data):
        raise ValueError("trailing bytes after checkpoint parameter block")
    return AttackModel(ModelSpec.from_dict(header["spec"]), np.float32, params), header
