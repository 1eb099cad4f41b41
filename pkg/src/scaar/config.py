"""Experiment configuration: JSON loading, schema validation, seed resolution, digest."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass

import jsonschema

from .leaksim import LeakageModel, LlmSpec, VictimSpec
from .nnet.model import ConvSpec, ModelSpec
from .nnet.train import TrainConfig
from .preprocess import ShiftConfig
from .traces import SplitConfig

SEED_ENV = "SCAAR_SEED"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "mode": "input_attribute",
    "leakage": {
        "a": 1.0,
        "b": 0.5,
        "sigma": 1.0,
        "zero_skip": "amplitude",
        "samples_per_op": 4,
        "layer_gain": None,
    },
    "victim": {
        "layers": [["conv", 256], ["conv", 128], ["fc", 64]],
        "input_dim": 64,
        "n_classes": 10,
        "input_noise": 0.1,
        "template_seed": 0,
    },
    "dataset": {"n_per_class": 1000, "session": None, "output_label_noise": 0.08},
    "split": {"profiling_fraction": 0.9, "stratified": True, "seed": None},
    "model": {"convs": [[11, 8, 2], [9, 16, 2], [7, 32, 2]], "seed": None},
    "train": {
        "epochs": 30,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "optimizer": "adam",
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "seed": None,
        "augmentation": None,
        "shards": 1,
        "workers": 1,
    },
    "preprocess": {
        "standardize": True,
        "align": False,
        "max_lag": 50,
        "moving_average": 1,
        "decimate": 1,
    },
    "llm": {"vocab": 256, "ops_per_token": 32, "operand_seed": 0},
    "sweep": None,
}

_num = {"type": "number"}
_int = {"type": "integer"}
_opt_int = {"type": ["integer", "null"]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": _int,
        "mode": {"enum": ["input_attribute", "output_attribute"]},
        "leakage": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "a": _num,
                "b": _num,
                "sigma": {"type": "number", "minimum": 0},
                "zero_skip": {"enum": ["off", "amplitude", "time"]},
                "samples_per_op": {"type": "integer", "minimum": 1},
                "layer_gain": {"type": ["array", "null"], "items": _num},
            },
        },
        "victim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "layers": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "array",
                        "prefixItems": [{"enum": ["conv", "fc"]}, {"type": "integer", "minimum": 1}],
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
                "input_dim": {"type": "integer", "minimum": 1},
                "n_classes": {"type": "integer", "minimum": 2},
                "input_noise": {"type": "number", "minimum": 0},
                "template_seed": _int,
            },
        },
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_per_class": {"type": "integer", "minimum": 1},
                "session": _opt_int,
                "output_label_noise": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "profiling_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "stratified": {"type": "boolean"},
                "seed": _opt_int,
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "convs": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3},
                },
                "seed": _opt_int,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "optimizer": {"enum": ["sgd", "adam"]},
                "beta1": _num,
                "beta2": _num,
                "eps": _num,
                "seed": _opt_int,
                "augmentation": {
                    "type": ["object", "null"],
                    "additionalProperties": False,
                    "properties": {
                        "ratio": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                        "seed": _int,
                        "pad_value": _num,
                    },
                },
                "shards": {"type": "integer", "minimum": 1},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "preprocess": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "standardize": {"type": "boolean"},
                "align": {"type": "boolean"},
                "max_lag": {"type": "integer", "minimum": 0},
                "moving_average": {"type": "integer", "minimum": 1},
                "decimate": {"type": "integer", "minimum": 1},
            },
        },
        "llm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "vocab": {"type": "integer", "minimum": 2},
                "ops_per_token": {"type": "integer", "minimum": 1},
                "operand_seed": _int,
            },
        },
        "sweep": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["axis", "values"],
            "properties": {
                "axis": {"enum": ["n_traces", "shift_ratio"]},
                "values": {"type": "array", "minItems": 1, "items": _num},
            },
        },
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class PreprocessConfig:
    standardize: bool = True
    align: bool = False
    max_lag: int = 50
    moving_average: int = 1
    decimate: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict  # fully resolved config document

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def mode(self) -> str:
        return self.raw["mode"]

    @property
    def leakage(self) -> LeakageModel:
        return LeakageModel(**self.raw["leakage"])

    @property
    def victim(self) -> VictimSpec:
        v = self.raw["victim"]
        return VictimSpec(tuple(tuple(x) for x in v["layers"]), v["input_dim"], v["n_classes"], v["input_noise"], v["template_seed"])

    @property
    def n_per_class(self) -> int:
        return self.raw["dataset"]["n_per_class"]

    @property
    def session(self) -> int:
        return self.raw["dataset"]["session"]

    @property
    def label_noise(self) -> float:
        return self.raw["dataset"]["output_label_noise"] if self.mode == "output_attribute" else 0.0

    @property
    def split(self) -> SplitConfig:
        s = self.raw["split"]
        return SplitConfig(s["profiling_fraction"], s["seed"], s["stratified"])

    @property
    def train(self) -> TrainConfig:
        t = dict(self.raw["train"])
        if t["augmentation"] is not None:
            t["augmentation"] = ShiftConfig(**t["augmentation"])
        return TrainConfig(**t)

    @property
    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(**self.raw["preprocess"])

    def model_spec(self, input_len: int, n_classes: int | None = None) -> ModelSpec:
        m = self.raw["model"]
        c = self.raw["victim"]["n_classes"] if n_classes is None else n_classes
        return ModelSpec(input_len, c, tuple(ConvSpec(*k) for k in m["convs"]), m["seed"])

    @property
    def llm(self) -> LlmSpec:
        l = self.raw["llm"]
        return LlmSpec(l["vocab"], l["ops_per_token"], l["operand_seed"], self.leakage)

    @property
    def sweep(self) -> dict | None:
        return self.raw["sweep"]

    def digest(self) -> str:
        return config_digest(self.raw)

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """New config with nested overrides, e.g. with_overrides(leakage={"a": 0.0})."""
        raw = _merge(self.raw, sections)
        return resolve(raw)

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)


def canonical_json(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_digest(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc)).hexdigest()


def _validate(doc: dict):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}") from None
    sw = doc.get("sweep")
    if sw is not None:
        vals = sw["values"]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("sweep values must be strictly increasing")


def resolve(doc: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Merge with defaults, validate, and fill every derived seed.

    Seed precedence: explicit override > $SCAAR_SEED > config "seed" > 0.
    Sub-seeds left null in the document follow the top-level seed.
    """
    _validate(doc)
    raw = _merge(DEFAULTS, doc)
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    elif os.environ.get(SEED_ENV, "").strip():
        try:
            raw["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    s = raw["seed"]
    for section, key in (("dataset", "session"), ("split", "seed"), ("model", "seed"), ("train", "seed")):
        if raw[section][key] is None:
            raw[section][key] = s
    _validate(raw)
    try:
        cfg = ExperimentConfig(raw)
        # construct once so value errors surface as config errors
        cfg.leakage, cfg.victim, cfg.split, cfg.train, cfg.llm
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None
    return cfg


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return resolve(doc, seed_override)


def default_config(**sections) -> ExperimentConfig:
    return resolve(sections)
