import json

import pytest

from scaar.config import SEED_ENV, ConfigError, config_digest, default_config, load_config, resolve


def test_defaults_resolve_seeds():
    cfg = default_config()
    assert cfg.seed == 0
    assert cfg.session == 0 and cfg.split.seed == 0 and cfg.train.seed == 0
    assert cfg.victim.trace_len(cfg.leakage) == 1792
    assert cfg.model_spec(1792).n_classes == 10


def test_null_subseeds_follow_top_seed():
    cfg = resolve({"seed": 7, "train": {"seed": 99}})
    assert cfg.session == 7 and cfg.split.seed == 7 and cfg.train.seed == 99


def test_seed_precedence(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 5}))
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert load_config(p).seed == 5
    monkeypatch.setenv(SEED_ENV, "11")
    assert load_config(p).seed == 11
    assert load_config(p, seed_override=2).seed == 2
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(ConfigError):
        load_config(p)
    monkeypatch.delenv(SEED_ENV)
    p.write_text("{}")
    assert load_config(p).seed == 0


@pytest.mark.parametrize(
    "doc",
    [
        {"bogus": 1},
        {"leakage": {"zero_skip": "sometimes"}},
        {"train": {"learning_rate": 0}},
        {"split": {"profiling_fraction": 1.0}},
        {"sweep": {"axis": "n_traces", "values": [100, 100]}},
        {"sweep": {"axis": "n_traces", "values": []}},
        {"victim": {"layers": [["pool", 3]]}},
    ],
)
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        resolve(doc)


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(p)


def test_digest_is_canonical():
    a = resolve({"seed": 1, "leakage": {"a": 2.0}})
    b = resolve({"leakage": {"a": 2.0}, "seed": 1})
    assert a.digest() == b.digest()
    assert a.digest() != resolve({"seed": 2, "leakage": {"a": 2.0}}).digest()
    assert config_digest({"x": 1, "y": 2}) == config_digest({"y": 2, "x": 1})


def test_overrides_and_modes():
    cfg = default_config().with_overrides(leakage={"a": 0.0, "zero_skip": "off"}, mode="output_attribute")
    assert cfg.leakage.a == 0.0 and cfg.leakage.sigma == 1.0
    assert cfg.label_noise == 0.08
    assert default_config().label_noise == 0.0


def test_augmentation_section():
    cfg = default_config(train={"augmentation": {"ratio": 0.1, "seed": 3}})
    assert cfg.train.augmentation.ratio == 0.1
