import csv
import hashlib
import json
import subprocess
import sys

import pytest

from scaar.cli import main

SMALL = {
    "seed": 3,
    "victim": {"layers": [["conv", 32], ["conv", 16], ["fc", 8]], "input_dim": 16, "n_classes": 4},
    "leakage": {"sigma": 0.5},
    "dataset": {"n_per_class": 40},
    "train": {"epochs": 5, "batch_size": 32, "learning_rate": 1e-2},
    "model": {"convs": [[7, 4, 2], [5, 8, 2], [3, 8, 2]]},
}


def run(*argv):
    """Run the CLI in-process and return its exit code."""
    try:
        return main(list(map(str, argv)))
    except SystemExit as e:
        return e.code


def err_of(capsys):
    lines = [l for l in capsys.readouterr().err.splitlines() if l.startswith("{")]
    return json.loads(lines[-1])


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("SCAAR_SEED", raising=False)
    (tmp_path / "cfg.json").write_text(json.dumps(SMALL))
    return tmp_path


def full_pipeline(d):
    assert run("simulate", "--config", d / "cfg.json", "--out", d / "t.scar") == 0
    assert run("profile", "--config", d / "cfg.json", "--data", d / "t.scar", "--model-out", d / "m.bin") == 0
    assert run("attack", "--model", d / "m.bin", "--data", d / "t.scar", "--out", d / "r.json", "--deterministic") == 0
    return json.loads((d / "r.json").read_text())


def test_simulate_profile_attack(work):
    rep = full_pipeline(work)
    assert 0 <= rep["accuracy"] <= 1
    assert rep["n_attack"] == 16 and rep["extra"]["attack_subset"] == "held_out"
    assert sum(map(sum, rep["confusion"])) == 16


def test_manifest_verifies(work):
    full_pipeline(work)
    for out in ("t.scar", "m.bin", "r.json"):
        man = json.loads((work / f"{out}.manifest.json").read_text())
        for o in man["outputs"]:
            assert hashlib.sha256(open(o["path"], "rb").read()).hexdigest() == o["sha256"]
        assert man["version"] == "0.1.0" and man["seed"] == 3
        assert "duration_s" in man and man["command"][0] == "scaar"
    man = json.loads((work / "t.scar.manifest.json").read_text())
    assert man["config_digest"] == hashlib.sha256((work / "cfg.json").read_bytes()).hexdigest()


def test_reports_byte_identical_across_runs(work):
    (work / "a").mkdir()
    (work / "b").mkdir()
    for sub in ("a", "b"):
        (work / sub / "cfg.json").write_text(json.dumps(SMALL))
        full_pipeline(work / sub)
    assert (work / "a" / "r.json").read_bytes() == (work / "b" / "r.json").read_bytes()
    assert (work / "a" / "m.bin").read_bytes() == (work / "b" / "m.bin").read_bytes()


def test_tvla_writes_json_and_csv(work):
    run("simulate", "--config", "cfg.json", "--out", "t.scar")
    assert run("tvla", "--data", "t.scar", "--group", "class0-vs-rest", "--out", "tvla.json") == 0
    doc = json.loads((work / "tvla.json").read_text())
    rows = list(csv.reader(open(work / "tvla.csv")))
    assert rows[0] == ["index", "t"]
    assert len(rows) - 1 == doc["length"] == (32 + 16 + 8) * 4
    assert run("tvla", "--data", "t.scar", "--group", "class1-vs-class2", "--out", "x.json") == 0
    assert run("tvla", "--data", "t.scar", "--group", "halves0", "--out", "h.json") == 0


def test_attack_length_mismatch_exit_3(work, capsys):
    full_pipeline(work)
    other = dict(SMALL, victim={**SMALL["victim"], "layers": [["conv", 20], ["fc", 8]]})
    (work / "other.json").write_text(json.dumps(other))
    run("simulate", "--config", "other.json", "--out", "o.scar")
    code = run("attack", "--model", "m.bin", "--data", "o.scar", "--out", "x.json")
    assert code == 3
    e = err_of(capsys)
    assert e["error"] == "data" and "112" in e["message"] and "224" in e["message"]


def test_exit_codes(work, capsys):
    assert run("nonsense") == 1
    assert run("attack", "--model", "m.bin") == 1
    (work / "bad.json").write_text(json.dumps({"leakage": {"sigma": -1}}))
    assert run("simulate", "--config", "bad.json", "--out", "x.scar") == 2
    assert run("simulate", "--config", "missing.json", "--out", "x.scar") == 2
    assert run("tvla", "--data", "missing.scar", "--out", "x.json") == 3
    (work / "junk.scar").write_bytes(b"JUNKJUNKJUNK" * 4)
    assert run("tvla", "--data", "junk.scar", "--out", "x.json") == 3
    capsys.readouterr()
    run("tvla", "--data", "junk.scar", "--out", "x.json")
    assert err_of(capsys)["exit_code"] == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_runtime_error(work):
    run("simulate", "--config", "cfg.json", "--out", "t.scar")
    code = run(
        "profile", "--config", "cfg.json", "--data", "t.scar", "--model-out", "m.bin",
        "--set", "train.learning_rate=1e30", "--set", "train.optimizer=\"sgd\"",
    )
    assert code == 4


def test_seed_flag_and_env(work, monkeypatch):
    monkeypatch.setenv("SCAAR_SEED", "8")
    run("simulate", "--config", "cfg.json", "--out", "t.scar")
    assert json.loads((work / "t.scar.manifest.json").read_text())["seed"] == 8
    run("simulate", "--config", "cfg.json", "--out", "t.scar", "--seed", "9")
    assert json.loads((work / "t.scar.manifest.json").read_text())["seed"] == 9


def test_gradcam_and_sweep(work):
    full_pipeline(work)
    assert run("gradcam", "--model", "m.bin", "--data", "t.scar", "--out", "g.csv", "--index", "3") == 0
    rows = list(csv.reader(open(work / "g.csv")))
    assert len(rows) - 1 == 224
    summary = json.loads((work / "g.json").read_text())
    assert summary["index"] == 3 and summary["layer"] == 2
    assert run("sweep", "--config", "cfg.json", "--axis", "shift_ratio", "--values", "0,0.1", "--out", "s.csv") == 0
    assert len(list(csv.reader(open(work / "s.csv")))) == 3


def test_llm_and_run_verbs(work):
    assert run("llm", "--config", "cfg.json", "--out", "llm.json", "--n-traces", "50", "--null-reps", "2", "--max-tokens", "3") == 0
    doc = json.loads((work / "llm.json").read_text())
    assert doc["strictly_increasing"] and len(doc["lengths"]) == 4
    assert run("run", "--config", "cfg.json", "--out", "run.json", "--repeats", "2") == 0
    doc = json.loads((work / "run.json").read_text())
    assert doc["seeds"] == [3, 4] and len(doc["runs"]) == 2


def test_console_script_entry_point(work):
    out = subprocess.run([sys.executable, "-m", "scaar.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "0.1.0" in out.stdout
