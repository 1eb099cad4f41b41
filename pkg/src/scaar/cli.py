"""Command-line entry point.

Exit codes: 0 ok, 1 usage, 2 config, 3 data, 4 runtime. Failures print one
JSON object on stderr. Every command writes ``<output>.manifest.json`` beside
its primary output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, assess, pipeline
from .analyses import llm_analysis
from .attribution import grad_cam, peak_window
from .config import SEED_ENV, ConfigError, ExperimentConfig, PreprocessConfig, load_config
from .leaksim import OverflowLengthError, UnknownTokenError
from .nnet.model import LengthMismatchError, load_checkpoint, save_checkpoint
from .nnet.train import TrainingDiverged
from .preprocess import ZeroVarianceError
from .scar import ScarError, read_scar, write_scar
from .traces import SplitConfig, SplitError, TraceSet, split, validate

log = logging.getLogger("scaar")

EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 1, 2, 3, 4


class DataError(Exception):
    pass


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail("usage", message, EXIT_USAGE)


def _fail(kind: str, message: str, code: int):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    sys.exit(code)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


class Run:
    """Bookkeeping for one command: outputs, seed, config identity, timing."""

    def __init__(self, args):
        self.args = args
        self.t0 = time.perf_counter()
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.outputs: list[str] = []
        self.config_path = getattr(args, "config", None)
        self.config_digest = None
        self.seed = None

    def config(self) -> ExperimentConfig:
        path = self.args.config
        try:
            raw = Path(path).read_bytes()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        # digest of the file as read, so the manifest verifies against it
        self.config_digest = hashlib.sha256(raw).hexdigest()
        cfg = load_config(path, self.args.seed)
        if self.args.set:
            cfg = cfg.with_overrides(**_parse_sets(self.args.set))
        train = dict(cfg.raw["train"])
        if self.args.deterministic:
            train.update(workers=1, shards=1)
        elif self.args.threads is not None:
            train["workers"] = max(1, min(train["workers"], self.args.threads))
        if train != cfg.raw["train"]:
            cfg = cfg.with_overrides(train=train)
        self.seed = cfg.seed
        return cfg

    def resolved_seed(self) -> int:
        """Seed for commands without a config: flag > environment > 0."""
        if self.args.seed is not None:
            return int(self.args.seed)
        env = os.environ.get(SEED_ENV, "").strip()
        if env:
            try:
                return int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer") from None
        return 0

    def wrote(self, path):
        self.outputs.append(str(path))

    def manifest(self, primary):
        doc = {
            "command": ["scaar", *self.args.argv],
            "verb": self.args.verb,
            "config_path": self.config_path,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "version": __version__,
            "deterministic": bool(self.args.deterministic),
            "outputs": [{"path": p, "sha256": sha256_file(p)} for p in self.outputs],
            "started_utc": self.started,
            "duration_s": round(time.perf_counter() - self.t0, 3),
        }
        path = f"{primary}.manifest.json"
        _write_text(path, _dump(doc))
        return path


def _parse_sets(items) -> dict:
    out: dict = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        try:
            val = json.loads(value)
        except json.JSONDecodeError:
            val = value
        section, name = key.split(".", 1)
        out.setdefault(section, {})[name] = val
    return out


def _read_data(path, need_fixed=True) -> TraceSet:
    if not Path(path).is_file():
        raise DataError(f"data file not found: {path}")
    ts = read_scar(path)
    problems = validate(ts)
    if problems:
        shown = "; ".join(f"trace {i}: {m}" if i >= 0 else m for i, m in problems[:5])
        raise DataError(f"{path}: {len(problems)} invalid trace(s): {shown}")
    if need_fixed and ts.fixed_len is None:
        raise DataError(f"{path}: this command needs fixed-length traces")
    return ts


def _read_model(path):
    if not Path(path).is_file():
        raise DataError(f"model file not found: {path}")
    try:
        return load_checkpoint(path)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: not a readable model checkpoint ({e})") from None


def _conditioner(header) -> pipeline.Conditioner:
    extra = header.get("extra", {})
    ref = extra.get("reference")
    return pipeline.Conditioner(
        PreprocessConfig(**extra.get("preprocess", {})), None if ref is None else np.asarray(ref)
    )


def _csv_beside(out, suffix=".csv") -> str:
    p = Path(out)
    return str(p.with_suffix(suffix)) if p.suffix != suffix else str(p.with_name(p.stem + "_data" + suffix))


# ---- verbs ----


def cmd_simulate(run: Run, a):
    cfg = run.config()
    ds = pipeline.make_dataset(cfg)
    meta = {
        **ds.meta,
        "generator": f"scaar {__version__}",
        "config_digest": cfg.digest(),
        "mode": cfg.mode,
        "session": cfg.session,
        "victim": cfg.victim.to_dict(),
        "leakage": cfg.leakage.to_dict(),
    }
    write_scar(TraceSet(ds.traces, ds.n_classes, ds.fixed_len, meta), a.out)
    run.wrote(a.out)
    log.info("wrote %d traces of length %d to %s", len(ds), ds.fixed_len, a.out)
    return a.out


def cmd_profile(run: Run, a):
    cfg = run.config()
    ts = _read_data(a.data)
    prof_set, _ = split(ts, cfg.split)
    prof = pipeline.profile(cfg, prof_set)
    s = cfg.split
    extra = {
        "config_digest": cfg.digest(),
        "mode": cfg.mode,
        "seed": cfg.seed,
        "data_sha256": sha256_file(a.data),
        "split": {"profiling_fraction": s.profiling_fraction, "seed": s.seed, "stratified": s.stratified},
        "preprocess": dict(cfg.raw["preprocess"]),
        "reference": None if prof.conditioner.reference is None else prof.conditioner.reference.tolist(),
        "train": cfg.raw["train"],
        "n_profiling": prof.n_profiling,
        "loss_history": prof.loss_history,
    }
    save_checkpoint(prof.model, a.model_out, epoch=cfg.train.epochs, extra=extra)
    run.wrote(a.model_out)
    return a.model_out


def cmd_attack(run: Run, a):
    model, header = _read_model(a.model)
    extra = header.get("extra", {})
    run.seed = extra.get("seed")
    run.config_digest = extra.get("config_digest")
    ts = _read_data(a.data)
    subset = "all"
    if not a.all_traces and extra.get("data_sha256") == sha256_file(a.data):
        # same file the model was profiled on: attack only the held-out part
        _, ts = split(ts, SplitConfig(**extra["split"]))
        subset = "held_out"
    x = _conditioner(header)(ts.matrix)
    if x.shape[1] != model.spec.input_len:
        raise LengthMismatchError(
            f"trace length {ts.fixed_len} (conditioned {x.shape[1]}) does not match "
            f"model input length {model.spec.input_len}"
        )
    pred = pipeline.attack_phase(model, x)
    acc, conf = pipeline.score(pred, ts.labels, model.spec.n_classes)
    rep = pipeline.AttackReport(
        acc,
        conf,
        int(extra.get("n_profiling", 0)),
        len(ts),
        run.seed,
        run.config_digest,
        extra.get("mode", "input_attribute"),
        {"attack_subset": subset, "data_sha256": sha256_file(a.data), "model_digest": model.digest()},
    )
    _write_text(a.out, rep.to_json())
    run.wrote(a.out)
    return a.out


def _groups(ts: TraceSet, group: str, seed: int):
    g = group.lower()
    try:
        if g.startswith("class") and g.endswith("-vs-rest"):
            return assess.class_vs_rest(ts, int(g[5:-8]), seed)
        if g.startswith("halves"):
            return assess.random_halves(ts, int(g[6:] or 0), seed)
        if g.startswith("class") and "-vs-class" in g:
            left, right = g[5:].split("-vs-class")
            return assess.class_vs_class(ts, int(left), int(right))
    except ValueError as e:
        if "invalid literal" not in str(e):
            raise DataError(str(e)) from None
    raise UsageError(f"unknown grouping {group!r}; use classK-vs-rest, classA-vs-classB or halvesK")


def cmd_tvla(run: Run, a):
    run.seed = run.resolved_seed()
    ts = _read_data(a.data)
    ga, gb = _groups(ts, a.group, run.seed)
    if len(ga) < 2 or len(gb) < 2:
        raise DataError(f"grouping {a.group!r} leaves {len(ga)} and {len(gb)} traces; need two per group")
    rep = assess.tvla(ga, gb, a.threshold)
    doc = {**rep.to_dict(), "group": a.group, "seed": run.seed, "data_sha256": sha256_file(a.data)}
    _write_text(a.out, _dump(doc))
    csv_path = a.csv or _csv_beside(a.out)
    rep.write_csv(csv_path)
    run.wrote(a.out)
    run.wrote(csv_path)
    return a.out


def cmd_gradcam(run: Run, a):
    model, header = _read_model(a.model)
    run.seed = header.get("extra", {}).get("seed")
    ts = _read_data(a.data)
    if not 0 <= a.index < len(ts):
        raise DataError(f"trace index {a.index} out of range for {len(ts)} traces")
    x = _conditioner(header)(ts.matrix[a.index : a.index + 1])
    if x.shape[1] != model.spec.input_len:
        raise LengthMismatchError(
            f"trace length {x.shape[1]} does not match model input length {model.spec.input_len}"
        )
    pred = int(model.predict(x)[0])
    cls = pred if a.cls is None else a.cls
    amap = grad_cam(model, x[0], cls, a.layer)
    amap.write_csv(a.out)
    run.wrote(a.out)
    summary = {
        "index": a.index,
        "label": int(ts.labels[a.index]),
        "predicted": pred,
        "class": cls,
        "layer": amap.layer,
        "all_zero": amap.all_zero,
        "fraction": a.fraction,
        "peak_window": None if amap.all_zero else list(peak_window(amap, a.fraction)),
    }
    js = _csv_beside(a.out, ".json")
    _write_text(js, _dump(summary))
    run.wrote(js)
    return a.out


def cmd_sweep(run: Run, a):
    cfg = run.config()
    sw = cfg.sweep or {}
    axis = a.axis or sw.get("axis")
    values = [float(v) for v in a.values.split(",")] if a.values else sw.get("values")
    if axis is None or not values:
        raise ConfigError("sweep needs an axis and values, from flags or the config 'sweep' section")
    if axis == "n_traces":
        points = pipeline.sweep_traces(cfg, [int(v) for v in values])
    elif axis == "shift_ratio":
        points = pipeline.sweep_shift(cfg, values)
    else:
        raise UsageError(f"unknown sweep axis {axis!r}")
    pipeline.write_sweep_csv(points, a.out, axis)
    run.wrote(a.out)
    js = _csv_beside(a.out, ".json")
    _write_text(js, _dump({"axis": axis, "points": [{"value": v, "report": r.to_dict()} for v, r in points]}))
    run.wrote(js)
    return a.out


def cmd_llm(run: Run, a):
    cfg = run.config()
    doc = llm_analysis(cfg, a.max_tokens, a.n_traces, (a.token_a, a.token_b), a.null_reps)
    doc["seed"] = cfg.seed
    _write_text(a.out, _dump(doc))
    run.wrote(a.out)
    return a.out


def cmd_run(run: Run, a):
    cfg = run.config()
    reports = []
    for i in range(a.repeats):
        c = cfg.with_overrides(
            seed=cfg.seed + i, dataset={"session": None}, split={"seed": None}, model={"seed": None}, train={"seed": None}
        ) if i else cfg
        reports.append(pipeline.run_attack(c))
    accs = np.array([r.accuracy for r in reports])
    doc = {
        "config_digest": cfg.digest(),
        "mode": cfg.mode,
        "seeds": [r.seed for r in reports],
        "accuracy_mean": float(accs.mean()),
        "accuracy_std": float(accs.std()),
        "runs": [r.to_dict() for r in reports],
    }
    _write_text(a.out, _dump(doc))
    run.wrote(a.out)
    return a.out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"overrides ${SEED_ENV} and the config seed")
    common.add_argument("--threads", type=int, default=None, help="cap on training worker threads")
    common.add_argument("--deterministic", action="store_true", help="single-threaded reference mode")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config scalar")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="scaar", description="Simulated EM side-channel attribute extraction toolkit.")
    p.add_argument("--version", action="version", version=f"scaar {__version__}")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="generate a labelled trace corpus")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("profile", parents=[common], help="train an attack model on the profiling split")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--model-out", required=True)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("attack", parents=[common], help="predict attributes and score them")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--all-traces", action="store_true", help="attack every trace even on the profiling file")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("tvla", parents=[common], help="pointwise Welch t-test between two trace groups")
    s.add_argument("--data", required=True)
    s.add_argument("--group", default="class0-vs-rest")
    s.add_argument("--threshold", type=float, default=assess.TVLA_THRESHOLD)
    s.add_argument("--out", required=True)
    s.add_argument("--csv", default=None, help="per-index t values (default: beside --out)")
    s.set_defaults(func=cmd_tvla)

    s = sub.add_parser("gradcam", parents=[common], help="1D Grad-CAM map for one trace")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--class", dest="cls", type=int, default=None, help="default: predicted class")
    s.add_argument("--layer", default="conv2")
    s.add_argument("--fraction", type=float, default=0.8)
    s.set_defaults(func=cmd_gradcam)

    s = sub.add_parser("sweep", parents=[common], help="trace-count or shift-ratio sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", choices=["n_traces", "shift_ratio"], default=None)
    s.add_argument("--values", default=None, help="comma separated, strictly increasing")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("llm", parents=[common], help="LLM token-length and token-distinguishability analysis")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-tokens", type=int, default=6)
    s.add_argument("--n-traces", type=int, default=500)
    s.add_argument("--token-a", type=int, default=0)
    s.add_argument("--token-b", type=int, default=1)
    s.add_argument("--null-reps", type=int, default=20)
    s.set_defaults(func=cmd_llm)

    s = sub.add_parser("run", parents=[common], help="end-to-end attack, mean and std over repeated seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--repeats", type=int, default=3)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    run = Run(args)
    try:
        primary = args.func(run, args)
        run.manifest(primary)
    except UsageError as e:
        _fail("usage", str(e), EXIT_USAGE)
    except ConfigError as e:
        _fail("config", str(e), EXIT_CONFIG)
    except (
        DataError,
        ScarError,
        LengthMismatchError,
        SplitError,
        OverflowLengthError,
        UnknownTokenError,
        ZeroVarianceError,
    ) as e:
        _fail("data", str(e), EXIT_DATA)
    except TrainingDiverged as e:
        _fail("runtime", str(e), EXIT_RUNTIME)
    except (OSError, ValueError, RuntimeError) as e:
        _fail("runtime", f"{type(e).__name__}: {e}", EXIT_RUNTIME)
    return 0


if __name__ == "__main__":
    sys.exit(main())
