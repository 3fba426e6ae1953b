"""Command-line pipeline: synth, train, evaluate, attribute, audit, mitigate.

Every command takes an optional JSON config (``--config``); flags given on
the command line override its keys and unknown keys are rejected. The
resolved settings are archived as ``config.json`` in the output directory
so each run can be repeated from that file alone.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import attribution, fairness, metrics
from .dataset import (LESION_CLASSES, DatasetError, ImageSource, SynthConfig, balance,
                      feature_arrays, load_features, materialize, projection_features, save_features,
                      stratified_split, synth_generate)
from .dataset.images import AUGMENTATIONS
from .dataset.schema import SampleRecord
from .models import CheckpointError, SpecError, load_checkpoint, param_count, preset, save_checkpoint
from .trainer import HEAD_SCHEME, Hyperparams, TrainingError, evaluate, train

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    pass


# Every key a command accepts, with its default. None means "required" for
# the keys listed in REQUIRED.
DEFAULTS = {
    "synth": {
        "out": None, "seed": 0, "n_per_class": 100, "height": 48, "width": 64,
        "tone_dark": 0.19, "sex_female": 0.5, "difficulty": 0.3, "bias": 0.0,
        "bias_mode": "attenuate", "features": False,
    },
    "train": {
        "data": None, "out": None, "preset": "desk7", "features": None, "image_size": None,
        "epochs": 10, "batch_size": 32, "learning_rate": 1e-3, "seed": 0,
        "test_fraction": 0.2, "balance": None, "augmentations": list(AUGMENTATIONS),
    },
    "evaluate": {
        "data": None, "model": None, "out": None, "features": None, "threshold": 0.5,
    },
    "attribute": {
        "data": None, "model": None, "out": None, "method": "both", "target": "argmax",
        "steps": 64, "q": 0.9, "samples": None, "n_samples": 4,
    },
    "audit": {
        "predictions": None, "out": None, "axes": ["sex", "tone"],
        "tolerance": fairness.DEFAULT_TOLERANCE,
    },
    "mitigate": {
        "predictions": None, "out": None, "axis": "tone", "axes": ["sex", "tone"],
        "cost_constraint": "fnr", "fnr_weight": 0.5, "mode": "sampled", "seed": 0,
        "tolerance": fairness.DEFAULT_TOLERANCE,
    },
}

REQUIRED = {
    "synth": ("out",),
    "train": ("data", "out"),
    "evaluate": ("model", "out"),
    "attribute": ("model", "out"),
    "audit": ("predictions", "out"),
    "mitigate": ("predictions", "out"),
}


# ---------------------------------------------------------------------------
# configuration


def resolve_config(command: str, config_path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then explicit flag values."""
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {config_path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config key(s) for {command}: {unknown}")
        cfg.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"{command} needs {', '.join(missing)}")
    return cfg


def _archive(cfg: dict, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"command": command, **cfg})


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path} not found") from None


def _run_config(model_dir: Path) -> dict:
    """The archived train config next to a checkpoint, or {} if absent."""
    path = model_dir / "config.json"
    return _read_json(path) if path.exists() else {}


# ---------------------------------------------------------------------------
# shared helpers


def _spec_for(cfg: dict):
    kwargs = {}
    if cfg.get("image_size") is not None:
        if cfg["preset"].startswith("model"):
            raise ConfigError("image_size only applies to the desk and head presets")
        h, w = cfg["image_size"]
        kwargs["input_shape"] = (int(h), int(w), 3)
    return preset(cfg["preset"], **kwargs)


def _load_split(model_dir: Path, records: list[SampleRecord]):
    """Rebuild the train (with augmented copies) and test record lists."""
    split = _read_json(model_dir / "split.json")
    by_id = {r.sample_id: r for r in records}

    def lookup(sid):
        if sid not in by_id:
            raise DatasetError(f"split refers to unknown sample {sid!r}")
        return by_id[sid]

    train_recs = []
    for entry in split["train"]:
        if isinstance(entry, str):
            train_recs.append(lookup(entry))
        else:
            src = lookup(entry["source_id"])
            train_recs.append(src.with_(sample_id=entry["sample_id"], source_id=src.sample_id,
                                        transform=entry["transform"]))
    return train_recs, [lookup(s) for s in split["test"]]


def _arrays(spec, records, source, all_records, features_path):
    scheme = HEAD_SCHEME[spec.head]
    if spec.backbone_index is not None:
        if features_path is None:
            raise ConfigError("this preset consumes backbone features; pass --features")
        return feature_arrays(records, load_features(features_path), scheme)
    return materialize(records, source, spec.input_shape, scheme, sources=all_records)


def _split_entry(r: SampleRecord):
    if r.source_id is None:
        return r.sample_id
    return {"sample_id": r.sample_id, "source_id": r.source_id, "transform": r.transform}


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: dict) -> Path:
    out = Path(cfg["out"])
    n = cfg["n_per_class"]
    config = SynthConfig(n_per_class=n if isinstance(n, dict) else int(n),
                         height=int(cfg["height"]), width=int(cfg["width"]),
                         group_mix={"tone_dark": float(cfg["tone_dark"]), "sex_female": float(cfg["sex_female"])},
                         difficulty=float(cfg["difficulty"]), bias=float(cfg["bias"]),
                         bias_mode=cfg["bias_mode"], seed=int(cfg["seed"]))
    data = synth_generate(config)
    data.write(out)
    if cfg["features"]:
        ids = [r.sample_id for r in data.records]
        feats = projection_features(np.stack([data.image(s) for s in ids]))
        save_features(out / "features.npz", ids, feats)
    _archive(cfg, out, "synth")
    print(f"wrote {len(data.records)} samples to {out}")
    return out


def cmd_train(cfg: dict) -> Path:
    out = Path(cfg["out"])
    spec = _spec_for(cfg)
    if spec.backbone_index is not None and cfg["features"] is None:
        raise ConfigError(f"preset {cfg['preset']} consumes backbone features; pass --features")
    source, records = ImageSource.from_directory(cfg["data"])
    hyper = Hyperparams(learning_rate=float(cfg["learning_rate"]), batch_size=int(cfg["batch_size"]),
                        epochs=int(cfg["epochs"]), seed=int(cfg["seed"]))
    train_recs, test_recs = stratified_split(records, float(cfg["test_fraction"]), int(cfg["seed"]))
    if cfg["balance"] is not None:
        train_recs = balance(train_recs, int(cfg["balance"]), tuple(cfg["augmentations"]), int(cfg["seed"]))
    data = _arrays(spec, train_recs, source, records, cfg["features"])

    def progress(epoch, history, params):
        print(f"epoch {epoch + 1}/{hyper.epochs}  loss {history.loss[-1]:.4f}  "
              f"accuracy {history.accuracy[-1]:.4f}", file=sys.stderr)

    params, history = train(spec, data, hyper, progress=progress)
    _archive(cfg, out, "train")
    save_checkpoint(params, spec, out / "model.ckpt")
    _write_json(out / "history.json", history.to_dict())
    _write_json(out / "split.json", {"train": [_split_entry(r) for r in train_recs],
                                     "test": [r.sample_id for r in test_recs]})
    counts = param_count(spec)
    print(f"trained {cfg['preset']} ({counts['total']:,} parameters) on {len(train_recs)} samples; "
          f"checkpoint in {out / 'model.ckpt'}")
    return out


def format_metrics_table(train_b: metrics.MetricsBundle, test_b: metrics.MetricsBundle, spec) -> str:
    lines = [f"{'':<10}{'Train':>10}{'Test':>10}"]
    for label, key in (("Accuracy", "accuracy"), ("AUC", "auc"), ("Recall", "recall")):
        lines.append(f"{label:<10}{getattr(train_b, key):>10.4f}{getattr(test_b, key):>10.4f}")
    names = LESION_CLASSES if spec.head == "sevenway" else ("Benign", "Dangerous")
    lines += ["", "Per-class recall", f"{'class':<10}{'Train':>10}{'Test':>10}"]
    for name, a, b in zip(names, train_b.per_class_recall, test_b.per_class_recall):
        lines.append(f"{name:<10}{_num(a):>10}{_num(b):>10}")
    return "\n".join(lines) + "\n"


def _num(v: float) -> str:
    return "n/a" if np.isnan(v) else f"{v:.4f}"


def cmd_evaluate(cfg: dict) -> Path:
    out, model_dir = Path(cfg["out"]), Path(cfg["model"])
    run = _run_config(model_dir)
    data_dir = cfg["data"] or run.get("data")
    features = cfg["features"] or run.get("features")
    if data_dir is None:
        raise ConfigError("evaluate needs --data (no archived train config found)")
    params, spec = load_checkpoint(model_dir / "model.ckpt")
    source, records = ImageSource.from_directory(data_dir)
    train_recs, test_recs = _load_split(model_dir, records)
    if not test_recs:
        raise TrainingError("test split is empty")
    bundles, logs = {}, {}
    for name, recs in (("train", train_recs), ("test", test_recs)):
        arrays = _arrays(spec, recs, source, records, features)
        bundles[name], logs[name] = evaluate(params, spec, arrays, float(cfg["threshold"]))
    _archive(cfg, out, "evaluate")
    table = format_metrics_table(bundles["train"], bundles["test"], spec)
    (out / "metrics.txt").write_text(table, encoding="utf-8")
    _write_json(out / "metrics.json", {"head": spec.head, "threshold": float(cfg["threshold"]),
                                       "train": bundles["train"].to_dict(), "test": bundles["test"].to_dict()})
    for name, recs in logs.items():
        fairness.write_predictions(recs, out / f"predictions_{name}.csv")
    print(table, end="")
    return out


def cmd_attribute(cfg: dict) -> Path:
    out, model_dir = Path(cfg["out"]), Path(cfg["model"])
    run = _run_config(model_dir)
    data_dir = cfg["data"] or run.get("data")
    if data_dir is None:
        raise ConfigError("attribute needs --data (no archived train config found)")
    if cfg["method"] not in ("saliency", "ig", "both"):
        raise ConfigError(f"method must be saliency, ig or both, got {cfg['method']!r}")
    params, spec = load_checkpoint(model_dir / "model.ckpt")
    if spec.backbone_index is not None:
        raise attribution.AttributionError("attribution needs a pixel-input model")
    source, records = ImageSource.from_directory(data_dir)
    by_id = {r.sample_id: r for r in records}
    if cfg["samples"]:
        unknown = [s for s in cfg["samples"] if s not in by_id]
        if unknown:
            raise DatasetError(f"unknown sample id(s) {unknown}")
        chosen = [by_id[s] for s in cfg["samples"]]
    else:
        test_ids = _read_json(model_dir / "split.json")["test"]
        chosen = [by_id[s] for s in test_ids[:int(cfg["n_samples"])]]
    target = cfg["target"]
    if isinstance(target, str) and target not in ("argmax", "predicted", "true"):
        try:
            target = int(target)
        except ValueError:
            raise ConfigError(f"target must be argmax, true or a class index, got {target!r}") from None
    target_mode = "true" if target == "true" else "predicted" if isinstance(target, str) else "fixed"
    methods = ("saliency", "ig") if cfg["method"] == "both" else (cfg["method"],)
    arrays = materialize(chosen, source, spec.input_shape, HEAD_SCHEME[spec.head], sources=records)
    _archive(cfg, out, "attribute")
    overlays = out / "overlays"
    overlays.mkdir(exist_ok=True)
    index = []
    for rec, x, label in zip(chosen, arrays.inputs, arrays.labels):
        cls = int(label) if target == "true" else target
        for method in methods:
            meta = {"sample_id": rec.sample_id, "q": float(cfg["q"]), "target_mode": target_mode}
            if method == "saliency":
                amap = attribution.saliency(params, spec, x, cls)
            else:
                res = attribution.integrated_gradients(params, spec, x, target=cls, steps=int(cfg["steps"]))
                amap = res.map
                gap = attribution.completeness_gap(res)
                meta.update({"m": int(cfg["steps"]), "completeness_gap": gap.value,
                             "completeness_gap_absolute": gap.absolute, "f_x": res.f_x,
                             "f_baseline": res.f_baseline, "attribution_sum": res.total})
            image = x.reshape(amap.values.shape + (3,))
            path = overlays / f"{rec.sample_id}_{method}.ppm"
            ov = attribution.overlay(image, amap, float(cfg["q"]), path, meta)
            index.append(ov.metadata)
    _write_json(out / "attributions.json", index)
    print(f"wrote {len(index)} overlays to {overlays}")
    return out


def _records(path) -> list:
    recs = fairness.read_predictions(path)
    return [r.binary() for r in recs]


def cmd_audit(cfg: dict) -> Path:
    out = Path(cfg["out"])
    recs = _records(cfg["predictions"])
    report = fairness.audit(recs, tuple(cfg["axes"]), tolerance=float(cfg["tolerance"]))
    _archive(cfg, out, "audit")
    text = fairness.format_report(report)
    (out / "audit.txt").write_text(text, encoding="utf-8")
    _write_json(out / "audit.json", report.to_dict())
    print(text, end="")
    return out


def cmd_mitigate(cfg: dict) -> Path:
    out = Path(cfg["out"])
    if cfg["mode"] not in ("sampled", "expected"):
        raise ConfigError(f"mode must be sampled or expected, got {cfg['mode']!r}")
    axes = tuple(cfg["axes"])
    if cfg["axis"] not in axes:
        axes = axes + (cfg["axis"],)
    recs = _records(cfg["predictions"])
    policy = fairness.fit_calibrated_eq_odds(recs, cfg["axis"], cfg["cost_constraint"], float(cfg["fnr_weight"]))
    mitigated = fairness.apply_policy_sampled(recs, policy, int(cfg["seed"]))
    if cfg["mode"] == "expected":
        report = fairness.audit(recs, axes, policy=policy, mode="expected", seed=int(cfg["seed"]),
                                tolerance=float(cfg["tolerance"]))
    else:
        report = fairness.audit(recs, axes, policy=policy, mitigated=mitigated, tolerance=float(cfg["tolerance"]))
        report.mode = "sampled"
    _archive(cfg, out, "mitigate")
    text = fairness.format_report(report)
    (out / "mitigation.txt").write_text(text, encoding="utf-8")
    _write_json(out / "mitigation.json", report.to_dict())
    _write_json(out / "policy.json", policy.to_dict())
    fairness.write_predictions(mitigated, out / "predictions_mitigated.csv")
    print(text, end="")
    return out


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate,
    "attribute": cmd_attribute, "audit": cmd_audit, "mitigate": cmd_mitigate,
}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    """Argument errors are validation errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _n_per_class(text: str):
    return json.loads(text) if text.strip().startswith("{") else int(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lesionaudit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with settings; flags override it")
        p.add_argument("--out", help="output directory")
        return p

    p = command("synth", "generate a synthetic lesion dataset")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-per-class", type=_n_per_class, help="count per class, or a JSON object by class")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--tone-dark", type=float, help="fraction of dark-tone samples")
    p.add_argument("--sex-female", type=float, help="fraction of female samples")
    p.add_argument("--difficulty", type=float)
    p.add_argument("--bias", type=float)
    p.add_argument("--bias-mode", choices=("attenuate", "label_noise"))
    p.add_argument("--features", action="store_const", const=True,
                   help="also write projection features to features.npz")

    p = command("train", "train a preset on a dataset directory")
    p.add_argument("--data")
    p.add_argument("--preset")
    p.add_argument("--features", help="npz of precomputed backbone features")
    p.add_argument("--image-size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--balance", type=int, help="resample every training class to this count")
    p.add_argument("--augmentations", nargs="+", choices=AUGMENTATIONS)

    p = command("evaluate", "metrics and prediction logs for a trained model")
    p.add_argument("--data")
    p.add_argument("--model", help="directory written by train")
    p.add_argument("--features")
    p.add_argument("--threshold", type=float)

    p = command("attribute", "saliency / integrated-gradients overlays")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--method", choices=("saliency", "ig", "both"))
    p.add_argument("--target", help="argmax (predicted class), true (labelled class) or a class index")
    p.add_argument("--steps", type=int, help="integration steps m")
    p.add_argument("--q", type=float, help="overlay quantile")
    p.add_argument("--samples", nargs="+", help="sample ids (default: first test samples)")
    p.add_argument("--n-samples", type=int)

    p = command("audit", "equalized-odds audit of a prediction log")
    p.add_argument("--predictions")
    p.add_argument("--axes", nargs="+", choices=("sex", "tone"))
    p.add_argument("--tolerance", type=float)

    p = command("mitigate", "calibrated equalized-odds postprocessing")
    p.add_argument("--predictions")
    p.add_argument("--axis", choices=("sex", "tone"))
    p.add_argument("--axes", nargs="+", choices=("sex", "tone"))
    p.add_argument("--cost-constraint", choices=fairness.COST_CONSTRAINTS)
    p.add_argument("--fnr-weight", type=float)
    p.add_argument("--mode", choices=("sampled", "expected"))
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float)
    return parser


VALIDATION_ERRORS = (ConfigError, DatasetError, SpecError, CheckpointError, TrainingError,
                     attribution.AttributionError, fairness.FairnessError, metrics.MetricsError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve_config(args.command, args.config, overrides)
        COMMANDS[args.command](cfg)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
