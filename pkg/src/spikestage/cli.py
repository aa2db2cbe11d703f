"""Command-line entry point wiring the full pipeline.

Subcommands: synth, encode, train, cv, ablate, report. Configuration is
a flat JSON file with dotted keys; command-line flags shadow file values,
which shadow the built-in defaults. Every non-synth command writes its
artifacts under a timestamped run directory containing the fully
resolved configuration for reproducibility.

Exit codes: 0 success, 1 validation/config error, 2 runtime or data
error, 3 numeric failure (non-finite loss or activations).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

from . import __version__
from .attention_model import (
    ModelConfig,
    TrainConfig,
    init_model,
    save_model,
    train,
    write_loss_trace,
)
from .errors import ConfigError, DataError, NumericError
from .evaluation import (
    CVResult,
    compare_ablation,
    encode_dataset,
    export_hypnogram,
    make_folds,
    metrics_report_json,
    render_ablation_text,
    render_confusion_text,
    render_metrics_text,
    run_cv_features,
)
from .filterbank import FilterbankConfig
from .signal_io import (
    Stage,
    SynthSpec,
    epochize,
    ingest_record,
    load_annotations,
    parse_stage_tokens,
    synth_record,
)
from .spike_encoder import (
    HalfGaussianParams,
    load_feature_epoch,
    save_feature_epoch,
)

# Flat config schema with defaults. Spike-train, attention, and training
# defaults follow the reference operating point; a value of None marks a
# key that must be supplied when its command needs it.
CONFIG_DEFAULTS: dict[str, object] = {
    "data.dir": None,
    "data.manifest": None,
    "data.features_dir": None,
    "data.channel": "C4-A1",
    "data.sample_rate_hz": 125,
    "data.resample": False,
    "synth.subjects": None,
    "synth.stages": None,
    "synth.noise_level": 1.0,
    "synth.seed": 0,
    "synth.bursts": True,
    "encoder.mu": 0.0,
    "encoder.sigma": 0.5,
    "encoder.window_size": 125,
    "encoder.normalize": True,
    "encoder.accum_width": 25,
    "encoder.arm": "half_gaussian",
    "encoder.threshold_cutoff": 0.5,
    "filter.family": "butterworth",
    "filter.front_low_hz": 0.5,
    "filter.front_high_hz": 35.0,
    "filter.front_order": 8,
    "filter.band_order": 8,
    "model.depth": 8,
    "model.heads": 4,
    "model.dim": 128,
    "model.attn_scale": 8.0,
    "model.mlp_dim": 128,
    "model.dropout": 0.5,
    "model.pos_encoding": "learned",
    "train.epochs": 100,
    "train.batch_size": 32,
    "train.learning_rate": 1e-4,
    "train.seed": 0,
    "cv.folds": 7,
    "cv.seed": 0,
}

STAGE_TOKEN = {
    Stage.WAKE: "W",
    Stage.N1: "S1",
    Stage.N2: "S2",
    Stage.N3: "S3",
    Stage.REM: "REM",
}


def resolve_config(
    config_path: str | None, flag_overrides: dict[str, object]
) -> dict[str, object]:
    """Merge defaults <- config file <- flags; reject unknown keys."""
    resolved = dict(CONFIG_DEFAULTS)
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        for key, value in loaded.items():
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            resolved[key] = _coerce(key, value)
    for key, value in flag_overrides.items():
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"unknown override key {key!r}")
        resolved[key] = _coerce(key, value)
    return resolved


def _coerce(key: str, value):
    default = CONFIG_DEFAULTS[key]
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def _require(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise ConfigError(f"missing required config key {key!r}")
    return cfg[key]


# -- typed views over the resolved flat config ------------------------------


def encoder_params(cfg) -> HalfGaussianParams:
    return HalfGaussianParams(
        mu=cfg["encoder.mu"],
        sigma=cfg["encoder.sigma"],
        window_size=cfg["encoder.window_size"],
        normalize_to_unit_peak=cfg["encoder.normalize"],
    )


def filter_config(cfg) -> FilterbankConfig:
    return FilterbankConfig(
        family=cfg["filter.family"],
        front_low_hz=cfg["filter.front_low_hz"],
        front_high_hz=cfg["filter.front_high_hz"],
        front_order=cfg["filter.front_order"],
        band_order=cfg["filter.band_order"],
    )


def model_config(cfg, seq_len: int = 150) -> ModelConfig:
    return ModelConfig(
        depth=cfg["model.depth"],
        heads=cfg["model.heads"],
        dim=cfg["model.dim"],
        attn_scale=cfg["model.attn_scale"],
        mlp_dim=cfg["model.mlp_dim"],
        dropout=cfg["model.dropout"],
        seq_len=seq_len,
        pos_encoding=cfg["model.pos_encoding"],
    )


def train_config(cfg) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        learning_rate=cfg["train.learning_rate"],
        seed=cfg["train.seed"],
    )


# -- run directories ---------------------------------------------------------


def make_run_dir(out_dir: Path, command: str) -> Path:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%d-%H%M%S-%f")
    run_dir = out_dir / f"{command}-{stamp}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def write_resolved_config(run_dir: Path, cfg: dict, command: str) -> None:
    payload = {"command": command, "version": __version__, "config": cfg}
    (run_dir / "resolved_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


# -- dataset loading ---------------------------------------------------------


def _manifest_path(cfg) -> Path:
    if cfg["data.manifest"]:
        return Path(cfg["data.manifest"])
    if cfg["data.dir"]:
        return Path(cfg["data.dir"]) / "manifest.json"
    raise ConfigError("missing required config key 'data.dir' (or 'data.manifest')")


def load_dataset(cfg) -> list:
    """All epochs from the manifest, labels attached, errors with file context."""
    manifest_file = _manifest_path(cfg)
    if not manifest_file.exists():
        raise DataError(f"manifest not found: {manifest_file}")
    try:
        manifest = json.loads(manifest_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_file}: invalid JSON: {exc}")
    base = manifest_file.parent
    epochs = []
    for entry in manifest.get("entries", []):
        record_path = base / entry["record"]
        try:
            record = ingest_record(
                record_path,
                cfg["data.channel"],
                entry.get("format", "csv"),
                sample_rate_hz=manifest.get("sample_rate_hz", cfg["data.sample_rate_hz"]),
                expected_rate_hz=cfg["data.sample_rate_hz"],
                resample=cfg["data.resample"],
            )
            annotations = None
            if entry.get("annotations"):
                annotations = load_annotations(base / entry["annotations"])
            epochs.extend(epochize(record, annotations))
        except (DataError, FileNotFoundError) as exc:
            raise DataError(f"{record_path.name}: {exc}") from exc
    if not epochs:
        raise DataError(f"{manifest_file}: no epochs loaded")
    return epochs


def _encode_from_config(cfg, epochs):
    return encode_dataset(
        epochs,
        encoder_params(cfg),
        arm=cfg["encoder.arm"],
        threshold_cutoff=cfg["encoder.threshold_cutoff"],
        accum_width=cfg["encoder.accum_width"],
        filter_config=filter_config(cfg),
    )


def _load_or_encode_features(cfg):
    if cfg["data.features_dir"]:
        feature_dir = Path(cfg["data.features_dir"])
        files = sorted(feature_dir.glob("*.feat"))
        if not files:
            raise DataError(f"no .feat files under {feature_dir}")
        features = [load_feature_epoch(f) for f in files]
        return [fe for fe in features if fe.stage is not None]
    return _encode_from_config(cfg, load_dataset(cfg))


# -- commands ----------------------------------------------------------------


def cmd_synth(cfg, out_dir: Path, dry_run: bool) -> int:
    n_subjects = int(_require(cfg, "synth.subjects"))
    stages = parse_stage_tokens(_require(cfg, "synth.stages"))
    if dry_run:
        print(
            f"dry-run: would write {n_subjects} records of {len(stages)} epochs "
            f"to {out_dir}"
        )
        return 0
    records_dir = out_dir / "records"
    ann_dir = out_dir / "annotations"
    records_dir.mkdir(parents=True, exist_ok=True)
    ann_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_subjects):
        subject = f"s{i:02d}"
        spec = SynthSpec(
            stages=stages,
            noise_level=cfg["synth.noise_level"],
            sample_rate_hz=cfg["data.sample_rate_hz"],
            subject_id=subject,
            channel_name=cfg["data.channel"],
            bursts=cfg["synth.bursts"],
        )
        record, labels = synth_record(spec, seed=cfg["synth.seed"] + i)
        record_file = records_dir / f"{subject}.csv"
        with open(record_file, "w", encoding="utf-8") as fh:
            for v in record.samples:
                fh.write(f"{float(v)!r}\n")
        ann_file = ann_dir / f"{subject}.txt"
        with open(ann_file, "w", encoding="utf-8") as fh:
            for label in labels:
                fh.write((STAGE_TOKEN[label] if label is not None else "UNSCORED") + "\n")
        entries.append(
            {
                "subject_id": subject,
                "record": f"records/{subject}.csv",
                "annotations": f"annotations/{subject}.txt",
                "format": "csv",
            }
        )
    manifest = {
        "sample_rate_hz": cfg["data.sample_rate_hz"],
        "channel": cfg["data.channel"],
        "entries": entries,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {n_subjects} records + annotations and manifest.json to {out_dir}")
    return 0


def cmd_encode(cfg, out_dir: Path, dry_run: bool) -> int:
    epochs = load_dataset(cfg)
    labeled = [e for e in epochs if e.stage is not None]
    if dry_run:
        print(f"dry-run: would encode {len(labeled)} labeled epochs (arm={cfg['encoder.arm']})")
        return 0
    run_dir = make_run_dir(out_dir, "encode")
    write_resolved_config(run_dir, cfg, "encode")
    features_dir = run_dir / "features"
    features_dir.mkdir()
    features = _encode_from_config(cfg, epochs)
    counts: dict[str, int] = {}
    for fe in features:
        name = f"{fe.subject_id}_{fe.epoch_index:04d}.feat"
        save_feature_epoch(fe, features_dir / name)
        counts[fe.stage.display_name] = counts.get(fe.stage.display_name, 0) + 1
    summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"encoded {len(features)} epochs into {features_dir} ({summary})")
    return 0


def cmd_train(cfg, out_dir: Path, dry_run: bool) -> int:
    features = _load_or_encode_features(cfg)
    if dry_run:
        print(f"dry-run: would train on {len(features)} feature epochs")
        return 0
    run_dir = make_run_dir(out_dir, "train")
    write_resolved_config(run_dir, cfg, "train")
    seq_len = features[0].features.shape[0]
    tcfg = train_config(cfg)
    model = init_model(model_config(cfg, seq_len), seed=tcfg.seed + 1000)
    result = train(model, features, tcfg)
    save_model(result.state, run_dir / "model.bin")
    write_loss_trace(result.trace, run_dir / "loss_trace.csv")
    final = result.trace[-1]
    print(
        f"trained {len(result.trace)} epochs; final loss {final[1]:.4f}, "
        f"train accuracy {final[2]:.3f}; artifacts in {run_dir}"
    )
    return 0


def _cv_result(cfg) -> CVResult:
    features = _load_or_encode_features(cfg)
    subjects = sorted({fe.subject_id for fe in features})
    plan = make_folds(subjects, cfg["cv.folds"], cfg["cv.seed"])
    seq_len = features[0].features.shape[0]
    return run_cv_features(features, model_config(cfg, seq_len), train_config(cfg), plan)


def _write_cv_artifacts(run_dir: Path, result: CVResult) -> None:
    (run_dir / "metrics.json").write_text(metrics_report_json(result), encoding="utf-8")
    text = [render_metrics_text(result.pooled_metrics, "Pooled cross-validation metrics")]
    text.append("")
    text.append(render_confusion_text(result.pooled_confusion, "Pooled confusion matrix"))
    for fr in result.fold_results:
        text.append("")
        text.append(render_metrics_text(fr.metrics, f"Fold {fr.fold} metrics"))
    (run_dir / "metrics.txt").write_text("\n".join(text) + "\n", encoding="utf-8")

    hyp_dir = run_dir / "hypnograms"
    hyp_dir.mkdir(exist_ok=True)
    by_subject: dict[str, list] = {}
    for fr in result.fold_results:
        for subject, epoch_index, t, p in fr.rows:
            by_subject.setdefault(subject, []).append((epoch_index, t, p))
    for subject, rows in sorted(by_subject.items()):
        rows.sort()
        true = [t for _, t, _ in rows]
        pred = [p for _, _, p in rows]
        export_hypnogram(true, pred, hyp_dir / f"{subject}.svg")


def cmd_cv(cfg, out_dir: Path, dry_run: bool) -> int:
    if dry_run:
        features = _load_or_encode_features(cfg)
        subjects = sorted({fe.subject_id for fe in features})
        make_folds(subjects, cfg["cv.folds"], cfg["cv.seed"])
        print(
            f"dry-run: would cross-validate {len(features)} epochs from "
            f"{len(subjects)} subjects in {cfg['cv.folds']} folds"
        )
        return 0
    run_dir = make_run_dir(out_dir, "cv")
    write_resolved_config(run_dir, cfg, "cv")
    result = _cv_result(cfg)
    _write_cv_artifacts(run_dir, result)
    print(render_metrics_text(result.pooled_metrics, "Pooled cross-validation metrics"))
    print(f"artifacts in {run_dir}")
    return 0


def cmd_ablate(cfg, out_dir: Path, dry_run: bool) -> int:
    epochs = load_dataset(cfg)
    labeled = [e for e in epochs if e.stage is not None]
    subjects = sorted({e.subject_id for e in labeled})
    plan = make_folds(subjects, cfg["cv.folds"], cfg["cv.seed"])
    if dry_run:
        print(
            f"dry-run: would run both encoder arms over {len(labeled)} epochs "
            f"({len(subjects)} subjects, {plan.k} folds)"
        )
        return 0
    run_dir = make_run_dir(out_dir, "ablate")
    write_resolved_config(run_dir, cfg, "ablate")
    seq_len = 30 * cfg["data.sample_rate_hz"] // cfg["encoder.accum_width"]
    report = compare_ablation(
        labeled,
        plan,
        encoder_params(cfg),
        model_config(cfg, seq_len=seq_len),
        train_config(cfg),
        threshold_cutoff=cfg["encoder.threshold_cutoff"],
        accum_width=cfg["encoder.accum_width"],
        filter_config=filter_config(cfg),
    )
    (run_dir / "ablation.json").write_text(
        json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    text = render_ablation_text(report)
    (run_dir / "ablation.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    print(f"artifacts in {run_dir}")
    return 0


def cmd_report(cfg, out_dir: Path, dry_run: bool, run: str | None) -> int:
    if run is not None:
        run_dir = Path(run)
    else:
        candidates = sorted(out_dir.glob("cv-*")) + sorted(out_dir.glob("ablate-*"))
        if not candidates:
            raise DataError(f"no finished cv/ablate runs under {out_dir}")
        run_dir = candidates[-1]
    metrics_file = run_dir / "metrics.json"
    ablation_file = run_dir / "ablation.json"
    if metrics_file.exists():
        payload = json.loads(metrics_file.read_text(encoding="utf-8"))
        m = payload["pooled_metrics"]
        lines = [f"Run: {run_dir}", f"{'Stage':<6} {'Pre':>6} {'Re':>6} {'F1':>6}"]
        for stage in ("Wake", "N1", "N2", "N3", "REM"):
            s = m["per_stage"][stage]
            lines.append(
                f"{stage:<6} {s['precision']:>6.2f} {s['recall']:>6.2f} {s['f1']:>6.2f}"
            )
        lines.append(f"Overall accuracy: {m['accuracy']:.2f}")
        lines.append(f"Macro-F1: {m['macro_f1']:.2f}")
        output = "\n".join(lines)
    elif ablation_file.exists():
        output = (run_dir / "ablation.txt").read_text(encoding="utf-8").rstrip()
    else:
        raise DataError(f"{run_dir}: no metrics.json or ablation.json found")
    print(output)
    if not dry_run:
        (run_dir / "report.txt").write_text(output + "\n", encoding="utf-8")
    return 0


# -- argument parsing --------------------------------------------------------

_FLAG_KEYS = {
    "channel": "data.channel",
    "sigma": "encoder.sigma",
    "window_size": "encoder.window_size",
    "accum_width": "encoder.accum_width",
    "ablation_threshold": "encoder.threshold_cutoff",
    "folds": "cv.folds",
}


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="flat JSON config file")
    p.add_argument("--out", metavar="DIR", default="runs", help="output directory")
    p.add_argument("--seed", type=int, help="seed for synth, training, and folds")
    p.add_argument("--channel", help="EEG channel name")
    p.add_argument("--sigma", type=float, help="half-Gaussian scale")
    p.add_argument("--window-size", type=int, dest="window_size",
                   help="amplitude standardization window (samples)")
    p.add_argument("--accum-width", type=int, dest="accum_width",
                   help="accumulation window (samples)")
    p.add_argument("--ablation-threshold", type=float, dest="ablation_threshold",
                   help="fixed-cutoff arm threshold; on 'encode' also selects that arm")
    p.add_argument("--folds", type=int, help="number of cross-validation folds")
    p.add_argument("--dry-run", action="store_true", help="validate without writing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikestage",
        description="Spike-train EEG encoding and attention-based sleep stage scoring",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic dataset (records, annotations, manifest)"),
        ("encode", "encode records into feature files"),
        ("train", "train a model on all labeled epochs"),
        ("cv", "record-wise cross-validation with reports and hypnograms"),
        ("ablate", "paired adaptive vs fixed-threshold comparison"),
        ("report", "render the metrics of a finished run"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_shared_flags(p)
        if name == "report":
            p.add_argument("--run", metavar="DIR", help="run directory (default: latest)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides: dict[str, object] = {}
        for flag, key in _FLAG_KEYS.items():
            value = getattr(args, flag, None)
            if value is not None:
                overrides[key] = value
        if args.seed is not None:
            overrides["synth.seed"] = args.seed
            overrides["train.seed"] = args.seed
            overrides["cv.seed"] = args.seed
        if args.command == "encode" and args.ablation_threshold is not None:
            overrides["encoder.arm"] = "threshold"
        cfg = resolve_config(args.config, overrides)
        out_dir = Path(args.out)
        if not args.dry_run:
            out_dir.mkdir(parents=True, exist_ok=True)

        if args.command == "synth":
            return cmd_synth(cfg, out_dir, args.dry_run)
        if args.command == "encode":
            return cmd_encode(cfg, out_dir, args.dry_run)
        if args.command == "train":
            return cmd_train(cfg, out_dir, args.dry_run)
        if args.command == "cv":
            return cmd_cv(cfg, out_dir, args.dry_run)
        if args.command == "ablate":
            return cmd_ablate(cfg, out_dir, args.dry_run)
        if args.command == "report":
            return cmd_report(cfg, out_dir, args.dry_run, args.run)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
