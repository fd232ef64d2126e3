"""Command-line entry point for the forecasting workflow.

Subcommands cover the full loop: generate synthetic data, train one
model or the diversity ensemble, fine-tune from a checkpoint, emit
forecast CSVs, score them, and run component ablations. Every command
reads one config file plus `--set key=value` overrides, persists the
effective config into the output directory, and stamps artifacts with
the config hash.

Exit codes: 0 success, 2 configuration, 3 data or schema, 4 training,
5 checkpoint.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .ablation import ablation_run
from .checkpoint import load_model, save_model
from .config import (
    RunConfig,
    config_hash,
    load_run_config,
    persist_config,
    resolve_jobs,
)
from .ensemble import build_ensemble, forecast_dataset, manifest
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    ImbforecastError,
    TrainingError,
)
from .evaluate import long_frame, report_frames, stratified_report
from .ingest import ingest_csv, write_csv
from .linear import QuantileLinear
from .pipeline import SplitBounds, build_datasets
from .schema import FeatureSchema
from .synthetic import generate
from .train import finetune, history_frame, train
from .vsn import ConstantVsn, PerStepVsn

log = logging.getLogger("imbforecast")

_MODEL_CLASSES = {"cvsn": ConstantVsn, "per_step": PerStepVsn, "linear": QuantileLinear}


def _write_frame(frame: pd.DataFrame, path, hash_str: str, float_format=None) -> None:
    """CSV with a leading config-hash comment (readable via comment='#')."""
    with open(path, "w") as fh:
        fh.write(f"# config-hash: {hash_str}\n")
        frame.to_csv(fh, index=False, float_format=float_format)


def _load_schema(config: RunConfig) -> FeatureSchema:
    try:
        text = Path(config.schema_file).read_text()
    except OSError as exc:
        raise DataError(f"cannot read schema file: {exc}") from exc
    return FeatureSchema.from_text(text)


def _bounds(config: RunConfig) -> SplitBounds:
    if not config.train_end or not config.val_end:
        raise ConfigError("train_end and val_end must be set")
    try:
        return SplitBounds.from_timestamps(
            pd.Timestamp(config.train_end), pd.Timestamp(config.val_end)
        )
    except ValueError as exc:
        raise ConfigError(f"unparseable split boundary: {exc}") from exc


def _datasets(config: RunConfig, scaler=None):
    schema = _load_schema(config)
    table = ingest_csv(config.data_csv, schema)
    return build_datasets(table, _bounds(config), scaler=scaler), schema, table


def _training_summary(result, config: RunConfig) -> dict:
    return {
        "best_epoch": result.best_epoch,
        "best_val_crps": result.best_val_crps,
        "best_val_rmse": result.best_val_rmse,
        "stopped_early": result.stopped_early,
        "epochs_run": len(result.history),
        "c": config.train.c,
        "seed": config.train.seed,
        "config_hash": config_hash(config),
    }


def _save_history(result, path, hash_str: str) -> None:
    _write_frame(history_frame(result.history), path, hash_str)


def cmd_generate(config: RunConfig) -> None:
    table, sidecar = generate(config.generator)
    out = Path(config.output_dir)
    write_csv(table, config.data_csv)
    Path(config.schema_file).write_text(table.schema.to_text())
    sidecar = dict(sidecar, config_hash=config_hash(config))
    (out / "sidecar.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    log.info("wrote %d rows to %s", len(table), config.data_csv)


def cmd_train(config: RunConfig) -> None:
    datasets, schema, _ = _datasets(config)
    model_cls = _MODEL_CLASSES[config.model_kind]
    model = model_cls(config.model, schema, np.random.default_rng(config.seed))
    result = train(model, datasets, config.train)
    out = Path(config.output_dir)
    save_model(
        out / "model.ckpt", model, datasets.scaler, _training_summary(result, config)
    )
    _save_history(result, out / "history.csv", config_hash(config))
    log.info(
        "trained %s: best epoch %d, val CRPS %.3f MW",
        config.model_kind,
        result.best_epoch,
        result.best_val_crps,
    )


def cmd_train_ensemble(config: RunConfig) -> None:
    datasets, schema, _ = _datasets(config)
    jobs = resolve_jobs(config)
    members = build_ensemble(
        config.ensemble,
        datasets,
        config.model,
        config.train,
        jobs=jobs,
        model_cls=_MODEL_CLASSES[config.model_kind],
    )
    out = Path(config.output_dir)
    hash_str = config_hash(config)
    doc = manifest(config.ensemble, members, schema.fingerprint())
    doc["config_hash"] = hash_str
    for member, entry in zip(members, doc["members"]):
        member_dir = out / f"member_{member.index:02d}"
        member_dir.mkdir(parents=True, exist_ok=True)
        summary = _training_summary(member.result, config)
        summary.update(c=member.c, seed=member.seed, target_mode=member.target_mode)
        save_model(member_dir / "model.ckpt", member.model, datasets.scaler, summary)
        _save_history(member.result, member_dir / "history.csv", hash_str)
        entry["checkpoint"] = f"member_{member.index:02d}/model.ckpt"
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    log.info("trained %d ensemble members with %d jobs", len(members), jobs)


def cmd_finetune(config: RunConfig) -> None:
    if not config.checkpoint:
        raise ConfigError("finetune requires the checkpoint config key")
    model, scaler, ckpt = load_model(config.checkpoint)
    schema = _load_schema(config)
    ckpt.require_fingerprint(schema)
    table = ingest_csv(config.data_csv, schema)
    datasets = build_datasets(table, _bounds(config), scaler=scaler)
    result = finetune(model, datasets, config.finetune, config.train)
    out = Path(config.output_dir)
    summary = _training_summary(result, config)
    summary["finetuned_from"] = str(config.checkpoint)
    summary["new_features"] = list(config.finetune.new_features)
    save_model(out / "finetuned.ckpt", model, scaler, summary)
    _save_history(result, out / "history.csv", config_hash(config))
    log.info("fine-tuned %s on %s", config.checkpoint, config.finetune.new_features)


def _load_forecasters(config: RunConfig, schema: FeatureSchema):
    """Models plus shared scaler from either a manifest or one checkpoint."""
    if bool(config.checkpoint) == bool(config.manifest):
        raise ConfigError("set exactly one of checkpoint or manifest")
    if config.checkpoint:
        model, scaler, ckpt = load_model(config.checkpoint)
        ckpt.require_fingerprint(schema)
        return [model], scaler
    try:
        doc = json.loads(Path(config.manifest).read_text())
    except OSError as exc:
        raise CheckpointError(f"cannot read manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed manifest: {exc}") from exc
    if doc.get("schema_fingerprint") != schema.fingerprint():
        raise CheckpointError(
            "manifest schema fingerprint does not match the input data schema"
        )
    base = Path(config.manifest).parent
    models = []
    scaler = None
    for entry in sorted(doc["members"], key=lambda e: e["index"]):
        model, member_scaler, ckpt = load_model(base / entry["checkpoint"])
        ckpt.require_fingerprint(schema)
        models.append(model)
        scaler = scaler or member_scaler
    if not models:
        raise CheckpointError("manifest lists no members")
    return models, scaler


def _forecast_test_split(config: RunConfig):
    schema = _load_schema(config)
    models, scaler = _load_forecasters(config, schema)
    table = ingest_csv(config.data_csv, schema)
    datasets = build_datasets(table, _bounds(config), scaler=scaler)
    values, crossings = forecast_dataset(models, datasets.test)
    return values, datasets.test, models[0].config.quantiles, crossings


def cmd_predict(config: RunConfig) -> None:
    values, test, levels, _ = _forecast_test_split(config)
    n, n_out, n_q = values.shape
    stamps = pd.to_datetime(np.asarray(test.issue_minutes), unit="m").strftime(
        "%Y-%m-%dT%H:%M:%S"
    )
    frame = pd.DataFrame(
        {
            "issue_timestamp": np.repeat(stamps, n_out),
            "horizon_qh": np.tile(np.arange(1, n_out + 1), n),
        }
    )
    flat = values.reshape(n * n_out, n_q)
    for j, level in enumerate(levels):
        frame[f"q{level:g}"] = flat[:, j]
    out = Path(config.output_dir)
    _write_frame(frame, out / "forecasts.csv", config_hash(config), float_format="%.17g")
    log.info("wrote %d forecast rows", len(frame))


def cmd_evaluate(config: RunConfig) -> None:
    values, test, levels, _ = _forecast_test_split(config)
    report = stratified_report(
        values,
        test.labels_raw,
        test.lead_minutes,
        levels=levels,
        threshold=config.eval_threshold,
    )
    out = Path(config.output_dir)
    hash_str = config_hash(config)
    for name, frame in report_frames(report).items():
        _write_frame(frame, out / f"report_{name}.csv", hash_str)
    _write_frame(long_frame(report), out / "report_long.csv", hash_str)
    log.info(
        "evaluated %d rows: RMSE %.3f MW, CRPS %.3f MW",
        report.n_rows,
        report.overall_rmse,
        report.overall_crps,
    )


def cmd_ablate(config: RunConfig) -> None:
    schema = _load_schema(config)
    table = ingest_csv(config.data_csv, schema)
    result = ablation_run(
        config.toggles,
        table,
        _bounds(config),
        config.model,
        config.train,
        spec=config.ensemble,
        threshold=config.eval_threshold,
        jobs=resolve_jobs(config),
    )
    rows = []
    for metric, delta in result.delta_pct.items():
        rows.append(
            {
                "metric": metric,
                "baseline": getattr(result.baseline, metric, None),
                "variant": getattr(result.variant, metric, None),
                "delta_pct": delta,
            }
        )
    frame = pd.DataFrame(rows, columns=["metric", "baseline", "variant", "delta_pct"])
    out = Path(config.output_dir)
    _write_frame(frame, out / "ablation.csv", config_hash(config))
    log.info("ablation %s done", ",".join(result.toggles) or "<none>")


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "train-ensemble": cmd_train_ensemble,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imbforecast",
        description="Probabilistic system-imbalance forecasting workflow",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in _COMMANDS.items():
        cmd = sub.add_parser(name, help=func.__doc__)
        cmd.add_argument("-c", "--config", default=None, help="YAML config file")
        cmd.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (dot path, repeatable)",
        )
        cmd.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config, args.overrides)
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
        persist_config(config, config.output_dir)
        args.func(config)
        return 0
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return 2
    except DataError as exc:
        log.error("data: %s", exc)
        return 3
    except TrainingError as exc:
        log.error("training: %s", exc)
        return 4
    except CheckpointError as exc:
        log.error("checkpoint: %s", exc)
        return 5
    except ImbforecastError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
