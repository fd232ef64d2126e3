"""Run configuration: defaults, YAML files, dot-path overrides, hashing.

A run is fully described by one RunConfig. Values come from, in order:
built-in defaults, a YAML config file, `--set section.key=value`
overrides, then the two permitted environment overrides (output
directory and parallelism). The effective config is persisted next to
every run's outputs and hashed so artifacts can name the exact
configuration that produced them.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .ensemble import EnsembleSpec
from .errors import ConfigError
from .synthetic import GeneratorConfig
from .train import FinetuneConfig, TrainConfig
from .vsn import ModelConfig

ENV_OUTPUT_DIR = "IMBFORECAST_OUTPUT_DIR"
ENV_JOBS = "IMBFORECAST_JOBS"

MODEL_KINDS = ("cvsn", "per_step", "linear")

_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "ensemble": EnsembleSpec,
    "finetune": FinetuneConfig,
    "generator": GeneratorConfig,
}

_TUPLE_FIELDS = {
    "quantiles",
    "zeroed_features",
    "c_values",
    "new_features",
    "toggles",
}


@dataclass(frozen=True)
class RunConfig:
    data_csv: str = "data.csv"
    schema_file: str = "schema.yaml"
    output_dir: str = "run"
    train_end: str = ""
    val_end: str = ""
    model_kind: str = "cvsn"
    checkpoint: str = ""  # input checkpoint (finetune / predict / evaluate)
    manifest: str = ""  # ensemble manifest (predict / evaluate)
    eval_threshold: float = 500.0
    jobs: int = 0  # 0 means one worker per machine core
    seed: int = 0
    toggles: tuple = ()  # ablation component toggles
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    ensemble: EnsembleSpec = EnsembleSpec()
    finetune: FinetuneConfig = FinetuneConfig()
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def validate(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(
                f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}"
            )
        if self.jobs < 0:
            raise ConfigError("jobs must be >= 0")
        if self.eval_threshold < 0:
            raise ConfigError("eval_threshold must be >= 0")
        try:
            self.model.validate()
            self.train.validate()
            self.ensemble.validate()
            self.finetune.validate()
            self.generator.validate()
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(str(exc)) from exc


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, (list, dict)):
        raise ConfigError(f"unsupported config value type {type(value).__name__}")
    return value


def config_to_dict(config: RunConfig) -> dict:
    out = {}
    for f in dataclasses.fields(RunConfig):
        value = getattr(config, f.name)
        if f.name in _SECTIONS:
            out[f.name] = {
                g.name: _plain(getattr(value, g.name))
                for g in dataclasses.fields(type(value))
            }
        else:
            out[f.name] = _plain(value)
    return out


def _coerce(section: str, name: str, value):
    if isinstance(value, (datetime.date, datetime.datetime)):
        # YAML turns bare timestamps into date objects; keep ISO strings
        value = value.isoformat()
    if name in _TUPLE_FIELDS:
        if value is None:
            return None if name == "c_values" else ()
        if isinstance(value, (list, tuple)):
            return tuple(value)
        return (value,)
    if isinstance(value, (list, dict)):
        raise ConfigError(f"config key {section}{name} does not take a collection")
    return value


def _build_section(section: str, cls, given: dict):
    if not isinstance(given, dict):
        raise ConfigError(f"config section {section!r} must be a mapping")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    updates = {}
    for key, value in given.items():
        if key not in names:
            raise ConfigError(f"unknown config key {section}.{key}")
        updates[key] = _coerce(f"{section}.", key, value)
    return replace(defaults, **updates) if updates else defaults


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    top = {f.name: f for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in top:
            raise ConfigError(f"unknown config key {key}")
        if key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value or {})
        else:
            kwargs[key] = _coerce("", key, value)
    return RunConfig(**kwargs)


def apply_overrides(data: dict, overrides) -> dict:
    """Fold `section.key=value` strings into a nested config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, _, raw = item.partition("=")
        path = path.strip()
        if not path:
            raise ConfigError(f"override {item!r} has an empty key")
        try:
            value = yaml.safe_load(raw) if raw.strip() else ""
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
        parts = path.split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {path!r} descends into a scalar")
        node[parts[-1]] = value
    return data


def load_run_config(path=None, overrides=(), env=None) -> RunConfig:
    env = os.environ if env is None else env
    data: dict = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        data = loaded
    apply_overrides(data, overrides)
    config = config_from_dict(data)

    if env.get(ENV_OUTPUT_DIR):
        config = replace(config, output_dir=env[ENV_OUTPUT_DIR])
    if env.get(ENV_JOBS):
        try:
            config = replace(config, jobs=int(env[ENV_JOBS]))
        except ValueError as exc:
            raise ConfigError(f"{ENV_JOBS} must be an integer") from exc

    config.validate()
    return config


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def persist_config(config: RunConfig, directory) -> Path:
    """Write the effective config (with its hash) next to run outputs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / "config.yaml"
    body = yaml.safe_dump(config_to_dict(config), sort_keys=True)
    target.write_text(f"# config-hash: {config_hash(config)}\n{body}")
    return target


def resolve_jobs(config: RunConfig) -> int:
    if config.jobs >= 1:
        return config.jobs
    return os.cpu_count() or 1
