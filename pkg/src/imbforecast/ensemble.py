"""Diversity ensemble over the quantile network.

Members differ along three axes: initialization seed, loss-weight
constant (graded from 0 to 0.1 across the ensemble), and target
parameterization (odd 1-based indices forecast the imbalance level, even
indices its change). Optionally each member trains on its own bootstrap
resample. Aggregation averages per quantile level in MW after the
change-mode members are reconstructed, so all members contribute on the
same scale.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, TrainingError
from .pipeline import Datasets, WindowDataset
from .train import TrainConfig, TrainResult, train
from .vsn import ConstantVsn, ModelConfig, count_crossings, predict_mw


@dataclass(frozen=True)
class EnsembleSpec:
    size: int = 21
    base_seed: int = 0
    bootstrap: bool = True
    c_values: tuple | None = None  # default: evenly spaced over [0, 0.1]
    alternate: bool = True  # False trains every member on the level target

    def validate(self) -> None:
        if self.size < 1:
            raise ConfigError("ensemble size must be >= 1")
        if self.c_values is not None:
            cs = np.asarray(self.c_values, dtype=np.float64)
            if cs.size != self.size:
                raise ConfigError(
                    f"c schedule length {cs.size} does not match size {self.size}"
                )
            if np.any(cs < 0.0):
                raise ConfigError("loss-weight constants must be >= 0")
            if np.any(np.diff(cs) < 0.0):
                raise ConfigError("c schedule must be non-decreasing")

    def c_schedule(self) -> np.ndarray:
        self.validate()
        if self.c_values is not None:
            return np.asarray(self.c_values, dtype=np.float64)
        if self.size == 1:
            return np.zeros(1)
        return np.linspace(0.0, 0.1, self.size)

    def target_mode(self, index: int) -> str:
        """1-based: odd members forecast the level, even ones the change."""
        if not self.alternate:
            return "si"
        return "si" if index % 2 == 1 else "dsi"

    def member_seed(self, index: int) -> int:
        return self.base_seed + index


@dataclass
class EnsembleMember:
    index: int  # 1-based
    model: ConstantVsn
    c: float
    seed: int
    target_mode: str
    bootstrap_seed: int | None
    result: TrainResult


def bootstrap_indices(n_samples: int, seed: int) -> np.ndarray:
    """Classic bootstrap: n draws with replacement from [0, n)."""
    return np.random.default_rng(seed).integers(0, n_samples, size=n_samples)


def train_member(
    spec: EnsembleSpec,
    index: int,
    datasets: Datasets,
    model_config: ModelConfig,
    train_config: TrainConfig,
    model_cls=ConstantVsn,
) -> EnsembleMember:
    """Train one member in isolation; depends only on its own seed."""
    spec.validate()
    if not 1 <= index <= spec.size:
        raise ConfigError(f"member index {index} outside 1..{spec.size}")
    c = float(spec.c_schedule()[index - 1])
    seed = spec.member_seed(index)
    mode = spec.target_mode(index)
    model = model_cls(
        replace(model_config, target_mode=mode),
        datasets.schema,
        np.random.default_rng(seed),
    )
    indices = None
    bootstrap_seed = None
    if spec.bootstrap:
        bootstrap_seed = seed
        indices = bootstrap_indices(len(datasets.train), bootstrap_seed)
    member_cfg = replace(train_config, c=c, seed=seed)
    try:
        result = train(model, datasets, member_cfg, train_indices=indices)
    except TrainingError as exc:
        raise TrainingError(f"submodel {index} failed: {exc}") from exc
    return EnsembleMember(index, model, c, seed, mode, bootstrap_seed, result)


def build_ensemble(
    spec: EnsembleSpec,
    datasets: Datasets,
    model_config: ModelConfig,
    train_config: TrainConfig,
    jobs: int = 1,
    model_cls=ConstantVsn,
) -> list:
    """Train all members; they share nothing but read-only datasets."""
    spec.validate()
    indices = range(1, spec.size + 1)
    if jobs <= 1:
        return [
            train_member(spec, i, datasets, model_config, train_config, model_cls)
            for i in indices
        ]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(
                train_member, spec, i, datasets, model_config, train_config, model_cls
            )
            for i in indices
        ]
        return [f.result() for f in futures]


def ensemble_predict(models, inputs, prev_qh_si, scaler):
    """Per-quantile mean of member forecasts in MW, plus crossing count."""
    models = list(models)
    if not models:
        raise ConfigError("no models to aggregate")
    total = None
    for model in models:
        values, _, _ = predict_mw(model, inputs, prev_qh_si, scaler)
        total = values if total is None else total + values
    mean = total / len(models)
    return mean, count_crossings(mean)


def forecast_dataset(models, dataset: WindowDataset, batch_size: int = 1024):
    """All forecasts for a dataset: values (N, n_out, n_q) and crossings."""
    n = len(dataset)
    chunks = []
    crossings = 0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        values, crossed = ensemble_predict(
            models, dataset.inputs(idx), dataset.prev_qh_si[idx], dataset.scaler
        )
        chunks.append(values)
        crossings += crossed
    return np.concatenate(chunks, axis=0), crossings


def manifest(spec: EnsembleSpec, members, schema_fingerprint: str) -> dict:
    """Serializable description tying members to their data schema."""
    return {
        "schema_fingerprint": schema_fingerprint,
        "size": spec.size,
        "base_seed": spec.base_seed,
        "bootstrap": spec.bootstrap,
        "alternate": spec.alternate,
        "members": [
            {
                "index": m.index,
                "c": m.c,
                "seed": m.seed,
                "target_mode": m.target_mode,
                "bootstrap_seed": m.bootstrap_seed,
            }
            for m in members
        ],
    }
