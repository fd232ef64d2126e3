"""Mini-batch training with early stopping on validation CRPS.

Validation metrics are computed in MW after de-standardization (and
cumulative reconstruction for change-mode models) so that models
predicting different target parameterizations stop on comparable
numbers. The parameters of the best validation epoch are restored at the
end.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .crps import crps_batch
from .errors import TrainingError
from .loss import quantile_loss_grad
from .nn import Adam
from .pipeline import Datasets, WindowDataset
from .vsn import predict_mw


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.001
    patience: int = 2
    c: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.learning_rate < 0.0:
            raise ValueError("learning rate must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.c < 0.0:
            raise ValueError("loss-weight constant c must be >= 0")


@dataclass(frozen=True)
class FinetuneConfig:
    new_features: tuple = ()
    recent_samples: int = 0  # 0 means the full train set
    epochs: int = 1
    reinitialize: bool = True
    freeze: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.recent_samples < 0:
            raise ValueError("recent sample count must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_rmse: float
    val_crps: float
    seconds: float


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_crps: float = float("inf")
    best_val_rmse: float = float("inf")
    stopped_early: bool = False


def history_frame(history: list) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "epoch": h.epoch,
                "train_loss": h.train_loss,
                "val_rmse": h.val_rmse,
                "val_crps": h.val_crps,
                "seconds": h.seconds,
            }
            for h in history
        ]
    )


def validation_scores(model, dataset: WindowDataset, batch_size: int = 1024):
    """(CRPS, RMSE) in MW over a dataset; RMSE uses the median quantile."""
    levels = model.config.quantiles
    med = levels.index(0.5)
    n = len(dataset)
    crps_sum = 0.0
    sq_sum = 0.0
    count = 0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        x = dataset.inputs(idx)
        values, _, _ = predict_mw(model, x, dataset.prev_qh_si[idx], dataset.scaler)
        truth = dataset.labels_raw[idx]
        scores, _ = crps_batch(
            values.reshape(-1, len(levels)), truth.reshape(-1), levels=levels,
            engine="exact",
        )
        crps_sum += float(scores.sum())
        sq_sum += float(((values[:, :, med] - truth) ** 2).sum())
        count += truth.size
    return crps_sum / count, np.sqrt(sq_sum / count)


def _batches(pool: np.ndarray, batch_size: int):
    for start in range(0, pool.size, batch_size):
        yield pool[start : start + batch_size]


def train(
    model,
    datasets: Datasets,
    config: TrainConfig,
    train_indices: np.ndarray | None = None,
) -> TrainResult:
    """Fit the model in place and return it with its epoch history.

    ``train_indices`` restricts (or resamples, for bootstrap draws) the
    training pool; validation always uses the full validation split.
    """
    config.validate()
    train_set = datasets.train
    if train_indices is None:
        pool = np.arange(len(train_set))
    else:
        pool = np.asarray(train_indices, dtype=np.int64)
    if pool.size == 0:
        raise TrainingError("empty training set")
    mode = model.config.target_mode
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(model.params(), config.learning_rate)
    mask = model.trainable_mask()

    if hasattr(model, "fit_normalization"):
        model.fit_normalization(
            train_set.inputs(chunk) for chunk in _batches(pool, 4096)
        )

    result = TrainResult(model=model)
    best_params = [p.copy() for p in model.params()]
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(pool.size)
        loss_sum = 0.0
        seen = 0
        for idx in _batches(pool[order], config.batch_size):
            x = train_set.inputs(idx)
            labels = train_set.labels_std(idx, mode)
            out, _ = model.forward(x, training=True)
            loss, dpred = quantile_loss_grad(out, labels, c=config.c)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            model.zero_grad()
            model.backward(dpred)
            grads = model.grads()
            for i, keep in enumerate(mask):
                if not keep:
                    grads[i] = np.zeros_like(grads[i])
            optimizer.step(grads)
            loss_sum += loss * idx.size
            seen += idx.size
        val_crps, val_rmse = validation_scores(model, datasets.validation)
        if not (np.isfinite(val_crps) and np.isfinite(val_rmse)):
            raise TrainingError(f"non-finite validation metrics at epoch {epoch}")
        result.history.append(
            EpochStats(epoch, loss_sum / seen, val_rmse, val_crps,
                       time.perf_counter() - started)
        )
        improved = val_crps < result.best_val_crps or (
            val_crps == result.best_val_crps and val_rmse < result.best_val_rmse
        )
        if improved:
            result.best_epoch = epoch
            result.best_val_crps = val_crps
            result.best_val_rmse = val_rmse
            for snap, p in zip(best_params, model.params()):
                snap[...] = p
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience and epoch < config.epochs:
                result.stopped_early = True
                break
    for p, snap in zip(model.params(), best_params):
        p[...] = snap
    return result


def finetune(
    model,
    datasets: Datasets,
    config: FinetuneConfig,
    train_config: TrainConfig,
) -> TrainResult:
    """Adapt a model trained with some feature columns held at zero.

    The branches of the named features are freshly reinitialized, every
    other per-feature branch and the output head are frozen (the
    selection block and embeddings keep training), and the model sees
    ``recent_samples`` of the train tail for a small number of epochs
    with all features live. The optimizer starts from clean state.
    """
    config.validate()
    for name in config.new_features:
        if name not in model.schema:
            raise ValueError(f"unknown feature {name!r} in finetune config")
    n_train = len(datasets.train)
    if config.recent_samples == 0:
        recent = np.arange(n_train)
    else:
        if config.recent_samples > n_train:
            raise ValueError("recent window is larger than the train set")
        recent = np.arange(n_train - config.recent_samples, n_train)
    if recent.size == 0:
        raise TrainingError("empty fine-tuning window")

    units = []
    for name in config.new_features:
        units.extend(model.feature_unit_indices(name))
    units = np.asarray(sorted(units), dtype=np.int64)
    if config.reinitialize and units.size:
        model.feature_grns.reinit_units(
            units, np.random.default_rng(train_config.seed)
        )
    if config.freeze:
        model.head1.trainable = False
        model.head2.trainable = False
        model.feature_grns.frozen[:] = True
        model.feature_grns.frozen[units] = False
    model.set_zeroed_features(())
    tuned = replace(train_config, epochs=config.epochs, patience=config.epochs)
    return train(model, datasets, tuned, train_indices=recent)
