"""Sliding-window sample construction over the minute table.

A sample is issued at a minute t inside quarter-hour G and sees four
window kinds, all with the oldest step in row 0:

* minute-resolution past features: minutes t-14 .. t
* minute-resolution future features: minutes t .. t+14
* quarter-hour past features: the last 15 completed blocks G-15 .. G-1
  (the in-progress block's value is not known yet)
* quarter-hour future features: blocks G .. G+14, current block first

Labels are the target values of blocks G, G+1, G+2, so a forecast issued
at 00:03 is labeled with the 00:00-00:15, 00:15-00:30 and 00:30-00:45
imbalances. Samples whose label window crosses their split boundary are
dropped, never reassigned, so no label information leaks across splits.

Delta columns are computed on raw values at each feature's native
resolution before standardization. Standardization statistics come from
training-split rows only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError
from .ingest import MINUTES_PER_QH, FeatureTable, minute_of
from .schema import FeatureSchema


@dataclass(frozen=True)
class SplitBounds:
    """Chronological split boundaries in epoch minutes (end-exclusive)."""

    train_end: int
    val_end: int

    @classmethod
    def from_timestamps(cls, train_end, val_end) -> "SplitBounds":
        return cls(minute_of(train_end), minute_of(val_end))

    def validate(self, table: FeatureTable) -> None:
        if not table.start_minute < self.train_end <= self.val_end <= table.end_minute:
            raise DataError(
                f"split boundaries ({self.train_end}, {self.val_end}) do not nest "
                f"inside the table range [{table.start_minute}, {table.end_minute})"
            )


@dataclass(frozen=True)
class PipelineConfig:
    n_past: int = 15  # timesteps per window
    n_out: int = 3  # forecast horizons (quarter-hours)
    recentness_feature: str | None = "recentness"  # recomputed from the train span


@dataclass
class ScalerStats:
    """Train-split means and standard deviations, labels separate.

    Categorical columns pass through with mean 0 / std 1. The delta-label
    statistics belong to the change-in-imbalance target mode.
    """

    columns: list[str]
    mean: np.ndarray
    std: np.ndarray
    label_mean: float = 0.0
    label_std: float = 1.0
    dlabel_mean: float = 0.0
    dlabel_std: float = 1.0

    def standardize_labels(self, raw: np.ndarray, mode: str = "si") -> np.ndarray:
        m, s = self._label_stats(mode)
        return (raw - m) / s

    def destandardize_labels(self, std: np.ndarray, mode: str = "si") -> np.ndarray:
        m, s = self._label_stats(mode)
        return std * s + m

    def _label_stats(self, mode: str) -> tuple[float, float]:
        if mode == "si":
            return self.label_mean, self.label_std
        if mode == "dsi":
            return self.dlabel_mean, self.dlabel_std
        raise ValueError(f"unknown target mode {mode!r}")


@dataclass
class WindowedSample:
    """One supervised instance (standardized inputs, MW side data)."""

    inputs: np.ndarray  # (n_past, N_f)
    label: np.ndarray  # (n_out,) standardized
    issue_timestamp: pd.Timestamp
    prev_qh_imbalance: float  # MW, last completed block
    raw_label: np.ndarray  # (n_out,) MW


def _column_specs(schema: FeatureSchema):
    """(name, parent spec) for every input column in layout order."""
    out = []
    for f in schema.features:
        out.append((f.name, f))
        if f.has_delta:
            out.append((f.name + ".delta", f))
    return out


class _WindowStore:
    """Shared standardized columns plus gather machinery for all splits."""

    def __init__(self, table: FeatureTable, schema: FeatureSchema, scaler: ScalerStats,
                 std_by_col: np.ndarray, target_raw: np.ndarray, config: PipelineConfig):
        self.table = table
        self.schema = schema
        self.scaler = scaler
        self.std_by_col = std_by_col  # (N_f, R)
        self.target_raw = target_raw  # exact MW values, no scaling round-trip
        self.config = config
        self.start = table.start_minute
        combos: dict[tuple[str, str], list[int]] = {}
        for idx, (_, spec) in enumerate(_column_specs(schema)):
            combos.setdefault((spec.resolution, spec.horizon), []).append(idx)
        self.combos = {key: np.asarray(cols) for key, cols in combos.items()}

    def gather_inputs(self, rows: np.ndarray) -> np.ndarray:
        n_past = self.config.n_past
        k = np.arange(n_past)
        blocks = (self.start + rows) // MINUTES_PER_QH
        row_sets = {
            ("min", "past"): rows[:, None] - (n_past - 1) + k,
            ("min", "future"): rows[:, None] + k,
            ("qh", "past"): (blocks[:, None] - n_past + k) * MINUTES_PER_QH
            + (MINUTES_PER_QH - 1)
            - self.start,
            ("qh", "future"): (blocks[:, None] + k) * MINUTES_PER_QH
            + (MINUTES_PER_QH - 1)
            - self.start,
        }
        out = np.empty((len(rows), n_past, self.std_by_col.shape[0]))
        for key, cols in self.combos.items():
            gathered = self.std_by_col[cols][:, row_sets[key]]
            out[:, :, cols] = np.moveaxis(gathered, 0, 2)
        return out

    def label_rows(self, rows: np.ndarray) -> np.ndarray:
        """(B, n_out + 1) representative rows of blocks G-1 .. G+n_out-1."""
        blocks = (self.start + rows) // MINUTES_PER_QH
        i = np.arange(-1, self.config.n_out)
        return (blocks[:, None] + i) * MINUTES_PER_QH + (MINUTES_PER_QH - 1) - self.start


class WindowDataset:
    """Samples of one chronological split, gathered on demand."""

    def __init__(self, store: _WindowStore, issue_rows: np.ndarray):
        self._store = store
        self.issue_rows = issue_rows
        label_rows = store.label_rows(issue_rows)
        series = store.target_raw[label_rows]  # (S, n_out + 1)
        self.prev_qh_si = series[:, 0]
        self.labels_raw = series[:, 1:]
        self.dlabels_raw = np.diff(series, axis=1)
        minutes = store.start + issue_rows
        offset = minutes % MINUTES_PER_QH
        h = np.arange(store.config.n_out)
        self.lead_minutes = (MINUTES_PER_QH - offset)[:, None] + MINUTES_PER_QH * h
        self.issue_minutes = minutes

    def __len__(self) -> int:
        return len(self.issue_rows)

    @property
    def n_features(self) -> int:
        return self._store.std_by_col.shape[0]

    @property
    def schema(self) -> FeatureSchema:
        return self._store.schema

    @property
    def scaler(self) -> ScalerStats:
        return self._store.scaler

    def inputs(self, idx: np.ndarray) -> np.ndarray:
        return self._store.gather_inputs(self.issue_rows[np.asarray(idx)])

    def labels_std(self, idx: np.ndarray, mode: str = "si") -> np.ndarray:
        idx = np.asarray(idx)
        if mode == "si":
            return self._store.scaler.standardize_labels(self.labels_raw[idx], "si")
        if mode == "dsi":
            return self._store.scaler.standardize_labels(self.dlabels_raw[idx], "dsi")
        raise ValueError(f"unknown target mode {mode!r}")

    def sample(self, i: int, mode: str = "si") -> WindowedSample:
        idx = np.asarray([i])
        return WindowedSample(
            inputs=self.inputs(idx)[0],
            label=self.labels_std(idx, mode)[0],
            issue_timestamp=pd.Timestamp(np.int64(self.issue_minutes[i]), unit="m"),
            prev_qh_imbalance=float(self.prev_qh_si[i]),
            raw_label=self.labels_raw[i].copy(),
        )


@dataclass
class Datasets:
    train: WindowDataset
    validation: WindowDataset
    test: WindowDataset
    scaler: ScalerStats
    schema: FeatureSchema
    config: PipelineConfig
    bounds: SplitBounds
    skip_counts: dict = field(default_factory=dict)


def _delta_columns(table: FeatureTable, schema: FeatureSchema) -> dict[str, np.ndarray]:
    """Raw-value deltas at native resolution; first step's delta is 0.

    Quarter-hour columns repeat their value across the block, so the
    block-to-block delta at every minute row is the value 15 rows back.
    """
    out = {}
    for f in schema.features:
        if not f.has_delta:
            continue
        col = table.columns[f.name]
        delta = np.zeros_like(col)
        lag = MINUTES_PER_QH if f.resolution == "qh" else 1
        delta[lag:] = col[lag:] - col[:-lag]
        out[f.name + ".delta"] = delta
    return out


def _all_true_window(flags: np.ndarray, length: int, forward: bool) -> np.ndarray:
    """For each index i: all(flags[i-length+1 .. i]) or all(flags[i .. i+length-1])."""
    c = np.concatenate([[0], np.cumsum(flags.astype(np.int64))])
    n = len(flags)
    out = np.zeros(n, dtype=bool)
    if forward:
        last = np.arange(n) + length
        ok = last <= n
        out[ok] = (c[last[ok]] - c[np.arange(n)[ok]]) == length
    else:
        first = np.arange(n) - length + 1
        ok = first >= 0
        out[ok] = (c[np.arange(n)[ok] + 1] - c[first[ok]]) == length
    return out


def build_datasets(
    table: FeatureTable,
    bounds: SplitBounds,
    config: PipelineConfig = PipelineConfig(),
    scaler: ScalerStats | None = None,
) -> Datasets:
    schema = table.schema
    bounds.validate(table)
    n_past, n_out = config.n_past, config.n_out
    start = table.start_minute
    n_rows = len(table)

    if config.recentness_feature and config.recentness_feature in schema:
        span = bounds.train_end - start
        ramp = (np.arange(n_rows, dtype=np.float64)) / span
        table.columns[config.recentness_feature] = np.clip(ramp, 0.0, 1.0)

    deltas = _delta_columns(table, schema)
    col_specs = _column_specs(schema)
    raw = np.empty((len(col_specs), n_rows))
    for i, (name, _) in enumerate(col_specs):
        raw[i] = deltas[name] if name.endswith(".delta") else table.columns[name]

    fitted_here = scaler is None
    if fitted_here:
        train_rows = table.valid & (table.minutes() < bounds.train_end)
        if not train_rows.any():
            raise DataError("no valid training rows before the train boundary")
        mean = np.zeros(len(col_specs))
        std = np.ones(len(col_specs))
        for i, (name, spec) in enumerate(col_specs):
            # categorical codes and 0/1 flags pass through unscaled; a binary
            # feature may legitimately never fire inside a short train window
            if spec.kind in ("categorical", "binary"):
                continue
            vals = raw[i, train_rows]
            m = float(vals.mean())
            s = float(vals.std())
            if not np.isfinite(s) or s < 1e-12:
                raise DataError(f"feature column {name} is constant over the training split")
            mean[i], std[i] = m, s
        scaler = ScalerStats(columns=[name for name, _ in col_specs], mean=mean, std=std)
    else:
        # forecasting with a trained model: standardize with its training
        # statistics instead of refitting on the new table
        expected = [name for name, _ in col_specs]
        if list(scaler.columns) != expected:
            raise DataError("provided scaler columns do not match the schema")
        mean = np.asarray(scaler.mean, dtype=np.float64)
        std = np.asarray(scaler.std, dtype=np.float64)
    std_by_col = (raw - mean[:, None]) / std[:, None]
    target_raw = table.columns[schema.target].copy()
    store = _WindowStore(table, schema, scaler, std_by_col, target_raw, config)

    # eligibility masks over issue rows
    minutes = table.minutes()
    blocks = minutes // MINUTES_PER_QH
    valid = table.valid
    min_past_ok = _all_true_window(valid, n_past, forward=False)
    min_future_ok = _all_true_window(valid, n_past, forward=True)

    # per-block validity from the representative (last) row of each block
    first_block = start // MINUTES_PER_QH
    last_block = (start + n_rows - 1) // MINUTES_PER_QH
    n_blocks = last_block - first_block + 1
    block_ok = np.zeros(n_blocks, dtype=bool)
    rep_rows = (first_block + np.arange(n_blocks)) * MINUTES_PER_QH + (MINUTES_PER_QH - 1) - start
    in_range = (rep_rows >= 0) & (rep_rows < n_rows)
    block_ok[in_range] = valid[rep_rows[in_range]]

    qh_past_ok_b = _all_true_window(block_ok, n_past, forward=False)
    horizon_span = max(n_past, n_out)
    qh_future_ok_b = _all_true_window(block_ok, horizon_span, forward=True)

    b_idx = blocks - first_block
    qh_past_ok = np.zeros(n_rows, dtype=bool)
    qh_future_ok = np.zeros(n_rows, dtype=bool)
    prev_ok = (b_idx - 1 >= 0) & (b_idx - 1 < n_blocks)
    qh_past_ok[prev_ok] = qh_past_ok_b[np.clip(b_idx - 1, 0, n_blocks - 1)][prev_ok]
    cur_ok = b_idx < n_blocks
    qh_future_ok[cur_ok] = qh_future_ok_b[np.clip(b_idx, 0, n_blocks - 1)][cur_ok]

    eligible = valid & min_past_ok & min_future_ok & qh_past_ok & qh_future_ok
    label_end = (blocks + n_out) * MINUTES_PER_QH

    in_train = eligible & (minutes < bounds.train_end) & (label_end <= bounds.train_end)
    in_val = (
        eligible
        & (minutes >= bounds.train_end)
        & (minutes < bounds.val_end)
        & (label_end <= bounds.val_end)
    )
    in_test = eligible & (minutes >= bounds.val_end) & (label_end <= table.end_minute)

    emitted = in_train | in_val | in_test
    skip_counts = {
        "invalid_rows": int((~valid).sum()),
        "insufficient_context": int((valid & ~eligible).sum()),
        "split_boundary": int((eligible & ~emitted).sum()),
    }

    rows = np.arange(n_rows)
    datasets = Datasets(
        train=WindowDataset(store, rows[in_train]),
        validation=WindowDataset(store, rows[in_val]),
        test=WindowDataset(store, rows[in_test]),
        scaler=scaler,
        schema=schema,
        config=config,
        bounds=bounds,
        skip_counts=skip_counts,
    )
    # label statistics come from training samples only, pooled horizons;
    # a provided scaler keeps the stats it was trained with
    tr = datasets.train
    if fitted_here and len(tr):
        scaler.label_mean = float(tr.labels_raw.mean())
        scaler.label_std = float(tr.labels_raw.std())
        scaler.dlabel_mean = float(tr.dlabels_raw.mean())
        scaler.dlabel_std = float(tr.dlabels_raw.std())
        if scaler.label_std < 1e-12 or scaler.dlabel_std < 1e-12:
            raise DataError("target labels are constant over the training split")
    return datasets


def make_windows(
    table: FeatureTable, n_past: int = 15, n_out: int = 3, mode: str = "si"
):
    """Yield every eligible sample of a table as WindowedSample objects."""
    end = table.end_minute
    bounds = SplitBounds(train_end=end, val_end=end)
    config = PipelineConfig(n_past=n_past, n_out=n_out)
    ds = build_datasets(table, bounds, config).train
    for i in range(len(ds)):
        yield ds.sample(i, mode=mode)
