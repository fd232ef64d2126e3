"""CSV ingestion into a minute-indexed feature table.

The table covers a contiguous minute range. Short gaps in the source
file are forward-filled and flagged; longer gaps stay as invalid rows
that break any window touching them; gaps beyond a hard limit abort
ingestion. Quarter-hour features must be constant within each
quarter-hour block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError
from .schema import FeatureSchema

MINUTES_PER_QH = 15


def minute_of(ts) -> int:
    """Epoch minute of a timestamp-like value."""
    return int(pd.Timestamp(ts).to_datetime64().astype("datetime64[m]").astype(np.int64))


def minute_to_timestamp(minute: int) -> pd.Timestamp:
    return pd.Timestamp(np.int64(minute), unit="m")


@dataclass
class FeatureTable:
    """Contiguous minute-indexed columns plus validity flags."""

    start_minute: int
    columns: dict[str, np.ndarray]
    schema: FeatureSchema
    valid: np.ndarray = field(default=None)
    filled: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(next(iter(self.columns.values())))
        for name, col in self.columns.items():
            if len(col) != n:
                raise DataError(f"column {name} length {len(col)} != {n}")
        if self.valid is None:
            self.valid = np.ones(n, dtype=bool)
        if self.filled is None:
            self.filled = np.zeros(n, dtype=bool)

    def __len__(self) -> int:
        return len(self.valid)

    @property
    def end_minute(self) -> int:
        """One past the last covered minute."""
        return self.start_minute + len(self)

    def minutes(self) -> np.ndarray:
        return self.start_minute + np.arange(len(self), dtype=np.int64)

    def row_of(self, minute: int) -> int:
        row = minute - self.start_minute
        if not 0 <= row < len(self):
            raise DataError(f"minute {minute} outside table range")
        return row


def _validate_qh_constancy(table: FeatureTable) -> None:
    start = table.start_minute
    for spec in table.schema.features:
        if spec.resolution != "qh":
            continue
        col = table.columns[spec.name]
        offsets = (start + np.arange(len(col))) % MINUTES_PER_QH
        prev_same_qh = (offsets != 0)[1:]
        changed = (col[1:] != col[:-1]) & prev_same_qh
        changed &= ~(np.isnan(col[1:]) | np.isnan(col[:-1]))
        if changed.any():
            row = int(np.argmax(changed)) + 1
            ts = minute_to_timestamp(start + row)
            raise DataError(
                f"quarter-hour feature {spec.name} changes mid-block at {ts.isoformat()}"
            )


def _validate_categories(table: FeatureTable) -> None:
    for spec in table.schema.categorical:
        col = table.columns[spec.name]
        finite = col[np.isfinite(col)]
        if np.any(finite != np.round(finite)):
            raise DataError(f"categorical feature {spec.name} has non-integer codes")
        if finite.size and (finite.min() < 0 or finite.max() >= spec.vocab):
            raise DataError(
                f"categorical feature {spec.name} has codes outside [0, {spec.vocab})"
            )


def ingest_csv(
    path,
    schema: FeatureSchema,
    ffill_limit: int = 3,
    max_gap: int = 1440,
) -> FeatureTable:
    """Load a feature CSV into a validated minute table.

    Gap policy: runs of missing minutes up to ``ffill_limit`` are
    forward-filled and flagged; longer runs stay invalid (windows over
    them are skipped); runs longer than ``max_gap`` minutes abort.
    """
    try:
        # the default fast parser is not correctly rounded; round_trip is
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read CSV {path}: {exc}") from exc
    if "timestamp" not in frame.columns:
        raise DataError("CSV is missing the timestamp column")
    missing = [n for n in schema.feature_names if n not in frame.columns]
    if missing:
        raise DataError(f"CSV is missing schema columns: {missing}")

    try:
        stamps = pd.to_datetime(frame["timestamp"], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise DataError(f"unparseable timestamps: {exc}") from exc
    minutes = stamps.values.astype("datetime64[m]").astype(np.int64)
    diffs = np.diff(minutes)
    if np.any(diffs <= 0):
        row = int(np.argmax(diffs <= 0)) + 1
        raise DataError(f"timestamps not strictly increasing at data row {row}")
    if len(minutes) == 0:
        raise DataError("CSV has no data rows")

    start = int(minutes[0])
    n = int(minutes[-1]) - start + 1
    present = np.zeros(n, dtype=bool)
    present[minutes - start] = True

    # gap runs
    gap_starts, gap_lengths = _missing_runs(present)
    if gap_lengths.size and gap_lengths.max() > max_gap:
        worst = int(gap_starts[np.argmax(gap_lengths)])
        ts = minute_to_timestamp(start + worst)
        raise DataError(
            f"gap of {int(gap_lengths.max())} minutes starting {ts.isoformat()} "
            f"exceeds the {max_gap}-minute limit"
        )

    columns: dict[str, np.ndarray] = {}
    for name in schema.feature_names:
        raw = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=np.float64)
        col = np.full(n, np.nan)
        col[minutes - start] = raw
        columns[name] = col

    valid = present.copy()
    filled = np.zeros(n, dtype=bool)
    for gstart, glen in zip(gap_starts, gap_lengths):
        if glen <= ffill_limit and gstart > 0:
            src = gstart - 1
            for name in schema.feature_names:
                columns[name][gstart : gstart + glen] = columns[name][src]
            valid[gstart : gstart + glen] = True
            filled[gstart : gstart + glen] = True

    # any row still carrying a NaN cell (unfilled gap, missing value in the
    # file, or a fill sourced from a missing value) is invalid
    for name in schema.feature_names:
        valid &= ~np.isnan(columns[name])

    table = FeatureTable(start_minute=start, columns=columns, schema=schema, valid=valid, filled=filled)
    _validate_qh_constancy(table)
    _validate_categories(table)
    return table


def _missing_runs(present: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start indices and lengths of runs of False."""
    padded = np.concatenate([[True], present, [True]])
    changes = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(changes == -1)
    ends = np.flatnonzero(changes == 1)
    return starts, ends - starts


def write_csv(table: FeatureTable, path) -> None:
    """Write a feature table in the ingestion CSV format."""
    stamps = pd.to_datetime(table.minutes(), unit="m")
    frame = pd.DataFrame({"timestamp": stamps.strftime("%Y-%m-%dT%H:%M:%S")})
    for name in table.schema.feature_names:
        frame[name] = table.columns[name]
    # %.17g round-trips every float64 exactly
    frame.to_csv(path, index=False, float_format="%.17g")
