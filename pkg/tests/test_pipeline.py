"""Window construction tests against a brute-force index oracle.

The oracle recomputes every input cell and label straight from value
formulas and minute/block arithmetic, independently of the pipeline's
gather machinery, and the comparison is exact (same standardization
scalars, same IEEE operations).
"""

import numpy as np
import pandas as pd
import pytest

from imbforecast.errors import DataError
from imbforecast.ingest import FeatureTable, minute_of
from imbforecast.pipeline import (
    PipelineConfig,
    SplitBounds,
    WindowedSample,
    _delta_columns,
    build_datasets,
    make_windows,
)
from imbforecast.schema import FeatureSchema, FeatureSpec

START = "2024-03-01"


def blockv(block) -> float:
    return float((block * 37) % 1009) - 400.0


def minv(minute) -> float:
    return float((minute * 3) % 791) - 200.0


def qfv(block) -> float:
    return float((block * 7 + 13) % 797) - 350.0


def fminv(minute) -> float:
    return float((minute * 11 + 5) % 613) - 300.0


def oracle_schema() -> FeatureSchema:
    feats = [
        FeatureSpec("si_qh", "si_nrv", "qh", "past", "continuous", has_delta=True),
        FeatureSpec("mpast", "load", "min", "past", "continuous", has_delta=True),
        FeatureSpec("fq", "exchange", "qh", "future", "continuous", has_delta=True),
        FeatureSpec("fmin", "renewables", "min", "future", "continuous"),
        FeatureSpec("qh_of_day", "time", "qh", "future", "categorical", vocab=96),
        FeatureSpec("min_of_hour", "time", "min", "future", "categorical", vocab=60),
    ]
    return FeatureSchema(feats, target="si_qh")


def formula_table(n_days: int = 3, start: str = START) -> FeatureTable:
    schema = oracle_schema()
    start_m = minute_of(start)
    t = start_m + np.arange(n_days * 1440, dtype=np.int64)
    blocks = t // 15
    columns = {
        "si_qh": ((blocks * 37) % 1009).astype(np.float64) - 400.0,
        "mpast": ((t * 3) % 791).astype(np.float64) - 200.0,
        "fq": ((blocks * 7 + 13) % 797).astype(np.float64) - 350.0,
        "fmin": ((t * 11 + 5) % 613).astype(np.float64) - 300.0,
        "qh_of_day": (blocks % 96).astype(np.float64),
        "min_of_hour": (t % 60).astype(np.float64),
    }
    return FeatureTable(start_minute=start_m, columns=columns, schema=schema)


@pytest.fixture(scope="module")
def built():
    table = formula_table()
    start = table.start_minute
    bounds = SplitBounds(train_end=start + 2880, val_end=start + 3600)
    return table, build_datasets(table, bounds)


COLS = ["si_qh", "si_qh.delta", "mpast", "mpast.delta", "fq", "fq.delta", "fmin", "qh_of_day", "min_of_hour"]


def oracle_cells(issue_minute: int, start: int, scaler) -> np.ndarray:
    """Every cell of one sample from first principles (oldest row first)."""

    def std(value: float, col: str) -> float:
        i = COLS.index(col)
        return (value - scaler.mean[i]) / scaler.std[i]

    g = issue_minute // 15
    cells = np.empty((15, len(COLS)))
    for k in range(15):
        past_block = g - 15 + k
        cells[k, 0] = std(blockv(past_block), "si_qh")
        rep_row = past_block * 15 + 14 - start
        d = blockv(past_block) - blockv(past_block - 1) if rep_row >= 15 else 0.0
        cells[k, 1] = std(d, "si_qh.delta")

        m = issue_minute - 14 + k
        cells[k, 2] = std(minv(m), "mpast")
        dm = minv(m) - minv(m - 1) if m - start >= 1 else 0.0
        cells[k, 3] = std(dm, "mpast.delta")

        fut_block = g + k
        cells[k, 4] = std(qfv(fut_block), "fq")
        rep_row = fut_block * 15 + 14 - start
        dq = qfv(fut_block) - qfv(fut_block - 1) if rep_row >= 15 else 0.0
        cells[k, 5] = std(dq, "fq.delta")

        cells[k, 6] = std(fminv(issue_minute + k), "fmin")
        cells[k, 7] = float(fut_block % 96)
        cells[k, 8] = float((issue_minute + k) % 60)
    return cells


class TestWindowOracle:
    def test_every_sample_matches_brute_force(self, built):
        table, ds = built
        assert list(ds.scaler.columns) == COLS
        for split in (ds.train, ds.validation, ds.test):
            assert len(split) > 0
            got = split.inputs(np.arange(len(split)))
            for i in range(len(split)):
                want = oracle_cells(int(split.issue_minutes[i]), table.start_minute, ds.scaler)
                assert np.array_equal(got[i], want), f"mismatch at sample {i}"

    def test_labels_match_block_values_exactly(self, built):
        _, ds = built
        for split in (ds.train, ds.validation, ds.test):
            blocks = split.issue_minutes // 15
            for i in range(len(split)):
                g = int(blocks[i])
                want = np.array([blockv(g), blockv(g + 1), blockv(g + 2)])
                assert np.array_equal(split.labels_raw[i], want)
                assert split.prev_qh_si[i] == blockv(g - 1)

    def test_issue_at_0003_labels_cover_three_blocks(self, built):
        table, ds = built
        minute = minute_of("2024-03-02T00:03")
        where = np.flatnonzero(ds.train.issue_minutes == minute)
        assert where.size == 1
        sample = ds.train.sample(int(where[0]))
        assert sample.issue_timestamp == pd.Timestamp("2024-03-02T00:03")
        g = minute // 15
        assert g * 15 == minute_of("2024-03-02T00:00")
        assert np.array_equal(sample.raw_label, [blockv(g), blockv(g + 1), blockv(g + 2)])
        assert sample.prev_qh_imbalance == blockv(g - 1)

    def test_adjacent_samples_share_minute_history(self, built):
        _, ds = built
        i = 100
        assert ds.train.issue_minutes[i + 1] == ds.train.issue_minutes[i] + 1
        a, b = ds.train.inputs(np.array([i, i + 1]))
        for col in (2, 3):  # minute-resolution past columns
            assert np.array_equal(a[1:, col], b[:-1, col])

    def test_lead_minutes(self, built):
        _, ds = built
        offset = ds.train.issue_minutes % 15
        expect = (15 - offset)[:, None] + 15 * np.arange(3)
        assert np.array_equal(ds.train.lead_minutes, expect)
        assert ds.train.lead_minutes.min() == 1
        assert ds.train.lead_minutes.max() == 45

    def test_row_zero_is_oldest(self, built):
        # minute-past column increases by the formula's step inside a window
        _, ds = built
        x = ds.train.inputs(np.array([50]))[0]
        scaler = ds.train.scaler
        raw = x[:, 2] * scaler.std[2] + scaler.mean[2]
        t = int(ds.train.issue_minutes[50])
        assert raw[0] == pytest.approx(minv(t - 14), abs=1e-9)
        assert raw[-1] == pytest.approx(minv(t), abs=1e-9)


class TestSplits:
    def test_no_label_leakage(self, built):
        table, ds = built
        bounds = ds.bounds
        label_end = (ds.train.issue_minutes // 15 + 3) * 15
        assert np.all(label_end <= bounds.train_end)
        label_end = (ds.validation.issue_minutes // 15 + 3) * 15
        assert np.all(label_end <= bounds.val_end)
        assert np.all(ds.validation.issue_minutes >= bounds.train_end)
        label_end = (ds.test.issue_minutes // 15 + 3) * 15
        assert np.all(label_end <= table.end_minute)
        assert np.all(ds.test.issue_minutes >= bounds.val_end)

    def test_splits_disjoint_and_chronological(self, built):
        _, ds = built
        assert ds.train.issue_minutes.max() < ds.validation.issue_minutes.min()
        assert ds.validation.issue_minutes.max() < ds.test.issue_minutes.min()

    def test_boundary_samples_dropped_not_reassigned(self, built):
        _, ds = built
        assert ds.skip_counts["split_boundary"] > 0
        all_minutes = np.concatenate(
            [ds.train.issue_minutes, ds.validation.issue_minutes, ds.test.issue_minutes]
        )
        assert len(np.unique(all_minutes)) == len(all_minutes)

    def test_past_features_never_read_future_rows(self, built):
        table, ds = built
        split = ds.test
        i = len(split) // 2
        row = int(split.issue_rows[i])
        store = split._store
        poisoned = store.std_by_col.copy()
        original = store.std_by_col
        poisoned[:, row + 1 :] = np.nan
        store.std_by_col = poisoned
        try:
            x = split.inputs(np.array([i]))[0]
        finally:
            store.std_by_col = original
        past_cols = [0, 1, 2, 3]
        future_cols = [4, 5, 6, 7, 8]
        assert np.all(np.isfinite(x[:, past_cols]))
        assert np.any(np.isnan(x[:, future_cols]))


class TestDeltas:
    def test_hand_example(self):
        table = formula_table(n_days=2)
        table.columns["mpast"][:4] = [5.0, 7.0, 7.0, 4.0]
        deltas = _delta_columns(table, table.schema)
        assert np.array_equal(deltas["mpast.delta"][:4], [0.0, 2.0, 0.0, -3.0])

    def test_constant_series_all_zero(self):
        table = formula_table(n_days=2)
        table.columns["mpast"][:] = 3.25
        deltas = _delta_columns(table, table.schema)
        assert np.all(deltas["mpast.delta"] == 0.0)

    def test_random_series_matches_shift_subtract(self):
        table = formula_table(n_days=2)
        rng = np.random.default_rng(0)
        v = rng.normal(size=len(table))
        table.columns["mpast"] = v
        deltas = _delta_columns(table, table.schema)
        want = np.concatenate([[0.0], v[1:] - v[:-1]])
        assert np.array_equal(deltas["mpast.delta"], want)

    def test_quarter_hour_delta_lags_one_block(self):
        table = formula_table(n_days=2)
        deltas = _delta_columns(table, table.schema)
        col = table.columns["si_qh"]
        assert np.all(deltas["si_qh.delta"][:15] == 0.0)
        assert np.array_equal(deltas["si_qh.delta"][15:], col[15:] - col[:-15])

    def test_delta_computed_before_scaling(self, built):
        # the delta column has its own statistics; scaling first would give
        # delta/std(values) instead
        table, ds = built
        scaler = ds.train.scaler
        x = ds.train.inputs(np.array([10]))[0]
        t = int(ds.train.issue_minutes[10])
        raw_delta = minv(t) - minv(t - 1)
        i = COLS.index("mpast.delta")
        want = (raw_delta - scaler.mean[i]) / scaler.std[i]
        wrong = raw_delta / scaler.std[COLS.index("mpast")]
        assert x[-1, i] == want
        assert x[-1, i] != wrong


class TestScaler:
    def test_two_point_column(self):
        vals = np.array([0.0, 10.0])
        assert vals.mean() == 5.0 and vals.std() == 5.0
        standardized = (vals - vals.mean()) / vals.std()
        assert np.array_equal(standardized, [-1.0, 1.0])

    def test_train_columns_standardized(self, built):
        table, ds = built
        train_rows = table.minutes() < ds.bounds.train_end
        store = ds.train._store
        for i, name in enumerate(ds.scaler.columns):
            if name in ("qh_of_day", "min_of_hour"):
                continue
            col = store.std_by_col[i, train_rows]
            assert abs(col.mean()) < 1e-9, name
            assert abs(col.std() - 1.0) < 1e-9, name

    def test_round_trip(self, built):
        _, ds = built
        raw = np.array([[-250.0, 0.0, 613.0]])
        back = ds.scaler.destandardize_labels(ds.scaler.standardize_labels(raw), "si")
        np.testing.assert_allclose(back, raw, atol=1e-12)

    def test_constant_column_rejected_with_name(self):
        table = formula_table(n_days=2)
        table.columns["fmin"][:] = 42.0
        start = table.start_minute
        bounds = SplitBounds(train_end=start + 1440, val_end=start + 2000)
        with pytest.raises(DataError, match="fmin"):
            build_datasets(table, bounds)

    def test_categorical_columns_pass_through(self, built):
        _, ds = built
        x = ds.train.inputs(np.array([0]))[0]
        codes = x[:, COLS.index("min_of_hour")]
        assert np.all(codes == np.round(codes))
        assert codes.min() >= 0 and codes.max() < 60

    def test_train_labels_standardized(self, built):
        _, ds = built
        labels = ds.train.labels_std(np.arange(len(ds.train)))
        assert abs(labels.mean()) < 1e-9
        assert abs(labels.std() - 1.0) < 1e-9


class TestDeltaTargetLabels:
    def test_reconstruction_identity(self, built):
        _, ds = built
        split = ds.validation
        recon = split.prev_qh_si[:, None] + np.cumsum(split.dlabels_raw, axis=1)
        np.testing.assert_allclose(recon, split.labels_raw, atol=1e-9)

    def test_delta_labels_standardized_with_own_stats(self, built):
        _, ds = built
        d = ds.train.labels_std(np.arange(len(ds.train)), mode="dsi")
        assert abs(d.mean()) < 1e-9
        assert abs(d.std() - 1.0) < 1e-9
        assert ds.scaler.dlabel_std != ds.scaler.label_std


class TestEligibility:
    def test_minimal_table_with_gap_emits_one_sample(self):
        table = formula_table(n_days=1)
        # trim to exactly 30 blocks and break every later issue minute
        n = 450
        for name in table.schema.feature_names:
            table.columns[name] = table.columns[name][:n]
        table.valid = table.valid[:n]
        table.filled = table.filled[:n]
        table.valid[240] = False
        start = table.start_minute
        bounds = SplitBounds(train_end=start + n, val_end=start + n)
        ds = build_datasets(table, bounds)
        assert len(ds.train) == 1
        assert ds.train.issue_minutes[0] == start + 225
        assert len(ds.validation) == 0 and len(ds.test) == 0

    def test_skip_counters_present(self, built):
        _, ds = built
        assert ds.skip_counts["insufficient_context"] > 0
        assert ds.skip_counts["invalid_rows"] == 0

    def test_bad_bounds_rejected(self):
        table = formula_table(n_days=2)
        start = table.start_minute
        with pytest.raises(DataError):
            build_datasets(table, SplitBounds(train_end=start, val_end=start + 100))


class TestMakeWindows:
    def test_yields_windowed_samples(self):
        table = formula_table(n_days=1)
        samples = list(make_windows(table))
        assert len(samples) > 0
        first = samples[0]
        assert isinstance(first, WindowedSample)
        assert first.inputs.shape == (15, len(COLS))
        assert first.label.shape == (3,)
        assert first.raw_label.shape == (3,)
        stamps = [s.issue_timestamp for s in samples]
        assert stamps == sorted(stamps)


class TestRecentness:
    def test_ramp_and_clamp(self):
        feats = list(oracle_schema().features) + [
            FeatureSpec("recentness", "time", "min", "future", "continuous")
        ]
        schema = FeatureSchema(feats, target="si_qh")
        base = formula_table(n_days=3)
        base.columns["recentness"] = np.full(len(base), -1.0)  # overwritten
        table = FeatureTable(
            start_minute=base.start_minute, columns=base.columns, schema=schema
        )
        start = table.start_minute
        bounds = SplitBounds(train_end=start + 2880, val_end=start + 3600)
        ds = build_datasets(table, bounds)
        col = table.columns["recentness"]
        assert col[0] == 0.0
        assert col[1440] == pytest.approx(0.5)
        assert col[2880] == 1.0
        assert np.all(col[2880:] == 1.0)
        assert "recentness" in ds.scaler.columns
