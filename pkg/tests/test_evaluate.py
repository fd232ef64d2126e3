"""Scoring and report aggregation: RMSE, coverage, strata, lead minutes."""

import warnings

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from imbforecast.crps import crps_batch
from imbforecast.ensemble import forecast_dataset
from imbforecast.evaluate import (
    EvalReport,
    calibration,
    long_frame,
    report_frames,
    rmse,
    stratified_report,
)
from imbforecast.loss import QUANTILE_LEVELS
from imbforecast.pipeline import SplitBounds, build_datasets
from imbforecast.synthetic import GeneratorConfig, generate
from imbforecast.train import TrainConfig, train
from imbforecast.vsn import ConstantVsn, ModelConfig

N_Q = len(QUANTILE_LEVELS)


def random_report_inputs(rng, n=40, horizons=3):
    values = np.sort(rng.normal(0.0, 120.0, size=(n, horizons, N_Q)), axis=-1)
    truths = rng.normal(0.0, 150.0, size=(n, horizons))
    leads = rng.integers(1, 46, size=(n, horizons))
    return values, truths, leads


class TestRmse:
    def test_matches_explicit_sum(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=37)
        b = rng.normal(size=37)
        total = 0.0
        for x, y in zip(a, b):
            total += (x - y) ** 2
        assert abs(rmse(a, b) - np.sqrt(total / 37)) < 1e-12

    def test_symmetric_errors(self):
        assert abs(rmse(np.array([100.0, -100.0]), np.zeros(2)) - 100.0) < 1e-12

    def test_perfect_forecast(self):
        x = np.linspace(-5, 5, 11)
        assert rmse(x, x) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rmse(np.empty(0), np.empty(0))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            rmse(np.zeros(3), np.zeros(4))


class TestCalibration:
    def test_extreme_offsets(self):
        rng = np.random.default_rng(1)
        truths = rng.normal(size=1500)
        rows = np.tile(np.linspace(-1, 1, N_Q), (1500, 1))
        np.testing.assert_array_equal(calibration(rows + 1e6, truths), np.ones(N_Q))
        np.testing.assert_array_equal(calibration(rows - 1e6, truths), np.zeros(N_Q))

    def test_strictly_below_excludes_ties(self):
        rows = np.full((1200, N_Q), 3.0)
        truths = np.full(1200, 3.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            cov = calibration(rows, truths)
        np.testing.assert_array_equal(cov, np.zeros(N_Q))

    def test_known_mixture_fraction(self):
        # 1000 evenly spread truths against one fixed forecast row: the
        # fraction strictly below v is the count of grid points under v.
        truths = np.arange(1000, dtype=np.float64)  # 0..999
        rows = np.tile(np.array([100.0, 250.5, 999.0, 1500.0]), (1000, 1))
        cov = calibration(rows, truths)
        np.testing.assert_allclose(cov, [0.100, 0.251, 0.999, 1.000], atol=1e-12)

    def test_monotone_for_sorted_rows(self):
        rng = np.random.default_rng(2)
        rows = np.sort(rng.normal(size=(2000, N_Q)), axis=1)
        truths = rng.normal(size=2000)
        cov = calibration(rows, truths)
        assert np.all(np.diff(cov) >= 0)
        assert np.all((cov >= 0) & (cov <= 1))

    def test_small_sample_warns(self):
        rows = np.zeros((10, N_Q))
        with pytest.warns(RuntimeWarning):
            calibration(rows, np.zeros(10))

    def test_large_sample_silent(self):
        rows = np.zeros((1000, N_Q))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            calibration(rows, np.ones(1000))

    def test_ideal_gaussian_forecaster_is_calibrated(self):
        rng = np.random.default_rng(3)
        m = 6000
        mu = rng.uniform(-200, 200, size=m)
        sigma = 80.0
        truths = mu + sigma * rng.standard_normal(m)
        rows = mu[:, None] + sigma * norm.ppf(QUANTILE_LEVELS)[None, :]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cov = calibration(rows, truths)
        np.testing.assert_allclose(cov, QUANTILE_LEVELS, atol=0.02)


class TestStratifiedReport:
    def test_counts_partition_rows(self):
        rng = np.random.default_rng(4)
        values, truths, leads = random_report_inputs(rng)
        rep = stratified_report(values, truths, leads, threshold=120.0)
        assert rep.n_rows == values.shape[0] * values.shape[1]
        assert rep.n_high + rep.n_low == rep.n_rows
        assert rep.n_high == int((np.abs(truths) > 120.0).sum())
        assert int(rep.lead_counts.sum()) == rep.n_rows

    def test_zero_threshold_matches_overall(self):
        rng = np.random.default_rng(5)
        values, truths, leads = random_report_inputs(rng)
        truths = np.where(truths == 0.0, 1.0, truths)
        rep = stratified_report(values, truths, leads, threshold=0.0)
        assert rep.n_low == 0
        assert rep.high_rmse == rep.overall_rmse
        assert rep.high_crps == rep.overall_crps

    def test_empty_high_stratum_reported_absent(self):
        rng = np.random.default_rng(6)
        values, truths, leads = random_report_inputs(rng)
        rep = stratified_report(values, truths, leads, threshold=1e9)
        assert rep.n_high == 0
        assert rep.high_rmse is None
        assert rep.high_crps is None

    def test_overall_metrics_match_flat_recomputation(self):
        rng = np.random.default_rng(7)
        values, truths, leads = random_report_inputs(rng)
        rep = stratified_report(values, truths, leads)
        rows = values.reshape(-1, N_Q)
        flat = truths.reshape(-1)
        med = rows[:, QUANTILE_LEVELS.index(0.5)]
        assert abs(rep.overall_rmse - np.sqrt(np.mean((med - flat) ** 2))) < 1e-12
        scores, _ = crps_batch(rows, flat, engine="exact")
        assert abs(rep.overall_crps - scores.mean()) < 1e-12

    def test_lead_minute_grouping(self):
        # Three distinct lead minutes with hand-placed rows; group means
        # recomputed with a dict-of-lists loop.
        values = np.zeros((4, 3, N_Q))
        truths = np.zeros((4, 3))
        rng = np.random.default_rng(8)
        values[:] = np.sort(rng.normal(0, 50, size=values.shape), axis=-1)
        truths[:] = rng.normal(0, 60, size=truths.shape)
        leads = np.array([[1, 16, 31], [1, 16, 31], [8, 23, 38], [15, 30, 45]])
        rep = stratified_report(values, truths, leads)

        rows = values.reshape(-1, N_Q)
        flat = truths.reshape(-1)
        scores, _ = crps_batch(rows, flat, engine="exact")
        med = rows[:, QUANTILE_LEVELS.index(0.5)]
        groups = {}
        for i, m in enumerate(leads.reshape(-1)):
            groups.setdefault(int(m), []).append(i)
        for m, idx in groups.items():
            assert rep.lead_counts[m - 1] == len(idx)
            want_rmse = np.sqrt(np.mean((med[idx] - flat[idx]) ** 2))
            assert abs(rep.lead_rmse[m - 1] - want_rmse) < 1e-12
            assert abs(rep.lead_crps[m - 1] - np.mean(scores[idx])) < 1e-12
        absent = set(range(1, 46)) - set(groups)
        for m in absent:
            assert rep.lead_counts[m - 1] == 0
            assert np.isnan(rep.lead_rmse[m - 1])
            assert np.isnan(rep.lead_crps[m - 1])

    def test_degenerate_rows_score_absolute_error(self):
        values = np.full((2, 1, N_Q), 40.0)
        values[1] = -10.0
        truths = np.array([[10.0], [20.0]])
        leads = np.array([[5], [5]])
        rep = stratified_report(values, truths, leads)
        expect = np.mean([30.0, 30.0])
        assert abs(rep.overall_crps - expect) / expect < 0.01

    def test_crossing_rate_counts_unsorted_rows(self):
        rng = np.random.default_rng(9)
        values, truths, leads = random_report_inputs(rng, n=10)
        values[0, 0, ::-1] = np.sort(values[0, 0])  # force one descending row
        values[3, 2, 4] = values[3, 2, 5] + 1.0  # and one local inversion
        rep = stratified_report(values, truths, leads)
        assert rep.crossing_rate == 2 / 30

    def test_misaligned_shapes_rejected(self):
        values = np.zeros((4, 3, N_Q))
        with pytest.raises(ValueError):
            stratified_report(values, np.zeros((4, 2)), np.ones((4, 3)))
        with pytest.raises(ValueError):
            stratified_report(values, np.zeros((4, 3)), np.ones((4, 2)))
        with pytest.raises(ValueError):
            stratified_report(np.zeros((0, 3, N_Q)), np.zeros((0, 3)), np.ones((0, 3)))


class TestFrames:
    def make_report(self, seed=10, threshold=120.0):
        rng = np.random.default_rng(seed)
        values, truths, leads = random_report_inputs(rng)
        return stratified_report(values, truths, leads, threshold=threshold)

    def test_block_layout(self):
        rep = self.make_report()
        frames = report_frames(rep)
        assert set(frames) == {"overall", "conditional", "lead", "coverage"}
        overall = frames["overall"].set_index("metric")["value"]
        assert overall["rmse"] == rep.overall_rmse
        assert overall["crps"] == rep.overall_crps
        assert overall["n_rows"] == rep.n_rows
        lead = frames["lead"]
        assert (lead["count"] > 0).all()
        assert lead["lead_minute"].is_monotonic_increasing
        cov = frames["coverage"]
        np.testing.assert_array_equal(cov["level"], QUANTILE_LEVELS)
        np.testing.assert_array_equal(cov["coverage"], rep.coverage)

    def test_empty_stratum_dropped_from_conditional(self):
        rep = self.make_report(threshold=1e9)
        cond = report_frames(rep)["conditional"]
        assert list(cond["stratum"]) == ["low"]
        rep_all = self.make_report(threshold=0.0)
        cond_all = report_frames(rep_all)["conditional"]
        assert list(cond_all["stratum"]) == ["high"]

    def test_long_format_columns_and_rows(self):
        rep = self.make_report()
        table = long_frame(rep)
        assert list(table.columns) == ["metric", "stratum", "lead_minute", "value"]
        overall_row = table[
            (table.metric == "rmse") & (table.stratum == "all") & table.lead_minute.isna()
        ]
        assert len(overall_row) == 1
        assert overall_row["value"].iloc[0] == rep.overall_rmse
        lead_rows = table[table.lead_minute.notna()]
        assert len(lead_rows) == 2 * int((rep.lead_counts > 0).sum())
        cov_rows = table[table.metric == "coverage"]
        assert list(cov_rows["stratum"]) == [f"q{q:g}" for q in QUANTILE_LEVELS]


@pytest.fixture(scope="module")
def scored():
    table, _ = generate(GeneratorConfig(n_days=8, seed=5))
    bounds = SplitBounds.from_timestamps(
        pd.Timestamp("2024-01-06"), pd.Timestamp("2024-01-08")
    )
    datasets = build_datasets(table, bounds)
    model = ConstantVsn(
        ModelConfig(h=4, h_hidden=8), datasets.schema, np.random.default_rng(0)
    )
    train(model, datasets, TrainConfig(epochs=2, patience=2, seed=0))
    values, _ = forecast_dataset([model], datasets.validation)
    ds = datasets.validation
    return stratified_report(values, ds.labels_raw, ds.lead_minutes)


class TestTrainedModelLeadProfile:
    def test_every_lead_minute_represented(self, scored):
        assert (scored.lead_counts > 0).all()

    def test_information_accrues_within_current_quarter_hour(self, scored):
        # The first forecast horizon covers the quarter-hour that is
        # already underway: a forecast issued one minute before its end
        # has seen nearly the whole averaging window, one issued at the
        # start has seen none of it.
        assert scored.lead_rmse[0] < scored.lead_rmse[14]
        assert scored.lead_crps[0] < scored.lead_crps[14]

    def test_later_blocks_do_not_sharply_invert(self, scored):
        assert scored.lead_rmse[15] < scored.lead_rmse[29] * 1.15
        assert scored.lead_rmse[30] < scored.lead_rmse[44] * 1.15
