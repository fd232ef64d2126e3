"""Tests for the quantile-forecast CRPS (monotone-cubic CDF + tails)."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imbforecast.crps import cdf_curve, crps_batch, crps_single
from imbforecast.loss import QUANTILE_LEVELS

LEVELS = np.asarray(QUANTILE_LEVELS)


def uniform_crps(a: float, b: float, s: float) -> float:
    """Closed-form CRPS of U(a, b) against truth s.

    Derived by hand from CRPS = E|X - s| - 0.5 E|X - X'| with
    E|X - X'| = (b - a) / 3. For s inside the support this reduces to
    ((s-a)^3 + (b-s)^3) / (3 (b-a)^2).
    """
    w = b - a
    if s < a:
        e = (a + b) / 2.0 - s
    elif s > b:
        e = s - (a + b) / 2.0
    else:
        e = ((s - a) ** 2 + (b - s) ** 2) / (2.0 * w)
    return e - w / 6.0


def uniform_quantiles(a: float, b: float) -> np.ndarray:
    return a + LEVELS * (b - a)


class TestUniformOracle:
    def test_inside_support_grid_engine(self):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            a = rng.uniform(-100.0, 100.0)
            b = a + rng.uniform(0.5, 60.0)
            s = rng.uniform(a, b)
            got = crps_single(uniform_quantiles(a, b), s, engine="grid")
            want = uniform_crps(a, b, s)
            assert got == pytest.approx(want, rel=1e-3)

    def test_inside_support_exact_engine(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            a = rng.uniform(-100.0, 100.0)
            b = a + rng.uniform(0.5, 60.0)
            s = rng.uniform(a, b)
            got = crps_single(uniform_quantiles(a, b), s, engine="exact")
            assert got == pytest.approx(uniform_crps(a, b, s), rel=1e-3)

    def test_central_truth_hand_value(self):
        # s at the midpoint of U(0, 12): ((6)^3 + (6)^3) / (3 * 144) = 1.0
        got = crps_single(uniform_quantiles(0.0, 12.0), 6.0)
        assert got == pytest.approx(1.0, rel=1e-3)


class TestDegenerate:
    def test_point_mass_is_absolute_error(self):
        row = np.full(9, 5.0)
        assert crps_single(row, 3.0) == pytest.approx(2.0, abs=1e-12)
        assert crps_single(row, 5.0) == pytest.approx(0.0, abs=1e-12)
        assert crps_single(row, -1.5) == pytest.approx(6.5, abs=1e-12)

    def test_point_mass_batch_mixed_with_regular_rows(self):
        values = np.stack([np.full(9, -7.0), uniform_quantiles(0.0, 1.0)])
        truths = np.array([-7.0, 0.5])
        scores, _ = crps_batch(values, truths)
        assert scores[0] == pytest.approx(0.0, abs=1e-12)
        assert scores[1] > 0.0


class TestCdfShape:
    def test_matches_scipy_pchip_between_knots(self):
        scipy_interp = pytest.importorskip("scipy.interpolate")
        rng = np.random.default_rng(7)
        xs = np.sort(rng.normal(0.0, 50.0, size=9))
        xs += np.arange(9) * 1e-6  # guard against ties
        ref = scipy_interp.PchipInterpolator(xs, LEVELS)
        probe = np.linspace(xs[0], xs[-1] - 1e-9, 301)
        got = cdf_curve(xs, probe)
        np.testing.assert_allclose(got, ref(probe), atol=1e-10)

    def test_cdf_monotone_and_bounded(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            xs = np.sort(rng.normal(0.0, 30.0, size=9))
            lo = xs[0] - 200.0
            hi = xs[-1] + 200.0
            probe = np.linspace(lo, hi, 2001)
            f = cdf_curve(xs, probe)
            assert np.all(np.diff(f) >= -1e-12)
            assert f.min() >= 0.0 and f.max() <= 1.0

    def test_cdf_hits_levels_at_knots(self):
        xs = np.array([-40.0, -25.0, -18.0, -5.0, 0.0, 4.0, 17.0, 26.0, 55.0])
        got = cdf_curve(xs, xs[:-1])  # right endpoint falls in the tail branch
        np.testing.assert_allclose(got, LEVELS[:-1], atol=1e-12)

    def test_near_tied_knots_stay_bounded(self):
        xs = np.array([0.0, 1.0, 1.0, 1.0, 2.0, 3.0, 3.0, 4.0, 9.0])
        probe = np.linspace(-2.0, 11.0, 4001)
        f = cdf_curve(xs, probe)
        assert np.all(np.isfinite(f))
        assert np.all(np.diff(f) >= -1e-12)


class TestCrossingRows:
    def test_crossed_row_sorted_and_counted(self):
        base = uniform_quantiles(-10.0, 10.0)
        crossed = base.copy()
        crossed[3], crossed[4] = crossed[4], crossed[3]
        values = np.stack([base, crossed])
        scores, n_crossing = crps_batch(values, np.array([2.0, 2.0]))
        assert n_crossing == 1
        assert scores[0] == scores[1]

    def test_sorted_batch_reports_zero_crossings(self):
        values = np.stack([uniform_quantiles(0.0, 5.0)] * 4)
        _, n_crossing = crps_batch(values, np.zeros(4))
        assert n_crossing == 0


class TestQuadrature:
    def test_halving_step_changes_little(self):
        rng = np.random.default_rng(5)
        values = np.sort(rng.normal(0.0, 80.0, size=(32, 9)), axis=1)
        truths = rng.normal(0.0, 120.0, size=32)
        coarse, _ = crps_batch(values, truths, grid_points=2000)
        fine, _ = crps_batch(values, truths, grid_points=4000)
        rel = np.abs(fine - coarse) / np.maximum(np.abs(fine), 1e-9)
        assert rel.max() < 1e-3

    def test_grid_and_exact_engines_agree(self):
        rng = np.random.default_rng(17)
        values = np.sort(rng.normal(0.0, 60.0, size=(64, 9)), axis=1)
        truths = rng.normal(0.0, 150.0, size=64)  # some land in the tails
        grid, _ = crps_batch(values, truths, engine="grid")
        exact, _ = crps_batch(values, truths, engine="exact")
        np.testing.assert_allclose(grid, exact, rtol=1e-3, atol=1e-6)

    def test_truth_deep_in_tail_both_engines(self):
        row = uniform_quantiles(0.0, 10.0)
        for s in (-40.0, 52.0):
            g = crps_single(row, s, engine="grid")
            e = crps_single(row, s, engine="exact")
            assert g == pytest.approx(e, rel=1e-3)
            assert g == pytest.approx(uniform_crps(0.0, 10.0, s), rel=2e-2)


class TestScalingAndOrder:
    def test_contraction_about_truth_scales_score(self):
        # quantiles contracted affinely toward the truth scale the whole
        # CDF geometry, so the score scales by the same factor
        rng = np.random.default_rng(3)
        base = np.sort(rng.normal(0.0, 25.0, size=9))
        s = 4.0
        full = crps_single(base, s)
        for alpha in (0.5, 0.1):
            contracted = s + alpha * (base - s)
            assert crps_single(contracted, s) == pytest.approx(alpha * full, rel=1e-9)
        assert crps_single(s + 0.1 * (base - s), s) < full

    @settings(max_examples=25, deadline=None)
    @given(
        st.lists(st.floats(-200.0, 200.0), min_size=9, max_size=9),
        st.floats(-300.0, 300.0),
    )
    def test_nonnegative(self, raw, truth):
        values = np.sort(np.asarray(raw))
        score = crps_single(values, truth, engine="exact")
        assert score >= 0.0


class TestValidation:
    def test_nan_forecast_rejected(self):
        row = uniform_quantiles(0.0, 1.0)
        row[2] = np.nan
        with pytest.raises(ValueError):
            crps_single(row, 0.5)

    def test_wrong_width_rejected(self):
        with pytest.raises(ValueError):
            crps_batch(np.zeros((3, 7)), np.zeros(3))

    def test_unknown_engine_rejected(self):
        with pytest.raises(ValueError):
            crps_batch(np.zeros((1, 9)), np.zeros(1), engine="simpson")
