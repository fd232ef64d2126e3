"""Forecast scoring: RMSE, CRPS, calibration, and stratified breakdowns.

All metrics operate on de-standardized values in MW. A "row" is one
(sample, horizon) pair: its 9 quantile values, its true imbalance, and
its lead time in minutes (1..15 current quarter-hour, 16..30 the next,
31..45 the one after).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .crps import crps_batch
from .loss import QUANTILE_LEVELS

N_LEAD_MINUTES = 45


@dataclass
class EvalReport:
    levels: tuple
    threshold: float
    n_rows: int
    n_high: int
    n_low: int
    overall_rmse: float
    overall_crps: float
    high_rmse: float | None  # None when the |SI| > threshold stratum is empty
    high_crps: float | None
    lead_rmse: np.ndarray  # (45,), NaN where a lead minute has no rows
    lead_crps: np.ndarray
    lead_counts: np.ndarray
    coverage: np.ndarray  # (n_levels,)
    crossing_rate: float


def rmse(point_forecasts: np.ndarray, truths: np.ndarray) -> float:
    """Root mean squared error of point (median) forecasts in MW."""
    point_forecasts = np.asarray(point_forecasts, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if point_forecasts.size == 0:
        raise ValueError("cannot compute RMSE of an empty forecast set")
    if point_forecasts.shape != truths.shape:
        raise ValueError(
            f"shape mismatch: {point_forecasts.shape} vs {truths.shape}"
        )
    return float(np.sqrt(np.mean((point_forecasts - truths) ** 2)))


def calibration(quantile_rows: np.ndarray, truths: np.ndarray) -> np.ndarray:
    """Fraction of true values strictly below each quantile forecast."""
    quantile_rows = np.asarray(quantile_rows, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if quantile_rows.ndim != 2 or truths.shape != (quantile_rows.shape[0],):
        raise ValueError("expected (rows, levels) forecasts and (rows,) truths")
    if quantile_rows.shape[0] < 1000:
        warnings.warn(
            f"calibration over {quantile_rows.shape[0]} forecasts; "
            "coverage estimates need at least 1000 to be meaningful",
            RuntimeWarning,
            stacklevel=2,
        )
    return (truths[:, None] < quantile_rows).mean(axis=0)


def stratified_report(
    values: np.ndarray,
    truths: np.ndarray,
    lead_minutes: np.ndarray,
    levels=QUANTILE_LEVELS,
    threshold: float = 500.0,
    engine: str = "exact",
) -> EvalReport:
    """Score every (sample, horizon) row and aggregate along all axes."""
    values = np.asarray(values, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    lead_minutes = np.asarray(lead_minutes)
    n_q = len(levels)
    if values.ndim != 3 or values.shape[2] != n_q:
        raise ValueError(f"expected (samples, horizons, {n_q}) forecast values")
    if truths.shape != values.shape[:2] or lead_minutes.shape != truths.shape:
        raise ValueError("forecasts, truths and lead minutes do not align")
    if values.size == 0:
        raise ValueError("cannot evaluate an empty forecast set")

    rows = values.reshape(-1, n_q)
    flat_truth = truths.reshape(-1)
    flat_lead = lead_minutes.reshape(-1)
    med = list(levels).index(0.5)

    scores, crossing_count = crps_batch(rows, flat_truth, levels=levels, engine=engine)
    overall_crps = float(scores.mean())
    overall_rmse = rmse(rows[:, med], flat_truth)

    high = np.abs(flat_truth) > threshold
    n_high = int(high.sum())
    if n_high:
        high_rmse = rmse(rows[high, med], flat_truth[high])
        high_crps = float(scores[high].mean())
    else:
        high_rmse = None
        high_crps = None

    lead_rmse = np.full(N_LEAD_MINUTES, np.nan)
    lead_crps = np.full(N_LEAD_MINUTES, np.nan)
    lead_counts = np.zeros(N_LEAD_MINUTES, dtype=np.int64)
    for m in range(1, N_LEAD_MINUTES + 1):
        mask = flat_lead == m
        count = int(mask.sum())
        lead_counts[m - 1] = count
        if count:
            lead_rmse[m - 1] = rmse(rows[mask, med], flat_truth[mask])
            lead_crps[m - 1] = float(scores[mask].mean())

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        coverage = calibration(rows, flat_truth)

    return EvalReport(
        levels=tuple(levels),
        threshold=float(threshold),
        n_rows=rows.shape[0],
        n_high=n_high,
        n_low=rows.shape[0] - n_high,
        overall_rmse=overall_rmse,
        overall_crps=overall_crps,
        high_rmse=high_rmse,
        high_crps=high_crps,
        lead_rmse=lead_rmse,
        lead_crps=lead_crps,
        lead_counts=lead_counts,
        coverage=coverage,
        crossing_rate=crossing_count / rows.shape[0],
    )


def report_frames(report: EvalReport) -> dict:
    """CSV-ready blocks: overall, conditional, per-lead, coverage."""
    overall = pd.DataFrame(
        {
            "metric": ["rmse", "crps", "crossing_rate", "n_rows"],
            "value": [
                report.overall_rmse,
                report.overall_crps,
                report.crossing_rate,
                report.n_rows,
            ],
        }
    )
    rows = [
        {"stratum": "high", "n": report.n_high,
         "rmse": report.high_rmse, "crps": report.high_crps},
        {"stratum": "low", "n": report.n_low, "rmse": None, "crps": None},
    ]
    conditional = pd.DataFrame(
        [r for r in rows if r["n"] > 0],
        columns=["stratum", "n", "rmse", "crps"],
    )
    present = report.lead_counts > 0
    lead = pd.DataFrame(
        {
            "lead_minute": np.arange(1, N_LEAD_MINUTES + 1)[present],
            "rmse": report.lead_rmse[present],
            "crps": report.lead_crps[present],
            "count": report.lead_counts[present],
        }
    )
    coverage = pd.DataFrame(
        {"level": list(report.levels), "coverage": report.coverage}
    )
    return {
        "overall": overall,
        "conditional": conditional,
        "lead": lead,
        "coverage": coverage,
    }


def long_frame(report: EvalReport) -> pd.DataFrame:
    """Plot-ready long format: (metric, stratum, lead_minute, value)."""
    records = [
        ("rmse", "all", None, report.overall_rmse),
        ("crps", "all", None, report.overall_crps),
        ("crossing_rate", "all", None, report.crossing_rate),
    ]
    if report.n_high:
        records.append(("rmse", "high", None, report.high_rmse))
        records.append(("crps", "high", None, report.high_crps))
    for m in range(1, N_LEAD_MINUTES + 1):
        if report.lead_counts[m - 1]:
            records.append(("rmse", "all", m, report.lead_rmse[m - 1]))
            records.append(("crps", "all", m, report.lead_crps[m - 1]))
    for level, cov in zip(report.levels, report.coverage):
        records.append(("coverage", f"q{level:g}", None, float(cov)))
    return pd.DataFrame(
        records, columns=["metric", "stratum", "lead_minute", "value"]
    )
