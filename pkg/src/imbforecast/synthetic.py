"""Synthetic minute-resolution imbalance data for tests and experiments.

The generated process mixes a time-of-day seasonal shape, an AR(1)
minute component, contributions driven by generated covariates, and a
heavy-tailed spike component with a visible precursor (large nomination
ramps raise spike probability and bias the sign), so that high-magnitude
events are partly learnable. Roughly 1 to 2 percent of quarter-hours
exceed 500 MW in magnitude at the default spike scale; disabling spikes
drops that fraction below 0.1 percent.

Planted structure the tests rely on:

* ``xb_nom`` (known in advance) and its ramps drive the imbalance, so it
  is genuinely predictive and should attract selection weight.
* ``noise_cov`` never enters the imbalance equation.
* ``asset_nom`` announces activation blocks ahead of time with a large
  effect, making it the natural short-history feature for fine-tuning
  experiments; ``asset_output`` only reveals the current block.
* In ``nonlinear`` mode a threshold response and an interaction term are
  added, which a purely linear model cannot represent.
* ``linear_only`` strips spikes and non-linear terms for baseline sanity
  checks.

The quarter-hour imbalance is exactly the block mean of the minute
imbalance, so late-in-block forecasts can sharpen, mirroring how
settlement-period accuracy improves as the period progresses.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from .errors import DataError
from .ingest import MINUTES_PER_QH, FeatureTable, minute_of
from .schema import FeatureSchema, default_schema

QH_PER_DAY = 96
MINUTES_PER_DAY = 1440


@dataclass
class GeneratorConfig:
    n_days: int = 30
    seed: int = 0
    start: str = "2024-01-01"
    spike_scale: float = 1.0  # 0 disables the heavy-tail component
    nonlinear: bool = False  # add threshold/interaction terms
    linear_only: bool = False  # strictly linear covariate response, no spikes

    def validate(self) -> None:
        if self.n_days < 2:
            raise DataError("generator needs at least 2 days")
        if self.spike_scale < 0:
            raise DataError("spike_scale must be >= 0")
        if self.linear_only and self.nonlinear:
            raise DataError("linear_only and nonlinear are mutually exclusive")


def _ar1(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    shocks = rng.normal(0.0, sigma, n)
    out = np.empty(n)
    prev = shocks[0] / np.sqrt(1.0 - phi * phi)
    for i in range(n):
        prev = phi * prev + shocks[i]
        out[i] = prev
    return out


def _repeat_qh(series_qh: np.ndarray) -> np.ndarray:
    return np.repeat(series_qh, MINUTES_PER_QH)


def generate(config: GeneratorConfig, schema: FeatureSchema | None = None):
    """Build a feature table plus a parameter sidecar dict."""
    config.validate()
    if schema is None:
        schema = default_schema()
    rng = np.random.default_rng(config.seed)
    n_days = config.n_days
    n_qh = n_days * QH_PER_DAY
    n_min = n_days * MINUTES_PER_DAY
    start_minute = minute_of(config.start)
    if start_minute % MINUTES_PER_QH != 0:
        raise DataError("start timestamp must fall on a quarter-hour boundary")

    tod_min = (start_minute + np.arange(n_min)) % MINUTES_PER_DAY
    day_idx = np.arange(n_min) // MINUTES_PER_DAY
    qh_of_day = ((start_minute + np.arange(n_min)) // MINUTES_PER_QH) % QH_PER_DAY
    start_day = start_minute // MINUTES_PER_DAY
    doy = (start_day + np.arange(n_days)) % 365
    year_cos_day = np.cos(2.0 * np.pi * doy / 365.25)

    holiday_day = rng.random(n_days) < 0.045
    holiday_day[doy % 365 == 0] = True

    # covariates known in advance, one value per quarter-hour
    xb_nom = _ar1(rng, n_qh, 0.90, 110.0)
    dxb = np.diff(xb_nom, prepend=xb_nom[0])

    qh_shape = np.arange(n_qh) % QH_PER_DAY
    daylight = np.clip(np.sin(np.pi * (qh_shape - 24) / 48.0), 0.0, None)
    pv_amp = 800.0 * (0.55 + 0.25 * year_cos_day + 0.2 * rng.uniform(0.0, 1.0, n_days))
    pv_fc = np.repeat(pv_amp, QH_PER_DAY) * daylight + np.abs(_ar1(rng, n_qh, 0.8, 15.0))

    wind_fc = 500.0 + _ar1(rng, n_qh, 0.97, 55.0)
    load_shape = 1800.0 * (
        0.55 * np.sin(np.pi * (qh_shape - 20) / 52.0).clip(0.0)
        + 0.45 * np.exp(-0.5 * ((qh_shape - 74.0) / 9.0) ** 2)
    )
    weekend = ((start_day + np.arange(n_days)) % 7) >= 5  # synthetic week phase
    load_anom = _ar1(rng, n_qh, 0.95, 50.0)
    load_fc = (
        9500.0
        + load_shape
        - 700.0 * np.repeat(weekend, QH_PER_DAY)
        - 900.0 * np.repeat(holiday_day, QH_PER_DAY)
        + load_anom
    )

    # asset activation blocks: mostly zero, occasional multi-Qh excursions
    asset_nom = np.zeros(n_qh)
    g = 0
    while g < n_qh:
        if rng.random() < 0.02:
            duration = 1 + rng.geometric(0.25)
            level = rng.uniform(150.0, 450.0) * (1.0 if rng.random() < 0.5 else -1.0)
            asset_nom[g : g + duration] = level
            g += duration
        else:
            g += 1

    noise_cov = _ar1(rng, n_qh, 0.80, 100.0)

    # spike component with ramp precursor
    p_spike = 0.016 + 0.045 * np.clip(np.abs(dxb) / 250.0, 0.0, 1.2)
    occur = rng.random(n_qh) < p_spike
    raw_mag = np.abs(rng.standard_t(3, n_qh)) * 330.0
    precursor_sign = np.where(rng.random(n_qh) < 0.75, -np.sign(dxb), np.sign(rng.normal(size=n_qh)))
    sign = np.where(np.abs(dxb) > 150.0, precursor_sign, np.sign(rng.normal(size=n_qh)))
    sign = np.where(sign == 0.0, 1.0, sign)
    spike = occur * raw_mag * sign * config.spike_scale
    if config.linear_only:
        spike = np.zeros(n_qh)
    spike_eff = spike.copy()
    spike_eff[1:] += 0.55 * spike[:-1]
    spike_eff[2:] += 0.30 * spike[:-2]

    # covariate response at quarter-hour level
    cov_qh = -0.22 * xb_nom - 0.35 * dxb + 0.55 * asset_nom
    if config.nonlinear:
        # even-symmetric saturation: invisible to any linear map of the inputs
        cov_qh = cov_qh + 240.0 * np.tanh((np.abs(xb_nom) - 250.0) / 90.0)
        cov_qh = cov_qh + 0.0025 * xb_nom * load_anom

    # minute-level structure
    seasonal = (
        28.0 * np.sin(2.0 * np.pi * tod_min / MINUTES_PER_DAY - 1.1)
        + 16.0 * np.sin(4.0 * np.pi * tod_min / MINUTES_PER_DAY + 0.4)
    ) * (1.0 + 0.25 * year_cos_day[day_idx])
    ar_min = _ar1(rng, n_min, 0.97, 16.0)
    pv_err = _ar1(rng, n_min, 0.995, 4.0) * daylight[np.arange(n_min) // MINUTES_PER_QH]
    wind_err = _ar1(rng, n_min, 0.995, 5.0)
    load_err = _ar1(rng, n_min, 0.995, 6.0)
    white = rng.normal(0.0, 9.0, n_min)

    si_min = (
        seasonal
        + ar_min
        + _repeat_qh(cov_qh + spike_eff)
        - 0.5 * (pv_err + wind_err)
        + 0.45 * load_err
        + white
    )
    si_qh = si_min.reshape(n_qh, MINUTES_PER_QH).mean(axis=1)

    nrv_min = np.zeros(n_min)
    nrv_min[2:] = -0.85 * si_min[:-2]
    nrv_min += _ar1(rng, n_min, 0.90, 12.0)
    nrv_qh = nrv_min.reshape(n_qh, MINUTES_PER_QH).mean(axis=1)

    columns = {
        "si_qh": _repeat_qh(si_qh),
        "si_min": si_min,
        "nrv_qh": _repeat_qh(nrv_qh),
        "nrv_min": nrv_min,
        "xb_flow": _repeat_qh(xb_nom) + _ar1(rng, n_min, 0.9, 8.0),
        "pv_actual": _repeat_qh(pv_fc) + pv_err,
        "wind_actual": _repeat_qh(wind_fc) + wind_err,
        "load_actual": _repeat_qh(load_fc) + load_err,
        "asset_output": 0.9 * _repeat_qh(asset_nom) + _ar1(rng, n_min, 0.8, 6.0),
        "xb_nom": _repeat_qh(xb_nom),
        "pv_fc": _repeat_qh(pv_fc),
        "wind_fc": _repeat_qh(wind_fc),
        "load_fc": _repeat_qh(load_fc),
        "asset_nom": _repeat_qh(asset_nom),
        "noise_cov": _repeat_qh(noise_cov),
        "qh_of_day": qh_of_day.astype(np.float64),
        "min_of_hour": ((start_minute + np.arange(n_min)) % 60).astype(np.float64),
        "year_cos": year_cos_day[day_idx],
        "holiday": holiday_day[day_idx].astype(np.float64),
        "recentness": np.zeros(n_min),  # recomputed by the pipeline from the train span
    }
    missing = [n for n in schema.feature_names if n not in columns]
    if missing:
        raise DataError(f"generator does not produce schema features: {missing}")
    columns = {n: columns[n] for n in schema.feature_names}

    table = FeatureTable(start_minute=start_minute, columns=columns, schema=schema)
    sidecar = {
        "generator": asdict(config),
        "n_minutes": int(n_min),
        "spike_base_prob": 0.016,
        "spike_ramp_gain": 0.045,
        "spike_magnitude_scale": 330.0,
        "ar_minute_phi": 0.97,
        "covariate_gains": {"xb_nom": -0.22, "dxb": -0.35, "asset_nom": 0.55},
        "predictive_covariate": "xb_nom",
        "noise_covariate": "noise_cov",
        "short_history_feature": "asset_nom",
    }
    return table, sidecar


def timestamp_of_row(table: FeatureTable, row: int) -> pd.Timestamp:
    return pd.Timestamp(np.int64(table.start_minute + row), unit="m")
