"""Weighted multi-quantile (pinball) loss.

Labels are expected in standardized units, so the magnitude weight
``1 + c * s**2`` is a function of how many standard deviations an imbalance
label sits away from the mean.
"""

from __future__ import annotations

import numpy as np

QUANTILE_LEVELS = (0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99)


def magnitude_weight(labels: np.ndarray, c: float) -> np.ndarray:
    """Per-label weight 1 + c*s^2; equals 1 exactly when s == 0 or c == 0."""
    labels = np.asarray(labels, dtype=np.float64)
    return 1.0 + c * labels**2


def pinball(labels: np.ndarray, preds: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Elementwise pinball loss q|s - p| when s > p, else (1-q)|s - p|.

    ``labels`` broadcasts against ``preds`` which carries a trailing
    quantile axis aligned with ``levels``.
    """
    diff = labels[..., None] - preds
    return np.where(diff > 0.0, levels * diff, (levels - 1.0) * diff)


def quantile_loss(
    preds: np.ndarray,
    labels: np.ndarray,
    c: float = 0.0,
    levels: np.ndarray | None = None,
) -> float:
    """Mean weighted pinball loss over (samples, horizons, quantiles).

    preds: (B, N_o, N_q) predicted quantiles, standardized.
    labels: (B, N_o) standardized labels.
    """
    if levels is None:
        levels = np.asarray(QUANTILE_LEVELS)
    per_term = pinball(labels, preds, levels)
    weights = magnitude_weight(labels, c)
    return float(np.mean(weights[..., None] * per_term))


def quantile_loss_grad(
    preds: np.ndarray,
    labels: np.ndarray,
    c: float = 0.0,
    levels: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Loss value plus its gradient with respect to ``preds``.

    At s == p the (1-q) branch of the subgradient is used, matching the
    "otherwise" case of the loss definition.
    """
    if levels is None:
        levels = np.asarray(QUANTILE_LEVELS)
    diff = labels[..., None] - preds
    weights = magnitude_weight(labels, c)[..., None]
    loss = float(np.mean(weights * np.where(diff > 0.0, levels * diff, (levels - 1.0) * diff)))
    # dL/dp = -q where s > p, (1-q) otherwise, scaled by weight and the mean.
    dpred = np.where(diff > 0.0, -levels, 1.0 - levels) * weights / preds.size
    return loss, dpred
