"""Probabilistic power-grid system-imbalance forecasting.

A minute-cadence quantile forecaster for the system imbalance (SI) of a
control area: a feature-selecting neural network trained with a weighted
pinball loss, a diversity ensemble on top, and CRPS-based evaluation.
"""

__version__ = "0.1.0"
