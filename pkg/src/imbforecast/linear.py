"""Linear multi-quantile baseline: one affine map, no hidden layers.

The flattened window (all timesteps of all input columns) feeds a single
dense layer emitting every horizon and quantile at once. Categorical
time codes are standardized numerically instead of embedded, so the
whole model stays exactly affine in its inputs.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .nn import Dense
from .schema import FeatureSchema
from .vsn import ModelConfig, calibrated_quantile_bias


class QuantileLinear:
    """Affine quantile regressor sharing the network model's interfaces."""

    def __init__(self, config: ModelConfig, schema: FeatureSchema, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.schema = schema
        n_in = schema.n_inputs
        self.dense = Dense(config.n_steps * n_in, config.n_out * len(config.quantiles), rng)
        self.dense.bias[:] = np.tile(calibrated_quantile_bias(config.quantiles), config.n_out)
        # code-column normalization, identity for already standardized columns
        self.code_mean = np.zeros(n_in)
        self.code_std = np.ones(n_in)
        self._cat_cols = []
        col = 0
        self._src_by_feature: dict[str, list[int]] = {}
        for f in schema.features:
            self._src_by_feature[f.name] = [col]
            if f.kind == "categorical":
                self._cat_cols.append(col)
            col += 1
            if f.has_delta:
                self._src_by_feature[f.name].append(col)
                col += 1
        self.set_zeroed_features(config.zeroed_features)

    def set_zeroed_features(self, names) -> None:
        names = tuple(names)
        zero_cols: list[int] = []
        for name in names:
            if name not in self.schema:
                raise ValueError(f"zeroed feature {name!r} not in schema")
            zero_cols.extend(self._src_by_feature[name])
        self.config = replace(self.config, zeroed_features=names)
        self._zero_cols = np.asarray(sorted(zero_cols), dtype=np.int64)

    def fit_normalization(self, batches) -> None:
        """Fit mean/std of the categorical code columns from input batches."""
        if not self._cat_cols:
            return
        cols = np.asarray(self._cat_cols)
        count = 0
        total = np.zeros(cols.size)
        total_sq = np.zeros(cols.size)
        for x in batches:
            vals = x[:, :, cols]
            count += vals.shape[0] * vals.shape[1]
            total += vals.sum(axis=(0, 1))
            total_sq += (vals**2).sum(axis=(0, 1))
        if count == 0:
            raise ValueError("cannot fit code normalization on empty input")
        mean = total / count
        var = np.maximum(total_sq / count - mean**2, 0.0)
        std = np.sqrt(var)
        self.code_mean[cols] = mean
        self.code_std[cols] = np.where(std > 1e-12, std, 1.0)

    def forward(self, x: np.ndarray, training: bool = False):
        if x.shape[1:] != (self.config.n_steps, self.schema.n_inputs):
            raise ValueError(
                f"expected (batch, {self.config.n_steps}, {self.schema.n_inputs}), "
                f"got {x.shape}"
            )
        if self._zero_cols.size:
            x = x.copy()
            x[:, :, self._zero_cols] = 0.0
        xs = (x - self.code_mean) / self.code_std
        b = x.shape[0]
        out = self.dense.forward(xs.reshape(b, -1))
        return out.reshape(b, self.config.n_out, len(self.config.quantiles)), None

    def backward(self, d_out: np.ndarray) -> None:
        self.dense.backward(d_out.reshape(d_out.shape[0], -1))

    def named_params(self) -> list:
        return [
            ("linear/weights", self.dense.weights),
            ("linear/bias", self.dense.bias),
            ("norm/code_mean", self.code_mean),
            ("norm/code_std", self.code_std),
        ]

    def params(self) -> list:
        return [p for _, p in self.named_params()]

    def grads(self) -> list:
        return [
            self.dense.grad_weights,
            self.dense.grad_bias,
            np.zeros_like(self.code_mean),
            np.zeros_like(self.code_std),
        ]

    def zero_grad(self) -> None:
        self.dense.zero_grad()

    def trainable_mask(self) -> list:
        return [self.dense.trainable, self.dense.trainable, False, False]
