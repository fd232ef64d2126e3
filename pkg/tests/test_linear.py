"""Checks for the affine quantile baseline."""

import numpy as np
import pytest

from imbforecast.linear import QuantileLinear
from imbforecast.loss import quantile_loss_grad
from imbforecast.schema import FeatureSchema, FeatureSpec
from imbforecast.vsn import ModelConfig


def small_schema() -> FeatureSchema:
    return FeatureSchema(
        [
            FeatureSpec("a", "system", "min", "past", has_delta=True),
            FeatureSpec("b", "exchange", "qh", "future"),
            FeatureSpec("cat", "time", "qh", "future", "categorical", vocab=7),
        ],
        target="b",
    )


def small_config(**overrides) -> ModelConfig:
    base = dict(n_steps=3, n_out=2, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


def sample_inputs(rng, n: int, n_steps: int = 3) -> np.ndarray:
    x = rng.normal(size=(n, n_steps, 4))
    x[:, :, 3] = rng.integers(0, 7, size=(n, n_steps))
    return x


def build(seed: int = 0, **config_overrides) -> QuantileLinear:
    return QuantileLinear(
        small_config(**config_overrides), small_schema(), np.random.default_rng(seed)
    )


class TestForward:
    def test_matches_matmul_oracle(self):
        model = build(1)
        rng = np.random.default_rng(2)
        x = sample_inputs(rng, 6)
        model.fit_normalization([x])
        out, aux = model.forward(x)
        assert aux is None
        xs = x.copy()
        xs[:, :, 3] = (x[:, :, 3] - model.code_mean[3]) / model.code_std[3]
        expected = xs.reshape(6, -1) @ model.dense.weights.T + model.dense.bias
        np.testing.assert_allclose(out, expected.reshape(6, 2, 9), atol=1e-12)

    def test_affine_in_inputs(self):
        model = build(3)
        rng = np.random.default_rng(4)
        x1 = sample_inputs(rng, 5)
        x2 = sample_inputs(rng, 5)
        model.fit_normalization([x1])
        alpha = 0.3
        mixed, _ = model.forward(alpha * x1 + (1.0 - alpha) * x2)
        out1, _ = model.forward(x1)
        out2, _ = model.forward(x2)
        np.testing.assert_allclose(mixed, alpha * out1 + (1.0 - alpha) * out2, atol=1e-9)

    def test_same_seed_same_params(self):
        a, b = build(9), build(9)
        for pa, pb in zip(a.params(), b.params()):
            np.testing.assert_array_equal(pa, pb)

    def test_shape_validation(self):
        model = build(0)
        with pytest.raises(ValueError, match="expected"):
            model.forward(np.zeros((2, 4, 4)))


class TestNormalization:
    def test_only_categorical_columns_fitted(self):
        model = build(5)
        rng = np.random.default_rng(6)
        x = sample_inputs(rng, 50)
        model.fit_normalization([x[:25], x[25:]])
        codes = x[:, :, 3]
        assert model.code_mean[3] == pytest.approx(codes.mean(), abs=1e-12)
        assert model.code_std[3] == pytest.approx(codes.std(), rel=1e-9)
        np.testing.assert_array_equal(model.code_mean[:3], 0.0)
        np.testing.assert_array_equal(model.code_std[:3], 1.0)

    def test_constant_code_column_gets_unit_std(self):
        model = build(7)
        x = sample_inputs(np.random.default_rng(8), 10)
        x[:, :, 3] = 4.0
        model.fit_normalization([x])
        assert model.code_mean[3] == 4.0
        assert model.code_std[3] == 1.0

    def test_empty_fit_rejected(self):
        model = build(0)
        with pytest.raises(ValueError, match="empty"):
            model.fit_normalization([])


class TestGradient:
    def test_finite_difference(self):
        model = build(11)
        rng = np.random.default_rng(12)
        x = sample_inputs(rng, 4)
        labels = rng.normal(size=(4, 2))
        model.fit_normalization([x])

        def loss_value():
            out, _ = model.forward(x, training=True)
            return quantile_loss_grad(out, labels, c=0.03)[0]

        out, _ = model.forward(x, training=True)
        _, dpred = quantile_loss_grad(out, labels, c=0.03)
        model.zero_grad()
        model.backward(dpred)
        grads = [g.copy() for g in model.grads()]
        eps = 1e-5
        pick = np.random.default_rng(13)
        for p, g in zip(model.params()[:2], grads[:2]):
            flat, gf = p.reshape(-1), g.reshape(-1)
            for j in pick.choice(flat.size, size=min(8, flat.size), replace=False):
                keep = flat[j]
                flat[j] = keep + eps
                hi = loss_value()
                flat[j] = keep - eps
                lo = loss_value()
                flat[j] = keep
                fd = (hi - lo) / (2.0 * eps)
                assert abs(fd - gf[j]) / max(abs(fd), abs(gf[j]), 1e-6) < 1e-4

    def test_normalization_stats_not_trainable(self):
        model = build(0)
        assert model.trainable_mask() == [True, True, False, False]
        names = [n for n, _ in model.named_params()]
        assert names == [
            "linear/weights", "linear/bias", "norm/code_mean", "norm/code_std"
        ]


class TestZeroedFeatures:
    def test_zeroing_matches_manual(self):
        masked = build(15, zeroed_features=("a",))
        plain = build(15)
        x = sample_inputs(np.random.default_rng(16), 4)
        x_zeroed = x.copy()
        x_zeroed[:, :, [0, 1]] = 0.0
        out_a, _ = masked.forward(x)
        out_b, _ = plain.forward(x_zeroed)
        np.testing.assert_array_equal(out_a, out_b)

    def test_unknown_feature_rejected(self):
        with pytest.raises(ValueError, match="not in schema"):
            build(0, zeroed_features=("ghost",))
