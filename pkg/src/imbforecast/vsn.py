"""Quantile forecasting network with constant-per-sample feature weights.

Each input feature's full window (all timesteps at once) runs through
its own gated residual block, giving one h-vector per feature. A
selection block sees the flattened window of every feature and emits one
softmax weight per feature, constant across timesteps, so the whole
forecast takes a single pass per sample. The weighted sum of feature
vectors feeds a two-layer head producing all horizons and quantile
levels jointly.

A per-timestep variant (weights recomputed at every step, output
flattened before the head) is kept for ablation comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .loss import QUANTILE_LEVELS
from .nn import Dense, EmbeddingTable, GrnBlock, GrnStack, relu, softmax, softmax_backward
from .pipeline import ScalerStats
from .schema import FeatureSchema


@dataclass(frozen=True)
class ModelConfig:
    n_steps: int = 15  # window length N_c
    n_out: int = 3  # forecast horizons
    quantiles: tuple = QUANTILE_LEVELS
    h: int = 10  # per-feature representation width
    h_hidden: int = 32  # internal dense width
    embed_dim: int = 5
    dropout: float = 0.1
    target_mode: str = "si"  # "si" or "dsi"
    zeroed_features: tuple = ()  # input features forced to 0 (standardized)

    def validate(self) -> None:
        if self.target_mode not in ("si", "dsi"):
            raise ValueError(f"unknown target mode {self.target_mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class QuantileForecast:
    values: np.ndarray  # (n_out, n_quantiles) in MW
    levels: tuple
    issue_timestamp: pd.Timestamp


def count_crossings(values: np.ndarray) -> int:
    """Number of (sample, horizon) rows whose quantiles are not sorted."""
    return int(np.sum(np.any(np.diff(values, axis=-1) < 0.0, axis=-1)))


class _Expander:
    """Maps raw input columns to the expanded matrix (embeddings applied)."""

    def __init__(self, schema: FeatureSchema, embed_dim: int, rng: np.random.Generator):
        self.embed_dim = embed_dim
        self.entries = []  # ("num", src, dst) or ("cat", src, dst_slice, table)
        self.embeddings: dict[str, EmbeddingTable] = {}
        self.feature_units: dict[str, list[int]] = {}
        self.feature_src_cols: dict[str, list[int]] = {}
        dst = 0
        src = 0
        for f in schema.features:
            units = []
            srcs = []
            if f.kind == "categorical":
                table = EmbeddingTable(f.vocab, embed_dim, rng)
                self.embeddings[f.name] = table
                self.entries.append(("cat", src, slice(dst, dst + embed_dim), table))
                units.extend(range(dst, dst + embed_dim))
                srcs.append(src)
                dst += embed_dim
                src += 1
            else:
                self.entries.append(("num", src, dst))
                units.append(dst)
                srcs.append(src)
                dst += 1
                src += 1
                if f.has_delta:
                    self.entries.append(("num", src, dst))
                    units.append(dst)
                    srcs.append(src)
                    dst += 1
                    src += 1
            self.feature_units[f.name] = units
            self.feature_src_cols[f.name] = srcs
        self.n_expanded = dst
        self.n_inputs = src

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, n_steps, _ = x.shape
        out = np.empty((b, n_steps, self.n_expanded))
        for entry in self.entries:
            if entry[0] == "num":
                _, src, dst = entry
                out[:, :, dst] = x[:, :, src]
            else:
                _, src, sl, table = entry
                codes = x[:, :, src].astype(np.int64).reshape(-1)
                out[:, :, sl] = table.forward(codes).reshape(b, n_steps, self.embed_dim)
        return out

    def backward(self, d_expanded: np.ndarray) -> None:
        for entry in self.entries:
            if entry[0] == "cat":
                _, _, sl, table = entry
                table.backward(d_expanded[:, :, sl].reshape(-1, self.embed_dim))


def calibrated_quantile_bias(levels) -> np.ndarray:
    """Starting output bias per quantile level, roughly the standard
    normal quantile via a scaled-logit approximation.

    Labels are standardized, so biasing each quantile output toward its
    marginal position gives the untrained model a calibrated spread and
    spares the outer quantiles a long drift from zero.
    """
    p = np.asarray(levels, dtype=np.float64)
    return 0.5516 * np.log(p / (1.0 - p))


class ConstantVsn:
    """The single-pass network: one feature weight vector per sample."""

    def __init__(self, config: ModelConfig, schema: FeatureSchema, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.schema = schema
        self.expander = _Expander(schema, config.embed_dim, rng)
        n_exp = self.expander.n_expanded
        n_steps = config.n_steps
        self.feature_grns = GrnStack(
            n_exp, n_steps, config.h, config.h_hidden, config.dropout, rng
        )
        self.selection = GrnBlock(
            n_steps * n_exp, n_exp, config.h_hidden, config.dropout, rng
        )
        self.head1 = Dense(config.h, config.h_hidden, rng)
        self.head2 = Dense(config.h_hidden, config.n_out * len(config.quantiles), rng)
        self.head2.bias[:] = np.tile(calibrated_quantile_bias(config.quantiles), config.n_out)
        self.set_zeroed_features(config.zeroed_features)

    def set_zeroed_features(self, names) -> None:
        """Change which input features forward forces to zero."""
        names = tuple(names)
        zero_cols: list[int] = []
        for name in names:
            if name not in self.schema:
                raise ValueError(f"zeroed feature {name!r} not in schema")
            if self.schema[name].kind == "categorical":
                raise ValueError(f"cannot zero categorical feature {name!r}")
            zero_cols.extend(self.expander.feature_src_cols[name])
        self.config = replace(self.config, zeroed_features=names)
        self._zero_cols = np.asarray(sorted(zero_cols), dtype=np.int64)

    @property
    def n_expanded(self) -> int:
        return self.expander.n_expanded

    def forward(self, x: np.ndarray, training: bool = False):
        """(B, n_steps, N_f) -> ((B, n_out, n_q), weights (B, N'_f))."""
        if x.shape[1:] != (self.config.n_steps, self.expander.n_inputs):
            raise ValueError(
                f"expected (batch, {self.config.n_steps}, {self.expander.n_inputs}), "
                f"got {x.shape}"
            )
        if self._zero_cols.size:
            x = x.copy()
            x[:, :, self._zero_cols] = 0.0
        xe = self.expander.forward(x)
        b = x.shape[0]
        feats = self.feature_grns.forward(np.swapaxes(xe, 1, 2), training)  # (B, F, h)
        logits = self.selection.forward(xe.reshape(b, -1), training)
        weights = softmax(logits)
        combined = np.einsum("bf,bfh->bh", weights, feats, optimize=True)
        pre = self.head1.forward(combined)
        hidden = relu(pre)
        out = self.head2.forward(hidden)
        self._cache = (feats, weights, pre)
        return out.reshape(b, self.config.n_out, len(self.config.quantiles)), weights

    def backward(self, d_out: np.ndarray) -> None:
        feats, weights, pre = self._cache
        b = d_out.shape[0]
        d_hidden = self.head2.backward(d_out.reshape(b, -1))
        d_pre = d_hidden * (pre > 0.0)
        d_combined = self.head1.backward(d_pre)
        d_weights = np.einsum("bh,bfh->bf", d_combined, feats, optimize=True)
        d_feats = weights[:, :, None] * d_combined[:, None, :]
        d_logits = softmax_backward(weights, d_weights)
        d_flat = self.selection.backward(d_logits)
        d_xe = d_flat.reshape(b, self.config.n_steps, self.n_expanded)
        d_xe = d_xe + np.swapaxes(self.feature_grns.backward(d_feats), 1, 2)
        self.expander.backward(d_xe)

    # parameter bookkeeping -------------------------------------------------
    def named_params(self) -> list:
        names = []
        arrays = []
        for fname, table in self.expander.embeddings.items():
            names.append(f"embed/{fname}")
            arrays.append(table.table)
        stack_names = [
            "w1", "b1", "w2", "b2", "wg", "bg", "wskip", "bskip", "ln_scale", "ln_shift"
        ]
        for n, p in zip(stack_names, self.feature_grns.params()):
            names.append(f"features/{n}")
            arrays.append(p)
        sel_names = [
            "w1/weights", "w1/bias", "w2/weights", "w2/bias", "gate/weights",
            "gate/bias", "skip/weights", "skip/bias", "ln_scale", "ln_shift",
        ]
        for n, p in zip(sel_names, self.selection.params()):
            names.append(f"select/{n}")
            arrays.append(p)
        for layer, tag in ((self.head1, "head1"), (self.head2, "head2")):
            names.append(f"{tag}/weights")
            arrays.append(layer.weights)
            names.append(f"{tag}/bias")
            arrays.append(layer.bias)
        return list(zip(names, arrays))

    def params(self) -> list:
        return [p for _, p in self.named_params()]

    def grads(self) -> list:
        out = [t.grad_table for t in self.expander.embeddings.values()]
        out.extend(self.feature_grns.grads())
        out.extend(self.selection.grads())
        for layer in (self.head1, self.head2):
            out.append(layer.grad_weights)
            out.append(layer.grad_bias)
        return out

    def zero_grad(self) -> None:
        for table in self.expander.embeddings.values():
            table.zero_grad()
        self.feature_grns.zero_grad()
        self.selection.zero_grad()
        self.head1.zero_grad()
        self.head2.zero_grad()

    def trainable_mask(self) -> list:
        """Per-parameter trainability, aligned with params()."""
        mask = []
        for table in self.expander.embeddings.values():
            mask.append(table.trainable)
        mask.extend([True] * len(self.feature_grns.params()))  # stack freezes per-unit
        mask.extend([self.selection.trainable] * len(self.selection.params()))
        mask.extend([self.head1.trainable] * 2)
        mask.extend([self.head2.trainable] * 2)
        return mask

    def feature_unit_indices(self, feature_name: str) -> list:
        """Expanded-unit indices carrying the named feature (value+delta)."""
        return list(self.expander.feature_units[feature_name])

    @property
    def eval_counts(self) -> dict:
        return {
            "feature_grns": self.feature_grns.eval_count,
            "selection": self.selection.eval_count,
        }


class PerStepVsn(ConstantVsn):
    """Ablation variant: weights recomputed at every timestep.

    Per-feature blocks map each scalar step to h, the per-step weighted
    sums are flattened to n_steps*h, and the head grows accordingly. Each
    block runs n_steps times per sample.
    """

    def __init__(self, config: ModelConfig, schema: FeatureSchema, rng: np.random.Generator):
        super().__init__(config, schema, rng)
        n_exp = self.expander.n_expanded
        self.feature_grns = GrnStack(n_exp, 1, config.h, config.h_hidden, config.dropout, rng)
        self.selection = GrnBlock(n_exp, n_exp, config.h_hidden, config.dropout, rng)
        self.head1 = Dense(config.n_steps * config.h, config.h_hidden, rng)

    def forward(self, x: np.ndarray, training: bool = False):
        if x.shape[1:] != (self.config.n_steps, self.expander.n_inputs):
            raise ValueError(
                f"expected (batch, {self.config.n_steps}, {self.expander.n_inputs}), "
                f"got {x.shape}"
            )
        if self._zero_cols.size:
            x = x.copy()
            x[:, :, self._zero_cols] = 0.0
        xe = self.expander.forward(x)
        b, n_steps, n_exp = xe.shape
        flat = xe.reshape(b * n_steps, n_exp)
        feats = self.feature_grns.forward(flat[:, :, None], training)  # (B*T, F, h)
        logits = self.selection.forward(flat, training)
        weights = softmax(logits)  # (B*T, F)
        combined = np.einsum("sf,sfh->sh", weights, feats, optimize=True)
        stacked = combined.reshape(b, n_steps * self.config.h)
        pre = self.head1.forward(stacked)
        hidden = relu(pre)
        out = self.head2.forward(hidden)
        self._cache = (feats, weights, pre)
        return (
            out.reshape(b, self.config.n_out, len(self.config.quantiles)),
            weights.reshape(b, n_steps, n_exp),
        )

    def backward(self, d_out: np.ndarray) -> None:
        feats, weights, pre = self._cache
        b = d_out.shape[0]
        n_steps = self.config.n_steps
        d_hidden = self.head2.backward(d_out.reshape(b, -1))
        d_pre = d_hidden * (pre > 0.0)
        d_stacked = self.head1.backward(d_pre)
        d_combined = d_stacked.reshape(b * n_steps, self.config.h)
        d_weights = np.einsum("sh,sfh->sf", d_combined, feats, optimize=True)
        d_feats = weights[:, :, None] * d_combined[:, None, :]
        d_logits = softmax_backward(weights, d_weights)
        d_flat = self.selection.backward(d_logits)
        d_flat = d_flat + self.feature_grns.backward(d_feats)[:, :, 0]
        self.expander.backward(d_flat.reshape(b, n_steps, self.n_expanded))


def predict_mw(
    model: ConstantVsn,
    inputs: np.ndarray,
    prev_qh_si: np.ndarray,
    scaler: ScalerStats,
):
    """De-standardized quantile forecasts in MW.

    Returns (values (B, n_out, n_q), weights, crossing row count). In
    delta mode the cumulative sum over horizons is anchored at the last
    completed quarter-hour's observed imbalance, per quantile.
    """
    out_std, weights = model.forward(inputs, training=False)
    mode = model.config.target_mode
    raw = scaler.destandardize_labels(out_std, mode)
    if mode == "dsi":
        raw = prev_qh_si[:, None, None] + np.cumsum(raw, axis=1)
    return raw, weights, count_crossings(raw)


def feature_weight(model: ConstantVsn, weights: np.ndarray, feature_name: str) -> np.ndarray:
    """Total selection weight a feature receives per sample."""
    units = model.feature_unit_indices(feature_name)
    return weights[..., units].sum(axis=-1)
