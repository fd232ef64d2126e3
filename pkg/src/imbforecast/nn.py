"""Minimal differentiable building blocks with exact analytic gradients.

Everything runs on float64 numpy arrays. Layers cache the intermediates of
their last forward pass and consume them in ``backward``; calling backward
without a preceding forward raises. Gradients accumulate into per-parameter
buffers until ``zero_grad``.

Two GRN implementations exist on purpose: ``GrnBlock`` operates on a single
(batch, width) input and is used for the selection network, while
``GrnStack`` runs many independent GRNs at once over a (batch, feature,
width) input via batched einsums. Their equivalence is pinned by tests.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dense",
    "EmbeddingTable",
    "GrnBlock",
    "GrnStack",
    "Adam",
    "glorot_uniform",
    "elu",
    "elu_grad",
    "relu",
    "sigmoid",
    "softmax",
    "softmax_backward",
    "layer_norm",
    "layer_norm_backward",
]


def glorot_uniform(rng: np.random.Generator, out_width: int, in_width: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_width + out_width))
    return rng.uniform(-limit, limit, size=(out_width, in_width))


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(x))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def elu_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # d/dx ELU = 1 for x > 0, exp(x) = y + 1 otherwise
    return np.where(x > 0.0, 1.0, y + 1.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis."""
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient through softmax given its output ``y``."""
    inner = np.sum(dy * y, axis=-1, keepdims=True)
    return y * (dy - inner)


_LN_EPS = 1e-8


def layer_norm(x: np.ndarray):
    """Normalize the last axis to mean 0 / variance 1 (before scale/shift).

    Returns (xhat, inv_std) so backward can be computed without re-reducing.
    """
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.var(x, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    return (x - mu) * inv_std, inv_std


def layer_norm_backward(xhat: np.ndarray, inv_std: np.ndarray, dxhat: np.ndarray) -> np.ndarray:
    m1 = np.mean(dxhat, axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    return inv_std * (dxhat - m1 - xhat * m2)


class Dense:
    """Affine map y = x @ W.T + b with weights of shape (out, in)."""

    def __init__(self, in_width: int, out_width: int, rng: np.random.Generator):
        self.in_width = in_width
        self.out_width = out_width
        self.weights = glorot_uniform(rng, out_width, in_width)
        self.bias = np.zeros(out_width)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self.trainable = True
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_width:
            raise ValueError(
                f"dense expects input width {self.in_width}, got {x.shape[-1]}"
            )
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        self.grad_weights += dy.T @ self._x
        self.grad_bias += dy.sum(axis=0)
        return dy @ self.weights

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.grad_weights, self.grad_bias]

    def zero_grad(self):
        self.grad_weights[...] = 0.0
        self.grad_bias[...] = 0.0


class EmbeddingTable:
    """Lookup table mapping integer codes to learned vectors.

    Gradient flows only into the rows that were looked up.
    """

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.vocab_size = vocab_size
        self.dim = dim
        self.table = rng.normal(0.0, 0.05, size=(vocab_size, dim))
        self.grad_table = np.zeros_like(self.table)
        self.trainable = True
        self._codes = None

    def forward(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes)
        if codes.size and (codes.min() < 0 or codes.max() >= self.vocab_size):
            raise ValueError(
                f"embedding code outside vocabulary [0, {self.vocab_size})"
            )
        self._codes = codes
        return self.table[codes]

    def backward(self, dout: np.ndarray) -> None:
        if self._codes is None:
            raise RuntimeError("backward called before forward")
        np.add.at(self.grad_table, self._codes, dout)

    def params(self):
        return [self.table]

    def grads(self):
        return [self.grad_table]

    def zero_grad(self):
        self.grad_table[...] = 0.0


class _Dropout:
    """Inverted dropout; scaling happens at train time only."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) >= self.rate) / keep
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dy
        return dy * self._mask


class GrnBlock:
    """Gated residual network on (batch, in_width) inputs.

    output = LayerNorm( skip(x) + sigmoid(Wg @ eta) * eta )
    with eta = Dropout(W2 @ ELU(W1 @ x)). The skip path is the identity when
    input and output widths agree, otherwise a learned linear map.
    """

    def __init__(
        self,
        in_width: int,
        out_width: int,
        hidden_width: int,
        dropout: float,
        rng: np.random.Generator,
    ):
        self.in_width = in_width
        self.out_width = out_width
        self.w1 = Dense(in_width, hidden_width, rng)
        self.w2 = Dense(hidden_width, out_width, rng)
        self.gate = Dense(out_width, out_width, rng)
        self.skip = Dense(in_width, out_width, rng) if in_width != out_width else None
        self.ln_scale = np.ones(out_width)
        self.ln_shift = np.zeros(out_width)
        self.grad_ln_scale = np.zeros_like(self.ln_scale)
        self.grad_ln_shift = np.zeros_like(self.ln_shift)
        self.dropout = _Dropout(dropout, rng)
        self.trainable = True
        self.eval_count = 0
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        u1 = self.w1.forward(x)
        e = elu(u1)
        u2 = self.w2.forward(e)
        eta = self.dropout.forward(u2, training)
        a = self.gate.forward(eta)
        g = sigmoid(a)
        s = self.skip.forward(x) if self.skip is not None else x
        z = s + g * eta
        xhat, inv_std = layer_norm(z)
        self.eval_count += x.shape[0]
        self._cache = (u1, e, eta, g, xhat, inv_std)
        return xhat * self.ln_scale + self.ln_shift

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        u1, e, eta, g, xhat, inv_std = self._cache
        self.grad_ln_scale += np.sum(dy * xhat, axis=0)
        self.grad_ln_shift += np.sum(dy, axis=0)
        dz = layer_norm_backward(xhat, inv_std, dy * self.ln_scale)
        dg = dz * eta
        deta = dz * g
        da = dg * g * (1.0 - g)
        deta = deta + self.gate.backward(da)
        du2 = self.dropout.backward(deta)
        de = self.w2.backward(du2)
        du1 = de * elu_grad(u1, e)
        dx = self.w1.backward(du1)
        if self.skip is not None:
            dx = dx + self.skip.backward(dz)
        else:
            dx = dx + dz
        return dx

    def params(self):
        out = self.w1.params() + self.w2.params() + self.gate.params()
        if self.skip is not None:
            out += self.skip.params()
        return out + [self.ln_scale, self.ln_shift]

    def grads(self):
        out = self.w1.grads() + self.w2.grads() + self.gate.grads()
        if self.skip is not None:
            out += self.skip.grads()
        return out + [self.grad_ln_scale, self.grad_ln_shift]

    def zero_grad(self):
        self.w1.zero_grad()
        self.w2.zero_grad()
        self.gate.zero_grad()
        if self.skip is not None:
            self.skip.zero_grad()
        self.grad_ln_scale[...] = 0.0
        self.grad_ln_shift[...] = 0.0


class GrnStack:
    """``n_units`` independent GRNs evaluated in one batched pass.

    Input is (batch, n_units, in_width); every unit has its own parameters,
    stacked along the leading axis. Used for the per-feature branches, where
    looping over ~100 small GRNs per batch would dominate the runtime.

    ``frozen`` marks units whose parameters must not move: their gradient
    slices are zeroed in backward, which together with freshly reset Adam
    moments keeps them bit-identical through further training.
    """

    def __init__(
        self,
        n_units: int,
        in_width: int,
        out_width: int,
        hidden_width: int,
        dropout: float,
        rng: np.random.Generator,
    ):
        self.n_units = n_units
        self.in_width = in_width
        self.out_width = out_width
        self.hidden_width = hidden_width
        self.w1 = np.stack([glorot_uniform(rng, hidden_width, in_width) for _ in range(n_units)])
        self.b1 = np.zeros((n_units, hidden_width))
        self.w2 = np.stack([glorot_uniform(rng, out_width, hidden_width) for _ in range(n_units)])
        self.b2 = np.zeros((n_units, out_width))
        self.wg = np.stack([glorot_uniform(rng, out_width, out_width) for _ in range(n_units)])
        self.bg = np.zeros((n_units, out_width))
        self.wskip = np.stack([glorot_uniform(rng, out_width, in_width) for _ in range(n_units)])
        self.bskip = np.zeros((n_units, out_width))
        self.ln_scale = np.ones((n_units, out_width))
        self.ln_shift = np.zeros((n_units, out_width))
        self._grads = [np.zeros_like(p) for p in self.params()]
        self.dropout = _Dropout(dropout, rng)
        self.frozen = np.zeros(n_units, dtype=bool)
        self.trainable = True
        self.eval_count = 0
        self._cache = None

    def reinit_units(self, indices: np.ndarray, rng: np.random.Generator) -> None:
        """Re-draw the parameters of selected units from the init distribution."""
        for i in np.atleast_1d(indices):
            self.w1[i] = glorot_uniform(rng, self.hidden_width, self.in_width)
            self.b1[i] = 0.0
            self.w2[i] = glorot_uniform(rng, self.out_width, self.hidden_width)
            self.b2[i] = 0.0
            self.wg[i] = glorot_uniform(rng, self.out_width, self.out_width)
            self.bg[i] = 0.0
            self.wskip[i] = glorot_uniform(rng, self.out_width, self.in_width)
            self.bskip[i] = 0.0
            self.ln_scale[i] = 1.0
            self.ln_shift[i] = 0.0

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.shape[1] != self.n_units or x.shape[2] != self.in_width:
            raise ValueError(
                f"expected input (batch, {self.n_units}, {self.in_width}), got {x.shape}"
            )
        u1 = np.einsum("bfi,fhi->bfh", x, self.w1, optimize=True) + self.b1
        e = elu(u1)
        u2 = np.einsum("bfh,foh->bfo", e, self.w2, optimize=True) + self.b2
        eta = self.dropout.forward(u2, training)
        a = np.einsum("bfo,fpo->bfp", eta, self.wg, optimize=True) + self.bg
        g = sigmoid(a)
        s = np.einsum("bfi,foi->bfo", x, self.wskip, optimize=True) + self.bskip
        z = s + g * eta
        xhat, inv_std = layer_norm(z)
        self.eval_count += x.shape[0]
        self._cache = (x, u1, e, eta, g, xhat, inv_std)
        return xhat * self.ln_scale + self.ln_shift

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, u1, e, eta, g, xhat, inv_std = self._cache
        (gw1, gb1, gw2, gb2, gwg, gbg, gws, gbs, gls, glsh) = self._grads

        dz = layer_norm_backward(xhat, inv_std, dy * self.ln_scale)
        d_ls = np.sum(dy * xhat, axis=0)
        d_lsh = np.sum(dy, axis=0)

        dg = dz * eta
        deta = dz * g
        da = dg * g * (1.0 - g)
        d_wg = np.einsum("bfp,bfo->fpo", da, eta, optimize=True)
        d_bg = da.sum(axis=0)
        deta = deta + np.einsum("bfp,fpo->bfo", da, self.wg, optimize=True)

        du2 = self.dropout.backward(deta)
        d_w2 = np.einsum("bfo,bfh->foh", du2, e, optimize=True)
        d_b2 = du2.sum(axis=0)
        de = np.einsum("bfo,foh->bfh", du2, self.w2, optimize=True)
        du1 = de * elu_grad(u1, e)
        d_w1 = np.einsum("bfh,bfi->fhi", du1, x, optimize=True)
        d_b1 = du1.sum(axis=0)

        d_ws = np.einsum("bfo,bfi->foi", dz, x, optimize=True)
        d_bs = dz.sum(axis=0)

        dx = (
            np.einsum("bfh,fhi->bfi", du1, self.w1, optimize=True)
            + np.einsum("bfo,foi->bfi", dz, self.wskip, optimize=True)
        )

        if self.frozen.any():
            fr = self.frozen
            for d in (d_w1, d_b1, d_w2, d_b2, d_wg, d_bg, d_ws, d_bs, d_ls, d_lsh):
                d[fr] = 0.0
        gw1 += d_w1
        gb1 += d_b1
        gw2 += d_w2
        gb2 += d_b2
        gwg += d_wg
        gbg += d_bg
        gws += d_ws
        gbs += d_bs
        gls += d_ls
        glsh += d_lsh
        return dx

    def params(self):
        return [
            self.w1, self.b1, self.w2, self.b2, self.wg, self.bg,
            self.wskip, self.bskip, self.ln_scale, self.ln_shift,
        ]

    def grads(self):
        return self._grads

    def zero_grad(self):
        for g in self._grads:
            g[...] = 0.0


class Adam:
    """Adam with bias correction over a bound list of parameter arrays.

    Parameters are updated in place so layers keep pointing at the same
    storage. ``reset`` zeroes moments and the step counter.
    """

    def __init__(
        self,
        params: list[np.ndarray],
        learning_rate: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def reset(self) -> None:
        self.step_count = 0
        for m, v in zip(self.m, self.v):
            m[...] = 0.0
            v[...] = 0.0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match bound parameters")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
