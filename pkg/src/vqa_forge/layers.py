"""Layers with hand-derived backward passes.

Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``ParamTensor.grad``. Calling
``backward`` without a preceding ``forward`` raises :class:`StateError`.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    BoundsError,
    DegenerateBatchError,
    DimensionError,
    ParameterError,
    StateError,
)
from .numerics import relu, softmax


@dataclass(eq=False)
class ParamTensor:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise DimensionError(f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self):
        self.grad[...] = 0


@dataclass
class MaskedSequence:
    """Left-padded token rows. ``mask`` is False exactly where ``tokens`` is PAD."""

    tokens: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.tokens.shape != self.mask.shape or self.tokens.ndim != 2:
            raise DimensionError(f"tokens {self.tokens.shape} and mask {self.mask.shape} must be equal 2-d shapes")

    @classmethod
    def from_tokens(cls, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        return cls(tokens, tokens != 0)

    def left_pad(self, k):
        """The same rows with ``k`` extra padding steps prepended."""
        b = self.tokens.shape[0]
        return MaskedSequence(
            np.concatenate([np.zeros((b, k), np.int64), self.tokens], axis=1),
            np.concatenate([np.zeros((b, k), bool), self.mask], axis=1),
        )


# initializers

def uniform_init(rng, shape, scale, dtype):
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def glorot_uniform(rng, shape, dtype):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def orthogonal(rng, shape, dtype):
    rows, cols = shape
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q[:rows, :cols], dtype=dtype)


class Layer:
    name = "layer"

    def __init__(self, name=None):
        if name is not None:
            self.name = name
        self._cache = None

    @property
    def params(self):
        return []

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called without a cached forward pass")
        return self._cache

    def clear_cache(self):
        self._cache = None

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Embedding(Layer):
    def __init__(self, name, vocab_size, dim, rng, dtype=np.float32, scale=0.05):
        super().__init__(name)
        self.table = ParamTensor(f"{name}.table", uniform_init(rng, (vocab_size, dim), scale, dtype))

    @property
    def params(self):
        return [self.table]

    def forward(self, seq):
        tokens, mask = seq.tokens, seq.mask
        V = self.table.value.shape[0]
        bad = (tokens < 0) | (tokens >= V)
        if bad.any():
            row, col = (int(i) for i in np.argwhere(bad)[0])
            raise BoundsError(
                f"{self.name}: token {int(tokens[row, col])} at position ({row}, {col}) outside vocabulary of size {V}"
            )
        out = self.table.value[tokens]
        out[~mask] = 0
        self._cache = (tokens, mask)
        return out

    def backward(self, dout):
        tokens, mask = self._need_cache()
        np.add.at(self.table.grad, tokens[mask], dout[mask].astype(self.table.grad.dtype))
        return None


class LSTM(Layer):
    """Non-stateful LSTM returning only its final hidden state.

    Gates are packed column-wise in the order input, forget, candidate, output,
    so ``W`` is ``d_in x 4H`` and ``U`` is ``H x 4H``. Masked timesteps carry the
    cell and hidden state through unchanged.
    """

    def __init__(self, name, d_in, units, rng, dtype=np.float32, forget_bias=1.0):
        super().__init__(name)
        H = units
        self.units = units
        self.W = ParamTensor(f"{name}.W", glorot_uniform(rng, (d_in, 4 * H), dtype))
        self.U = ParamTensor(
            f"{name}.U", np.concatenate([orthogonal(rng, (H, H), dtype) for _ in range(4)], axis=1)
        )
        b = np.zeros(4 * H, dtype=dtype)
        b[H:2 * H] = forget_bias
        self.b = ParamTensor(f"{name}.b", b)

    @property
    def params(self):
        return [self.W, self.U, self.b]

    def forward(self, x, mask):
        x = np.asarray(x)
        if x.ndim != 3:
            raise DimensionError(f"{self.name}: expected batch x T x d_in input, got {x.shape}")
        B, T, D = x.shape
        if T == 0:
            raise DimensionError(f"{self.name}: sequence length must be at least 1")
        if D != self.W.value.shape[0]:
            raise DimensionError(f"{self.name}: input width {D} != {self.W.value.shape[0]}")
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (B, T):
            raise DimensionError(f"{self.name}: mask {mask.shape} does not match input {x.shape}")
        dtype = self.W.value.dtype
        H = self.units
        xs = np.ascontiguousarray(x.transpose(1, 0, 2), dtype=dtype)
        m = np.ascontiguousarray(mask.T, dtype=np.uint8)
        hs = np.zeros((T + 1, B, H), dtype=dtype)
        cs = np.zeros_like(hs)
        acts = np.zeros((T, B, 4 * H), dtype=dtype)
        kernels.lstm_recurrence_forward(xs, self.W.value, self.U.value, self.b.value, m, hs, cs, acts)
        self._cache = (xs, m, hs, cs, acts)
        return hs[T].copy()

    def backward(self, dh):
        xs, m, hs, cs, acts = self._need_cache()
        dtype = self.W.value.dtype
        dh = np.ascontiguousarray(dh, dtype=dtype)
        dxs = np.zeros_like(xs)
        dW = np.zeros_like(self.W.value)
        dU = np.zeros_like(self.U.value)
        db = np.zeros_like(self.b.value)
        kernels.lstm_recurrence_backward(dh, xs, self.W.value, self.U.value, m, hs, cs, acts, dxs, dW, dU, db)
        self.W.grad += dW
        self.U.grad += dU
        self.b.grad += db
        return dxs.transpose(1, 0, 2)


class Dense(Layer):
    ACTIVATIONS = ("none", "relu", "softmax")

    def __init__(self, name, d_in, d_out, rng, activation="none", dtype=np.float32):
        super().__init__(name)
        if activation not in self.ACTIVATIONS:
            raise ParameterError(f"{name}: unknown activation {activation!r}")
        self.activation = activation
        self.W = ParamTensor(f"{name}.W", glorot_uniform(rng, (d_in, d_out), dtype))
        self.b = ParamTensor(f"{name}.b", np.zeros(d_out, dtype=dtype))

    @property
    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.W.value.shape[0]:
            raise DimensionError(f"{self.name}: input {x.shape} incompatible with weights {self.W.value.shape}")
        z = x @ self.W.value + self.b.value
        if self.activation == "relu":
            out = relu(z)
        elif self.activation == "softmax":
            out = softmax(z)
        else:
            out = z
        self._cache = (x, z, out)
        return out

    def backward(self, dout):
        _, z, out = self._need_cache()
        if self.activation == "relu":
            dz = dout * (z > 0)
        elif self.activation == "softmax":
            dz = out * (dout - (dout * out).sum(axis=1, keepdims=True))
        else:
            dz = dout
        return self.backward_pre(dz)

    def backward_pre(self, dz):
        """Backward from the gradient w.r.t. the pre-activation."""
        x, _, _ = self._need_cache()
        self.W.grad += x.T @ dz
        self.b.grad += dz.sum(axis=0)
        return dz @ self.W.value.T


class BatchNorm(Layer):
    """Per-feature batch normalization over the last axis.

    For ``batch x T x d`` input an optional mask restricts the batch
    statistics to real timesteps; padded positions are emitted as zero.
    """

    def __init__(self, name, dim, dtype=np.float32, momentum=0.99, eps=1e-5):
        super().__init__(name)
        self.momentum = momentum
        self.eps = eps
        self.gamma = ParamTensor(f"{name}.gamma", np.ones(dim, dtype=dtype))
        self.beta = ParamTensor(f"{name}.beta", np.zeros(dim, dtype=dtype))
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)

    @property
    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, training=False, mask=None):
        x = np.asarray(x)
        d = x.shape[-1]
        if d != self.gamma.value.shape[0]:
            raise DimensionError(f"{self.name}: feature width {d} != {self.gamma.value.shape[0]}")
        flat = x.reshape(-1, d)
        sel = np.ones(flat.shape[0], bool) if mask is None else np.asarray(mask, bool).reshape(-1)
        if training:
            valid = flat[sel]
            n = valid.shape[0]
            if n < 2:
                raise DegenerateBatchError(f"{self.name}: train mode needs at least 2 samples, got {n}")
            mu = valid.mean(axis=0)
            var = valid.var(axis=0)
            m = self.momentum
            self.running_mean[...] = m * self.running_mean + (1 - m) * mu
            self.running_var[...] = m * self.running_var + (1 - m) * var
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (flat - mu) * inv
        y = self.gamma.value * xhat + self.beta.value
        y[~sel] = 0
        self._cache = (xhat, inv, sel, training, x.shape)
        return y.reshape(x.shape).astype(x.dtype, copy=False)

    def backward(self, dout):
        xhat, inv, sel, training, shape = self._need_cache()
        dy = dout.reshape(-1, shape[-1])[sel]
        xh = xhat[sel]
        self.gamma.grad += (dy * xh).sum(axis=0)
        self.beta.grad += dy.sum(axis=0)
        dxhat = dy * self.gamma.value
        if training:
            n = dy.shape[0]
            dxv = inv / n * (n * dxhat - dxhat.sum(axis=0) - xh * (dxhat * xh).sum(axis=0))
        else:
            dxv = dxhat * inv
        dx = np.zeros((sel.shape[0], shape[-1]), dtype=dout.dtype)
        dx[sel] = dxv
        return dx.reshape(shape)


class Dropout(Layer):
    """Inverted dropout; identity in inference mode."""

    def __init__(self, rate, name="dropout"):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ParameterError(f"{name}: dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x)
        if not training or self.rate == 0:
            self._cache = None
            self._identity = True
            return x
        if rng is None:
            raise ParameterError(f"{self.name}: train mode needs an rng")
        keep = rng.random(x.shape) >= self.rate
        scale = np.asarray(1.0 / (1.0 - self.rate), dtype=x.dtype)
        self._identity = False
        self._cache = keep * scale
        return x * self._cache

    def backward(self, dout):
        if getattr(self, "_identity", None) is None:
            raise StateError(f"{self.name}: backward called without a cached forward pass")
        if self._identity:
            return dout
        return dout * self._cache


class RepeatVector(Layer):
    def __init__(self, n, name="repeat"):
        super().__init__(name)
        if n < 1:
            raise ParameterError(f"{name}: repeat count must be positive, got {n}")
        self.n = n

    def forward(self, v):
        v = np.asarray(v)
        self._cache = True
        return np.repeat(v[:, None, :], self.n, axis=1)

    def backward(self, dout):
        self._need_cache()
        return dout.sum(axis=1)


class Flatten(Layer):
    name = "flatten"

    def forward(self, x):
        x = np.asarray(x)
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._need_cache())


class Merge(Layer):
    def __init__(self, mode, name=None):
        super().__init__(name or f"merge_{mode}")
        if mode not in ("sum", "concat"):
            raise ParameterError(f"unknown merge mode {mode!r}")
        self.mode = mode

    def forward(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        if self.mode == "sum":
            if a.shape != b.shape:
                raise DimensionError(f"merge(sum): shapes {a.shape} and {b.shape} must be identical")
            self._cache = (a.shape[-1], b.shape[-1])
            return a + b
        if a.shape[:-1] != b.shape[:-1]:
            raise DimensionError(f"merge(concat): shapes {a.shape} and {b.shape} differ before the last axis")
        self._cache = (a.shape[-1], b.shape[-1])
        return np.concatenate([a, b], axis=-1)

    def backward(self, dout):
        da, _ = self._need_cache()
        if self.mode == "sum":
            return dout, dout
        return dout[..., :da], dout[..., da:]
