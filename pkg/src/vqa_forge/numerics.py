"""Dense tensor primitives: products, activations, loss and argmax.

Tensors are plain ``numpy.ndarray`` objects. Training runs in float32 storage,
gradient checks in float64; every function here preserves the input dtype.
"""
from contextlib import contextmanager

import numpy as np

from .errors import BoundsError, DimensionError, DivergenceError

LOG_CLAMP = 1e-12

_checked = False


@contextmanager
def checked_mode(enabled=True):
    """Enable NaN/Inf detection in :func:`check_finite` for the enclosed block."""
    global _checked
    previous = _checked
    _checked = enabled
    try:
        yield
    finally:
        _checked = previous


def is_checked():
    return _checked


def check_finite(x, what="tensor", force=False):
    if (force or _checked) and not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite values in {what}")
    return x


def as_tensor(x, dtype=np.float64):
    return np.ascontiguousarray(x, dtype=dtype)


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis``.

    Computed in at least float64 and cast back, so 20,000-way float32 outputs
    still sum to one well inside 1e-6.
    """
    x = np.asarray(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax: empty input of shape {x.shape}")
    work = x.astype(np.promote_types(x.dtype, np.float64), copy=False)
    shifted = work - work.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return out.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64, copy=False)


def cross_entropy(pred, target_index):
    """``-ln(pred[target])`` with the probability clamped to ``[1e-12, 1]``.

    ``pred`` may be a single distribution (returns a float) or a batch of rows
    with one target per row (returns the per-row losses).
    """
    pred = np.asarray(pred)
    target = np.asarray(target_index)
    n = pred.shape[-1]
    if np.any(target < 0) or np.any(target >= n):
        raise BoundsError(f"cross_entropy: target {target_index} outside [0, {n})")
    if pred.ndim == 1:
        p = pred[int(target)]
        return float(-np.log(np.clip(p, LOG_CLAMP, 1.0)))
    p = pred[np.arange(pred.shape[0]), target]
    return -np.log(np.clip(p.astype(np.float64), LOG_CLAMP, 1.0))


def sigmoid(x):
    # branch on sign so exp never overflows
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(x, 0)


def _binary(name, fn):
    def op(a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        if a.shape != b.shape:
            raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")
        return fn(a, b)

    return op


_OPS = {
    "add": _binary("add", np.add),
    "mul": _binary("mul", np.multiply),
    "tanh": np.tanh,
    "sigmoid": sigmoid,
    "relu": relu,
}


def elementwise(op, *args):
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_OPS)}") from None
    return fn(*args)


def argmax(x):
    """Index of the maximum; ties resolve to the lowest index."""
    x = np.asarray(x)
    if x.size == 0:
        raise DimensionError("argmax: empty input")
    return int(np.argmax(x))
