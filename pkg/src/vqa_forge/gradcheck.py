"""Central finite-difference checks for every layer and every architecture.

All checks run in float64 at toy sizes. The error reported for a parameter
group is ``||analytic - numeric|| / (||analytic|| + ||numeric||)``; a check
passes when every group is below ``THRESHOLD``.
"""
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .datasets import Batch
from .layers import MaskedSequence
from .models import ModelConfig, build_model

STEP = 1e-5
THRESHOLD = 1e-4
TOY = dict(vocab_size=20, maxlen=4, embed_dim=8, lstm_units=8, visual_dim=8, projection_dim=8, dtype="float64")


@dataclass
class CheckResult:
    kind: str
    name: str
    group: str
    error: float

    @property
    def passed(self):
        return self.error < THRESHOLD


def numeric_gradient(f, x, h=STEP):
    """Central differences of scalar ``f()`` w.r.t. array ``x``, perturbed in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def _toy_mask(rng, B, T):
    # left-padded rows of random length 1..T, first row always padded when T > 1
    lengths = rng.integers(1, T + 1, size=B)
    if T > 1:
        lengths[0] = T - 1
    return np.arange(T)[None, :] >= (T - lengths)[:, None]


def _projection_check(name, layer, forward, inputs, rng):
    """Check ``loss = sum(R * forward())`` against the layer's backward pass.

    ``inputs`` maps group names to float arrays ``forward`` closes over;
    ``forward`` returns the output and ``backward`` must return the input
    gradients in the same order.
    """
    out = forward()
    R = rng.normal(size=np.shape(out))

    def loss():
        return float(np.sum(R * forward()))

    for p in layer.params:
        p.zero_grad()
    forward()
    dxs = layer.backward(R)
    if not isinstance(dxs, tuple):
        dxs = (dxs,)
    results = []
    for p in layer.params:
        analytic = p.grad.copy()
        results.append(CheckResult("layer", name, p.name, relative_error(analytic, numeric_gradient(loss, p.value))))
    for (group, x), dx in zip(inputs.items(), dxs):
        results.append(CheckResult("layer", name, group, relative_error(dx, numeric_gradient(loss, x))))
    return results


def check_embedding(rng):
    layer = L.Embedding("embedding", 7, 4, rng, np.float64)
    tokens = rng.integers(1, 7, size=(2, 5))
    mask = _toy_mask(rng, 2, 5)
    seq = MaskedSequence(np.where(mask, tokens, 0), mask)
    return _projection_check("embedding", layer, lambda: layer.forward(seq), {}, rng)


def check_lstm(rng):
    layer = L.LSTM("lstm", 3, 4, rng, np.float64)
    layer.b.value[:] = rng.normal(size=layer.b.value.shape)
    x = rng.normal(size=(2, 3, 3))
    mask = _toy_mask(rng, 2, 3)
    return _projection_check("lstm", layer, lambda: layer.forward(x, mask), {"x": x}, rng)


def check_dense(rng, activation):
    layer = L.Dense("dense", 5, 4, rng, activation, np.float64)
    layer.b.value[:] = rng.normal(size=4) * 0.1
    x = rng.normal(size=(3, 5))
    return _projection_check(f"dense[{activation}]", layer, lambda: layer.forward(x), {"x": x}, rng)


def check_batchnorm(rng, training, sequence=False):
    layer = L.BatchNorm("batchnorm", 4, np.float64)
    layer.gamma.value[:] = rng.uniform(0.5, 1.5, size=4)
    layer.beta.value[:] = rng.normal(size=4)
    layer.running_mean[:] = rng.normal(size=4)
    layer.running_var[:] = rng.uniform(0.5, 2.0, size=4)
    if sequence:
        x = rng.normal(size=(3, 4, 4))
        mask = _toy_mask(rng, 3, 4)
    else:
        x = rng.normal(size=(5, 4))
        mask = None
    name = f"batchnorm[{'train' if training else 'infer'}{', masked' if sequence else ''}]"
    return _projection_check(name, layer, lambda: layer.forward(x, training, mask), {"x": x}, rng)


def check_dropout(rng):
    layer = L.Dropout(0.4)
    x = rng.normal(size=(4, 6))
    return _projection_check("dropout", layer, lambda: layer.forward(x, True, np.random.default_rng(7)), {"x": x}, rng)


def check_repeat(rng):
    layer = L.RepeatVector(3)
    v = rng.normal(size=(2, 4))
    return _projection_check("repeat", layer, lambda: layer.forward(v), {"v": v}, rng)


def check_flatten(rng):
    layer = L.Flatten()
    x = rng.normal(size=(2, 3, 2))
    return _projection_check("flatten", layer, lambda: layer.forward(x), {"x": x}, rng)


def check_merge(rng, mode):
    layer = L.Merge(mode)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 3, 4 if mode == "sum" else 2))
    return _projection_check(f"merge[{mode}]", layer, lambda: layer.forward(a, b), {"a": a, "b": b}, rng)


LAYER_CHECKS = {
    "embedding": check_embedding,
    "lstm": check_lstm,
    "dense[none]": lambda rng: check_dense(rng, "none"),
    "dense[relu]": lambda rng: check_dense(rng, "relu"),
    "dense[softmax]": lambda rng: check_dense(rng, "softmax"),
    "batchnorm[train]": lambda rng: check_batchnorm(rng, True),
    "batchnorm[infer]": lambda rng: check_batchnorm(rng, False),
    "batchnorm[train, masked]": lambda rng: check_batchnorm(rng, True, sequence=True),
    "dropout": check_dropout,
    "repeat": check_repeat,
    "flatten": check_flatten,
    "merge[sum]": lambda rng: check_merge(rng, "sum"),
    "merge[concat]": lambda rng: check_merge(rng, "concat"),
}


def toy_batch(config, rng, batch=2, story_len=6):
    T = config.maxlen
    mask = _toy_mask(rng, batch, T)
    q = MaskedSequence(np.where(mask, rng.integers(2, config.vocab_size, size=(batch, T)), 0), mask)
    targets = rng.integers(2, config.vocab_size, size=batch)
    if config.architecture == "text-qa":
        smask = _toy_mask(rng, batch, story_len)
        story = MaskedSequence(np.where(smask, rng.integers(2, config.vocab_size, size=(batch, story_len)), 0), smask)
        return Batch(question=q, story=story, targets=targets)
    return Batch(question=q, features=rng.normal(size=(batch, config.visual_dim)), targets=targets)


def check_model(config, rng, name=None, seed=0):
    """End-to-end check of the mean cross-entropy in train mode (fixed dropout masks)."""
    model = build_model(config, seed=seed)
    for p in model.params:
        if p.name.endswith(".b") or p.name.endswith(".beta"):
            p.value[...] += rng.normal(size=p.value.shape) * 0.1
    batch = toy_batch(config, rng)

    def loss():
        return model.loss(batch, training=True, rng=np.random.default_rng(11))

    model.zero_grad()
    loss()
    model.backward(targets=batch.targets)
    results = []
    for p in model.params:
        analytic = p.grad.copy()
        err = relative_error(analytic, numeric_gradient(loss, p.value))
        results.append(CheckResult("model", name or config.architecture, p.name, err))
    return results


def model_checks():
    base = {
        "text-qa": ModelConfig(architecture="text-qa", dropout_rate=0.3, merge_mode="sum", **TOY),
        "vqa-concat": ModelConfig(architecture="vqa-concat", merge_mode="concat", **TOY),
        "vqa-sentence": ModelConfig(architecture="vqa-sentence", merge_mode="sum", **TOY),
    }
    base["vqa-concat+bn"] = base["vqa-concat"].replace(batch_norm=True)
    base["vqa-sentence+bn"] = base["vqa-sentence"].replace(batch_norm=True)
    return base


_CORRUPTIBLE = {
    "embedding": L.Embedding, "lstm": L.LSTM, "dense": L.Dense, "batchnorm": L.BatchNorm,
    "dropout": L.Dropout, "repeat": L.RepeatVector, "flatten": L.Flatten, "merge": L.Merge,
}


@contextmanager
def corrupted_backward(layer_kind, factor=1.1):
    """Fault injection: scale every gradient a layer kind's backward produces."""
    cls = _CORRUPTIBLE[layer_kind]
    original = cls.backward

    def bad_backward(self, dout):
        before = [p.grad.copy() for p in self.params]
        out = original(self, dout)
        for p, b in zip(self.params, before):
            p.grad[...] = b + factor * (p.grad - b)
        if isinstance(out, tuple):
            return tuple(factor * o for o in out)
        return None if out is None else factor * out

    cls.backward = bad_backward
    try:
        yield
    finally:
        cls.backward = original


def run_all(seed=0, corrupt=None, include_models=True):
    """Run every layer and architecture check; returns a list of :class:`CheckResult`."""
    rng = np.random.default_rng(seed)
    results = []
    ctx = corrupted_backward(corrupt) if corrupt else nullcontext()
    with ctx:
        for check in LAYER_CHECKS.values():
            results.extend(check(rng))
        if include_models:
            for name, config in model_checks().items():
                results.extend(check_model(config, rng, name))
    return results


def summarize(results):
    """Max error per (kind, name): list of ``(kind, name, max_error, passed)``."""
    table = {}
    for r in results:
        key = (r.kind, r.name)
        table[key] = max(table.get(key, 0.0), r.error)
    return [(k, n, e, e < THRESHOLD) for (k, n), e in table.items()]
