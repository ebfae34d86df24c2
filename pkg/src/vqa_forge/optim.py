"""Adam and the fixed-epoch training loop with per-epoch loss logging."""
import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ParameterError

log = logging.getLogger(__name__)


class Adam:
    """Adam with bias-corrected moments.

    Moments are keyed by parameter name and created lazily on the first step.
    ``step`` zeroes the gradients it consumed.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, checked=True):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.checked = checked
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params):
        if self.checked:
            for p in params:
                if not np.all(np.isfinite(p.grad)):
                    raise DivergenceError(f"non-finite gradient in {p.name} at step {self.t + 1}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in params:
            g = p.grad.astype(np.float64)
            m = self.m.get(p.name)
            if m is None:
                m = self.m[p.name] = np.zeros(p.value.shape)
                self.v[p.name] = np.zeros(p.value.shape)
            v = self.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.lr != 0:
                update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                p.value -= update.astype(p.value.dtype)
            p.zero_grad()


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float = field(compare=False)


@dataclass(eq=False)
class TrainLog:
    """Per-epoch losses. Wall-clock seconds are excluded from equality."""

    records: list = field(default_factory=list)

    def _key(self):
        # repr keeps NaN validation losses comparable and bit-exact
        return [(r.epoch, repr(r.train_loss), repr(r.val_loss)) for r in self.records]

    def __eq__(self, other):
        return isinstance(other, TrainLog) and self._key() == other._key()

    def __len__(self):
        return len(self.records)

    def append(self, record):
        expected = len(self.records) + 1
        if record.epoch != expected:
            raise ValueError(f"epoch {record.epoch} breaks contiguity (expected {expected})")
        self.records.append(record)

    @property
    def train_losses(self):
        return [r.train_loss for r in self.records]

    @property
    def val_losses(self):
        return [r.val_loss for r in self.records]

    def write_csv(self, path, record_time=True):
        """Header ``epoch,train_loss,val_loss,seconds``. With ``record_time=False``
        the seconds column is written as 0 so identical runs give identical files."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for r in self.records:
                secs = f"{r.seconds:.3f}" if record_time else "0"
                writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), secs])

    @classmethod
    def read_csv(cls, path):
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.append(EpochRecord(int(row["epoch"]), float(row["train_loss"]),
                                       float(row["val_loss"]), float(row["seconds"])))
        return out


def iterate_batches(n, batch_size, rng=None):
    """Index batches over ``n`` samples, shuffled when ``rng`` is given; the
    last partial batch is kept."""
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate_loss(model, data, batch_size=32):
    """Sample-weighted mean loss in inference mode; touches no parameters or statistics."""
    total = 0.0
    for idx in iterate_batches(len(data), batch_size):
        total += model.loss(data.batch(idx), training=False) * len(idx)
    return total / len(data)


def accuracy(model, data, batch_size=256):
    """Fraction of samples whose argmax (PAD excluded) equals the target."""
    hits = 0
    for idx in iterate_batches(len(data), batch_size):
        batch = data.batch(idx)
        probs = np.array(model.forward(batch, training=False), dtype=np.float64)
        probs[:, 0] = -np.inf
        hits += int(np.sum(probs.argmax(axis=1) == batch.targets))
    return hits / len(data)


def train(model, data, epochs, lr=1e-3, seed=0, batch_size=32, val_data=None, checked=True,
          optimizer=None, on_epoch=None):
    """Train ``model`` in place for a fixed number of epochs.

    Each epoch shuffles with a generator seeded from ``seed``, runs
    forward / cross-entropy / backward / Adam over every batch, then measures
    the validation loss in inference mode. Returns the :class:`TrainLog`.
    """
    if epochs < 0:
        raise ParameterError(f"epochs must be non-negative, got {epochs}")
    if len(data) == 0:
        raise ParameterError("training data is empty")
    vocab = model.config.vocab_size
    if data.targets is None or int(np.max(data.targets)) >= vocab:
        raise ParameterError("training data needs targets within the model output width")
    opt = optimizer or Adam(lr=lr, checked=checked)
    rng = np.random.default_rng(seed)
    history = TrainLog()
    model.zero_grad()
    for epoch in range(1, epochs + 1):
        start = time.perf_counter()
        total = 0.0
        for b, idx in enumerate(iterate_batches(len(data), batch_size, rng)):
            batch = data.batch(idx)
            loss = model.loss(batch, training=True, rng=rng)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            model.backward(targets=batch.targets)
            try:
                opt.step(model.params)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} (epoch {epoch}, batch {b})", epoch=epoch, batch=b) from exc
            total += loss * len(idx)
        train_loss = total / len(data)
        val_loss = evaluate_loss(model, val_data, batch_size) if val_data is not None and len(val_data) else math.nan
        record = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - start)
        history.append(record)
        log.info("epoch %d: train %.4f val %.4f (%.1fs)", epoch, train_loss, val_loss, record.seconds)
        if on_epoch is not None:
            on_epoch(record)
    return history
