"""The text-QA encoder and the five VQA model configurations.

Model tags:

====  =============  ==========================================
tag   architecture   notes
====  =============  ==========================================
1     vqa-concat     word embedding + repeated visual vector
2     vqa-concat     tag 1 with batch normalization
3     vqa-concat     tag 1 trained at lr 1e-4
4     vqa-sentence   question LSTM + ReLU projection, sum merge
5     vqa-sentence   tag 4 with batch normalization
====  =============  ==========================================
"""
import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CompatibilityError, ConfigError, DimensionError, FormatError
from .layers import LSTM, BatchNorm, Dense, Dropout, Embedding, Merge, RepeatVector
from .numerics import check_finite, cross_entropy
from .text import PAD, UNK, UNK_TOKEN

ARCHITECTURES = ("text-qa", "vqa-concat", "vqa-sentence")
WEIGHT_MAGIC = b"VQAW"


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "vqa-sentence"
    vocab_size: int = 20000
    maxlen: int = 22
    embed_dim: int = 100
    lstm_units: int = 256
    visual_dim: int = 1024
    projection_dim: int = 256
    dropout_rate: float = 0.5
    merge_mode: str = "sum"
    batch_norm: bool = False
    story_maxlen: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        for name in ("vocab_size", "maxlen", "embed_dim", "lstm_units", "visual_dim", "projection_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.merge_mode not in ("sum", "concat"):
            raise ConfigError(f"unknown merge mode {self.merge_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


MODEL_TAGS = ("1", "2", "3", "4", "5", "text-qa")

# initial learning rate per tag
MODEL_LR = {"1": 1e-3, "2": 1e-3, "3": 1e-4, "4": 1e-4, "5": 1e-4, "text-qa": 1e-3}


def config_for_model(tag, **overrides):
    """The :class:`ModelConfig` a model tag stands for, with keyword overrides."""
    tag = str(tag)
    if tag in ("1", "2", "3"):
        base = ModelConfig(architecture="vqa-concat", lstm_units=100, merge_mode="concat",
                           batch_norm=tag == "2")
    elif tag in ("4", "5"):
        base = ModelConfig(architecture="vqa-sentence", lstm_units=256, merge_mode="sum", batch_norm=tag == "5")
    elif tag == "text-qa":
        base = ModelConfig(architecture="text-qa", embed_dim=100, lstm_units=100, dropout_rate=0.3,
                           merge_mode="sum")
    else:
        raise ConfigError(f"unknown model tag {tag!r}; expected one of {', '.join(MODEL_TAGS)}")
    return base.replace(**overrides)


class ModelGraph:
    """An ordered set of layers realizing one architecture.

    ``forward`` returns answer probabilities; ``backward`` consumes either the
    integer targets (fused softmax/cross-entropy gradient of the mean batch
    loss) or an explicit gradient with respect to the probabilities.
    """

    architecture = None

    def __init__(self, config, seed=0):
        if config.architecture != self.architecture:
            raise ConfigError(f"{type(self).__name__} needs architecture {self.architecture!r}, "
                              f"got {config.architecture!r}")
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.layers = []
        self._build(np.random.default_rng(seed))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("parameter names are not unique")
        if self.classifier.W.value.shape[1] != config.vocab_size:
            raise ConfigError("output width must equal the vocabulary size")

    def _add(self, layer):
        self.layers.append(layer)
        return layer

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def buffers(self):
        """Non-trainable state saved with the weights (batch-norm running statistics)."""
        out = {}
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                out[f"{layer.name}.running_mean"] = layer.running_mean
                out[f"{layer.name}.running_var"] = layer.running_var
        return out

    def state(self):
        state = {p.name: p.value for p in self.params}
        state.update(self.buffers())
        return state

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def forward(self, batch, training=False, rng=None):
        raise NotImplementedError

    def backward(self, targets=None, dprobs=None):
        if targets is not None:
            probs = self._probs
            dz = probs.astype(np.float64)
            dz[np.arange(len(targets)), targets] -= 1.0
            dz /= len(targets)
            dx = self.classifier.backward_pre(dz.astype(self.dtype))
        elif dprobs is not None:
            dx = self.classifier.backward(np.asarray(dprobs, dtype=self.dtype))
        else:
            raise ValueError("backward needs targets or dprobs")
        self._backward_body(dx)

    def _head(self, x):
        self._probs = self.classifier.forward(x)
        return self._probs

    def loss(self, batch, training=False, rng=None):
        """Mean cross-entropy of ``batch`` against its targets."""
        probs = self.forward(batch, training=training, rng=rng)
        return float(np.mean(cross_entropy(probs, batch.targets)))

    def count_layers(self, kind):
        return sum(isinstance(layer, kind) for layer in self.layers)


class TextQAModel(ModelGraph):
    """Story embedding summed per timestep with a repeated question encoding,
    then a second LSTM over the story."""

    architecture = "text-qa"

    def _build(self, rng):
        c, dt = self.config, self.dtype
        if c.embed_dim != c.lstm_units:
            raise ConfigError(f"text-qa sums story embeddings with the question encoding: "
                              f"embed_dim {c.embed_dim} must equal lstm_units {c.lstm_units}")
        self.story_embedding = self._add(Embedding("story_embedding", c.vocab_size, c.embed_dim, rng, dt))
        self.question_embedding = self._add(Embedding("question_embedding", c.vocab_size, c.embed_dim, rng, dt))
        self.question_lstm = self._add(LSTM("question_lstm", c.embed_dim, c.lstm_units, rng, dt))
        self.repeat = self._add(RepeatVector(max(1, c.story_maxlen), "repeat_question"))
        self.merge = self._add(Merge("sum"))
        self.story_lstm = self._add(LSTM("story_lstm", c.embed_dim, c.lstm_units, rng, dt))
        self.dropout = self._add(Dropout(c.dropout_rate, "dropout"))
        self.classifier = self._add(Dense("classifier", c.lstm_units, c.vocab_size, rng, "softmax", dt))

    def forward(self, batch, training=False, rng=None):
        story = batch.story
        s = self.story_embedding.forward(story)
        qv = self.question_lstm.forward(self.question_embedding.forward(batch.question), batch.question.mask)
        self.repeat.n = story.tokens.shape[1]
        merged = self.merge.forward(s, self.repeat.forward(qv))
        enc = self.dropout.forward(self.story_lstm.forward(merged, story.mask), training, rng)
        return self._head(enc)

    def _backward_body(self, d):
        d = self.dropout.backward(d)
        ds, dq = self.merge.backward(self.story_lstm.backward(d))
        dq = self.question_lstm.backward(self.repeat.backward(dq))
        self.question_embedding.backward(dq)
        self.story_embedding.backward(ds)


class VQAConcatModel(ModelGraph):
    """Question word embeddings concatenated per timestep with the repeated
    visual vector, encoded by one LSTM."""

    architecture = "vqa-concat"

    def _build(self, rng):
        c, dt = self.config, self.dtype
        width = c.embed_dim + c.visual_dim
        self.question_embedding = self._add(Embedding("question_embedding", c.vocab_size, c.embed_dim, rng, dt))
        self.repeat = self._add(RepeatVector(c.maxlen, "repeat_visual"))
        self.merge = self._add(Merge("concat"))
        self.batch_norm = self._add(BatchNorm("batch_norm", width, dt)) if c.batch_norm else None
        self.lstm = self._add(LSTM("lstm", width, c.lstm_units, rng, dt))
        self.dropout = self._add(Dropout(c.dropout_rate, "dropout"))
        self.classifier = self._add(Dense("classifier", c.lstm_units, c.vocab_size, rng, "softmax", dt))

    def forward(self, batch, training=False, rng=None):
        feats = np.asarray(batch.features, dtype=self.dtype)
        if feats.ndim != 2 or feats.shape[1] != self.config.visual_dim:
            raise DimensionError(f"visual features {feats.shape} do not match visual_dim {self.config.visual_dim}")
        q = self.question_embedding.forward(batch.question)
        self.repeat.n = q.shape[1]
        merged = self.merge.forward(q, self.repeat.forward(feats))
        if self.batch_norm is not None:
            merged = self.batch_norm.forward(merged, training, mask=batch.question.mask)
        h = self.lstm.forward(merged, batch.question.mask)
        return self._head(self.dropout.forward(h, training, rng))

    def _backward_body(self, d):
        d = self.lstm.backward(self.dropout.backward(d))
        if self.batch_norm is not None:
            d = self.batch_norm.backward(d)
        dq, dv = self.merge.backward(d)
        self.repeat.backward(dv)
        self.question_embedding.backward(dq)


class VQASentenceModel(ModelGraph):
    """Question sentence embedding summed with a ReLU projection of the visual vector."""

    architecture = "vqa-sentence"

    def _build(self, rng):
        c, dt = self.config, self.dtype
        if c.projection_dim != c.lstm_units:
            raise ConfigError(f"vqa-sentence sums the question encoding with the projected image: "
                              f"projection_dim {c.projection_dim} must equal lstm_units {c.lstm_units}")
        self.question_embedding = self._add(Embedding("question_embedding", c.vocab_size, c.embed_dim, rng, dt))
        self.lstm = self._add(LSTM("question_lstm", c.embed_dim, c.lstm_units, rng, dt))
        self.projection = self._add(Dense("visual_projection", c.visual_dim, c.projection_dim, rng, "relu", dt))
        self.merge = self._add(Merge("sum"))
        self.batch_norm = self._add(BatchNorm("batch_norm", c.lstm_units, dt)) if c.batch_norm else None
        self.dropout = self._add(Dropout(c.dropout_rate, "dropout"))
        self.classifier = self._add(Dense("classifier", c.lstm_units, c.vocab_size, rng, "softmax", dt))

    def forward(self, batch, training=False, rng=None):
        feats = np.asarray(batch.features, dtype=self.dtype)
        if feats.ndim != 2 or feats.shape[1] != self.config.visual_dim:
            raise DimensionError(f"visual features {feats.shape} do not match visual_dim {self.config.visual_dim}")
        qv = self.lstm.forward(self.question_embedding.forward(batch.question), batch.question.mask)
        merged = self.merge.forward(qv, self.projection.forward(feats))
        if self.batch_norm is not None:
            merged = self.batch_norm.forward(merged, training)
        return self._head(self.dropout.forward(merged, training, rng))

    def _backward_body(self, d):
        d = self.dropout.backward(d)
        if self.batch_norm is not None:
            d = self.batch_norm.backward(d)
        dq, dv = self.merge.backward(d)
        self.projection.backward(dv)
        self.question_embedding.backward(self.lstm.backward(dq))


_BUILDERS = {"text-qa": TextQAModel, "vqa-concat": VQAConcatModel, "vqa-sentence": VQASentenceModel}


def build_text_qa(config, seed=0):
    return TextQAModel(config, seed)


def build_vqa_concat(config, seed=0):
    return VQAConcatModel(config, seed)


def build_vqa_sentence(config, seed=0):
    return VQASentenceModel(config, seed)


def build_model(config, seed=0):
    return _BUILDERS[config.architecture](config, seed)


def predict(model, batch, vocab, diagnostics=None):
    """Answer words for ``batch`` in input order (inference mode, PAD never chosen).

    When a ``diagnostics`` dict is given, ``diagnostics["unk"]`` counts
    predictions that land on the unknown word.
    """
    probs = np.array(model.forward(batch, training=False), dtype=np.float64)
    probs[:, PAD] = -np.inf
    idx = probs.argmax(axis=1)
    if diagnostics is not None:
        diagnostics["unk"] = diagnostics.get("unk", 0) + int(np.sum(idx == UNK))
    return [UNK_TOKEN if i == UNK else vocab.decode(int(i)) for i in idx]


def save_weights(model, path):
    """Write ``VQAW``, a u32 header length, a JSON header, then raw little-endian tensors."""
    state = model.state()
    manifest = []
    for name, arr in state.items():
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.newbyteorder("<").str})
    header = json.dumps(
        {"architecture": model.architecture, "config": model.config.to_dict(), "tensors": manifest},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC + struct.pack("<I", len(header)) + header)
        for entry in manifest:
            fh.write(np.ascontiguousarray(state[entry["name"]], dtype=entry["dtype"]).tobytes())


def _read_weight_file(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != WEIGHT_MAGIC:
        raise FormatError(f"{path}: not a VQAW weight file")
    (hlen,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
        config = ModelConfig(**header["config"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from exc
    tensors = {}
    offset = 8 + hlen
    for entry in manifest:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(data):
            raise FormatError(f"{path}: truncated at tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(data, dtype=dt, count=count, offset=offset).reshape(entry["shape"])
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after the last tensor")
    return header["architecture"], config, tensors


def _config_diff(a, b):
    da, db = a.to_dict(), b.to_dict()
    return [k for k in da if da[k] != db[k]]


def load_weights(path, expected=None):
    """Rebuild a model from a weight file.

    ``expected`` (a :class:`ModelConfig` or a model) must match the stored
    configuration field for field, otherwise :class:`CompatibilityError` lists
    the differing fields.
    """
    arch, config, tensors = _read_weight_file(path)
    if expected is not None:
        want = expected.config if isinstance(expected, ModelGraph) else expected
        diff = _config_diff(want, config)
        if diff:
            raise CompatibilityError(f"{path}: configuration differs in {', '.join(diff)}", diff)
    model = build_model(config)
    if arch != model.architecture:
        raise CompatibilityError(f"{path}: architecture tag {arch!r} does not match config", ["architecture"])
    _assign(model, tensors, path)
    return model


def load_weights_into(model, path):
    """Load weights into an existing model; on any error the model is left untouched."""
    arch, config, tensors = _read_weight_file(path)
    diff = _config_diff(model.config, config)
    if arch != model.architecture and "architecture" not in diff:
        diff.insert(0, "architecture")
    if diff:
        raise CompatibilityError(f"{path}: configuration differs in {', '.join(diff)}", diff)
    _assign(model, tensors, path)
    return model


def _assign(model, tensors, path):
    state = model.state()
    if set(state) != set(tensors):
        raise CompatibilityError(f"{path}: tensor manifest does not match the model",
                                 sorted(set(state) ^ set(tensors)))
    for name, target in state.items():
        if target.shape != tensors[name].shape:
            raise CompatibilityError(f"{path}: tensor {name} has shape {tensors[name].shape}, "
                                     f"expected {target.shape}", [name])
    for name, target in state.items():
        target[...] = check_finite(tensors[name], name)
