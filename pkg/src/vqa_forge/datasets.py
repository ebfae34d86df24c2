"""Question/annotation/feature ingestion and sample assembly.

File formats:

* questions JSON: ``{"questions": [{"question_id", "image_id", "question"}, ...]}``
* annotations JSON: ``{"annotations": [{"question_id", "image_id", "answer_type",
  "multiple_choice_answer", "answers": [{"answer", "answer_id"} x 10]}, ...]}``
* features, JSON lines: one ``{"image_id": int, "features": [float, ...]}`` per line
* features, binary: ``b"VQAF"``, u32 count, u32 dim, then per record a u64
  image id and ``dim`` float32 values, all little-endian
"""
import json
import logging
import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConsistencyError, FormatError, NotFoundError, ParameterError, ParseError
from .layers import MaskedSequence
from .text import UNK, tokenize

log = logging.getLogger(__name__)

ANSWER_TYPES = ("yes/no", "number", "other")
FEATURE_MAGIC = b"VQAF"


@dataclass(frozen=True)
class Question:
    question_id: int
    image_id: int
    text: str


@dataclass(frozen=True)
class Annotation:
    question_id: int
    answer_type: str
    human_answers: tuple
    canonical_answer: str
    image_id: Optional[int] = None

    def __post_init__(self):
        if len(self.human_answers) != 10:
            raise ParseError(
                f"question {self.question_id}: expected exactly 10 human answers, got {len(self.human_answers)}"
            )


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON ({exc})") from exc


def _records(doc, key, path):
    if not isinstance(doc, dict) or not isinstance(doc.get(key), list):
        raise ParseError(f"{path}: expected an object with a {key!r} list")
    return doc[key]


def load_questions(path):
    questions = []
    seen = set()
    for i, rec in enumerate(_records(_read_json(path), "questions", path)):
        try:
            q = Question(int(rec["question_id"]), int(rec["image_id"]), str(rec["question"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: question record {i} is malformed ({exc!r})") from exc
        if q.question_id in seen:
            raise ParseError(f"{path}: question record {i} repeats question_id {q.question_id}")
        seen.add(q.question_id)
        questions.append(q)
    log.info("loaded %d questions from %s", len(questions), path)
    return questions


def load_annotations(path):
    anns = []
    for i, rec in enumerate(_records(_read_json(path), "annotations", path)):
        try:
            answers = tuple(str(a["answer"]) for a in rec["answers"])
            ann = Annotation(
                question_id=int(rec["question_id"]),
                answer_type=str(rec["answer_type"]),
                human_answers=answers,
                canonical_answer=str(rec["multiple_choice_answer"]),
                image_id=int(rec["image_id"]) if "image_id" in rec else None,
            )
        except ParseError as exc:
            raise ParseError(f"{path}: annotation record {i}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: annotation record {i} is malformed ({exc!r})") from exc
        anns.append(ann)
    if anns:
        mean_len = np.mean([len(tokenize(a.canonical_answer)) for a in anns])
        log.info("loaded %d annotations from %s (mean answer length %.2f words)", len(anns), path, mean_len)
    return anns


def write_questions(questions, path):
    doc = {"questions": [{"question_id": q.question_id, "image_id": q.image_id, "question": q.text} for q in questions]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def write_annotations(annotations, path):
    recs = []
    for a in annotations:
        recs.append({
            "question_id": a.question_id,
            "image_id": a.image_id,
            "answer_type": a.answer_type,
            "multiple_choice_answer": a.canonical_answer,
            "answers": [{"answer": ans, "answer_id": k + 1} for k, ans in enumerate(a.human_answers)],
        })
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"annotations": recs}, fh)


class FeatureStore:
    """Fixed-dimension float32 feature vectors keyed by image id."""

    def __init__(self, ids, matrix):
        matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        ids = [int(i) for i in ids]
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise FormatError(f"feature matrix {matrix.shape} does not match {len(ids)} ids")
        if not np.all(np.isfinite(matrix)):
            raise FormatError("feature vectors contain non-finite values")
        self._row = {}
        for r, image_id in enumerate(ids):
            if image_id in self._row:
                raise FormatError(f"duplicate image_id {image_id} in feature store")
            self._row[image_id] = r
        self.ids = ids
        self.matrix = matrix

    @property
    def dim(self):
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, image_id):
        return image_id in self._row

    def __getitem__(self, image_id):
        try:
            return self.matrix[self._row[image_id]]
        except KeyError:
            raise NotFoundError(f"image_id {image_id} not in feature store") from None

    def rows(self, image_ids):
        missing = [i for i in image_ids if i not in self._row]
        if missing:
            raise NotFoundError(f"image ids missing from feature store: {missing[:20]}")
        return self.matrix[[self._row[i] for i in image_ids]]

    def save_jsonl(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for image_id, vec in zip(self.ids, self.matrix):
                fh.write(json.dumps({"image_id": image_id, "features": [float(v) for v in vec]}) + "\n")

    def save_binary(self, path):
        rec = np.dtype([("id", "<u8"), ("f", "<f4", (self.dim,))])
        arr = np.empty(len(self.ids), dtype=rec)
        arr["id"] = self.ids
        arr["f"] = self.matrix
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC + struct.pack("<II", len(self.ids), self.dim))
            fh.write(arr.tobytes())


def _load_features_jsonl(path):
    ids, vecs, dim = [], [], None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                image_id = int(rec["image_id"])
                vec = [float(v) for v in rec["features"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed feature record ({exc!r})") from exc
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise FormatError(f"{path}:{lineno}: feature dimension {len(vec)} != {dim}")
            ids.append(image_id)
            vecs.append(vec)
    matrix = np.array(vecs, dtype=np.float32).reshape(len(ids), dim or 0)
    return FeatureStore(ids, matrix)


def _load_features_binary(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: not a VQAF feature file")
    count, dim = struct.unpack_from("<II", data, 4)
    rec = np.dtype([("id", "<u8"), ("f", "<f4", (dim,))])
    if len(data) - 12 != count * rec.itemsize:
        raise FormatError(f"{path}: expected {count} records of dim {dim}, file size disagrees")
    arr = np.frombuffer(data, dtype=rec, offset=12, count=count)
    return FeatureStore(arr["id"].tolist(), arr["f"])


def load_features(path):
    """Load a feature store, detecting the binary format by its magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    store = _load_features_binary(path) if head == FEATURE_MAGIC else _load_features_jsonl(path)
    log.info("loaded %d feature vectors of dim %d from %s", len(store), store.dim, path)
    return store


@dataclass
class Batch:
    """Model input. VQA models read ``question`` and ``features``; the text
    model reads ``question`` and ``story``."""

    question: MaskedSequence
    features: Optional[np.ndarray] = None
    story: Optional[MaskedSequence] = None
    targets: Optional[np.ndarray] = None

    def __len__(self):
        return self.question.tokens.shape[0]


class VQADataset:
    """Immutable encoded samples; ``targets``/``answer_types`` are None for a test split."""

    def __init__(self, question_ids, image_ids, tokens, mask, features, targets=None, answer_types=None):
        self.question_ids = np.asarray(question_ids, dtype=np.int64)
        self.image_ids = np.asarray(image_ids, dtype=np.int64)
        self.tokens = np.asarray(tokens, dtype=np.int64)
        self.mask = np.asarray(mask, dtype=bool)
        self.features = np.asarray(features, dtype=np.float32)
        self.targets = None if targets is None else np.asarray(targets, dtype=np.int64)
        self.answer_types = None if answer_types is None else list(answer_types)
        n = len(self.question_ids)
        if not (self.tokens.shape[0] == self.features.shape[0] == n):
            raise ConsistencyError("dataset arrays disagree on sample count")

    def __len__(self):
        return len(self.question_ids)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def batch(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(
            question=MaskedSequence(self.tokens[idx], self.mask[idx]),
            features=self.features[idx],
            targets=None if self.targets is None else self.targets[idx],
        )

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return VQADataset(
            self.question_ids[idx],
            self.image_ids[idx],
            self.tokens[idx],
            self.mask[idx],
            self.features[idx],
            None if self.targets is None else self.targets[idx],
            None if self.answer_types is None else [self.answer_types[i] for i in idx],
        )

    @staticmethod
    def concat(a, b):
        if (a.targets is None) != (b.targets is None):
            raise ConsistencyError("cannot concatenate annotated and unannotated datasets")
        return VQADataset(
            np.concatenate([a.question_ids, b.question_ids]),
            np.concatenate([a.image_ids, b.image_ids]),
            np.concatenate([a.tokens, b.tokens]),
            np.concatenate([a.mask, b.mask]),
            np.concatenate([a.features, b.features]),
            None if a.targets is None else np.concatenate([a.targets, b.targets]),
            None if a.answer_types is None else a.answer_types + b.answer_types,
        )


def answer_target(vocab, answer):
    """Vocabulary index of the first token of ``answer`` (UNK when empty or unknown)."""
    tokens = tokenize(answer)
    return vocab.index(tokens[0]) if tokens else UNK


def assemble(questions, annotations, features, vocab, maxlen, answer_reduction="first-token"):
    """Encode questions and attach features and answer targets.

    With ``annotations=None`` the result is an unannotated (test split) dataset.
    ``answer_reduction="skip"`` drops questions whose canonical answer has more
    than one token instead of training on the first token.
    """
    if answer_reduction not in ("first-token", "skip"):
        raise ParameterError(f"unknown answer reduction {answer_reduction!r}")
    missing_images = sorted({q.image_id for q in questions if q.image_id not in features})
    if missing_images:
        raise ConsistencyError(f"feature store lacks image ids: {missing_images[:20]}")
    by_qid = None
    if annotations is not None:
        by_qid = {a.question_id: a for a in annotations}
        lacking = [q.question_id for q in questions if q.question_id not in by_qid]
        if lacking:
            raise ConsistencyError(f"no annotation for question ids: {lacking[:20]}")
        if answer_reduction == "skip":
            questions = [q for q in questions if len(tokenize(by_qid[q.question_id].canonical_answer)) <= 1]
    tokens, mask = vocab.encode_batch([tokenize(q.text) for q in questions], maxlen)
    feats = features.rows([q.image_id for q in questions]).reshape(len(questions), features.dim)
    targets = types = None
    if by_qid is not None:
        targets = [answer_target(vocab, by_qid[q.question_id].canonical_answer) for q in questions]
        types = [by_qid[q.question_id].answer_type for q in questions]
    return VQADataset(
        [q.question_id for q in questions], [q.image_id for q in questions], tokens, mask, feats, targets, types
    )


def split_plan(train, val, fraction, seed=0):
    """Move a seeded random ``fraction`` of ``val`` into ``train``.

    Returns ``(train', val')``; the two outputs partition the inputs exactly.
    """
    if not 0 <= fraction <= 1:
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    n = len(val)
    k = int(round(fraction * n))
    order = np.random.default_rng(seed).permutation(n)
    moved, kept = np.sort(order[:k]), np.sort(order[k:])
    return VQADataset.concat(train, val.subset(moved)), val.subset(kept)


class BabiSample(NamedTuple):
    story: list
    question: list
    answer: str


def load_babi(path, limit=None):
    """Parse a bAbI task file into ``(story tokens, question tokens, answer)`` samples.

    Each question sees every statement of the current story up to that line.
    """
    samples = []
    story = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            num, sep, rest = line.partition(" ")
            if not sep or not num.isdigit():
                raise ParseError(f"{path}:{lineno}: expected a line number")
            if int(num) == 1:
                story = []
            if "\t" in rest:
                parts = rest.split("\t")
                if len(parts) < 2 or not parts[1].strip():
                    raise ParseError(f"{path}:{lineno}: question line needs question<TAB>answer")
                samples.append(BabiSample([t for s in story for t in s], tokenize(parts[0]), parts[1].strip()))
                if limit is not None and len(samples) >= limit:
                    break
            else:
                story.append(tokenize(rest))
    return samples


class BabiDataset:
    """Encoded story/question/answer triples for the text model."""

    def __init__(self, samples, vocab, story_maxlen=None, question_maxlen=None):
        story_maxlen = story_maxlen or max(1, max((len(s.story) for s in samples), default=1))
        question_maxlen = question_maxlen or max(1, max((len(s.question) for s in samples), default=1))
        self.story_tokens, self.story_mask = vocab.encode_batch([s.story for s in samples], story_maxlen)
        self.tokens, self.mask = vocab.encode_batch([s.question for s in samples], question_maxlen)
        self.targets = np.array([answer_target(vocab, s.answer) for s in samples], dtype=np.int64)
        self.story_maxlen = story_maxlen
        self.question_maxlen = question_maxlen

    def __len__(self):
        return len(self.targets)

    def batch(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(
            question=MaskedSequence(self.tokens[idx], self.mask[idx]),
            story=MaskedSequence(self.story_tokens[idx], self.story_mask[idx]),
            targets=self.targets[idx],
        )
