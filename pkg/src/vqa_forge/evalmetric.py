"""Consensus accuracy against ten human answers, result files and reports."""
import json
import string
from dataclasses import dataclass, field

from .datasets import ANSWER_TYPES
from .errors import ConsistencyError, FormatError, ParameterError, ParseError

ARTICLES = frozenset({"a", "an", "the"})
NUMBER_WORDS = {
    "zero": "0", "one": "1", "two": "2", "three": "3", "four": "4", "five": "5",
    "six": "6", "seven": "7", "eight": "8", "nine": "9", "ten": "10",
}
VARIANTS = ("exact", "script")

# official-script levels for 0, 1, 2, 3 and >= 4 matching humans
_SCRIPT_LEVELS = (0.0, 0.3, 0.6, 0.9, 1.0)


def normalize_answer(raw):
    """Lowercase, strip punctuation around each word, drop articles, map
    number words to digits and collapse whitespace."""
    out = []
    for tok in raw.lower().split():
        tok = tok.strip(string.punctuation)
        if not tok or tok in ARTICLES:
            continue
        out.append(NUMBER_WORDS.get(tok, tok))
    return " ".join(out)


def question_accuracy(predicted, human_answers, variant="exact"):
    """``min(m / 3, 1)`` for ``m`` matching humans (``exact``), or the
    official script's levels ``min(0.3 m, 1)`` (``script``)."""
    if len(human_answers) != 10:
        raise ParameterError(f"expected exactly 10 human answers, got {len(human_answers)}")
    m = sum(1 for a in human_answers if a == predicted)
    if variant == "exact":
        return min(m / 3, 1.0)
    if variant == "script":
        return _SCRIPT_LEVELS[min(m, 4)]
    raise ParameterError(f"unknown metric variant {variant!r}")


@dataclass(frozen=True)
class ResultRecord:
    question_id: int
    answer: str


@dataclass
class EvalReport:
    """Accuracies as percentages; ``per_question`` holds raw [0, 1] scores."""

    overall: float
    per_type: dict
    counts: dict
    per_question: dict = field(repr=False)
    variant: str = "exact"

    def to_dict(self):
        return {
            "variant": self.variant,
            "overall": round(self.overall, 2),
            "per_type": {k: round(v, 2) for k, v in self.per_type.items()},
            "counts": dict(self.counts),
            "per_question": {str(k): v for k, v in sorted(self.per_question.items())},
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def table(self, title="Model"):
        heads = ["Yes/No", "Number", "Other", "Overall"]
        vals = [self.per_type.get(t) for t in ANSWER_TYPES] + [self.overall]
        cells = ["-" if v is None else f"{v:.2f}" for v in vals]
        width = max(len(title), 5)
        lines = [
            f"{'':<{width}} | " + " | ".join(f"{h:>7}" for h in heads),
            f"{title:<{width}} | " + " | ".join(f"{c:>7}" for c in cells),
        ]
        return "\n".join(lines)


def evaluate(results, annotations, variant="exact"):
    """Score ``results`` against ``annotations`` after normalizing both sides."""
    if variant not in VARIANTS:
        raise ParameterError(f"unknown metric variant {variant!r}")
    seen = set()
    for r in results:
        if r.question_id in seen:
            raise FormatError(f"duplicate result for question_id {r.question_id}")
        seen.add(r.question_id)
    by_qid = {a.question_id: a for a in annotations}
    missing = sorted(r.question_id for r in results if r.question_id not in by_qid)
    if missing:
        raise ConsistencyError(f"no annotation for question ids: {missing[:20]}")
    per_question = {}
    sums, counts = {}, {}
    for r in sorted(results, key=lambda r: r.question_id):
        ann = by_qid[r.question_id]
        humans = [normalize_answer(a) for a in ann.human_answers]
        acc = question_accuracy(normalize_answer(r.answer), humans, variant)
        per_question[r.question_id] = acc
        sums[ann.answer_type] = sums.get(ann.answer_type, 0.0) + acc
        counts[ann.answer_type] = counts.get(ann.answer_type, 0) + 1
    n = len(per_question)
    overall = 100.0 * sum(per_question.values()) / n if n else 0.0
    per_type = {t: 100.0 * sums[t] / counts[t] for t in counts}
    return EvalReport(overall, per_type, counts, per_question, variant)


def write_results(records, path):
    """JSON array of ``{"question_id", "answer"}`` objects sorted by id."""
    ids = [r.question_id for r in records]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise FormatError(f"duplicate question ids in results: {dup[:20]}")
    doc = [{"question_id": int(r.question_id), "answer": r.answer} for r in sorted(records, key=lambda r: r.question_id)]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False)


def read_results(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(doc, list):
        raise ParseError(f"{path}: expected a JSON array of results")
    out = []
    for i, rec in enumerate(doc):
        try:
            out.append(ResultRecord(int(rec["question_id"]), str(rec["answer"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: result record {i} is malformed ({exc!r})") from exc
    return out

