import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqa_forge.datasets import Annotation
from vqa_forge.errors import ConsistencyError, FormatError, ParameterError, ParseError
from vqa_forge.evalmetric import (
    ResultRecord,
    evaluate,
    normalize_answer,
    question_accuracy,
    read_results,
    write_results,
)

# m for each of the 20 crafted questions, with its answer type
MATCHES = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 0, 1, 2, 3, 1, 2, 0, 10, 4]
TYPES = ["yes/no"] * 7 + ["number"] * 6 + ["other"] * 7


def exact_oracle(m):
    return min(Fraction(m, 3), Fraction(1))


def script_oracle(m):
    return min(Fraction(3 * m, 10), Fraction(1))


def crafted_fixture():
    annotations, results = [], []
    for qid, (m, t) in enumerate(zip(MATCHES, TYPES), start=100):
        humans = tuple(["blue"] * m + [f"other{k}" for k in range(10 - m)])
        annotations.append(Annotation(qid, t, humans, "blue"))
        results.append(ResultRecord(qid, "Blue"))  # normalization lowercases the prediction
    return results, annotations


def hand_report(oracle):
    per_type = {}
    for m, t in zip(MATCHES, TYPES):
        per_type.setdefault(t, []).append(oracle(m))
    overall = sum((oracle(m) for m in MATCHES), Fraction(0)) / len(MATCHES)
    return float(100 * overall), {t: float(100 * sum(v, Fraction(0)) / len(v)) for t, v in per_type.items()}


@pytest.mark.parametrize("m", range(11))
def test_accuracy_matches_rational_oracle(m):
    humans = ["x"] * m + ["y"] * (10 - m)
    assert question_accuracy("x", humans) == float(exact_oracle(m))
    assert question_accuracy("x", humans, "script") == float(script_oracle(m))


def test_accuracy_examples_and_errors():
    assert question_accuracy("no", ["yes"] * 10) == 0.0
    assert question_accuracy("yes", ["yes"] + ["no"] * 9) == pytest.approx(1 / 3)
    assert question_accuracy("yes", ["yes"] + ["no"] * 9, "script") == 0.3
    with pytest.raises(ParameterError):
        question_accuracy("yes", ["yes"] * 9)
    with pytest.raises(ParameterError):
        question_accuracy("yes", ["yes"] * 10, "lenient")


def test_accuracy_is_monotone_and_saturates():
    for variant in ("exact", "script"):
        vals = [question_accuracy("x", ["x"] * m + ["y"] * (10 - m), variant) for m in range(11)]
        assert vals == sorted(vals)
        assert set(vals[4:]) == {1.0}
    script = {question_accuracy("x", ["x"] * m + ["y"] * (10 - m), "script") for m in range(11)}
    assert script == {0.0, 0.3, 0.6, 0.9, 1.0}


@pytest.mark.parametrize("variant,oracle", [("exact", exact_oracle), ("script", script_oracle)])
def test_crafted_fixture_report(variant, oracle):
    results, annotations = crafted_fixture()
    report = evaluate(results, annotations, variant)
    overall, per_type = hand_report(oracle)
    assert report.overall == pytest.approx(overall, abs=1e-9)
    for t, v in per_type.items():
        assert report.per_type[t] == pytest.approx(v, abs=1e-9)
    weighted = sum(report.per_type[t] * report.counts[t] for t in report.counts) / len(results)
    assert report.overall == pytest.approx(weighted, abs=1e-9)
    assert report.counts == {"yes/no": 7, "number": 6, "other": 7}
    assert all(0.0 <= v <= 1.0 for v in report.per_question.values())


def test_two_question_mean():
    anns = [Annotation(1, "other", ("cat",) * 10, "cat"), Annotation(2, "other", ("cat",) * 10, "cat")]
    report = evaluate([ResultRecord(1, "the cat"), ResultRecord(2, "dog")], anns)
    assert report.overall == 50.0
    assert report.to_dict()["overall"] == 50.0


def test_all_yes_baseline_scores_below_its_yes_no_accuracy():
    anns = []
    for qid in range(12):
        if qid < 4:
            anns.append(Annotation(qid, "yes/no", ("yes",) * 10, "yes"))
        elif qid < 6:
            anns.append(Annotation(qid, "yes/no", ("no",) * 10, "no"))
        elif qid < 9:
            anns.append(Annotation(qid, "number", ("2",) * 10, "2"))
        else:
            anns.append(Annotation(qid, "other", ("red",) * 10, "red"))
    report = evaluate([ResultRecord(a.question_id, "yes") for a in anns], anns)
    assert report.per_type["yes/no"] == pytest.approx(400 / 6)
    assert report.overall < report.per_type["yes/no"]
    assert report.per_type["number"] == report.per_type["other"] == 0.0


def test_evaluate_errors():
    anns = [Annotation(1, "other", ("cat",) * 10, "cat")]
    with pytest.raises(FormatError):
        evaluate([ResultRecord(1, "cat"), ResultRecord(1, "dog")], anns)
    with pytest.raises(ConsistencyError, match="7"):
        evaluate([ResultRecord(7, "cat")], anns)


def test_report_table_layout():
    results, annotations = crafted_fixture()
    lines = evaluate(results, annotations).table("Model 4").splitlines()
    assert [c.strip() for c in lines[0].split("|")[1:]] == ["Yes/No", "Number", "Other", "Overall"]
    assert lines[1].startswith("Model 4")


@pytest.mark.parametrize("raw,expected", [
    ("The Cat", "cat"), ("two", "2"), ("A dog", "dog"), ("", ""), ("  Yes! ", "yes"),
    ("an apple and the pear", "apple and pear"), ("ten", "10"), ("red,", "red"),
])
def test_normalize_examples(raw, expected):
    assert normalize_answer(raw) == expected


@settings(max_examples=1000)
@given(st.text(alphabet=st.characters(codec="utf-8"), max_size=30))
def test_normalize_is_idempotent(raw):
    once = normalize_answer(raw)
    assert normalize_answer(once) == once


def test_results_round_trip(tmp_path):
    records = [ResultRecord(3, "yes"), ResultRecord(1, "two"), ResultRecord(2, "café")]
    p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
    write_results(records, p1)
    assert [r["question_id"] for r in json.loads(p1.read_text())] == [1, 2, 3]
    loaded = read_results(p1)
    write_results(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert sorted(loaded, key=lambda r: r.question_id) == sorted(records, key=lambda r: r.question_id)
    with pytest.raises(FormatError):
        write_results(records + [ResultRecord(1, "no")], p2)


def test_read_results_reports_bad_index(tmp_path):
    path = tmp_path / "r.json"
    path.write_text('[{"question_id": 1, "answer": "x"}, {"answer": "y"}]')
    with pytest.raises(ParseError, match="record 1"):
        read_results(path)
