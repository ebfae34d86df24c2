"""Synthetic corpora for tests, demos and the acceptance suite.

``write_babi_qa1`` emits stories in the bAbI line format with the same
structure as the single-supporting-fact task: four actors move between six
places and every third line asks where one of them is. ``make_vqa_fixture``
writes a tiny VQA split (questions, annotations, features) whose answers are a
fixed function of the image/question pair.
"""
import argparse
import os

import numpy as np

from .datasets import Annotation, FeatureStore, Question, write_annotations, write_questions

ACTORS = ("Mary", "John", "Sandra", "Daniel")
PLACES = ("bathroom", "hallway", "garden", "office", "kitchen", "bedroom")
MOVES = ("moved to", "went to", "journeyed to", "travelled to", "went back to")


def babi_qa1_lines(n_questions, seed=0, questions_per_story=5):
    rng = np.random.default_rng(seed)
    lines = []
    asked = 0
    while asked < n_questions:
        where = {}
        last_line = {}
        num = 0
        for _ in range(questions_per_story):
            if asked >= n_questions:
                break
            for _ in range(2):
                num += 1
                actor = ACTORS[rng.integers(len(ACTORS))]
                place = PLACES[rng.integers(len(PLACES))]
                move = MOVES[rng.integers(len(MOVES))]
                where[actor] = place
                last_line[actor] = num
                lines.append(f"{num} {actor} {move} the {place}.")
            num += 1
            known = sorted(where)
            actor = known[rng.integers(len(known))]
            lines.append(f"{num} Where is {actor}? \t{where[actor]}\t{last_line[actor]}")
            asked += 1
    return lines


def write_babi_qa1(path, n_questions=1000, seed=0):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(babi_qa1_lines(n_questions, seed)) + "\n")
    return path


SUBJECTS = ("cat", "dog", "man", "woman", "car", "bus", "tree", "ball", "cake", "boat")
COLORS = ("red", "blue", "green", "white", "black")
NUMBERS = ("1", "2", "3", "4")
QUESTION_FORMS = (
    ("is there a {s} in the picture?", "yes/no", ("yes", "no")),
    ("how many {s}s are there?", "number", NUMBERS),
    ("what color is the {s}?", "other", COLORS),
    ("is the {s} on the left?", "yes/no", ("yes", "no")),
)


def make_vqa_samples(n_images=16, questions_per_image=4, feature_dim=16, seed=0, first_qid=1):
    """Return ``(questions, annotations, feature store)`` for a synthetic split.

    Each question's canonical answer is drawn once per (image, question) pair;
    seven of the ten human answers agree with it.
    """
    rng = np.random.default_rng(seed)
    image_ids = [1000 + 7 * i for i in range(n_images)]
    feats = rng.normal(size=(n_images, feature_dim)).astype(np.float32)
    questions, annotations = [], []
    qid = first_qid
    for image_id in image_ids:
        forms = rng.choice(len(QUESTION_FORMS), size=questions_per_image, replace=questions_per_image > len(QUESTION_FORMS))
        subjects = rng.choice(len(SUBJECTS), size=questions_per_image)
        for form, subj in zip(forms, subjects):
            template, atype, answers = QUESTION_FORMS[form]
            text = template.format(s=SUBJECTS[subj])
            canonical = answers[rng.integers(len(answers))]
            others = [a for a in answers if a != canonical]
            humans = [canonical] * 7 + [others[rng.integers(len(others))] for _ in range(3)]
            rng.shuffle(humans)
            questions.append(Question(qid, image_id, text))
            annotations.append(Annotation(qid, atype, tuple(humans), canonical, image_id))
            qid += 1
    return questions, annotations, FeatureStore(image_ids, feats)


def make_vqa_fixture(directory, prefix="train", binary=False, **kwargs):
    """Write ``<prefix>_questions.json``, ``<prefix>_annotations.json`` and a
    feature file into ``directory``; returns the three paths."""
    questions, annotations, store = make_vqa_samples(**kwargs)
    qpath = os.path.join(directory, f"{prefix}_questions.json")
    apath = os.path.join(directory, f"{prefix}_annotations.json")
    fpath = os.path.join(directory, f"{prefix}_features.{'bin' if binary else 'jsonl'}")
    write_questions(questions, qpath)
    write_annotations(annotations, apath)
    if binary:
        store.save_binary(fpath)
    else:
        store.save_jsonl(fpath)
    return qpath, apath, fpath


def main(argv=None):
    parser = argparse.ArgumentParser(prog="python -m vqa_forge.synth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="what", required=True)
    b = sub.add_parser("babi", help="write a QA1-style bAbI file")
    b.add_argument("path")
    b.add_argument("--questions", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    v = sub.add_parser("vqa", help="write a synthetic VQA split")
    v.add_argument("directory")
    v.add_argument("--prefix", default="train")
    v.add_argument("--images", type=int, default=16)
    v.add_argument("--per-image", type=int, default=4)
    v.add_argument("--feature-dim", type=int, default=16)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--first-qid", type=int, default=1)
    v.add_argument("--binary", action="store_true")
    args = parser.parse_args(argv)
    if args.what == "babi":
        print(write_babi_qa1(args.path, args.questions, args.seed))
    else:
        os.makedirs(args.directory, exist_ok=True)
        for p in make_vqa_fixture(args.directory, args.prefix, args.binary, n_images=args.images,
                                  questions_per_image=args.per_image, feature_dim=args.feature_dim,
                                  seed=args.seed, first_qid=args.first_qid):
            print(p)


if __name__ == "__main__":
    main()
