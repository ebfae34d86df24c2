import numpy as np
import pytest

from vqa_forge.synth import make_vqa_fixture, make_vqa_samples
from vqa_forge.text import Vocabulary


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def vqa_split():
    """Synthetic (questions, annotations, feature store) with 8 images x 3 questions."""
    return make_vqa_samples(n_images=8, questions_per_image=3, feature_dim=16, seed=3)


@pytest.fixture
def vqa_vocab(vqa_split):
    questions, annotations, _ = vqa_split
    return Vocabulary.build([q.text for q in questions] + [a.canonical_answer for a in annotations], 50)


@pytest.fixture
def vqa_files(tmp_path):
    train = make_vqa_fixture(str(tmp_path), "train", n_images=8, questions_per_image=3, feature_dim=16, seed=3)
    val = make_vqa_fixture(str(tmp_path), "val", n_images=4, questions_per_image=3, feature_dim=16, seed=4,
                           first_qid=500)
    return {"dir": tmp_path, "train": train, "val": val}


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def acceptance(request):
    """Record ``(number, title) -> (passed, detail)`` for the terminal summary."""
    return request.config._acceptance


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = getattr(config, "_acceptance", {})
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), (passed, detail) in sorted(rows.items()):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {num}. {title}: {detail}")
