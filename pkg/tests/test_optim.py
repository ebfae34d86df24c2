import math

import numpy as np
import pytest

from vqa_forge.errors import DivergenceError, ParameterError
from vqa_forge.layers import ParamTensor
from vqa_forge.models import build_model, config_for_model
from vqa_forge.optim import Adam, EpochRecord, TrainLog, iterate_batches, train
from vqa_forge.datasets import assemble

# mpmath, 40 digits: theta=1, g=2, one step at lr=1e-3
FIRST_STEP_THETA = 0.999000000004999999975
# mpmath: first update for any gradient g=-0.5 at lr=1e-3
FIRST_STEP_UPDATE_NEG_HALF = -0.00099999998000000040


def quadratic_steps(n, theta=1.0, lr=0.1):
    p = ParamTensor("theta", np.array([theta]))
    opt = Adam(lr=lr)
    for _ in range(n):
        p.grad[...] = 2 * p.value
        opt.step([p])
    return float(p.value[0])


def test_first_step_matches_high_precision_value():
    assert quadratic_steps(1, lr=1e-3) == pytest.approx(FIRST_STEP_THETA, abs=1e-15)


def test_first_step_has_magnitude_lr():
    p = ParamTensor("w", np.array([0.0]))
    p.grad[...] = -0.5
    Adam(lr=1e-3).step([p])
    assert -p.value[0] == pytest.approx(FIRST_STEP_UPDATE_NEG_HALF, abs=1e-15)


def test_quadratic_descends():
    assert abs(quadratic_steps(200)) < 0.05
    assert abs(quadratic_steps(500)) < 1e-2


def test_zero_lr_is_identity_and_grads_are_consumed(rng):
    p = ParamTensor("w", rng.normal(size=(3, 3)))
    before = p.value.copy()
    p.grad[...] = rng.normal(size=(3, 3))
    opt = Adam(lr=0.0)
    opt.step([p])
    assert np.array_equal(p.value, before)
    assert not p.grad.any()
    assert opt.t == 1


def test_non_finite_gradient_raises_divergence():
    p = ParamTensor("w", np.zeros(2))
    p.grad[0] = np.nan
    with pytest.raises(DivergenceError, match="w"):
        Adam().step([p])


def test_moments_are_keyed_by_name():
    a, b = ParamTensor("a", np.zeros(1)), ParamTensor("b", np.zeros(1))
    opt = Adam()
    a.grad[...] = 1.0
    opt.step([a, b])
    assert set(opt.m) == {"a", "b"} and opt.m["b"][0] == 0.0


def test_iterate_batches_keeps_remainder(rng):
    sizes = [len(b) for b in iterate_batches(10, 4, rng)]
    assert sizes == [4, 4, 2]
    assert sorted(np.concatenate(list(iterate_batches(10, 4, rng))).tolist()) == list(range(10))


def test_train_log_contiguity_and_csv(tmp_path):
    log = TrainLog()
    log.append(EpochRecord(1, 1.0, math.nan, 0.25))
    with pytest.raises(ValueError):
        log.append(EpochRecord(3, 1.0, 1.0, 0.1))
    log.append(EpochRecord(2, 0.5, 0.75, 0.3))
    path = tmp_path / "log.csv"
    log.write_csv(path, record_time=False)
    assert path.read_text().splitlines() == [
        "epoch,train_loss,val_loss,seconds", "1,1.0,nan,0", "2,0.5,0.75,0",
    ]
    assert TrainLog.read_csv(path) == log


@pytest.fixture
def small_vqa(vqa_split, vqa_vocab):
    questions, annotations, store = vqa_split
    data = assemble(questions, annotations, store, vqa_vocab, 8)
    cfg = config_for_model("4", vocab_size=len(vqa_vocab), maxlen=8, embed_dim=8, lstm_units=8,
                           projection_dim=8, visual_dim=16)
    return data, cfg


def test_zero_epochs_leave_model_untouched(small_vqa):
    data, cfg = small_vqa
    model = build_model(cfg, seed=1)
    before = {k: v.copy() for k, v in model.state().items()}
    assert len(train(model, data, epochs=0)) == 0
    assert all(np.array_equal(before[k], v) for k, v in model.state().items())


def test_training_is_deterministic_and_reduces_loss(small_vqa):
    data, cfg = small_vqa
    logs, states = [], []
    for _ in range(2):
        model = build_model(cfg, seed=1)
        logs.append(train(model, data, epochs=5, lr=0.01, seed=9, batch_size=8, val_data=data))
        states.append(model.state())
    assert logs[0] == logs[1]
    assert all(np.array_equal(states[0][k], states[1][k]) for k in states[0])
    assert logs[0].train_losses[-1] < logs[0].train_losses[0]
    assert all(math.isfinite(v) for v in logs[0].val_losses)


def test_divergence_reports_epoch_and_batch(small_vqa):
    data, cfg = small_vqa
    model = build_model(cfg, seed=1)
    model.classifier.W.value[0, 0] = np.nan
    with pytest.raises(DivergenceError) as info:
        train(model, data, epochs=2)
    assert (info.value.epoch, info.value.batch) == (1, 0)


def test_train_rejects_bad_arguments(small_vqa):
    data, cfg = small_vqa
    model = build_model(cfg)
    with pytest.raises(ParameterError):
        train(model, data, epochs=-1)
    with pytest.raises(ParameterError):
        train(model, data.subset([]), epochs=1)
