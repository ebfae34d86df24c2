import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from vqa_forge import gradcheck as gc
from vqa_forge.errors import BoundsError, DegenerateBatchError, DimensionError, ParameterError, StateError
from vqa_forge.layers import (
    LSTM,
    BatchNorm,
    Dense,
    Dropout,
    Embedding,
    Flatten,
    MaskedSequence,
    Merge,
    ParamTensor,
    RepeatVector,
    orthogonal,
)


def test_param_tensor_grad_shape():
    p = ParamTensor("w", np.ones((2, 3)))
    assert p.grad.shape == (2, 3) and not p.grad.any()
    with pytest.raises(DimensionError):
        ParamTensor("w", np.ones(2), np.ones(3))


def test_masked_sequence_left_pad():
    seq = MaskedSequence.from_tokens([[0, 4, 5]])
    padded = seq.left_pad(2)
    assert padded.tokens.tolist() == [[0, 0, 0, 4, 5]]
    assert padded.mask.tolist() == [[False, False, False, True, True]]


# embedding

def test_embedding_identity_table_reproduces_one_hot(rng):
    layer = Embedding("e", 5, 5, rng, np.float64)
    layer.table.value[:] = np.eye(5)
    seq = MaskedSequence.from_tokens([[1, 2, 4]])
    np.testing.assert_array_equal(layer.forward(seq)[0], np.eye(5)[[1, 2, 4]])


def test_embedding_fully_padded_row_is_zero(rng):
    layer = Embedding("e", 5, 3, rng)
    out = layer.forward(MaskedSequence.from_tokens([[0, 0, 0], [0, 2, 3]]))
    assert not out[0].any()


def test_embedding_bounds_error_names_position(rng):
    layer = Embedding("e", 5, 3, rng)
    with pytest.raises(BoundsError, match=r"\(1, 2\)"):
        layer.forward(MaskedSequence.from_tokens([[1, 2, 3], [1, 2, 9]]))


def test_embedding_sum_gradient_matches_finite_differences(rng):
    layer = Embedding("e", 6, 3, rng, np.float64)
    seq = MaskedSequence.from_tokens([[0, 2, 2, 5], [1, 3, 4, 5]])

    def loss():
        return float(layer.forward(seq).sum())

    out = layer.forward(seq)
    layer.backward(np.ones_like(out))
    numeric = gc.numeric_gradient(loss, layer.table.value)
    np.testing.assert_allclose(layer.table.grad, numeric, rtol=1e-4, atol=1e-8)


# lstm

def test_lstm_zero_parameters_give_zero_output(rng):
    layer = LSTM("l", 3, 4, rng, np.float64, forget_bias=0.0)
    for p in layer.params:
        p.value[...] = 0
    out = layer.forward(rng.normal(size=(2, 5, 3)), np.ones((2, 5), bool))
    assert not out.any()


def test_lstm_rejects_empty_sequence(rng):
    layer = LSTM("l", 3, 4, rng)
    with pytest.raises(DimensionError):
        layer.forward(np.zeros((2, 0, 3)), np.zeros((2, 0), bool))


def test_lstm_backward_without_forward_is_state_error(rng):
    with pytest.raises(StateError):
        LSTM("l", 3, 4, rng).backward(np.zeros((1, 4)))


def test_lstm_zero_upstream_gradient(rng):
    layer = LSTM("l", 3, 4, rng, np.float64)
    layer.forward(rng.normal(size=(2, 3, 3)), np.ones((2, 3), bool))
    dx = layer.backward(np.zeros((2, 4)))
    assert not dx.any()
    assert all(not p.grad.any() for p in layer.params)


def test_forget_bias_and_orthogonal_init(rng):
    layer = LSTM("l", 3, 4, rng)
    assert layer.b.value[4:8].tolist() == [1.0] * 4
    assert not layer.b.value[:4].any() and not layer.b.value[8:].any()
    q = orthogonal(rng, (6, 6), np.float64)
    np.testing.assert_allclose(q @ q.T, np.eye(6), atol=1e-12)


def test_single_unit_cell_matches_symbolic_chain_rule():
    # one timestep, d_in = d_h = 1, zero initial state; loss = h
    x, wi, wf, wg, wo, bi, bf, bg, bo = sp.symbols("x wi wf wg wo bi bf bg bo")
    sig = lambda z: 1 / (1 + sp.exp(-z))  # noqa: E731
    c = sig(wi * x + bi) * sp.tanh(wg * x + bg)
    h = sig(wo * x + bo) * sp.tanh(c)
    values = {x: 0.7, wi: 0.3, wf: -0.4, wg: 0.9, wo: -0.2, bi: 0.1, bf: 0.5, bg: -0.3, bo: 0.2}

    layer = LSTM("l", 1, 1, np.random.default_rng(0), np.float64)
    layer.W.value[0] = [values[wi], values[wf], values[wg], values[wo]]
    layer.b.value[:] = [values[bi], values[bf], values[bg], values[bo]]
    out = layer.forward(np.array([[[values[x]]]]), np.ones((1, 1), bool))
    assert out[0, 0] == pytest.approx(float(h.subs(values)), abs=1e-14)
    dx = layer.backward(np.ones((1, 1)))

    expect_W = [float(sp.diff(h, s).subs(values)) for s in (wi, wf, wg, wo)]
    expect_b = [float(sp.diff(h, s).subs(values)) for s in (bi, bf, bg, bo)]
    np.testing.assert_allclose(layer.W.grad[0], expect_W, atol=1e-14)
    np.testing.assert_allclose(layer.b.grad, expect_b, atol=1e-14)
    assert expect_W[1] == 0.0  # forget gate is irrelevant with a zero initial cell
    assert dx[0, 0, 0] == pytest.approx(float(sp.diff(h, x).subs(values)), abs=1e-14)
    assert not layer.U.grad.any()


@pytest.mark.parametrize("seed", range(3))
def test_lstm_gradient_check_three_steps(seed):
    rng = np.random.default_rng(seed)
    for r in gc.check_lstm(rng):
        assert r.error < 1e-4, r


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_lstm_left_padding_is_bit_exact_noop(seed, k):
    rng = np.random.default_rng(seed)
    layer = LSTM("l", 4, 5, rng)
    lengths = rng.integers(0, 6, size=3)
    mask = np.arange(6)[None, :] >= (6 - lengths)[:, None]
    x = rng.normal(size=(3, 6, 4)).astype(np.float32)
    base = layer.forward(x, mask)
    xp = np.concatenate([rng.normal(size=(3, k, 4)).astype(np.float32), x], axis=1)
    mp = np.concatenate([np.zeros((3, k), bool), mask], axis=1)
    assert np.array_equal(layer.forward(xp, mp), base)


# dense

def test_dense_identity(rng):
    layer = Dense("d", 4, 4, rng, dtype=np.float64)
    layer.W.value[:] = np.eye(4)
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(layer.forward(x), x)


def test_dense_relu_projection_is_non_negative(rng):
    layer = Dense("proj", 1024, 256, rng, "relu")
    out = layer.forward(rng.normal(size=(4, 1024)).astype(np.float32))
    assert out.shape == (4, 256) and (out >= 0).all()


def test_dense_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        Dense("d", 4, 2, rng).forward(np.zeros((3, 5)))


@pytest.mark.parametrize("activation", ["none", "relu", "softmax"])
def test_dense_gradient_check(rng, activation):
    for r in gc.check_dense(rng, activation):
        assert r.error < 1e-4, r


# batch norm

def test_batchnorm_constant_batch_gives_beta(rng):
    layer = BatchNorm("bn", 3, np.float64)
    layer.beta.value[:] = [0.5, -1.0, 2.0]
    layer.gamma.value[:] = [3.0, 3.0, 3.0]
    out = layer.forward(np.full((4, 3), 7.0), training=True)
    # (x - mean) = 0 exactly, so the output collapses to beta
    np.testing.assert_allclose(out, np.tile(layer.beta.value, (4, 1)), atol=1e-12)


def test_batchnorm_standardized_batch_is_fixed_point():
    x = np.array([[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]])
    out = BatchNorm("bn", 2, np.float64).forward(x, training=True)
    # variance 1, so the only deviation is the epsilon term
    np.testing.assert_allclose(out, x, atol=1e-5)
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), atol=1e-12)


def test_batchnorm_train_output_statistics(rng):
    out = BatchNorm("bn", 6, np.float64).forward(rng.normal(3, 5, size=(64, 6)), training=True)
    assert np.abs(out.mean(axis=0)).max() < 1e-6
    assert np.abs(out.var(axis=0) - 1).max() < 1e-3


def test_batchnorm_running_stats_and_inference(rng):
    layer = BatchNorm("bn", 2, np.float64)
    x = rng.normal(size=(10, 2))
    layer.forward(x, training=True)
    np.testing.assert_allclose(layer.running_mean, 0.01 * x.mean(axis=0))
    np.testing.assert_allclose(layer.running_var, 0.99 + 0.01 * x.var(axis=0))
    before = layer.running_mean.copy()
    out = layer.forward(x, training=False)
    np.testing.assert_array_equal(layer.running_mean, before)
    np.testing.assert_allclose(out, (x - layer.running_mean) / np.sqrt(layer.running_var + 1e-5))


def test_batchnorm_single_sample_train_is_degenerate():
    with pytest.raises(DegenerateBatchError):
        BatchNorm("bn", 3).forward(np.zeros((1, 3)), training=True)


@pytest.mark.parametrize("name", ["batchnorm[train]", "batchnorm[infer]", "batchnorm[train, masked]"])
def test_batchnorm_gradient_check(rng, name):
    for r in gc.LAYER_CHECKS[name](rng):
        assert r.error < 1e-4, r


# dropout

def test_dropout_rate_zero_and_inference_are_identity(rng):
    x = rng.normal(size=(5, 5))
    assert Dropout(0.0).forward(x, training=True, rng=rng) is x
    assert Dropout(0.5).forward(x, training=False) is x


def test_dropout_rate_validation():
    with pytest.raises(ParameterError):
        Dropout(1.0)
    with pytest.raises(ParameterError):
        Dropout(-0.1)


def test_dropout_statistics(rng):
    x = np.ones(100_000)
    out = Dropout(0.5).forward(x, training=True, rng=rng)
    survivors = np.mean(out != 0)
    assert 0.49 <= survivors <= 0.51
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_gradient_check(rng):
    for r in gc.check_dropout(rng):
        assert r.error < 1e-4, r


# repeat / flatten / merge

def test_repeat_vector(rng):
    v = rng.normal(size=(2, 3))
    assert RepeatVector(1).forward(v).shape == (2, 1, 3)
    out = RepeatVector(3).forward(v)
    assert all(np.array_equal(out[:, i], v) for i in range(3))
    with pytest.raises(ParameterError):
        RepeatVector(0)


def test_repeat_backward_sums_slabs(rng):
    layer = RepeatVector(3)
    layer.forward(rng.normal(size=(2, 4)))
    d = rng.normal(size=(2, 3, 4))
    np.testing.assert_allclose(layer.backward(d), d[:, 0] + d[:, 1] + d[:, 2])
    for r in gc.check_repeat(rng):
        assert r.error < 1e-4


def test_flatten_round_trip(rng):
    layer = Flatten()
    x = rng.normal(size=(2, 3, 4))
    assert layer.forward(x).shape == (2, 12)
    assert layer.backward(np.ones((2, 12))).shape == (2, 3, 4)


def test_merge_modes(rng):
    x = rng.normal(size=(2, 5))
    np.testing.assert_array_equal(Merge("sum").forward(x, np.zeros_like(x)), x)
    assert Merge("concat").forward(np.zeros((2, 22, 100)), np.zeros((2, 22, 1024))).shape == (2, 22, 1124)
    assert Merge("sum").forward(np.zeros((2, 256)), np.zeros((2, 256))).shape == (2, 256)
    with pytest.raises(DimensionError, match="sum"):
        Merge("sum").forward(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(DimensionError, match="concat"):
        Merge("concat").forward(np.zeros((2, 3)), np.zeros((3, 3)))


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_merge_sum_commutes_and_concat_width(da, db, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(2, da)), r.normal(size=(2, da))
    assert np.array_equal(Merge("sum").forward(a, b), Merge("sum").forward(b, a))
    assert Merge("concat").forward(a, r.normal(size=(2, db))).shape[-1] == da + db


@pytest.mark.parametrize("mode", ["sum", "concat"])
def test_merge_gradient_check(rng, mode):
    for r in gc.check_merge(rng, mode):
        assert r.error < 1e-4
