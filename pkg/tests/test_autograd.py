import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import naive_matmul
from sarcasm_detect import autograd as ag
from sarcasm_detect.autograd import GradTape, Tensor, backward
from sarcasm_detect.errors import ConfigError, ContractError, DimensionError, NonFiniteError

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


# matmul -------------------------------------------------------------------


def test_matmul_identity_and_hand_case():
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(ag.matmul(Tensor(np.eye(2)), Tensor(b)).data, b)
    out = ag.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(b)).data
    assert np.array_equal(out, [[19, 22], [43, 50]])


def test_matmul_zero_annihilates(rng):
    out = ag.matmul(Tensor(np.zeros((2, 3))), Tensor(rng.normal(size=(3, 2))))
    assert np.array_equal(out.data, np.zeros((2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_matmul_matches_naive_loop(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
    assert np.allclose(ag.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradients(rng):
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    backward(ag.total(ag.matmul(a, b)))
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ np.ones((3, 2)))


# softmax ------------------------------------------------------------------


def test_softmax_analytic_cases():
    assert np.array_equal(ag.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    assert np.allclose(ag.softmax_rows(Tensor([[0.0, math.log(3)]])).data, [[0.25, 0.75]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), st.floats(-50, 50))
def test_softmax_shift_invariance_and_normalisation(x, c):
    a = ag.softmax_rows(Tensor(x)).data
    b = ag.softmax_rows(Tensor(x + c)).data
    assert np.allclose(a, b, atol=1e-12)
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(a > 0)


def test_softmax_large_values_stay_finite():
    out = ag.softmax_rows(Tensor([[1000.0, 0.0], [-1000.0, -1000.0]])).data
    assert np.allclose(out, [[1.0, 0.0], [0.5, 0.5]])


def test_softmax_mask_gives_exact_zeros():
    out = ag.softmax_rows(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]])).data
    assert out[0, 1] == 0.0
    assert math.isclose(out.sum(), 1.0)


def test_softmax_fully_masked_row_rejected():
    with pytest.raises(DimensionError):
        ag.softmax_rows(Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


# elementwise --------------------------------------------------------------


def test_nonlinearities_analytic():
    assert ag.tanh(Tensor([0.0])).data[0] == 0.0
    assert ag.sigmoid(Tensor([0.0])).data[0] == 0.5
    assert abs(ag.tanh(Tensor([1.0])).data[0] - 0.761594) < 1e-6
    assert np.array_equal(ag.relu(Tensor([-2.0, 3.0])).data, [0.0, 3.0])
    assert ag.gelu(Tensor([0.0])).data[0] == 0.0


def test_sigmoid_saturates_without_overflow():
    out = ag.sigmoid(Tensor([-800.0, 800.0])).data
    assert out[0] >= 0.0 and out[1] == 1.0


def test_unknown_activation():
    with pytest.raises(ConfigError):
        ag.elementwise("swish", Tensor([1.0]))


def test_relu_records_distance_to_kink():
    x = leaf([0.3, -0.0004, 2.0])
    assert ag.relu(x).kink == pytest.approx(0.0004)


# layer norm ---------------------------------------------------------------


def test_layer_norm_constant_row_is_zero():
    out = ag.layer_norm(Tensor([[1.0, 1.0, 1.0, 1.0]]), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_two_point_case():
    out = ag.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-6)


def test_layer_norm_zero_gain_returns_bias(rng):
    bias = rng.normal(size=5)
    out = ag.layer_norm(Tensor(rng.normal(size=(3, 5))), Tensor(np.zeros(5)), Tensor(bias))
    assert np.array_equal(out.data, np.tile(bias, (3, 1)))


# column max ---------------------------------------------------------------


def test_reduce_max_cols_cases(rng):
    assert np.array_equal(ag.reduce_max_cols(Tensor([[1.0, 5.0], [3.0, 2.0]])).data, [3.0, 5.0])
    row = rng.normal(size=(1, 4))
    assert np.array_equal(ag.reduce_max_cols(Tensor(row)).data, row[0])
    x = rng.normal(size=(5, 7))
    naive = [max(x[i, j] for i in range(5)) for j in range(7)]
    assert np.array_equal(ag.reduce_max_cols(Tensor(x)).data, naive)


def test_reduce_max_cols_gradient_goes_to_first_argmax():
    x = leaf([[2.0, 0.0], [2.0, 1.0]])
    backward(ag.total(ag.reduce_max_cols(x)))
    assert np.array_equal(x.grad, [[1.0, 0.0], [0.0, 1.0]])


# pooling ------------------------------------------------------------------


def test_avg_pool_constant_and_two_point():
    out = ag.avg_pool_axis(Tensor(np.ones((2, 3, 4))), "W")
    assert out.shape == (2, 3, 1) and np.array_equal(out.data, np.ones((2, 3, 1)))
    x = np.zeros((1, 1, 2))
    x[0, 0] = [1.0, 3.0]
    assert ag.avg_pool_axis(Tensor(x), "W").data[0, 0, 0] == 2.0


def test_avg_pool_matches_naive_sum(rng):
    x = rng.normal(size=(3, 5, 7))
    by_w = np.zeros((3, 5, 1))
    by_h = np.zeros((3, 1, 7))
    for c in range(3):
        for i in range(5):
            for j in range(7):
                by_w[c, i, 0] += x[c, i, j] / 7
                by_h[c, 0, j] += x[c, i, j] / 5
    assert np.allclose(ag.avg_pool_axis(Tensor(x), "W").data, by_w, rtol=0, atol=1e-12)
    assert np.allclose(ag.avg_pool_axis(Tensor(x), "H").data, by_h, rtol=0, atol=1e-12)


def test_avg_pool_rejects_unknown_axis():
    with pytest.raises(ConfigError):
        ag.avg_pool_axis(Tensor(np.ones((1, 2, 2))), "C")


# concat / split -----------------------------------------------------------


def test_concat_laws(rng):
    a = Tensor(rng.normal(size=(1, 3)))
    assert np.array_equal(ag.concat([a]).data, a.data)
    assert ag.concat([a, a], axis=-1).shape == (1, 6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**31))
def test_concat_split_round_trip(widths, seed):
    rng = np.random.default_rng(seed)
    parts = [rng.normal(size=(2, w)) for w in widths]
    back = ag.split(ag.concat([Tensor(p) for p in parts], axis=1), widths, axis=1)
    for p, b in zip(parts, back):
        assert np.array_equal(p, b.data)


def test_concat_gradient_routes_to_each_input(rng):
    a, b = leaf(rng.normal(size=(2, 2))), leaf(rng.normal(size=(2, 3)))
    w = rng.normal(size=(2, 5))
    backward(ag.total(ag.mul(ag.concat([a, b], axis=1), Tensor(w))))
    assert np.array_equal(a.grad, w[:, :2]) and np.array_equal(b.grad, w[:, 2:])


# backward -----------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite))
def test_gradient_of_sum_is_ones(x):
    t = leaf(x)
    backward(ag.total(t))
    assert np.array_equal(t.grad, np.ones_like(x))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite))
def test_gradient_of_half_square_is_identity(x):
    t = leaf(x)
    backward(ag.scale(ag.sum_squares(t), 0.5))
    assert np.allclose(t.grad, x, rtol=0, atol=1e-15)


def test_reused_tensor_accumulates_along_every_path():
    x = leaf([3.0])
    # y = x*x + x → dy/dx = 2x + 1
    backward(ag.total(ag.add(ag.mul(x, x), x)))
    assert x.grad[0] == 7.0


def test_successive_backward_calls_sum_until_zeroed():
    x = leaf([1.0, 2.0])
    backward(ag.total(x))
    backward(ag.total(x))
    assert np.array_equal(x.grad, [2.0, 2.0])
    ag.zero_grad([x])
    assert x.grad is None or not np.any(x.grad)


def test_take_gradient_accumulates_repeated_indices():
    table = leaf(np.arange(6.0).reshape(3, 2))
    backward(ag.total(ag.take(table, [0, 2, 0])))
    assert np.array_equal(table.grad, [[2, 2], [0, 0], [1, 1]])


def test_backward_needs_scalar():
    with pytest.raises(ContractError):
        backward(leaf([1.0, 2.0]))


def test_tape_is_topologically_ordered(rng):
    a = leaf(rng.normal(size=(2, 2)))
    b = ag.tanh(a)
    c = ag.add(b, a)
    loss = ag.total(ag.mul(c, b))
    tape = GradTape.record(loss)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    for node in tape.nodes:
        for p in node._parents:
            assert pos[id(p)] < pos[id(node)]
    assert tape.nodes[-1] is loss


def test_non_finite_forward_is_rejected():
    with pytest.raises(NonFiniteError):
        ag.log(Tensor([0.0]))
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        ag.mul(Tensor([1e200]), Tensor([1e200]))


def test_mul_requires_equal_shapes():
    with pytest.raises(DimensionError):
        ag.mul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 1))))


def test_clamp_blocks_gradient_outside_range():
    x = leaf([-1.0, 0.5, 2.0])
    backward(ag.total(ag.clamp(x, 0.0, 1.0)))
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


def test_gate_broadcast(rng):
    x = rng.normal(size=(2, 3, 4))
    gh, gw = rng.random((2, 3, 1)), rng.random((2, 1, 4))
    assert np.allclose(ag.gate(Tensor(x), Tensor(gh), Tensor(gw)).data, x * gh * gw)


def test_dropout_identity_outside_training(rng):
    x = Tensor(rng.normal(size=(4, 4)))
    assert ag.dropout(x, 0.5, rng, training=False) is x
    assert ag.dropout(x, 0.0, rng, training=True) is x


def test_dropout_is_inverted(rng):
    x = Tensor(np.ones((200, 200)))
    out = ag.dropout(x, 0.25, rng, training=True).data
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
    assert abs(out.mean() - 1.0) < 0.02


def test_dropout_training_needs_rng():
    with pytest.raises(ContractError):
        ag.dropout(Tensor([1.0]), 0.5, None, training=True)


def test_embedding_gathers_rows(rng):
    table = rng.normal(size=(5, 3))
    assert np.array_equal(ag.embedding(Tensor(table), [4, 0]).data, table[[4, 0]])


def test_operator_sugar_matches_functions(rng):
    a, b = Tensor(rng.normal(size=(2, 2))), Tensor(rng.normal(size=(2, 2)))
    assert np.array_equal((a + b).data, ag.add(a, b).data)
    assert np.array_equal((a - b).data, ag.sub(a, b).data)
    assert np.array_equal((a @ b).data, ag.matmul(a, b).data)
    assert np.array_equal(a.T.data, a.data.T)
    assert np.array_equal((-a).data, -a.data)
