import math

import numpy as np
import pytest

from sarcasm_detect import autograd as ag
from sarcasm_detect.autograd import Tensor
from sarcasm_detect.errors import ConfigError, DimensionError
from sarcasm_detect.incongruity import (
    CoAttnParams,
    IncongruityBlockParams,
    MhaParams,
    affinity,
    coattention,
    cross_modal_mha,
    incongruity_block,
)


def identity_mha(d):
    eye = Tensor(np.eye(d))
    return MhaParams([eye], [eye], [eye], Tensor(np.eye(d)))


def naive_coattention(s, c, w):
    t, d = s.shape
    u = c.shape[0]
    a = np.zeros((t, u))
    for i in range(t):
        for j in range(u):
            acc = 0.0
            for k in range(d):
                for m in range(d):
                    acc += s[i, k] * w[k, m] * c[j, m]
            a[i, j] = math.tanh(acc)
    v = [max(a[i, j] for i in range(t)) for j in range(u)]
    tau = np.zeros(d)
    for j in range(u):
        tau += v[j] * c[j]
    return tau


def test_hand_computed_single_head():
    out = cross_modal_mha(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), identity_mha(2)).data
    assert np.allclose(out, [[0.6698, 0.3302]], atol=1e-3)


def test_identical_values_give_that_value(rng):
    u = rng.normal(size=4)
    out = cross_modal_mha(Tensor(rng.normal(size=(3, 4))), Tensor(np.tile(u, (5, 1))), identity_mha(4)).data
    for row in out:
        assert np.allclose(row, u, atol=1e-12)


def test_attention_rows_sum_to_one(rng):
    params = MhaParams.init(8, 2, rng)
    _, weights = cross_modal_mha(
        Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(6, 8))), params, return_weights=True
    )
    assert len(weights) == 2
    for w in weights:
        assert w.shape == (3, 6)
        assert np.allclose(w.data.sum(axis=1), 1.0, rtol=0, atol=1e-9)


def test_width_mismatch_rejected(rng):
    with pytest.raises(DimensionError):
        cross_modal_mha(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 6))), MhaParams.init(4, 2, rng))
    with pytest.raises(ConfigError):
        MhaParams.init(6, 4, rng)


def test_zero_mlp_leaves_layer_normed_query(rng):
    params = IncongruityBlockParams.init(8, 2, 16, rng)
    params.mlp.w1.data[:] = 0.0
    params.mlp.w2.data[:] = 0.0
    s = rng.normal(size=(3, 8))
    out = incongruity_block(Tensor(s), Tensor(rng.normal(size=(4, 8))), params).data
    ln = ag.layer_norm(Tensor(s), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    assert np.allclose(out, ln[0], rtol=0, atol=1e-12)


@pytest.mark.parametrize("t,r", [(1, 1), (3, 4), (6, 9)])
def test_block_output_width(rng, t, r):
    params = IncongruityBlockParams.init(8, 2, 16, rng)
    assert incongruity_block(Tensor(rng.normal(size=(t, 8))), Tensor(rng.normal(size=(r, 8))), params).shape == (8,)


def test_zero_bilinear_map_gives_zero_vector(rng):
    out = coattention(Tensor(rng.normal(size=(4, 6))), Tensor(rng.normal(size=(3, 6))), CoAttnParams(Tensor(np.zeros((6, 6)))))
    assert np.array_equal(out.data, np.zeros(6))


def test_hand_computed_coattention():
    out = coattention(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), CoAttnParams(Tensor(np.eye(2)))).data
    assert np.allclose(out, [0.761594, 0.0], atol=1e-6)


def test_affinity_is_bounded(rng):
    a = affinity(Tensor(rng.normal(size=(5, 4)) * 10), Tensor(rng.normal(size=(3, 4)) * 10),
                 CoAttnParams(Tensor(rng.normal(size=(4, 4)))))
    assert np.all(np.abs(a.data) <= 1.0)


def test_coattention_matches_naive_loops_on_200_instances():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        t, u, d = rng.integers(1, 6, size=3)
        s, c, w = rng.normal(size=(t, d)), rng.normal(size=(u, d)), rng.normal(size=(d, d))
        got = coattention(Tensor(s), Tensor(c), CoAttnParams(Tensor(w))).data
        worst = max(worst, float(np.max(np.abs(got - naive_coattention(s, c, w)))))
    assert worst <= 1e-12


def test_coattention_width_mismatch(rng):
    with pytest.raises(DimensionError):
        coattention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), CoAttnParams(Tensor(np.eye(3))))
