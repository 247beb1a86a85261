import numpy as np
import pytest

from conftest import naive_matmul
from sarcasm_detect.autograd import Tensor, backward, total
from sarcasm_detect.errors import ConfigError
from sarcasm_detect.visual import (
    CoordAttnParams,
    attend_regions,
    bypass_attention,
    coordinate_attention,
    grid_side,
    grid_to_regions,
    project_regions,
    regions_to_grid,
)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def naive_coordinate_attention(x, squeeze, expand_h, expand_w):
    """Unfused loops: pool per axis, shared 1×1 squeeze with relu, per-axis expand and sigmoid, gate."""
    c, h, w = x.shape
    mid = squeeze.shape[0]
    zh = np.zeros((c, h))
    zw = np.zeros((c, w))
    for k in range(c):
        for i in range(h):
            zh[k, i] = sum(x[k, i, j] for j in range(w)) / w
        for j in range(w):
            zw[k, j] = sum(x[k, i, j] for i in range(h)) / h
    z = np.concatenate([zh, zw], axis=1)
    f = np.zeros((mid, h + w))
    for m in range(mid):
        for p in range(h + w):
            f[m, p] = max(0.0, sum(squeeze[m, k] * z[k, p] for k in range(c)))
    gh = np.zeros((c, h))
    gw = np.zeros((c, w))
    for k in range(c):
        for i in range(h):
            gh[k, i] = _sigmoid(sum(expand_h[k, m] * f[m, i] for m in range(mid)))
        for j in range(w):
            gw[k, j] = _sigmoid(sum(expand_w[k, m] * f[m, h + j] for m in range(mid)))
    y = np.zeros_like(x)
    for k in range(c):
        for i in range(h):
            for j in range(w):
                y[k, i, j] = x[k, i, j] * gh[k, i] * gw[k, j]
    return y


def test_grid_side():
    assert grid_side(49) == 7
    with pytest.raises(ConfigError):
        grid_side(8)


def test_projection_cases(rng):
    regions = Tensor(rng.normal(size=(4, 6)))
    assert np.array_equal(project_regions(regions, Tensor(np.zeros((6, 3)))).data, np.zeros((4, 3)))
    assert np.array_equal(project_regions(regions, Tensor(np.eye(6))).data, regions.data)
    m = rng.normal(size=(6, 3))
    assert np.allclose(project_regions(regions, Tensor(m)).data, naive_matmul(regions.data, m), rtol=0, atol=1e-12)


def test_region_grid_round_trip_is_row_major(rng):
    x = rng.normal(size=(9, 4))
    grid = regions_to_grid(Tensor(x))
    assert grid.shape == (4, 3, 3)
    # region 5 sits at row 1, column 2
    assert np.array_equal(grid.data[:, 1, 2], x[5])
    assert np.array_equal(grid_to_regions(grid).data, x)


def test_zero_weights_quarter_the_input(rng):
    x = rng.normal(size=(4, 3, 3))
    params = CoordAttnParams.init(4, 2, rng)
    for t in (params.squeeze, params.expand_h, params.expand_w):
        t.data = np.zeros(t.shape)
    out = coordinate_attention(Tensor(x), params).data
    assert np.allclose(out, 0.25 * x, rtol=0, atol=1e-12)


def test_shape_preserved(rng):
    params = CoordAttnParams.init(8, 4, rng)
    assert coordinate_attention(Tensor(rng.normal(size=(8, 7, 7))), params).shape == (8, 7, 7)


@pytest.mark.parametrize("seed", range(5))
def test_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3, 5))
    params = CoordAttnParams.init(4, 2, rng)
    got = coordinate_attention(Tensor(x), params).data
    want = naive_coordinate_attention(x, params.squeeze.data, params.expand_h.data, params.expand_w.data)
    assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_bypass_is_identity_for_values_and_gradients(rng):
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    y = bypass_attention(x)
    assert np.array_equal(y.data, x.data)
    backward(total(y))
    assert np.array_equal(x.grad, np.ones((4, 3)))
    assert attend_regions(x, None) is x


def test_reduction_must_divide_channels(rng):
    with pytest.raises(ConfigError):
        CoordAttnParams.init(6, 4, rng)
