# src/tests/test_autodiff.py
import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.tensor import SCALAR_SHAPE, Graph, Tensor, backward, parameter
from src.errors import ConfigError, ShapeError, UsageError


def test_tensor_is_rank_four():
    assert Tensor(2.0).shape == SCALAR_SHAPE
    with pytest.raises(ShapeError):
        Tensor(np.zeros((3, 4, 4)))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 0, 4, 4)))


def test_backward_needs_scalar():
    x = parameter(np.ones((1, 2, 2, 2)))
    with pytest.raises(UsageError):
        backward(ops.mul(x, x))


def test_product_gradients():
    a = parameter(np.array([2.0, -3.0]).reshape(1, 2, 1, 1))
    b = parameter(np.array([5.0, 7.0]).reshape(1, 2, 1, 1))
    backward(ops.sum_(ops.mul(a, b)))
    np.testing.assert_allclose(a.grad.reshape(-1), [5.0, 7.0])
    np.testing.assert_allclose(b.grad.reshape(-1), [2.0, -3.0])


def test_gradients_accumulate_until_zeroed():
    x = parameter(np.full((1, 1, 2, 2), 3.0))
    backward(ops.sum_(x * 2.0))
    backward(ops.sum_(x * 2.0))
    np.testing.assert_allclose(x.grad, np.full((1, 1, 2, 2), 4.0))
    x.zero_grad()
    assert x.grad is None


def test_broadcast_gradient_is_summed():
    x = parameter(np.ones((1, 3, 2, 2)))
    scale = parameter(np.full((1, 3, 1, 1), 2.0))
    backward(ops.sum_(ops.mul(x, scale)))
    assert scale.grad.shape == (1, 3, 1, 1)
    np.testing.assert_allclose(scale.grad.reshape(-1), [4.0, 4.0, 4.0])


def test_intermediate_gradients_are_kept():
    x = parameter(np.linspace(-1, 1, 8).reshape(1, 2, 2, 2))
    hidden = ops.activation(x * 3.0, "relu")
    backward(ops.sum_(hidden))
    assert hidden.grad is not None
    np.testing.assert_allclose(hidden.grad, np.ones_like(hidden.data))


def test_conv2d_known_value_and_shapes():
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    assert ops.conv2d(x, w).data.reshape(-1)[0] == pytest.approx(9.0)
    same = ops.conv2d(x, w, pad=1)
    assert same.shape == (1, 1, 3, 3)
    assert same.data[0, 0, 1, 1] == pytest.approx(9.0)
    assert same.data[0, 0, 0, 0] == pytest.approx(4.0)
    assert ops.conv_output_size(8, 3, 2, 0) == 3
    with pytest.raises(ConfigError):
        ops.conv2d(Tensor(np.ones((1, 2, 3, 3))), w)


def test_pool_max2_values_and_ties():
    x = Tensor(np.array([[1.0, 3.0], [2.0, 0.0]]).reshape(1, 1, 2, 2))
    assert ops.pool_max2(x).data.reshape(-1)[0] == 3.0
    with pytest.raises(ShapeError):
        ops.pool_max2(Tensor(np.ones((1, 1, 3, 4))))
    tied = parameter(np.ones((1, 1, 2, 2)))
    backward(ops.sum_(ops.pool_max2(tied)))
    np.testing.assert_allclose(tied.grad.reshape(-1), [1.0, 0.0, 0.0, 0.0])


def test_upsample_then_pool_grad():
    x = parameter(np.arange(4.0).reshape(1, 1, 2, 2))
    up = ops.upsample2(x)
    assert up.shape == (1, 1, 4, 4)
    backward(ops.sum_(up))
    np.testing.assert_allclose(x.grad, np.full((1, 1, 2, 2), 4.0))


def test_softmax_over_channels():
    probs = ops.activation(Tensor(np.random.default_rng(0).normal(size=(2, 9, 1, 1))), "softmax")
    np.testing.assert_allclose(probs.data.sum(axis=1), np.ones((2, 1, 1)))
    with pytest.raises(ConfigError):
        ops.activation(probs, "gelu")


def test_log_is_clamped():
    x = parameter(np.zeros((1, 1, 1, 1)))
    out = ops.log(x)
    assert np.isfinite(out.data).all()
    backward(out)
    assert x.grad.reshape(-1)[0] == 0.0


def test_channel_plumbing():
    a, b = Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.ones((1, 3, 3, 3)))
    assert ops.concat_channels(a, b).shape == (1, 5, 3, 3)
    with pytest.raises(ShapeError):
        ops.concat_channels(a, Tensor(np.ones((1, 3, 2, 2))))
    with pytest.raises(ShapeError):
        ops.slice_channels(a, 1, 3)
    with pytest.raises(ShapeError):
        ops.add_residual(a, b)


def test_bilinear_matrix_rows_sum_to_one():
    m = ops.bilinear_matrix(5, 12)
    np.testing.assert_allclose(m.sum(axis=1), np.ones(12))
    x = Tensor(np.ones((1, 1, 4, 4)))
    assert ops.resize_bilinear(x, (4, 4)) is x
    np.testing.assert_allclose(ops.resize_bilinear(x, (7, 3)).data, np.ones((1, 1, 7, 3)))


def test_normalize_batch_modes():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(3.0, 2.0, size=(4, 2, 5, 5)))
    running = ops.RunningStats.create(2, np.float64)
    out = ops.normalize_batch(x, 1.0, 0.0, training=True, running=running)
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), [0.0, 0.0], atol=1e-10)
    assert np.all(running.mean > 0)
    frozen = ops.RunningStats(np.zeros(2), np.ones(2))
    same = ops.normalize_batch(x, 1.0, 0.0, eps=1e-12, training=False, running=frozen)
    np.testing.assert_allclose(same.data, x.data, rtol=1e-6)
    with pytest.raises(ConfigError):
        ops.normalize_batch(x, [1.0, 1.0, 1.0], 0.0)


def test_graph_order_is_deterministic():
    x = parameter(np.ones((1, 1, 2, 2)))
    loss = ops.mean(ops.activation(ops.mul(x, x), "tanh"))
    kinds = [n.kind for n in Graph.from_output(loss).nodes]
    assert kinds == ["mul", "tanh", "mean"]
    assert kinds == [n.kind for n in Graph.from_output(loss).nodes]
