import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mlvc import tensor as T
from oracles import gelu_erf, gradcheck, naive_conv3d, naive_matmul

GRAD_TOL = 1e-4


def rng(seed=0):
    return np.random.default_rng(seed)


class TestTensorBasics:
    def test_default_dtype_is_float32(self):
        assert T.Tensor([1, 2, 3]).dtype == np.float32

    def test_float64_mode_preserved(self):
        t = T.Tensor(np.ones(3))
        assert t.dtype == np.float64
        assert T.exp(t).dtype == np.float64

    def test_grad_shape_matches_data(self):
        x = T.Tensor(rng().standard_normal((3, 4)), requires_grad=True)
        T.tsum(x * x).backward()
        assert x.grad.shape == x.shape

    def test_no_grad_tensor_never_accumulates(self):
        a = T.Tensor(np.ones(3), requires_grad=True)
        b = T.Tensor(np.ones(3))
        T.tsum(a * b).backward()
        assert b.grad is None

    def test_no_grad_context(self):
        a = T.Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            out = a * 2
        assert not out.requires_grad


class TestMatmul:
    def test_identity(self):
        a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(a, T.Tensor(np.eye(2))).data, [[1, 2], [3, 4]])

    def test_zeros(self):
        a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(a, T.Tensor(np.zeros((2, 2)))).data, np.zeros((2, 2)))

    def test_naive_oracle(self):
        a = rng(1).standard_normal((5, 7))
        b = rng(2).standard_normal((7, 3))
        out = T.matmul(T.Tensor(a), T.Tensor(b)).data
        np.testing.assert_allclose(out, naive_matmul(a, b), rtol=1e-6, atol=1e-12)

    def test_float32_oracle(self):
        a = rng(1).standard_normal((5, 7)).astype(np.float32)
        b = rng(2).standard_normal((7, 3)).astype(np.float32)
        np.testing.assert_allclose(T.matmul(T.Tensor(a), T.Tensor(b)).data, naive_matmul(a, b), rtol=1e-5, atol=1e-5)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4, 5))))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(T.Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-7)

    def test_ln2(self):
        np.testing.assert_allclose(T.softmax(T.Tensor([0.0, math.log(2)], dtype=np.float64)).data,
                                   [1 / 3, 2 / 3], atol=1e-12)

    def test_shift_invariance(self):
        x = rng().standard_normal((4, 6))
        a = T.softmax(T.Tensor(x)).data
        b = T.softmax(T.Tensor(x + 123.4)).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_large_inputs_stable(self):
        out = T.softmax(T.Tensor([1000.0, 0.0, -1000.0])).data
        assert np.all(np.isfinite(out))

    def test_empty_axis_raises(self):
        with pytest.raises(ValueError):
            T.softmax(T.Tensor(np.zeros((3, 0))), axis=1)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
                  elements=st.floats(-50, 50)))
    def test_rows_sum_to_one(self, x):
        out = T.softmax(T.Tensor(x), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(out >= 0) and np.all(out <= 1)


class TestLayerNorm:
    def test_constant_slice(self):
        out = T.layer_norm(T.Tensor([5.0, 5.0, 5.0]), T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)), 1e-5)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-7)

    def test_population_variance(self):
        out = T.layer_norm(T.Tensor([1.0, 3.0], dtype=np.float64), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)),
                           1e-12)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-9)

    def test_random_slice_normalized(self):
        x = rng(3).standard_normal((5, 32)) * 7 + 3
        out = T.layer_norm(T.Tensor(x), T.Tensor(np.ones(32)), T.Tensor(np.zeros(32)), 1e-6).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-6
        assert np.abs(out.var(axis=-1) - 1).max() < 1e-4

    def test_affine(self):
        x = rng(4).standard_normal((2, 3))
        g, b = np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0, 0.0])
        base = T.layer_norm(T.Tensor(x), T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)), 1e-6).data
        out = T.layer_norm(T.Tensor(x), T.Tensor(g), T.Tensor(b), 1e-6).data
        np.testing.assert_allclose(out, base * g + b, atol=1e-12)

    @pytest.mark.parametrize("eps", [0.0, -1e-3])
    def test_nonpositive_eps(self, eps):
        with pytest.raises(ValueError):
            T.layer_norm(T.Tensor([1.0, 2.0]), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)), eps)


class TestActivations:
    def test_gelu_zero(self):
        assert T.gelu(T.Tensor([0.0])).data[0] == 0.0

    def test_gelu_large(self):
        assert abs(T.gelu(T.Tensor([10.0], dtype=np.float64)).data[0] - 10.0) < 1e-4

    def test_gelu_one_against_erf(self):
        assert abs(T.gelu(T.Tensor([1.0], dtype=np.float64)).data[0] - gelu_erf(1.0)) < 2e-3
        assert abs(gelu_erf(1.0) - 0.8412) < 2e-3

    def test_gelu_approximation_error_bounded(self):
        xs = np.linspace(-6, 6, 241)
        approx = T.gelu(T.Tensor(xs)).data
        exact = np.array([gelu_erf(x) for x in xs])
        assert np.abs(approx - exact).max() < 2e-3

    def test_sigmoid_zero(self):
        assert T.sigmoid(T.Tensor([0.0])).data[0] == 0.5

    def test_sigmoid_symmetry(self):
        x = rng().standard_normal(100) * 10
        np.testing.assert_allclose(T.sigmoid(T.Tensor(-x)).data, 1 - T.sigmoid(T.Tensor(x)).data, atol=1e-7)

    def test_sigmoid_saturation(self):
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            out = T.sigmoid(T.Tensor([-1000.0, 1000.0, -1e4, 1e4], dtype=np.float64)).data
        assert out[0] == 0.0 and out[2] == 0.0
        assert out[1] == 1.0 and out[3] == 1.0
        assert np.all(np.isfinite(out))

    def test_sigmoid_open_interval_moderate(self):
        out = T.sigmoid(T.Tensor(np.linspace(-30, 30, 61), dtype=np.float64)).data
        assert np.all(out > 0) and np.all(out < 1)


class TestConv3d:
    def test_unit_kernel_copies(self):
        x = rng().standard_normal((1, 3, 4, 5))
        out = T.conv3d(T.Tensor(x), T.Tensor(np.ones((1, 1, 1, 1, 1))), (1, 1, 1)).data
        np.testing.assert_array_equal(out, x)

    def test_zero_kernel(self):
        x = rng().standard_normal((2, 3, 4, 5))
        out = T.conv3d(T.Tensor(x), T.Tensor(np.zeros((3, 2, 2, 2, 2))), (1, 1, 1)).data
        np.testing.assert_array_equal(out, 0.0)

    def test_naive_oracle(self):
        x = rng(5).standard_normal((3, 7, 16, 16))
        k = rng(6).standard_normal((4, 3, 3, 4, 4))
        out = T.conv3d(T.Tensor(x), T.Tensor(k), (7, 4, 4)).data
        ref = naive_conv3d(x, k, (7, 4, 4))
        assert out.shape == ref.shape == (4, 1, 4, 4)
        np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-9)

    def test_overlapping_stride_oracle(self):
        x = rng(7).standard_normal((2, 5, 6, 7))
        k = rng(8).standard_normal((3, 2, 2, 3, 2))
        np.testing.assert_allclose(T.conv3d(T.Tensor(x), T.Tensor(k), (1, 2, 1)).data,
                                   naive_conv3d(x, k, (1, 2, 1)), rtol=1e-5, atol=1e-9)

    def test_output_extents(self):
        out = T.conv3d(T.Tensor(np.zeros((1, 9, 10, 11))), T.Tensor(np.zeros((2, 1, 3, 3, 4))), (2, 3, 2))
        assert out.shape == (2, (9 - 3) // 2 + 1, (10 - 3) // 3 + 1, (11 - 4) // 2 + 1)

    def test_kernel_larger_than_input(self):
        with pytest.raises(T.ShapeError):
            T.conv3d(T.Tensor(np.zeros((1, 2, 4, 4))), T.Tensor(np.zeros((1, 1, 3, 2, 2))), (1, 1, 1))


class TestBCE:
    @pytest.mark.parametrize("y", [0.0, 1.0])
    def test_zero_logit(self, y):
        loss = T.bce_with_logits(T.Tensor([0.0], dtype=np.float64), np.array([y]))
        assert abs(loss.data - math.log(2)) < 1e-12

    def test_stable_asymptote(self):
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            loss = T.bce_with_logits(T.Tensor([-1000.0, 1000.0], dtype=np.float64), np.array([0.0, 1.0]))
        assert np.isfinite(loss.data) and loss.data < 1e-12

    def test_non_negative(self):
        z = rng().standard_normal((8, 9)) * 5
        y = (rng(1).random((8, 9)) > 0.5).astype(float)
        assert T.bce_with_logits(T.Tensor(z), y).data >= 0

    def test_rejects_soft_targets(self):
        with pytest.raises(ValueError):
            T.bce_with_logits(T.Tensor([0.0, 0.0]), np.array([0.5, 1.0]))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = T.Tensor(rng().standard_normal((3, 4)), requires_grad=True)
        T.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_square(self):
        x = T.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.tsum(x * x).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_accumulates_across_calls(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        T.tsum(x * 3).backward()
        T.tsum(x * 3).backward()
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_raises(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(T.ShapeError):
            (x * 2).backward()

    def test_shared_subexpression(self):
        x = T.Tensor([2.0], dtype=np.float64, requires_grad=True)
        y = x * x
        T.tsum(y * y + y).backward()  # d/dx (x^4 + x^2) = 4x^3 + 2x
        assert x.grad[0] == 4 * 8 + 4

    def test_forward_bit_identical(self):
        x = rng().standard_normal((4, 16)).astype(np.float32)
        w = rng(1).standard_normal((16, 8)).astype(np.float32)
        a = T.gelu(T.matmul(T.Tensor(x), T.Tensor(w))).data
        b = T.gelu(T.matmul(T.Tensor(x), T.Tensor(w))).data
        assert a.tobytes() == b.tobytes()


# Every differentiable primitive, each checked in float64 against central differences.
R = np.random.default_rng(42)
UNARY_CASES = {
    "neg": (lambda a: -a, [R.standard_normal((3, 4))]),
    "exp": (T.exp, [R.standard_normal((3, 4))]),
    "log": (T.log, [R.random((3, 4)) + 0.5]),
    "tanh": (T.tanh, [R.standard_normal((3, 4))]),
    "power": (lambda a: T.power(a, 3.0), [R.standard_normal((3, 4))]),
    "sum_axis": (lambda a: T.tsum(a, axis=1), [R.standard_normal((3, 4))]),
    "mean_keepdims": (lambda a: T.mean(a, axis=0, keepdims=True), [R.standard_normal((3, 4))]),
    "reshape": (lambda a: T.reshape(a, (4, 3)), [R.standard_normal((3, 4))]),
    "transpose": (lambda a: T.transpose(a, (2, 0, 1)), [R.standard_normal((2, 3, 4))]),
    "swapaxes": (lambda a: T.swapaxes(a, 0, 1), [R.standard_normal((2, 3))]),
    "getitem_slice": (lambda a: a[:, 1:3], [R.standard_normal((3, 4))]),
    "getitem_fancy": (lambda a: a[np.array([0, 2, 0])], [R.standard_normal((3, 4))]),
    "softmax": (lambda a: T.softmax(a, axis=-1), [R.standard_normal((3, 5))]),
    "gelu": (T.gelu, [R.standard_normal((3, 4)) * 2]),
    "sigmoid": (T.sigmoid, [R.standard_normal((3, 4)) * 3]),
    "relu": (T.relu, [R.standard_normal((3, 4)) + 0.05]),
}
BINARY_CASES = {
    "add_broadcast": (T.add, [R.standard_normal((3, 4)), R.standard_normal((4,))]),
    "sub": (T.sub, [R.standard_normal((3, 4)), R.standard_normal((3, 1))]),
    "mul": (T.mul, [R.standard_normal((3, 4)), R.standard_normal((3, 4))]),
    "div": (T.div, [R.standard_normal((3, 4)), R.random((3, 4)) + 0.5]),
    "matmul": (T.matmul, [R.standard_normal((3, 5)), R.standard_normal((5, 2))]),
    "matmul_batched": (T.matmul, [R.standard_normal((2, 3, 4)), R.standard_normal((2, 4, 2))]),
    "concat": (lambda a, b: T.concat([a, b], axis=1), [R.standard_normal((2, 3)), R.standard_normal((2, 2))]),
    "stack": (lambda a, b: T.stack([a, b], axis=0), [R.standard_normal((2, 3)), R.standard_normal((2, 3))]),
    "conv3d": (lambda x, k: T.conv3d(x, k, (1, 2, 2)),
               [R.standard_normal((2, 3, 4, 4)), R.standard_normal((2, 2, 2, 2, 2))]),
}


@pytest.mark.parametrize("name", sorted(UNARY_CASES))
def test_gradcheck_unary(name):
    fn, inputs = UNARY_CASES[name]
    assert gradcheck(fn, inputs) < GRAD_TOL


@pytest.mark.parametrize("name", sorted(BINARY_CASES))
def test_gradcheck_binary(name):
    fn, inputs = BINARY_CASES[name]
    assert gradcheck(fn, inputs) < GRAD_TOL


def test_gradcheck_layer_norm():
    x, g, b = R.standard_normal((3, 6)), R.standard_normal(6), R.standard_normal(6)
    assert gradcheck(lambda x, g, b: T.layer_norm(x, g, b, 1e-5), [x, g, b]) < GRAD_TOL


def test_gradcheck_conv3d_bias():
    x, k, b = R.standard_normal((1, 3, 5, 5)), R.standard_normal((2, 1, 2, 3, 3)), R.standard_normal(2)
    assert gradcheck(lambda x, k, b: T.conv3d(x, k, (1, 1, 1), bias=b), [x, k, b]) < GRAD_TOL


def test_gradcheck_bce():
    y = (R.random((4, 3)) > 0.5).astype(float)
    assert gradcheck(lambda z: T.bce_with_logits(z, y), [R.standard_normal((4, 3)) * 2]) < GRAD_TOL


def test_dropout_gradient_matches_mask():
    x = T.Tensor(np.ones((50,)), requires_grad=True)
    out = T.dropout(x, 0.5, np.random.default_rng(0), training=True)
    T.tsum(out).backward()
    np.testing.assert_array_equal(x.grad, out.data)


def test_dropout_eval_identity():
    x = T.Tensor(np.arange(5.0))
    assert T.dropout(x, 0.5, np.random.default_rng(0), training=False) is x
