"""Tensor core: forward semantics, backward correctness, tape behavior."""

import numpy as np
import pytest

from boundaryseg.tensor import (NumericError, ShapeError, Tensor, add, backward,
                                batchnorm2d, bilinear_resize, concat_channels,
                                conv2d, eltwise, grad_check, matmul, mul,
                                no_grad, relu, scale, sigmoid, sub, sum_all)


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def conv2d_bruteforce(x, w, b, stride=1, dilation=1, pad=0):
    """Straight quadruple-loop convolution, the test oracle."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for yi in range(ho):
                for xi in range(wo):
                    acc = b[oi]
                    for ci in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (xp[ni, ci, yi * stride + ky * dilation,
                                           xi * stride + kx * dilation]
                                        * w[oi, ci, ky, kx])
                    out[ni, oi, yi, xi] = acc
    return out


class TestConv2d:
    def test_identity_kernel(self):
        y = conv2d(Tensor([[[[5.0]]]]), Tensor([[[[1.0]]]]), Tensor([0.0]))
        assert y.data.reshape(()) == 5.0

    def test_ones_3x3_padded(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        y = conv2d(x, Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]), pad=1)
        assert y.data[0, 0, 1, 1] == 9.0
        assert y.data[0, 0, 0, 0] == 4.0

    @pytest.mark.parametrize("stride,dilation,pad", [(1, 1, 1), (2, 1, 0),
                                                     (1, 2, 2), (2, 2, 2)])
    def test_matches_bruteforce(self, stride, dilation, pad):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 3, 7, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, dilation, pad)
        want = conv2d_bruteforce(x, w, b, stride, dilation, pad)
        np.testing.assert_allclose(got.data, want, rtol=1e-12, atol=1e-12)

    def test_output_size_formula(self):
        x = Tensor(np.zeros((1, 1, 11, 13)))
        y = conv2d(x, Tensor(np.zeros((1, 1, 3, 3))), Tensor([0.0]),
                   stride=2, dilation=2, pad=1)
        hout = (11 + 2 - 2 * 2 - 1) // 2 + 1
        wout = (13 + 2 - 2 * 2 - 1) // 2 + 1
        assert y.shape == (1, 1, hout, wout)

    def test_weight_gradient_fd(self):
        # d(sum conv)/dw against central differences (double precision).
        rng = np.random.default_rng(0)
        x = t64(rng.uniform(-1, 1, (1, 2, 5, 5)))
        w = t64(rng.uniform(-1, 1, (3, 2, 3, 3)))
        b = t64(rng.uniform(-1, 1, 3))
        err = grad_check(lambda x, w, b: sum_all(conv2d(x, w, b, pad=1)),
                         [x, w, b])
        assert err < 1e-4

    def test_shape_errors(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        with pytest.raises(ShapeError, match="channels"):
            conv2d(x, Tensor(np.zeros((2, 4, 3, 3))), Tensor(np.zeros(2)))
        with pytest.raises(ShapeError, match="square"):
            conv2d(x, Tensor(np.zeros((2, 3, 3, 5))), Tensor(np.zeros(2)))
        with pytest.raises(ShapeError, match="bias"):
            conv2d(x, Tensor(np.zeros((2, 3, 3, 3))), Tensor(np.zeros(3)))


class TestBilinearResize:
    def test_identity(self):
        x = Tensor(np.random.default_rng(1).normal(size=(1, 2, 5, 6)))
        y = bilinear_resize(x, 5, 6)
        np.testing.assert_array_equal(x.data, y.data)

    def test_half_pixel_1d_case(self):
        y = bilinear_resize(Tensor([[[[1.0, 3.0]]]]), 1, 4)
        np.testing.assert_allclose(y.data.ravel(), [1.0, 1.5, 2.5, 3.0])

    def test_constant_preserved(self):
        x = Tensor(np.full((1, 1, 4, 4), 0.7))
        for hw in [(2, 2), (9, 5), (16, 16)]:
            y = bilinear_resize(x, *hw)
            np.testing.assert_allclose(y.data, 0.7, rtol=1e-6)

    def test_gradient_is_transpose(self):
        rng = np.random.default_rng(2)
        x = t64(rng.normal(size=(1, 1, 3, 5)))
        err = grad_check(
            lambda x: sum_all(mul(y := bilinear_resize(x, 7, 2), y)), [x])
        assert err < 1e-4

    def test_bad_target(self):
        with pytest.raises(ShapeError):
            bilinear_resize(Tensor(np.zeros((1, 1, 2, 2))), 0, 3)


class TestConcat:
    def test_zero_channel_identity(self):
        x = Tensor(np.random.default_rng(3).normal(size=(1, 2, 3, 3)))
        empty = Tensor(np.zeros((1, 0, 3, 3)))
        y = concat_channels(x, empty)
        np.testing.assert_array_equal(y.data, x.data)

    def test_shape_arithmetic(self):
        a = Tensor(np.zeros((1, 2, 4, 4)))
        b = Tensor(np.zeros((1, 3, 4, 4)))
        assert concat_channels(a, b).shape == (1, 5, 4, 4)

    def test_backward_splits_ones(self):
        a = t64(np.ones((1, 2, 2, 2)))
        b = t64(np.ones((1, 3, 2, 2)))
        backward(sum_all(concat_channels(a, b)))
        np.testing.assert_array_equal(a.grad, np.ones_like(a.data))
        np.testing.assert_array_equal(b.grad, np.ones_like(b.data))

    def test_spatial_mismatch(self):
        with pytest.raises(ShapeError, match="resize"):
            concat_channels(Tensor(np.zeros((1, 1, 4, 4))),
                            Tensor(np.zeros((1, 1, 2, 2))))


class TestEltwise:
    def test_sub_self_is_zero(self):
        x = Tensor(np.random.default_rng(4).normal(size=(3, 3)))
        np.testing.assert_array_equal(sub(x, x).data, np.zeros((3, 3)))

    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_sigmoid_extreme_inputs_finite(self):
        y = sigmoid(Tensor([-500.0, 500.0]))
        assert np.all(np.isfinite(y.data))
        assert 0.0 <= y.data[0] and y.data[1] <= 1.0

    def test_relu_gradient_away_from_kink(self):
        rng = np.random.default_rng(6)
        data = rng.uniform(-1, 1, size=(5, 5))
        data[np.abs(data) < 1e-3] += 0.5  # resample near the kink
        x = t64(data)
        err = grad_check(lambda x: sum_all(mul(y := relu(x), y)), [x])
        assert err < 1e-4

    def test_mul_and_dispatcher(self):
        a = Tensor([2.0, 3.0])
        b = Tensor([4.0, 5.0])
        np.testing.assert_array_equal(eltwise("mul", a, b).data, [8.0, 15.0])
        np.testing.assert_array_equal(eltwise("add", a, b).data, [6.0, 8.0])
        np.testing.assert_array_equal(eltwise("relu", Tensor([-1.0, 2.0])).data,
                                      [0.0, 2.0])
        with pytest.raises(ValueError):
            eltwise("relu", a, b)
        with pytest.raises(ValueError):
            eltwise("add", a)
        with pytest.raises(ValueError):
            eltwise("nope", a)

    def test_binary_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(Tensor([1.0]), Tensor([1.0, 2.0]))


class TestMatmul:
    def test_identity(self):
        a = np.random.default_rng(7).normal(size=(3, 3))
        y = matmul(Tensor(a), Tensor(np.eye(3)))
        np.testing.assert_allclose(y.data, a)

    def test_hand_case(self):
        y = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]),
                   Tensor([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(y.data, [[1, 2], [3, 4]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        want = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                for k in range(5):
                    want[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, want,
                                   atol=1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestBatchNorm:
    def _stats(self, c):
        return np.zeros(c, dtype=np.float64), np.ones(c, dtype=np.float64)

    def test_train_normalizes_to_affine(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(2.0, 3.0, size=(2, 3, 8, 8)))
        gamma = Tensor(np.array([1.5, -0.5, 2.0]))
        beta = Tensor(np.array([0.3, -0.2, 1.0]))
        rm, rv = self._stats(3)
        y = batchnorm2d(x, gamma, beta, rm, rv, True).data
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), beta.data, atol=1e-4)
        np.testing.assert_allclose(y.std(axis=(0, 2, 3)), np.abs(gamma.data),
                                   atol=1e-4)

    def test_unit_input_passthrough(self):
        rng = np.random.default_rng(10)
        raw = rng.normal(size=(4, 2, 8, 8))
        raw = (raw - raw.mean(axis=(0, 2, 3), keepdims=True)) \
            / raw.std(axis=(0, 2, 3), keepdims=True)
        x = Tensor(raw)
        rm, rv = self._stats(2)
        y = batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)
        np.testing.assert_allclose(y.data, raw, atol=1e-4)

    def test_gradients_fd(self):
        rng = np.random.default_rng(11)
        x = t64(rng.normal(size=(2, 2, 4, 4)))
        gamma = t64(rng.uniform(0.5, 1.5, 2))
        beta = t64(rng.normal(size=2))

        def f(x, gamma, beta):
            rm, rv = self._stats(2)
            return sum_all(mul(y := batchnorm2d(x, gamma, beta, rm, rv, True), y))

        assert grad_check(f, [x, gamma, beta]) < 1e-3

    def test_eval_uses_running_stats(self):
        x = Tensor(np.full((1, 1, 2, 2), 3.0))
        rm = np.array([1.0])
        rv = np.array([4.0])
        y = batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv,
                        False, eps=0.0)
        np.testing.assert_allclose(y.data, (3.0 - 1.0) / 2.0)

    def test_running_stats_updated_with_momentum(self):
        x = Tensor(np.random.default_rng(12).normal(5.0, 1.0, size=(2, 1, 4, 4)))
        rm = np.zeros(1)
        rv = np.ones(1)
        batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, True,
                    momentum=0.1)
        mu = x.data.mean()
        var = x.data.var()
        np.testing.assert_allclose(rm, 0.9 * 0.0 + 0.1 * mu, rtol=1e-6)
        np.testing.assert_allclose(rv, 0.9 * 1.0 + 0.1 * var, rtol=1e-6)

    def test_channel_mismatch(self):
        x = Tensor(np.zeros((1, 3, 2, 2)))
        with pytest.raises(ShapeError):
            batchnorm2d(x, Tensor(np.zeros(2)), Tensor(np.zeros(3)),
                        np.zeros(3), np.ones(3), True)


class TestBackward:
    def test_sum_gives_ones(self):
        x = t64(np.random.default_rng(13).normal(size=(3, 4)))
        backward(sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic(self):
        x = t64(np.random.default_rng(14).normal(size=(5,)))
        backward(scale(sum_all(mul(x, x)), 0.5))
        np.testing.assert_allclose(x.grad, x.data, rtol=1e-12)

    def test_accumulation_without_reset(self):
        x = t64(np.ones(3))
        loss = sum_all(x)
        backward(loss)
        backward(loss)
        np.testing.assert_array_equal(x.grad, 2 * np.ones(3))

    def test_non_scalar_rejected(self):
        x = t64(np.ones(3))
        with pytest.raises(ShapeError):
            backward(add(x, x))

    def test_leaf_loss_rejected(self):
        with pytest.raises(ValueError):
            backward(t64(np.ones(())))

    def test_linearity_of_gradients(self):
        # grad(a*f + b*g) == a*grad(f) + b*grad(g)
        rng = np.random.default_rng(15)
        a, b = 1.7, -0.4

        def f(x):
            return sum_all(mul(x, x))

        def g(x):
            return sum_all(relu(x))

        x1 = t64(rng.normal(size=(4, 4)))
        backward(add(scale(f(x1), a), scale(g(x1), b)))
        x2 = t64(x1.data.copy())
        backward(f(x2))
        gf = x2.grad.copy()
        x2.zero_grad()
        backward(g(x2))
        gg = x2.grad.copy()
        np.testing.assert_allclose(x1.grad, a * gf + b * gg, atol=1e-6)


class TestTape:
    def test_forward_determinism(self):
        rng = np.random.default_rng(16)
        x = Tensor(rng.normal(size=(1, 2, 6, 6)).astype(np.float32))
        w = Tensor(rng.normal(size=(3, 2, 3, 3)).astype(np.float32))
        b = Tensor(rng.normal(size=3).astype(np.float32))
        y1 = conv2d(x, w, b, pad=1)
        y2 = conv2d(x, w, b, pad=1)
        assert np.array_equal(y1.data, y2.data)

    def test_replay_same_loss(self):
        rng = np.random.default_rng(17)
        x = t64(rng.normal(size=(2, 3)))
        l1 = float(sum_all(mul(x, x)).data)
        l2 = float(sum_all(mul(x, x)).data)
        assert l1 == l2

    def test_no_grad_blocks_recording(self):
        x = t64(np.ones(3))
        with no_grad():
            y = sum_all(x)
        assert y.node is None and not y.requires_grad


class TestGradCheck:
    def test_sum_is_exact(self):
        x = t64(np.random.default_rng(18).normal(size=(3, 3)))
        assert grad_check(lambda x: sum_all(x), [x]) < 1e-9

    def test_nonfinite_reported(self):
        x = t64(np.array([1.0]))

        def f(x):
            # log of a negative probe value produces a NaN
            out = Tensor(np.log(x.data - 1.0005))
            out.requires_grad = True
            out.node = sum_all(x).node
            return out

        with pytest.raises(NumericError, match="coordinate"):
            grad_check(f, [x], eps=1e-2)
