import numpy as np
import pytest
from pytest import approx

from cola.errors import TrainingDiverged
from cola.numerics import (
    ParamSlot,
    adam_step,
    conv1d_backward,
    conv1d_forward,
    dropout,
    dropout_backward,
    relu,
    relu_backward,
    sigmoid,
    softmax_rows,
)
from cola.numerics import _conv_np
from cola.numerics.conv import BACKEND, left_padding


def conv_oracle(inp, kernel, bias):
    """Hand-unrolled sliding window, O(T*Cout*Cin*K) with explicit zero padding."""
    T, cin = inp.shape
    cout, _, width = kernel.shape
    left = (width - 1) // 2
    out = np.zeros((T, cout))
    for t in range(T):
        for co in range(cout):
            acc = bias[co]
            for k in range(width):
                src = t - left + k
                if 0 <= src < T:
                    acc += float(inp[src] @ kernel[co, :, k])
            out[t, co] = acc
    return out


def finite_diff(f, x, eps=1e-4):
    """Central finite differences of scalar f at array x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


class TestConvForward:
    def test_k1_identity(self):
        inp = np.random.default_rng(0).normal(size=(5, 3))
        kernel = np.eye(3)[:, :, None]
        out = conv1d_forward(inp, kernel, np.zeros(3))
        np.testing.assert_allclose(out, inp)

    def test_zero_input_gives_bias_rows(self):
        bias = np.array([1.5, -2.0])
        out = conv1d_forward(np.zeros((4, 3)), np.ones((2, 3, 3)), bias)
        np.testing.assert_allclose(out, np.tile(bias, (4, 1)))

    def test_hand_unrolled_window(self):
        inp = np.array([[1.0], [2.0], [3.0], [4.0]])
        out = conv1d_forward(inp, np.ones((1, 1, 3)), np.zeros(1))
        np.testing.assert_allclose(out.ravel(), [3.0, 6.0, 9.0, 7.0])

    @pytest.mark.parametrize("width", [1, 2, 3, 4, 5])
    def test_matches_oracle(self, width):
        rng = np.random.default_rng(width)
        inp = rng.normal(size=(7, 3))
        kernel = rng.normal(size=(4, 3, width))
        bias = rng.normal(size=4)
        np.testing.assert_allclose(
            conv1d_forward(inp, kernel, bias), conv_oracle(inp, kernel, bias), atol=1e-12)

    def test_even_width_padding_split(self):
        # K=2: left pad 0, right pad 1 -> out[t] = x[t] + x[t+1]
        inp = np.array([[1.0], [2.0], [3.0]])
        out = conv1d_forward(inp, np.ones((1, 1, 2)), np.zeros(1))
        np.testing.assert_allclose(out.ravel(), [3.0, 5.0, 3.0])
        assert left_padding(2) == 0

    def test_k1_is_affine_map(self):
        rng = np.random.default_rng(3)
        inp = rng.normal(size=(6, 4))
        kernel = rng.normal(size=(2, 4, 1))
        bias = rng.normal(size=2)
        out = conv1d_forward(inp, kernel, bias)
        np.testing.assert_allclose(out, inp @ kernel[:, :, 0].T + bias)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            conv1d_forward(np.zeros((4, 3)), np.ones((2, 5, 3)), np.zeros(2))
        with pytest.raises(ValueError):
            conv1d_forward(np.zeros((4, 3)), np.ones((2, 3, 3)), np.zeros(3))


class TestConvBackward:
    def test_zero_grad_out(self):
        gi, gk, gb = conv1d_backward(np.zeros((4, 2)), np.ones((4, 3)), np.ones((2, 3, 3)))
        assert not gi.any() and not gk.any() and not gb.any()

    def test_k1_grad_kernel_is_input_outer_grad(self):
        rng = np.random.default_rng(1)
        inp = rng.normal(size=(6, 4))
        kernel = rng.normal(size=(2, 4, 1))
        grad_out = rng.normal(size=(6, 2))
        _, gk, _ = conv1d_backward(grad_out, inp, kernel)
        np.testing.assert_allclose(gk[:, :, 0], grad_out.T @ inp)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        inp = rng.normal(size=(6, 3))
        kernel = rng.normal(size=(2, 3, 3))
        bias = rng.normal(size=2)
        weights = rng.normal(size=(6, 2))  # random linear functional of the output

        def loss():
            return float((conv1d_forward(inp, kernel, bias) * weights).sum())

        gi, gk, gb = conv1d_backward(weights, inp, kernel)
        np.testing.assert_allclose(gi, finite_diff(loss, inp), atol=1e-5)
        np.testing.assert_allclose(gk, finite_diff(loss, kernel), atol=1e-5)
        np.testing.assert_allclose(gb, finite_diff(loss, bias), atol=1e-5)

    def test_grad_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            conv1d_backward(np.zeros((4, 3)), np.ones((4, 3)), np.ones((2, 3, 3)))


@pytest.mark.skipif(BACKEND != "cython", reason="compiled extension not built")
class TestBackendAgreement:
    @pytest.mark.parametrize("seed", range(5))
    def test_forward_and_backward_match(self, seed):
        rng = np.random.default_rng(seed)
        width = int(rng.integers(1, 6))
        inp = rng.normal(size=(rng.integers(1, 12), rng.integers(1, 6)))
        kernel = rng.normal(size=(rng.integers(1, 6), inp.shape[1], width))
        bias = rng.normal(size=kernel.shape[0])
        left = left_padding(width)
        np.testing.assert_allclose(
            conv1d_forward(inp, kernel, bias),
            _conv_np.conv1d_forward(inp, kernel, bias, left), rtol=1e-10, atol=1e-12)
        grad_out = rng.normal(size=(inp.shape[0], kernel.shape[0]))
        got = conv1d_backward(grad_out, inp, kernel)
        want = _conv_np.conv1d_backward(grad_out, inp, kernel, left)
        for g, w in zip(got, want):
            np.testing.assert_allclose(g, w, rtol=1e-10, atol=1e-12)


class TestActivations:
    def test_sigmoid_zero(self):
        assert sigmoid(np.array([0.0]))[0] == approx(0.5)

    def test_sigmoid_saturation_no_overflow(self):
        out = sigmoid(np.array([-1000.0, 1000.0]))
        assert out[0] == approx(0.0) and out[1] == approx(1.0)

    def test_softmax_symmetric(self):
        np.testing.assert_allclose(softmax_rows(np.array([[0.0, 0.0]])), [[0.5, 0.5]])

    def test_softmax_rows_sum_one(self):
        # moderate logit scale: a dominant entry would round to exactly 1.0
        rng = np.random.default_rng(9)
        out = softmax_rows(rng.normal(scale=5, size=(10, 6)))
        np.testing.assert_allclose(out.sum(axis=1), np.ones(10), atol=1e-12)
        assert np.all(out > 0) and np.all(out < 1)

    def test_softmax_empty_row_raises(self):
        with pytest.raises(ValueError):
            softmax_rows(np.zeros((2, 0)))

    def test_relu_backward_masks(self):
        pre = np.array([[-1.0, 2.0], [0.0, 3.0]])
        grad = np.ones_like(pre)
        np.testing.assert_allclose(relu_backward(grad, pre), [[0, 1], [0, 1]])
        np.testing.assert_allclose(relu(pre), [[0, 2], [0, 3]])


class TestDropout:
    def test_rate_zero_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        out, mask = dropout(x, 0.0, np.random.default_rng(0), training=True)
        np.testing.assert_allclose(out, x)
        np.testing.assert_allclose(mask, np.ones_like(x))

    def test_inference_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        out, mask = dropout(x, 0.9, np.random.default_rng(0), training=False)
        np.testing.assert_allclose(out, x)
        np.testing.assert_allclose(mask, np.ones_like(x))

    def test_bad_rate_raises(self):
        for rate in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError):
                dropout(np.ones((2, 2)), rate, np.random.default_rng(0), training=True)

    def test_training_mean_preserved(self):
        # E[out] = x under the mask distribution; 3 sigma band over >= 1e4 draws
        rate = 0.7
        n = 20_000
        x = np.full((n, 1), 2.0)
        out, _ = dropout(x, rate, np.random.default_rng(7), training=True)
        keep = 1.0 - rate
        sigma = np.sqrt((2.0 / keep) ** 2 * keep * (1 - keep) / n)
        assert abs(out.mean() - 2.0) < 3 * sigma

    def test_backward_matches_mask(self):
        x = np.ones((4, 4))
        rng = np.random.default_rng(3)
        out, mask = dropout(x, 0.5, rng, training=True)
        grad = dropout_backward(np.ones_like(x), mask, 0.5)
        np.testing.assert_allclose(grad, out)  # out == mask/(1-rate) for x == 1


class TestAdam:
    def test_zero_grad_fresh_state_no_move(self):
        slot = ParamSlot(np.array([1.0, -2.0]))
        adam_step(slot, lr=0.1)
        np.testing.assert_allclose(slot.value, [1.0, -2.0])
        assert slot.step_count == 1

    def test_first_step_magnitude_is_lr(self):
        slot = ParamSlot(np.array([0.0]))
        slot.grad[:] = 3.7
        adam_step(slot, lr=0.01)
        # bias-corrected first step: -lr * g / (|g| + eps')
        assert slot.value[0] == approx(-0.01, rel=1e-6)
        np.testing.assert_allclose(slot.grad, 0.0)

    def test_two_steps_match_hand_recurrence(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        g1, g2 = 2.0, -1.0
        # hand-executed recurrence on a scalar
        m = (1 - b1) * g1
        v = (1 - b2) * g1 ** 2
        x = 0.0 - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2 ** 2
        x = x - lr * (m / (1 - b1 ** 2)) / (np.sqrt(v / (1 - b2 ** 2)) + eps)

        slot = ParamSlot(np.array([0.0]))
        slot.grad[:] = g1
        adam_step(slot, lr, b1, b2, eps)
        slot.grad[:] = g2
        adam_step(slot, lr, b1, b2, eps)
        assert slot.value[0] == approx(x, rel=1e-12)

    def test_nonfinite_grad_raises(self):
        slot = ParamSlot(np.zeros(2))
        slot.grad[0] = np.nan
        with pytest.raises(TrainingDiverged):
            adam_step(slot, lr=0.1)
