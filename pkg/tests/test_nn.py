import numpy as np
import pytest

from minn.nn import (
    Adam,
    BranchedMlp,
    DenseLayer,
    Mlp,
    Param,
    Sgd,
    cross_entropy,
    load_checkpoint,
    mse,
    relu,
    save_checkpoint,
    softmax,
    softmax_cross_entropy,
)
from minn.numerics import Rng, finite_diff_gradient, gradient_mismatch


class TestDenseForward:
    def test_identity(self):
        layer = DenseLayer(3, 3, Rng(0))
        layer.weight.value = np.eye(3)
        layer.bias.value = np.zeros(3)
        x = np.array([0.5, -1.0, 2.0])
        assert np.array_equal(layer.forward(x), x)

    def test_zero_weight_gives_bias(self):
        layer = DenseLayer(4, 2, Rng(0))
        layer.weight.value = np.zeros((2, 4))
        layer.bias.value = np.array([1.0, -2.0])
        assert np.array_equal(layer.forward(np.ones(4)), np.array([1.0, -2.0]))

    def test_small_arithmetic(self):
        layer = DenseLayer(2, 2, Rng(0))
        layer.weight.value = np.array([[1.0, 2.0], [3.0, 4.0]])
        layer.bias.value = np.zeros(2)
        assert np.array_equal(layer.forward(np.array([1.0, 1.0])), np.array([3.0, 7.0]))

    def test_dimension_mismatch(self):
        layer = DenseLayer(3, 2, Rng(0))
        with pytest.raises(ValueError):
            layer.forward(np.ones(4))


class TestDenseBackward:
    def test_backward_before_forward(self):
        layer = DenseLayer(2, 2, Rng(0))
        with pytest.raises(RuntimeError):
            layer.backward(np.ones(2))

    def test_zero_upstream(self):
        layer = DenseLayer(3, 2, Rng(1))
        layer.forward(np.ones(3))
        gx, gw, gb = layer.backward(np.zeros(2))
        assert not np.any(gx) and not np.any(gw) and not np.any(gb)

    def test_scalar_chain_rule(self):
        layer = DenseLayer(1, 1, Rng(1))
        layer.forward(np.array([2.5]))
        _, gw, _ = layer.backward(np.array([3.0]))
        assert gw[0, 0] == 3.0 * 2.5

    def test_matches_finite_differences(self):
        rng = Rng(7)
        layer = DenseLayer(4, 3, rng)
        x = rng.normal(4)
        coeff = rng.normal(3)  # scalar test loss: coeff . (W x + b)

        def loss_for_weight(w):
            return float(coeff @ (w @ x + layer.bias.value))

        layer.forward(x)
        gx, gw, gb = layer.backward(coeff)
        fd_w = finite_diff_gradient(loss_for_weight, layer.weight.value.copy(), h=1e-5)
        fd_x = finite_diff_gradient(lambda v: float(coeff @ (layer.weight.value @ v + layer.bias.value)), x.copy(), h=1e-5)
        fd_b = finite_diff_gradient(lambda b: float(coeff @ (layer.weight.value @ x + b)), layer.bias.value.copy(), h=1e-5)
        assert gradient_mismatch(gw, fd_w) <= 1e-5
        assert gradient_mismatch(gx, fd_x) <= 1e-5
        assert gradient_mismatch(gb, fd_b) <= 1e-5

    def test_batched_backward_sums_outer_products(self):
        rng = Rng(8)
        layer = DenseLayer(3, 2, rng)
        xs = rng.normal((5, 3))
        us = rng.normal((5, 2))
        layer.forward(xs)
        _, gw, gb = layer.backward(us)
        expected = sum(np.outer(us[i], xs[i]) for i in range(5))
        assert np.allclose(gw, expected, atol=1e-12)
        assert np.allclose(gb, us.sum(axis=0), atol=1e-12)


class TestActivationsAndLosses:
    def test_relu(self):
        assert np.array_equal(relu(np.array([-1.0, 2.0])), np.array([0.0, 2.0]))

    def test_softmax_uniform(self):
        out = softmax(np.zeros(10))
        assert np.allclose(out, 0.1, atol=1e-15)

    def test_softmax_sums_to_one_and_shift_invariant(self):
        rng = Rng(3)
        logits = rng.normal((20, 7))
        p = softmax(logits)
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-12
        assert np.max(np.abs(softmax(logits + 123.4) - p)) <= 1e-12

    def test_softmax_gradient_matches_fd(self):
        rng = Rng(4)
        logits = rng.normal(5)
        coeff = rng.normal(5)
        # d(coeff . softmax(z))/dz = (diag(p) - p p^T) coeff
        p = softmax(logits)
        analytic = (np.diag(p) - np.outer(p, p)) @ coeff
        fd = finite_diff_gradient(lambda z: float(coeff @ softmax(z)), logits.copy(), h=1e-5)
        assert gradient_mismatch(analytic, fd) <= 1e-5

    def test_cross_entropy_perfect_prediction(self):
        t = np.array([0.0, 1.0, 0.0])
        loss, _ = cross_entropy(t, np.array([0.0 + 1e-300, 1.0, 0.0 + 1e-300]))
        assert loss == 0.0

    def test_cross_entropy_uniform(self):
        t = np.zeros(10)
        t[4] = 1.0
        loss, _ = cross_entropy(t, np.full(10, 0.1))
        assert abs(loss - np.log(10)) <= 1e-12

    def test_cross_entropy_rejects_bad_inputs(self):
        with pytest.raises(ValueError, match="one-hot"):
            cross_entropy(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        with pytest.raises(ValueError, match="zero probability"):
            cross_entropy(np.array([1.0, 0.0]), np.array([0.0, 1.0]))

    def test_fused_gradient_matches_fd(self):
        rng = Rng(5)
        logits = rng.normal(6)
        target = np.zeros(6)
        target[2] = 1.0
        _, grad = softmax_cross_entropy(logits, target)
        fd = finite_diff_gradient(lambda z: softmax_cross_entropy(z, target)[0], logits.copy(), h=1e-5)
        assert gradient_mismatch(grad, fd) <= 1e-6
        assert np.allclose(grad, softmax(logits) - target, atol=1e-12)

    def test_cross_entropy_nonnegative(self):
        rng = Rng(6)
        for _ in range(50):
            p = softmax(rng.normal(4))
            t = np.zeros(4)
            t[int(rng.integers(0, 4))] = 1.0
            loss, _ = cross_entropy(t, p)
            assert loss >= 0.0

    def test_mse(self):
        loss, grad = mse(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        assert loss == 1.0
        fd = finite_diff_gradient(lambda p: mse(np.array([0.0, 0.0]), p)[0], np.array([1.0, 1.0]), h=1e-6)
        assert gradient_mismatch(grad, fd) <= 1e-6
        assert mse(np.array([1.0, 2.0]), np.array([1.0, 2.0]))[0] == 0.0


class TestMlpBackward:
    def test_full_stack_matches_fd(self):
        rng = Rng(9)
        net = Mlp([5, 8, 7, 4], rng)
        x = rng.normal(5)
        target = np.zeros(4)
        target[1] = 1.0

        def full_loss(_=None):
            return softmax_cross_entropy(net.forward(x), target)[0]

        loss, grad_logits = softmax_cross_entropy(net.forward(x), target)
        gx = net.backward(grad_logits)
        for p in net.parameters():
            fd = finite_diff_gradient(lambda arr: full_loss(), p.value, h=1e-5)
            assert gradient_mismatch(p.grad, fd) <= 1e-5, p.name
        fd_x = finite_diff_gradient(lambda v: softmax_cross_entropy(net.forward(v), target)[0], x, h=1e-5)
        assert gradient_mismatch(gx, fd_x) <= 1e-5

    def test_branched_stack_matches_fd(self):
        rng = Rng(10)
        net = BranchedMlp([4, 6, 5], [3, 6, 4], [9, 8, 3], rng)
        x = rng.normal(4)
        side = rng.normal(3)
        target = np.zeros(3)
        target[0] = 1.0

        def full_loss():
            return softmax_cross_entropy(net.forward(x, side), target)[0]

        _, grad_logits = softmax_cross_entropy(net.forward(x, side), target)
        net.backward(grad_logits)
        for p in net.parameters():
            fd = finite_diff_gradient(lambda arr: full_loss(), p.value, h=1e-5)
            assert gradient_mismatch(p.grad, fd) <= 1e-5, p.name


class TestOptimizers:
    def test_sgd_arithmetic(self):
        p = Param("w", np.array([1.0]))
        p.grad = np.array([0.5])
        Sgd(0.1).step([p])
        assert np.allclose(p.value, 0.95)

    def test_sgd_zero_grad_no_change(self):
        p = Param("w", np.array([1.0, 2.0]))
        Sgd(0.1).step([p])
        assert np.array_equal(p.value, np.array([1.0, 2.0]))

    def test_sgd_linearity(self):
        p1 = Param("w", np.array([3.0]))
        p2 = Param("w", np.array([3.0]))
        p1.grad = np.array([2.0])
        p2.grad = np.array([4.0])
        opt = Sgd(0.1)
        opt.step([p1])
        p1.grad = np.array([2.0])
        opt.step([p1])
        Sgd(0.1).step([p2])
        assert np.allclose(p1.value, p2.value)

    def test_adam_first_step_magnitude(self):
        p = Param("w", np.array([1.0, -1.0]))
        p.grad = np.array([10.0, -0.001])
        Adam(lr=0.01).step([p])
        # bias-corrected first step is lr * sign(grad) up to eps effects
        assert np.allclose(p.value, np.array([1.0 - 0.01, -1.0 + 0.01]), atol=1e-5)

    def test_adam_zero_grad_first_step(self):
        p = Param("w", np.array([2.0]))
        Adam(lr=0.1).step([p])
        assert np.array_equal(p.value, np.array([2.0]))

    def test_adam_descends_quadratic(self):
        p = Param("w", np.array([5.0]))
        opt = Adam(lr=0.1)
        for _ in range(500):
            p.zero_grad()
            p.grad += 2.0 * p.value
            opt.step([p])
        assert abs(p.value[0]) < 0.01

    def test_finite_values_and_shapes_preserved(self):
        rng = Rng(11)
        p = Param("w", rng.normal((3, 4)))
        opt = Adam(lr=0.05)
        for _ in range(20):
            p.zero_grad()
            p.grad += rng.normal((3, 4))
            opt.step([p])
        assert p.value.shape == (3, 4)
        assert np.all(np.isfinite(p.value))

    def test_shape_mismatch_rejected(self):
        p = Param("w", np.array([1.0]))
        p.grad = np.zeros(2)
        with pytest.raises(ValueError):
            Sgd(0.1).step([p])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = Rng(12)
        arrays = [
            ("encoder.layer0.weight", rng.normal((4, 3))),
            ("encoder.layer0.bias", rng.normal(4)),
            ("phases", rng.uniform(0, 2 * np.pi, (2, 8))),
        ]
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arrays)
        loaded = load_checkpoint(path)
        assert list(loaded) == [name for name, _ in arrays]
        for name, arr in arrays:
            assert np.array_equal(loaded[name], arr)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not-a-checkpoint\n")
        with pytest.raises(ValueError, match="bad magic"):
            load_checkpoint(path)

    def test_payload_is_little_endian_float64(self, tmp_path):
        path = tmp_path / "one.ckpt"
        save_checkpoint(path, [("x", np.array([1.0, 2.0]))])
        raw = path.read_bytes()
        assert raw.endswith(np.array([1.0, 2.0], dtype="<f8").tobytes())
