import math

import numpy as np
import pytest

from zoomdet.errors import NumericError
from zoomdet.nn import (
    SGD,
    Conv2d,
    GlobalMaxPool,
    MaxPool2,
    Network,
    ReLU,
    Sigmoid,
    grad_check,
    load_model,
    save_model,
    sgd_step,
    sigmoid,
    sigmoid_ce_elements,
    sigmoid_ce_loss,
    smooth_l1,
)


def conv_reference(x, w, b, stride, pad):
    """Nested-loop cross-correlation, the checking oracle."""
    c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((o, oh, ow), dtype=np.float64)
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                acc = float(b[oc])
                for cc in range(ci):
                    for u in range(kh):
                        for v in range(kw):
                            acc += w[oc, cc, u, v] * xp[cc, i * stride + u, j * stride + v]
                out[oc, i, j] = acc
    return out


class TestConv2d:
    def test_sum_of_ones(self):
        conv = Conv2d(np.ones((1, 1, 3, 3)), np.zeros(1))
        out = conv.forward(np.ones((1, 3, 3)))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == pytest.approx(9.0)

    def test_identity_1x1_kernel(self):
        conv = Conv2d(np.ones((1, 1, 1, 1)), np.zeros(1))
        x = np.random.default_rng(0).uniform(-1, 1, (1, 5, 7))
        np.testing.assert_allclose(conv.forward(x), x, atol=1e-12)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0), (1, 2)])
    def test_matches_nested_loop_reference(self, stride, pad):
        rng = np.random.default_rng(42 + stride * 10 + pad)
        x = rng.uniform(-1, 1, (2, 5, 5))
        w = rng.uniform(-1, 1, (3, 2, 3, 3))
        b = rng.uniform(-1, 1, 3)
        conv = Conv2d(w, b, stride=stride, pad=pad)
        np.testing.assert_allclose(
            conv.forward(x), conv_reference(x, w, b, stride, pad), atol=1e-12
        )

    def test_output_dims_formula(self):
        conv = Conv2d(np.zeros((1, 1, 7, 7)), np.zeros(1), stride=2, pad=3)
        out = conv.forward(np.zeros((1, 224, 224)))
        assert out.shape == (1, 112, 112)

    def test_channel_mismatch_rejected(self):
        conv = Conv2d(np.zeros((1, 2, 3, 3)), np.zeros(1))
        with pytest.raises(ValueError):
            conv.forward(np.zeros((3, 5, 5)))

    def test_kernel_too_large_rejected(self):
        conv = Conv2d(np.zeros((1, 1, 5, 5)), np.zeros(1))
        with pytest.raises(ValueError):
            conv.forward(np.zeros((1, 3, 3)))


class TestMaxPool2:
    def test_basic(self):
        x = np.array([[[1, 2, 5, 1], [3, 4, 0, 0], [0, 9, 1, 1], [8, 7, 2, 3]]], dtype=np.float64)
        out = MaxPool2().forward(x)
        np.testing.assert_array_equal(out, [[[4, 5], [9, 3]]])

    def test_odd_dims_cropped(self):
        x = np.arange(1 * 5 * 7, dtype=np.float64).reshape(1, 5, 7)
        out = MaxPool2().forward(x)
        assert out.shape == (1, 2, 3)

    def test_backward_routes_to_argmax(self):
        pool = MaxPool2()
        x = np.array([[[1.0, 2.0], [3.0, 0.0]]])
        pool.forward(x)
        dx = pool.backward(np.array([[[5.0]]]))
        np.testing.assert_array_equal(dx, [[[0, 0], [5, 0]]])

    def test_tie_breaks_to_first_row_major(self):
        pool = MaxPool2()
        x = np.ones((1, 2, 2))
        pool.forward(x)
        dx = pool.backward(np.array([[[1.0]]]))
        np.testing.assert_array_equal(dx, [[[1, 0], [0, 0]]])


class TestGlobalMaxPool:
    def test_basic(self):
        gmp = GlobalMaxPool()
        out = gmp.forward(np.array([[[1.0, 2.0], [3.0, 0.0]]]))
        np.testing.assert_array_equal(out, [3.0])
        assert gmp.argmax_positions() == [(1, 0)]

    def test_constant_ties_to_origin(self):
        gmp = GlobalMaxPool()
        gmp.forward(np.full((3, 4, 5), 0.25))
        assert gmp.argmax_positions() == [(0, 0)] * 3

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-5, 5, (4, 7, 9))
        out = GlobalMaxPool().forward(x)
        np.testing.assert_array_equal(out, x.max(axis=(1, 2)))

    def test_spatial_permutation_invariance(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-1, 1, (3, 6, 6))
        perm = rng.permutation(36)
        xp = x.reshape(3, 36)[:, perm].reshape(3, 6, 6)
        np.testing.assert_array_equal(
            GlobalMaxPool().forward(x), GlobalMaxPool().forward(xp)
        )

    def test_backward_exactly_one_nonzero_per_channel(self):
        rng = np.random.default_rng(9)
        gmp = GlobalMaxPool()
        gmp.forward(rng.uniform(-1, 1, (5, 4, 6)))
        dx = gmp.backward(rng.uniform(0.5, 1.0, 5))
        assert dx.shape == (5, 4, 6)
        per_channel = (dx != 0).sum(axis=(1, 2))
        np.testing.assert_array_equal(per_channel, np.ones(5, dtype=int))

    def test_backward_zero_grad_stays_zero(self):
        gmp = GlobalMaxPool()
        gmp.forward(np.random.default_rng(10).uniform(0, 1, (2, 3, 3)))
        dx = gmp.backward(np.zeros(2))
        assert np.all(dx == 0)

    def test_finite_difference_at_nontied_maxima(self):
        # d(max)/dx is 1 at the argmax, 0 elsewhere; compare central differences
        rng = np.random.default_rng(11)
        x = rng.uniform(-1, 1, (2, 4, 4))
        gmp = GlobalMaxPool()
        gmp.forward(x)
        dx = gmp.backward(np.ones(2))
        eps = 1e-6
        for c in range(2):
            for i in range(4):
                for j in range(4):
                    xp = x.copy()
                    xp[c, i, j] += eps
                    up = GlobalMaxPool().forward(xp)[c]
                    xp[c, i, j] -= 2 * eps
                    dn = GlobalMaxPool().forward(xp)[c]
                    numeric = (up - dn) / (2 * eps)
                    assert abs(dx[c, i, j] - numeric) < 1e-5


class TestSigmoidCE:
    def test_zero_logits_zero_targets(self):
        loss, grad = sigmoid_ce_loss(np.zeros(60), np.zeros(60))
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)
        np.testing.assert_allclose(grad, 0.5 / 60, atol=1e-12)

    def test_perfect_prediction_limit(self):
        loss, _ = sigmoid_ce_loss(np.array([40.0, -40.0]), np.array([1.0, 0.0]))
        assert loss < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        z = rng.uniform(-4, 4, 60)
        p = rng.uniform(0, 1, 60)
        loss, grad = sigmoid_ce_loss(z, p)
        eps = 1e-6
        for j in range(60):
            zp = z.copy(); zp[j] += eps
            zm = z.copy(); zm[j] -= eps
            numeric = (sigmoid_ce_loss(zp, p)[0] - sigmoid_ce_loss(zm, p)[0]) / (2 * eps)
            denom = max(abs(grad[j]), abs(numeric), 1e-8)
            assert abs(grad[j] - numeric) / denom < 1e-6

    def test_stable_for_extreme_logits(self):
        z = np.array([-50.0, 50.0, -50.0, 50.0])
        p = np.array([1.0, 0.0, 0.0, 1.0])
        loss, grad = sigmoid_ce_loss(z, p)
        assert np.isfinite(loss) and np.all(np.isfinite(grad))

    def test_nonnegative_and_zero_only_at_match(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            z = rng.uniform(-6, 6, 10)
            p = rng.uniform(0, 1, 10)
            loss, _ = sigmoid_ce_elements(z, p)
            # cross entropy of p against sigmoid(z) is at least the entropy of p
            ps = sigmoid(z)
            entropy = -(p * np.log(ps) + (1 - p) * np.log(1 - ps))
            np.testing.assert_allclose(loss, entropy, atol=1e-9)
            assert np.all(loss >= -1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            sigmoid_ce_loss(np.zeros(3), np.zeros(4))


class TestSmoothL1:
    def test_quadratic_inside_linear_outside(self):
        loss, grad = smooth_l1(np.array([0.5, 2.0, -3.0]), beta=1.0)
        np.testing.assert_allclose(loss, [0.125, 1.5, 2.5])
        np.testing.assert_allclose(grad, [0.5, 1.0, -1.0])


class TestSgd:
    def test_plain_step(self):
        p = np.array([1.0, 2.0])
        g = np.array([0.5, -0.5])
        v = np.zeros(2)
        sgd_step([p], [g], [v], lr=1.0, momentum=0.0)
        np.testing.assert_allclose(p, [0.5, 2.5])

    def test_momentum_accumulates(self):
        p = np.zeros(1)
        v = np.zeros(1)
        g = np.array([1.0])
        sgd_step([p], [g], [v], lr=1.0, momentum=0.5)
        sgd_step([p], [g], [v], lr=1.0, momentum=0.5)
        # steps: v=1 -> p=-1; v=1.5 -> p=-2.5
        np.testing.assert_allclose(p, [-2.5])

    def test_nan_gradient_aborts(self):
        with pytest.raises(NumericError):
            sgd_step([np.zeros(1)], [np.array([np.nan])], [np.zeros(1)], 0.1, 0.9)

    def test_optimizer_wrapper(self):
        p = np.array([3.0])
        opt = SGD([p], lr=0.5, momentum=0.0)
        opt.step([np.array([2.0])])
        np.testing.assert_allclose(p, [2.0])


def small_net(rng, dtype=np.float64):
    return Network([
        Conv2d.create(rng, 1, 2, 3, 3, stride=1, pad=1, dtype=dtype),
        ReLU(),
        Conv2d.create(rng, 2, 3, 3, 3, stride=1, pad=0, dtype=dtype),
        GlobalMaxPool(),
    ])


class TestSerialization:
    def test_roundtrip_identical_outputs(self, tmp_path):
        rng = np.random.default_rng(20)
        net = Network([
            Conv2d.create(rng, 1, 4, 5, 5, stride=1, pad=2, dtype=np.float32),
            ReLU(),
            MaxPool2(),
            Conv2d.create(rng, 4, 6, 3, 3, stride=1, pad=0, dtype=np.float32),
            Sigmoid(),
            GlobalMaxPool(),
        ])
        path = tmp_path / "model.bin"
        save_model(path, net)
        back = load_model(path)
        x = rng.uniform(0, 1, (1, 16, 16)).astype(np.float32)
        np.testing.assert_array_equal(net.forward(x), back.forward(x))

    def test_roundtrip_bit_exact_parameters(self, tmp_path):
        rng = np.random.default_rng(21)
        net = small_net(rng, dtype=np.float32)
        p1 = tmp_path / "a.bin"
        p2 = tmp_path / "b.bin"
        save_model(p1, net)
        save_model(p2, load_model(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTAMODEL")
        with pytest.raises(ValueError):
            load_model(path)


class TestGradCheck:
    def test_linear_single_conv(self):
        rng = np.random.default_rng(30)
        net = Network([
            Conv2d.create(rng, 1, 3, 3, 3, stride=1, pad=0, dtype=np.float64),
            GlobalMaxPool(),
        ])
        x = rng.uniform(-1, 1, (1, 6, 6))
        target = rng.uniform(0, 1, 3)
        assert grad_check(net, x, target, epsilon=1e-6) < 1e-7

    def test_three_layer_with_relu(self):
        rng = np.random.default_rng(31)
        net = small_net(rng)
        x = rng.uniform(-1, 1, (1, 8, 8))
        target = rng.uniform(0, 1, 3)
        assert grad_check(net, x, target) < 1e-5

    def test_net_with_maxpool_and_gmp(self):
        rng = np.random.default_rng(32)
        net = Network([
            Conv2d.create(rng, 1, 2, 3, 3, stride=1, pad=1, dtype=np.float64),
            ReLU(),
            MaxPool2(),
            Conv2d.create(rng, 2, 4, 3, 3, stride=1, pad=0, dtype=np.float64),
            GlobalMaxPool(),
        ])
        x = rng.uniform(-1, 1, (1, 10, 10))
        target = rng.uniform(0, 1, 4)
        assert grad_check(net, x, target) < 1e-5

    def test_astype_roundtrip_structure(self):
        rng = np.random.default_rng(33)
        net32 = small_net(rng, dtype=np.float32)
        net64 = net32.astype(np.float64)
        x = rng.uniform(-1, 1, (1, 8, 8))
        out32 = net32.forward(x.astype(np.float32))
        out64 = net64.forward(x)
        np.testing.assert_allclose(out32, out64, atol=1e-5)
