import numpy as np
import numpy.testing as npt
import pytest

from bboxbench.layers import Affine, Conv2d, Flatten, MaxPool2, ReLU
from bboxbench.nets import (
    DifferentiableNet,
    InvalidLabelError,
    make_net,
    stable_softmax,
)
from bboxbench.tensor import make_rng


def softmax_oracle(logits):
    # independent straight-line softmax used to check the library's values
    e = np.exp(np.asarray(logits, dtype=np.float64))
    return e / e.sum()


class TestForward:
    def test_identity_affine(self):
        net = DifferentiableNet(
            [Flatten(), Affine(np.eye(2), np.zeros(2))], 2, "tiny", (1, 1, 2)
        )
        logits = net.forward(np.array([[[[0.3, 0.7]]]]))
        npt.assert_allclose(logits, [[0.3, 0.7]])

    def test_relu_net_zero_input_zero_bias(self):
        rng = np.random.default_rng(0)
        net = DifferentiableNet(
            [Flatten(), Affine(rng.standard_normal((4, 3)), np.zeros(3)), ReLU(),
             Affine(rng.standard_normal((3, 2)), np.zeros(2))],
            2, "tiny", (1, 2, 2),
        )
        npt.assert_array_equal(net.forward(np.zeros((1, 1, 2, 2))), np.zeros((1, 2)))

    def test_two_layer_matches_straight_line_recomputation(self):
        rng = np.random.default_rng(1)
        w1 = rng.standard_normal((6, 5))
        b1 = rng.standard_normal(5)
        w2 = rng.standard_normal((5, 3))
        b2 = rng.standard_normal(3)
        net = DifferentiableNet(
            [Flatten(), Affine(w1, b1), ReLU(), Affine(w2, b2)], 3, "mlp2", (1, 2, 3)
        )
        x = rng.random((4, 1, 2, 3))
        got = net.forward(x)
        # independent recomputation with explicit loops
        for e in range(4):
            h = np.zeros(5)
            flat = x[e].ravel()
            for j in range(5):
                h[j] = max(0.0, sum(flat[i] * w1[i, j] for i in range(6)) + b1[j])
            out = np.zeros(3)
            for k in range(3):
                out[k] = sum(h[j] * w2[j, k] for j in range(5)) + b2[k]
            npt.assert_allclose(got[e], out, rtol=1e-12)

    def test_conv_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(2)
        kernels = rng.standard_normal((2, 3, 3, 3))
        bias = rng.standard_normal(2)
        conv = Conv2d(kernels, bias)
        x = rng.random((2, 3, 6, 5))
        got, _ = conv.forward(x)
        assert got.shape == (2, 2, 4, 3)
        for n in range(2):
            for co in range(2):
                for i in range(4):
                    for j in range(3):
                        acc = bias[co]
                        for ci in range(3):
                            for di in range(3):
                                for dj in range(3):
                                    acc += x[n, ci, i + di, j + dj] * kernels[co, ci, di, dj]
                        assert got[n, co, i, j] == pytest.approx(acc, rel=1e-12)

    def test_conv_stride(self):
        rng = np.random.default_rng(3)
        conv = Conv2d(rng.standard_normal((1, 1, 2, 2)), np.zeros(1), stride=2)
        out, _ = conv.forward(rng.random((1, 1, 6, 6)))
        assert out.shape == (1, 1, 3, 3)

    def test_maxpool_values_and_tie_break(self):
        x = np.array([[[[1.0, 2.0, 0.0, 0.0],
                        [3.0, 4.0, 0.0, 0.0],
                        [5.0, 5.0, 7.0, 7.0],
                        [5.0, 5.0, 7.0, 7.0]]]])
        pool = MaxPool2()
        out, cache = pool.forward(x)
        npt.assert_array_equal(out, [[[[4.0, 0.0], [5.0, 7.0]]]])
        dout = np.ones_like(out)
        dx, _ = pool.backward(dout, cache)
        # ties route the gradient to the first position in the window
        assert dx[0, 0, 2, 0] == 1.0 and dx[0, 0, 2, 1] == 0.0
        assert dx.sum() == dout.sum()

    def test_input_shape_checked(self):
        net = make_net("linear", (1, 4, 4), 3, seed=0)
        with pytest.raises(ValueError):
            net.forward(np.zeros((1, 1, 5, 5)))


class TestGradients:
    def test_softmax_ce_dlogits_example(self):
        p = softmax_oracle([2.0, 1.0, 0.0])
        npt.assert_allclose(p, [0.6652, 0.2447, 0.0900], atol=5e-5)
        net = DifferentiableNet(
            [Flatten(), Affine(np.eye(3), np.array([2.0, 1.0, 0.0]))], 3, "b", (1, 1, 3)
        )
        logits, caches = net.forward_with_caches(np.zeros((1, 1, 1, 3)))
        npt.assert_allclose(logits, [[2.0, 1.0, 0.0]])
        expected = p - np.array([1.0, 0.0, 0.0])
        from bboxbench.nets import softmax_cross_entropy_grad_logits

        got = softmax_cross_entropy_grad_logits(logits, np.array([0]))
        npt.assert_allclose(got[0], expected, rtol=1e-12)
        npt.assert_allclose(got[0], [-0.3348, 0.2447, 0.0900], atol=5e-5)

    def test_constant_net_zero_gradient(self):
        net = DifferentiableNet(
            [Flatten(), Affine(np.zeros((4, 3)), np.ones(3))], 3, "const", (1, 2, 2)
        )
        g = net.grad_input(np.random.default_rng(0).random((2, 1, 2, 2)), np.array([0, 1]))
        npt.assert_array_equal(g, np.zeros_like(g))

    @pytest.mark.parametrize("arch,shape", [
        ("linear", (1, 6, 6)),
        ("mlp", (1, 6, 6)),
        ("conv", (1, 8, 8)),
        ("conv", (3, 8, 8)),
    ])
    @pytest.mark.parametrize("loss", ["cross-entropy", "margin"])
    def test_grad_input_matches_central_differences(self, arch, shape, loss):
        net = make_net(arch, shape, 4, seed=5)
        rng = make_rng(6, 0, f"fd/{arch}/{loss}")
        x = rng.gen.random((2,) + shape)
        labels = np.array([1, 3])
        analytic = net.grad_input(x, labels, loss=loss)
        step = 1e-5
        coords = [
            tuple(rng.gen.integers(0, d) for d in (2,) + shape) for _ in range(40)
        ]
        for idx in coords:
            plus, minus = x.copy(), x.copy()
            plus[idx] += step
            minus[idx] -= step
            lp, _ = net.loss_and_input_grad(plus, labels, loss=loss)
            lm, _ = net.loss_and_input_grad(minus, labels, loss=loss)
            numeric = (lp[idx[0]] - lm[idx[0]]) / (2 * step)
            denom = max(abs(numeric), abs(analytic[idx]), 1e-8)
            assert abs(numeric - analytic[idx]) / denom < 1e-4

    def test_invalid_label_rejected(self):
        net = make_net("linear", (1, 4, 4), 3, seed=0)
        with pytest.raises(InvalidLabelError):
            net.grad_input(np.zeros((1, 1, 4, 4)), np.array([3]))


class TestZoo:
    def test_archs_build_for_both_channel_counts(self):
        for arch in ("linear", "mlp", "conv"):
            for shape in ((1, 12, 12), (3, 12, 12)):
                net = make_net(arch, shape, 5, seed=1)
                out = net.forward(np.zeros((2,) + shape))
                assert out.shape == (2, 5)

    def test_init_is_seed_deterministic(self):
        a = make_net("mlp", (1, 8, 8), 3, seed=9)
        b = make_net("mlp", (1, 8, 8), 3, seed=9)
        for (_, _, pa), (_, _, pb) in zip(a.parameters(), b.parameters()):
            npt.assert_array_equal(pa, pb)
        c = make_net("mlp", (1, 8, 8), 3, seed=10)
        assert any(
            not np.array_equal(pa, pc)
            for (_, _, pa), (_, _, pc) in zip(a.parameters(), c.parameters())
        )

    def test_stable_softmax_extreme_logits(self):
        probs = stable_softmax(np.array([[1000.0, 0.0, -1000.0]]))
        assert np.isfinite(probs).all()
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
