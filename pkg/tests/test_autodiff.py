import numpy as np
import pytest

from deftensor import autodiff as ad
from deftensor import nn
from deftensor.binary import SteVariant
from deftensor.factorized import LayerMode

from oracles import H, N_POINTS, away_from_zero, check_gradients, rel_err


class TestPrimitiveGradients:
    def test_add_broadcast(self):
        rng = np.random.default_rng(0)
        check_gradients(lambda t, v: ad.add(v[0], v[1]), [rng.standard_normal((3, 4)), rng.standard_normal((1, 4))])

    def test_mul_broadcast(self):
        rng = np.random.default_rng(1)
        check_gradients(lambda t, v: ad.mul(v[0], v[1]), [rng.standard_normal((2, 3, 4)), rng.standard_normal((3, 1))])

    def test_linear(self):
        rng = np.random.default_rng(2)
        inputs = [rng.standard_normal((5, 4)), rng.standard_normal((4, 3)), rng.standard_normal(3)]
        check_gradients(lambda t, v: ad.add(ad.matmul(v[0], v[1]), v[2]), inputs)

    def test_relu(self):
        rng = np.random.default_rng(3)
        check_gradients(lambda t, v: ad.relu(v[0]), [away_from_zero(rng, (4, 5))])

    def test_absolute(self):
        rng = np.random.default_rng(4)
        check_gradients(lambda t, v: ad.absolute(v[0]), [away_from_zero(rng, (4, 5))])

    def test_reshape_and_mean(self):
        rng = np.random.default_rng(5)
        check_gradients(
            lambda t, v: ad.mean(ad.reshape(v[0], (2, 6, 2)), axis=1, keepdims=False),
            [rng.standard_normal((4, 3, 2))],
        )

    def test_mean_keepdims(self):
        rng = np.random.default_rng(6)
        check_gradients(lambda t, v: ad.mean(v[0], axis=1, keepdims=True), [rng.standard_normal((2, 3, 4))])

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), ((2, 1), (0, 2))])
    def test_conv2d(self, stride, padding):
        rng = np.random.default_rng(7)
        inputs = [rng.standard_normal((2, 3, 6, 5)), rng.standard_normal((4, 3, 3, 2))]
        check_gradients(lambda t, v: ad.conv2d(v[0], v[1], stride, padding), inputs)

    def test_conv1d(self):
        rng = np.random.default_rng(8)
        inputs = [rng.standard_normal((2, 2, 1, 20)), rng.standard_normal((3, 2, 1, 6))]
        check_gradients(lambda t, v: ad.conv2d(v[0], v[1], (1, 2), (0, 3)), inputs)

    @pytest.mark.parametrize("kernel,stride", [(2, None), ((1, 3), None), (3, 2)])
    def test_maxpool(self, kernel, stride):
        # distinct well-separated values keep every window away from ties
        rng = np.random.default_rng(9)
        x = rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.01
        check_gradients(lambda t, v: ad.maxpool2d(v[0], kernel, stride), [x])

    def test_mode_product(self):
        rng = np.random.default_rng(10)
        inputs = [rng.standard_normal((3, 4, 2)), rng.standard_normal((5, 4))]
        check_gradients(lambda t, v: ad.mode_product(v[0], v[1], 1), inputs)

    @pytest.mark.parametrize("variant", list(SteVariant))
    def test_sign_ste_surrogate(self, variant):
        rng = np.random.default_rng(11)
        x = away_from_zero(rng, (6, 5))
        if variant is SteVariant.CLIPPED_IDENTITY:
            x = np.where(np.abs(np.abs(x) - 1) < 0.05, x * 1.2, x)
        check_gradients(lambda t, v: ad.sign_ste(v[0], variant, surrogate=True), [x])

    @pytest.mark.parametrize("reduction", ["mean", "sum"])
    def test_cross_entropy(self, reduction):
        rng = np.random.default_rng(12)
        labels = np.array([0, 2, 1, 2])
        check_gradients(lambda t, v: ad.cross_entropy(v[0], labels, reduction), [rng.standard_normal((4, 3))])


class TestSignSte:
    def test_forward_is_sign(self):
        x = np.array([-2.0, -0.5, 0.0, 0.3, 4.0])
        tape = ad.Tape()
        v = tape.leaf(x)
        out = ad.sign_ste(v, SteVariant.TANH)
        np.testing.assert_array_equal(out.value, [-1, -1, 1, 1, 1])
        tape.backward(ad.mean(out))
        np.testing.assert_allclose(v.grad, (1 - np.tanh(x) ** 2) / 5)


class TestCrossEntropy:
    def test_uniform_logits(self):
        for k in (2, 5, 10):
            loss = ad.cross_entropy(np.zeros((1, k)), [k - 1])
            assert float(loss.value) == pytest.approx(np.log(k), abs=1e-15)

    def test_confident_correct(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 100.0
        assert float(ad.cross_entropy(logits, [2]).value) < 1e-10

    def test_shift_invariance(self):
        rng = np.random.default_rng(13)
        z = rng.standard_normal((3, 5))
        y = [0, 4, 2]
        a = float(ad.cross_entropy(z, y).value)
        b = float(ad.cross_entropy(z + 123.4, y).value)
        assert abs(a - b) < 1e-12
        assert a > 0

    def test_large_logits_stable(self):
        loss = ad.cross_entropy(np.array([[1000.0, -1000.0]]), [1])
        assert float(loss.value) == pytest.approx(2000.0)

    def test_invalid_label(self):
        with pytest.raises(ValueError):
            ad.cross_entropy(np.zeros((1, 3)), [3])
        with pytest.raises(ValueError):
            ad.cross_entropy(np.zeros((1, 3)), [-1])


class TestTape:
    def test_linear_input_gradient(self):
        w = np.array([[0.5], [-2.0], [3.0]])
        tape = ad.Tape()
        x = tape.leaf(np.array([[1.0, 1.0, 1.0]]))
        loss = ad.matmul(x, tape.leaf(w, requires_grad=False))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, w.T)

    def test_consumed(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones(3))
        loss = ad.mean(x)
        tape.backward(loss)
        with pytest.raises(ad.TapeConsumedError):
            tape.backward(loss)

    def test_shared_input_accumulates(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([2.0, 3.0]))
        loss = ad.mean(ad.add(ad.mul(x, x), x))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, (2 * x.value + 1) / 2)

    def test_no_grad_leaves_not_recorded(self):
        tape = ad.Tape()
        a = tape.leaf(np.ones(2), requires_grad=False)
        ad.mul(a, a)
        assert tape.nodes == []

    def test_non_scalar_loss(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones(2))
        with pytest.raises(ValueError):
            tape.backward(ad.mul(x, x))


def tiny_model(kind, theta=0.5, ste="id", seed=0, ranks="full"):
    spec = nn.small_cnn_2d((2, 8, 8), 3, widths=(3, 4, 3), hidden=5, kind=kind)
    model = nn.init_model(spec, seed=seed, ranks=ranks, theta=theta, ste=ste)
    # random biases keep every ReLU input away from its kink at zero
    rng = np.random.default_rng(seed + 100)
    for name, p in model.params.items():
        if name.endswith("bias"):
            p.value = rng.normal(0.0, 0.5, p.value.shape)
    return model


def model_gradient_check(model, x, y, rng, mode, masks=None, surrogate=False):
    """Finite-difference check of input and parameter gradients of one model."""
    names = sorted(model.params)

    def loss_for(xv, params):
        saved = {n: model.params[n].value for n in names}
        try:
            for n, v in zip(names, params):
                model.params[n].value = v
            logits, _ = nn.forward(model, xv, mode, masks=masks, surrogate=surrogate)
            return float(ad.cross_entropy(logits, y).value)
        finally:
            for n in names:
                model.params[n].value = saved[n]

    logits, tape = nn.forward(model, x, mode, masks=masks, input_grad=True, param_grad=True, surrogate=surrogate)
    grads = nn.backward(tape, ad.cross_entropy(logits, y))
    values = [x] + [model.params[n].value for n in names]
    analytic = [grads["input"]] + [grads[n] for n in names]
    sizes = np.array([v.size for v in values], dtype=float)
    worst = 0.0
    for _ in range(N_POINTS):
        k = rng.choice(len(values), p=sizes / sizes.sum())
        j = rng.integers(values[k].size)
        plus = [v.copy() for v in values]
        minus = [v.copy() for v in values]
        plus[k].flat[j] += H
        minus[k].flat[j] -= H
        fd = (loss_for(plus[0], plus[1:]) - loss_for(minus[0], minus[1:])) / (2 * H)
        worst = max(worst, rel_err(analytic[k].flat[j], fd))
    return worst


class TestComposedGradients:
    def test_plain_model(self):
        rng = np.random.default_rng(14)
        model = tiny_model("plain", theta=1.0)
        x, y = rng.random((3, 2, 8, 8)), np.array([0, 1, 2])
        assert model_gradient_check(model, x, y, rng, LayerMode.DETERMINISTIC) < 1e-4

    def test_tucker_dropout_replay(self):
        rng = np.random.default_rng(15)
        model = tiny_model("tucker", theta=0.6)
        x, y = rng.random((3, 2, 8, 8)), np.array([0, 1, 2])
        _, tape = nn.forward(model, x, LayerMode.RANDOMIZED, rng)
        assert any(np.any(m.lambdas[0] == 0) or np.any(m.lambdas[1] == 0) for m in tape.masks.values())
        worst = model_gradient_check(model, x, y, rng, LayerMode.REPLAY, masks=tape.masks)
        assert worst < 1e-4

    @pytest.mark.parametrize("ste", ["id", "tanh", "tanh0.75"])
    def test_binary_layer(self, ste):
        # a single layer keeps gradients O(1); through a whole binary network
        # they shrink below the level that central differences can resolve
        rng = np.random.default_rng(16)
        layer = nn.Conv(4, (3, 3), stride=1, padding=1, kind="binary")
        x = away_from_zero(rng, (2, 3, 6, 6))
        w = away_from_zero(rng, (4, 3, 3, 3)) * 0.5
        variant = SteVariant.parse(ste)
        check_gradients(lambda t, v: nn._binary_conv(v[0], v[1], layer, variant, True), [x, w])

    @pytest.mark.parametrize("ste", ["id", "tanh", "tanh0.75"])
    def test_binary_tucker_layer(self, ste):
        rng = np.random.default_rng(17)
        layer = nn.Conv(4, (3, 3), stride=2, padding=1, kind="binary-tucker")
        variant = SteVariant.parse(ste)
        core = rng.standard_normal((3, 2, 2, 2))
        factors = [rng.standard_normal((d, r)) * 0.6 for d, r in zip((4, 3, 3, 3), core.shape)]
        mask = np.ones(core.shape)
        mask[1] = 0.0
        mask[:, :, 0] = 0.0
        x = away_from_zero(rng, (2, 3, 7, 7))

        def build(t, v):
            w = ad.mul(v[1], mask)
            for n in range(4):
                w = ad.mode_product(w, v[2 + n], n)
            return nn._binary_conv(v[0], w, layer, variant, True)

        check_gradients(build, [x, core] + factors)

    def test_matrix_kind_replay(self):
        rng = np.random.default_rng(18)
        model = tiny_model("matrix", theta=0.6)
        x, y = rng.random((2, 2, 8, 8)), np.array([0, 2])
        _, tape = nn.forward(model, x, LayerMode.RANDOMIZED, rng)
        assert model_gradient_check(model, x, y, rng, LayerMode.REPLAY, masks=tape.masks) < 1e-4
