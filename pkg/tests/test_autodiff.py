"""Gradient engine tests: hand cases, finite-difference oracles, Adam."""

import numpy as np
import pytest

from dfac import autodiff as ad
from dfac.autodiff import Adam, Affine, MLP, Parameter, Tensor
from dfac.seeding import stream


def finite_diff(loss_fn, param, step=1e-5):
    """Central finite differences over every coordinate of one parameter."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(loss_fn().value)
        flat[i] = orig - step
        down = float(loss_fn().value)
        flat[i] = orig
        out[i] = (up - down) / (2 * step)
    return grad


class TestForward:
    def test_affine_identity(self):
        w = Tensor(np.eye(2))
        b = Tensor(np.zeros(2))
        x = Tensor([[1.0, 2.0]])
        out = ad.affine(x, w, b)
        assert np.array_equal(out.value, [[1.0, 2.0]])

    def test_relu_definition(self):
        out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.value, [0.0, 0.0, 2.0])

    def test_cosine_of_zero_is_one(self):
        out = ad.cosine(Tensor(np.zeros(8)))
        assert np.array_equal(out.value, np.ones(8))

    def test_matmul_shape_mismatch_names_op(self):
        with pytest.raises(ValueError, match="matmul"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_forward_deterministic(self):
        rng = stream(0, "det")
        mlp = MLP(rng, [3, 8, 2], ["relu", None], "net")
        x = Tensor(rng.normal(size=(4, 3)))
        a = mlp(x).value
        b = mlp(x).value
        assert np.array_equal(a, b)

    def test_softmax_rows_normalized(self):
        rng = stream(1, "softmax")
        x = Tensor(rng.normal(0, 5, size=(10, 7)))
        s = ad.softmax(x, axis=-1).value
        assert np.all(s >= 0)
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


class TestBackward:
    def test_linear_layer_gradient(self):
        w = Parameter(np.zeros((2, 2)), "w")
        x = Tensor([[1.0, 1.0]])
        loss = ad.reduce_sum(ad.matmul(x, w))
        ad.backward(loss)
        assert np.array_equal(w.grad, [[1.0, 1.0], [1.0, 1.0]])

    def test_constant_loss_zero_gradients(self):
        w = Parameter(np.ones((3, 3)), "w")
        loss = ad.reduce_sum(Tensor(np.ones(4)))
        ad.backward(loss)
        assert np.array_equal(w.grad, np.zeros((3, 3)))

    def test_two_layer_mlp_matches_finite_differences(self):
        rng = stream(7, "fd")
        mlp = MLP(rng, [4, 16, 16, 1], ["relu", "relu", None], "net")
        x = Tensor(rng.normal(size=(5, 4)))
        y = rng.normal(size=(5, 1))

        def loss_fn():
            d = ad.sub(mlp(x), Tensor(y))
            return ad.reduce_mean(ad.mul(d, d))

        ad.zero_grads(mlp.parameters())
        ad.backward(loss_fn())
        for p in mlp.parameters():
            numeric = finite_diff(loss_fn, p)
            scale = np.maximum(np.abs(numeric), 1e-3)
            assert np.max(np.abs(p.grad - numeric) / scale) < 1e-4, p.name

    def test_backward_linearity(self):
        rng = stream(3, "lin")
        w = Parameter(rng.normal(size=(3, 3)), "w")
        x = Tensor(rng.normal(size=(2, 3)))

        def grad_of(scale_f, scale_g):
            ad.zero_grads([w])
            f = ad.reduce_sum(ad.matmul(x, w))
            g = ad.reduce_mean(ad.relu(ad.matmul(x, w)))
            ad.backward(ad.add(ad.scale(f, scale_f), ad.scale(g, scale_g)))
            return w.grad.copy()

        combined = grad_of(2.0, -3.0)
        parts = 2.0 * grad_of(1.0, 0.0) - 3.0 * grad_of(0.0, 1.0)
        np.testing.assert_allclose(combined, parts, atol=1e-10)

    def test_output_gradient_shape_checked(self):
        w = Parameter(np.ones((2, 2)), "w")
        out = ad.matmul(Tensor(np.ones((1, 2))), w)
        with pytest.raises(ValueError, match="shape"):
            ad.backward(out, np.ones(5))

    def test_gather_rows_scatters_gradient(self):
        w = Parameter(np.arange(6.0).reshape(3, 2), "w")
        picked = ad.gather_rows(w, np.asarray([0, 2, 2]))
        ad.backward(ad.reduce_sum(picked))
        assert np.array_equal(w.grad, [[1, 1], [0, 0], [2, 2]])

    def test_multihead_ops_match_per_head_matmul(self):
        rng = stream(9, "mh")
        x = rng.normal(size=(5, 4))
        w1 = Parameter(rng.normal(size=(3, 4, 6)), "w1")
        b1 = Parameter(rng.normal(size=(3, 6)), "b1")
        w2 = Parameter(rng.normal(size=(3, 6, 2)), "b2w")
        b2 = Parameter(rng.normal(size=(3, 2)), "b2b")
        first = ad.multihead_input(x, w1, b1)
        out = ad.multihead_affine(first, w2, b2)
        for h in range(3):
            expected = (x @ w1.value[h] + b1.value[h]) @ w2.value[h] + b2.value[h]
            np.testing.assert_allclose(out.value[:, h, :], expected, atol=1e-12)

        def loss_fn():
            t = ad.multihead_affine(ad.multihead_input(x, w1, b1), w2, b2)
            return ad.reduce_mean(ad.mul(t, t))

        ad.zero_grads([w1, b1, w2, b2])
        ad.backward(loss_fn())
        for p in (w1, b1, w2, b2):
            numeric = finite_diff(loss_fn, p)
            np.testing.assert_allclose(p.grad, numeric, rtol=1e-5, atol=1e-7)


class TestRandomizedGradientOracle:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_composite_graphs(self, seed):
        rng = stream(seed, "composite")
        layers = int(rng.integers(1, 4))
        widths = [int(rng.integers(2, 12)) for _ in range(layers)]
        sizes = [6, *widths, 1]
        acts = [str(rng.choice(["relu", "elu"])) for _ in widths] + [None]
        mlp = MLP(rng, sizes, acts, "net")
        x = Tensor(rng.normal(size=(4, 6)))

        def loss_fn():
            out = mlp(x)
            return ad.reduce_mean(ad.mul(out, ad.absolute(out)))

        ad.gradient_check(loss_fn, mlp.parameters(), rng, n_probes=30)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = Parameter(np.asarray([1.0, 2.0]), "p")
        opt = Adam([p], lr=0.1)
        opt.step()
        assert np.array_equal(p.value, [1.0, 2.0])

    def test_first_step_magnitude(self):
        # bias correction makes the first update very nearly lr * sign(grad)
        p = Parameter(np.asarray([0.0]), "p")
        opt = Adam([p], lr=0.1)
        p.grad[...] = 1.0
        opt.step()
        np.testing.assert_allclose(p.value, [-0.1], atol=1e-8)
        assert opt.t == 1
        assert np.array_equal(p.grad, [0.0])

    def test_identical_parameters_update_identically(self):
        a = Parameter(np.asarray([0.5]), "a")
        b = Parameter(np.asarray([0.5]), "b")
        opt = Adam([a, b], lr=0.01)
        for _ in range(3):
            a.grad[...] = 0.7
            b.grad[...] = 0.7
            opt.step()
        assert np.array_equal(a.value, b.value)

    def test_nonfinite_gradient_names_parameter(self):
        p = Parameter(np.asarray([1.0]), "agent.out.w")
        opt = Adam([p], lr=0.1)
        p.grad[...] = np.nan
        with pytest.raises(FloatingPointError, match="agent.out.w"):
            opt.step()

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            Adam([Parameter(np.zeros(1), "p"), Parameter(np.zeros(1), "p")], lr=0.1)


class TestInit:
    def test_fanin_bounds(self):
        rng = stream(0, "init")
        layer = Affine(rng, 64, 32, "layer")
        bound = 1.0 / 8.0
        assert np.all(np.abs(layer.w.value) <= bound)
        assert np.all(np.abs(layer.b.value) <= bound)
