import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegadapter import autodiff as ad
from eegadapter.autodiff import (
    NonDifferentiablePointWarning,
    NumericFaultError,
    ShapeMismatchError,
    TapeError,
    Tensor,
    fresh_tape,
    grad_check,
    no_grad,
)


def rand(shape, seed=0, scale=1.0):
    return np.random.default_rng(seed).normal(0.0, scale, size=shape)


class TestForwardOps:
    def test_matmul_identity(self):
        m = Tensor(rand((3, 3), 1))
        out = Tensor(np.eye(3)) @ m
        np.testing.assert_array_equal(out.data, m.data)

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeMismatchError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_softmax_symmetry(self):
        out = ad.softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, np.full(3, 1.0 / 3.0), atol=1e-15)

    def test_conv1d_length_matches_sliding_window_oracle(self):
        # closed form: floor((10 - 3) / 3) + 1 = 3
        x = Tensor(rand((2, 10), 2))
        w = Tensor(rand((4, 2, 3), 3))
        out = ad.conv1d(x, w, stride=3)
        assert out.shape == (4, 3)
        # oracle: slide the kernel by hand
        expected = np.zeros((4, 3))
        for o in range(4):
            for t in range(3):
                expected[o, t] = np.sum(w.data[o] * x.data[:, 3 * t: 3 * t + 3])
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_conv1d_too_short_input(self):
        with pytest.raises(ShapeMismatchError, match="length 2"):
            ad.conv1d(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 1, 3))))

    def test_debug_mode_flags_nonfinite(self):
        ad.set_debug(True)
        try:
            with pytest.raises(NumericFaultError):
                ad.log(Tensor([-1.0]))
        finally:
            ad.set_debug(False)

    def test_concat_and_slice_round_trip(self):
        a, b = Tensor(rand((2, 3), 4)), Tensor(rand((2, 5), 5))
        cat = ad.concat([a, b], axis=1)
        np.testing.assert_array_equal(cat[:, :3].data, a.data)
        np.testing.assert_array_equal(cat[:, 3:].data, b.data)

    def test_group_norm_of_zeros_is_zero(self):
        x = Tensor(np.zeros((4, 6)))
        out = ad.group_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), groups=1)
        np.testing.assert_array_equal(out.data, np.zeros((4, 6)))


class TestBackward:
    def test_sum_of_squares(self):
        with fresh_tape() as tape:
            x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
            loss = ad.mul(x, x).sum()
            tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_mean_gradient(self):
        with fresh_tape() as tape:
            x = Tensor(np.arange(4.0), requires_grad=True)
            tape.backward(x.mean())
        np.testing.assert_array_equal(x.grad, np.full(4, 0.25))

    def test_gradient_accumulates_across_uses(self):
        with fresh_tape() as tape:
            x = Tensor([3.0], requires_grad=True)
            y = (x + x).sum()
            tape.backward(y)
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_non_scalar_loss_rejected(self):
        with fresh_tape() as tape:
            x = Tensor([1.0, 2.0], requires_grad=True)
            y = x + x
            with pytest.raises(TapeError, match="scalar"):
                tape.backward(y)

    def test_double_backward_rejected(self):
        with fresh_tape() as tape:
            x = Tensor([1.0], requires_grad=True)
            y = x.sum()
            tape.backward(y)
            with pytest.raises(TapeError, match="reset"):
                tape.backward(y)
        # after reset the tape is usable again
        with fresh_tape() as tape:
            y2 = x.sum()
            tape.backward(y2)
            tape.reset()
            y3 = x.sum()
            tape.backward(y3)

    def test_loss_from_other_tape_rejected(self):
        with fresh_tape() as t1:
            x = Tensor([1.0], requires_grad=True)
            y = x.sum()
        with fresh_tape() as t2:
            with pytest.raises(TapeError, match="tape"):
                t2.backward(y)

    def test_no_grad_blocks_recording(self):
        with fresh_tape() as tape:
            x = Tensor([1.0], requires_grad=True)
            with no_grad():
                y = (x * x).sum()
            assert not y.requires_grad
            assert len(tape) == 0

    def test_frozen_leaf_gets_no_grad(self):
        with fresh_tape() as tape:
            x = Tensor([1.0, 2.0], requires_grad=True)
            c = Tensor([5.0, 5.0])  # requires_grad=False
            tape.backward(ad.mul(x, c).sum())
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, [5.0, 5.0])

    def test_mlp_matches_finite_differences(self):
        # random 3-layer MLP, gradient w.r.t. the input
        rng = np.random.default_rng(7)
        w1, b1 = Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=8))
        w2, b2 = Tensor(rng.normal(size=(8, 6))), Tensor(rng.normal(size=6))
        w3, b3 = Tensor(rng.normal(size=(6, 1))), Tensor(rng.normal(size=1))

        def mlp(x):
            h1 = ad.relu((x @ w1) + b1)
            h2 = ad.gelu((h1 @ w2) + b2)
            return ((h2 @ w3) + b3).sum()

        err = grad_check(mlp, Tensor(rng.normal(size=(3, 5))), h=1e-5)
        assert err < 1e-4


class TestGradCheck:
    def test_quadratic_is_exact(self):
        err = grad_check(lambda x: ad.mul(x, x).sum(), Tensor([3.0]))
        assert err < 1e-8

    def test_relu_kink_warns(self):
        with pytest.warns(NonDifferentiablePointWarning):
            grad_check(lambda x: ad.relu(x).sum(), Tensor([0.0]))

    @pytest.mark.parametrize("name,fn,shape", [
        ("relu", lambda x: ad.relu(x).sum(), (4, 3)),
        ("leaky_relu", lambda x: ad.leaky_relu(x, 0.2).sum(), (4, 3)),
        ("gelu", lambda x: ad.gelu(x).sum(), (4, 3)),
        ("softmax", lambda x: ad.mul(ad.softmax(x, axis=1), Tensor(rand((3, 4), 11))).sum(), (3, 4)),
        ("log_softmax", lambda x: ad.mul(ad.log_softmax(x, axis=1), Tensor(rand((3, 4), 12))).sum(), (3, 4)),
        ("mean_axis", lambda x: ad.mul(x.mean(axis=0), Tensor(rand(5, 13))).sum(), (3, 5)),
        ("transpose", lambda x: ad.mul(x.T, Tensor(rand((5, 3), 14))).sum(), (3, 5)),
        ("reshape", lambda x: ad.mul(x.reshape(15), Tensor(rand(15, 15))).sum(), (3, 5)),
        ("slice", lambda x: x[1:, ::2].sum(), (4, 6)),
        ("div", lambda x: ad.div(x, Tensor(np.abs(rand((4, 3), 16)) + 1.0)).sum(), (4, 3)),
        ("power", lambda x: ad.power(ad.mul(x, x), 0.5).sum(), (4, 3)),
        ("log", lambda x: ad.log(ad.mul(x, x) + Tensor(np.ones((4, 3)))).sum(), (4, 3)),
        ("concat", lambda x: ad.concat([x, ad.mul(x, x)], axis=0).sum(), (2, 3)),
    ])
    def test_op_gradients(self, name, fn, shape):
        x = Tensor(rand(shape, seed=hash(name) % 2**31, scale=1.0) + 0.1)
        assert grad_check(fn, x) < 1e-4, name

    def test_conv1d_gradients_both_args(self):
        x0 = rand((2, 11), 21)
        w0 = rand((3, 2, 3), 22)
        assert grad_check(lambda x: ad.conv1d(x, Tensor(w0), stride=2).sum(), Tensor(x0)) < 1e-4
        assert grad_check(
            lambda w: ad.conv1d(Tensor(x0), w.reshape(3, 2, 3), stride=2).sum(),
            Tensor(w0.reshape(-1)),
        ) < 1e-4

    def test_group_norm_gradients_all_args(self):
        x0 = rand((4, 5), 23)
        g0 = np.abs(rand(4, 24)) + 0.5
        b0 = rand(4, 25)
        assert grad_check(
            lambda x: ad.mul(ad.group_norm(x, Tensor(g0), Tensor(b0), 2), Tensor(rand((4, 5), 26))).sum(),
            Tensor(x0)) < 1e-4
        assert grad_check(
            lambda g: ad.mul(ad.group_norm(Tensor(x0), g, Tensor(b0), 2), Tensor(rand((4, 5), 26))).sum(),
            Tensor(g0)) < 1e-4
        assert grad_check(
            lambda b: ad.mul(ad.group_norm(Tensor(x0), Tensor(g0), b, 2), Tensor(rand((4, 5), 26))).sum(),
            Tensor(b0)) < 1e-4

    def test_matmul_broadcast_add_gradients(self):
        a0 = rand((3, 4), 27)
        b0 = rand(4, 28)
        assert grad_check(lambda a: ((a @ Tensor(rand((4, 2), 29))) + Tensor(b0[:2])).sum(),
                          Tensor(a0)) < 1e-4
        assert grad_check(lambda b: (Tensor(a0) + b).sum(), Tensor(b0)) < 1e-4


class TestDeterminism:
    def _run(self, seed):
        rng = np.random.default_rng(seed)
        with fresh_tape() as tape:
            x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
            loss = ad.gelu(x @ w).mean()
            tape.backward(loss)
            return loss.data.copy(), x.grad.copy(), w.grad.copy()

    def test_same_seed_bitwise_identical(self):
        l1, gx1, gw1 = self._run(42)
        l2, gx2, gw2 = self._run(42)
        assert np.array_equal(l1, l2)
        assert np.array_equal(gx1, gx2)
        assert np.array_equal(gw1, gw2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(rows, cols, seed):
    x = Tensor(rand((rows, cols), seed, scale=3.0))
    s = ad.softmax(x, axis=1)
    np.testing.assert_allclose(s.data.sum(axis=1), np.ones(rows), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_multi_use_gradient_scales_with_uses(n_uses, seed):
    with fresh_tape() as tape:
        x = Tensor(rand(3, seed), requires_grad=True)
        acc = x
        for _ in range(n_uses - 1):
            acc = acc + x
        tape.backward(acc.sum())
    np.testing.assert_array_equal(x.grad, np.full(3, float(n_uses)))
