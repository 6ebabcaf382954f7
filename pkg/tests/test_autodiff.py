import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from jointvit import autodiff as ad
from jointvit.autodiff import Graph, Tensor, backward, grad_check
from jointvit.errors import ContractError, DimensionError, NumericInputError


def param(data):
    return Tensor(data, requires_grad=True)


def numeric_grad(f, x, eps=1e-6):
    """Plain central differences on a numpy function, independent of the tape."""
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def max_rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_row_times_column(self):
        np.testing.assert_array_equal((Tensor([[1, 2]]) @ Tensor([[3], [4]])).data, [[11]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_of_sum_is_row_sums_of_b(self, rng):
        a_np, b_np = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        a = param(a_np)
        with Graph() as g:
            loss = ad.sum(ad.matmul(a, Tensor(b_np)))
        backward(g, loss, [a])
        expected = np.tile(b_np.sum(axis=1), (3, 1))
        np.testing.assert_allclose(a.grad, expected, rtol=1e-12)
        fd = numeric_grad(lambda x: (x @ b_np).sum(), a_np)
        assert max_rel(a.grad, fd) < 1e-6

    def test_batched_gradients(self, rng):
        a, b = param(rng.normal(size=(2, 3, 4))), param(rng.normal(size=(2, 4, 5)))
        w = Tensor(rng.normal(size=(2, 3, 5)))
        assert grad_check(lambda: ad.sum(ad.mul(ad.matmul(a, b), w)), [a, b]) < 1e-8

    def test_batched_leading_dims_must_match(self):
        with pytest.raises(DimensionError):
            ad.matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((3, 4, 5))))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0, 0.0]), 0).data, [1 / 3] * 3, rtol=0, atol=1e-16)

    def test_large_shift_does_not_overflow(self):
        out = ad.softmax(Tensor([1000.0, 1000.0]), 0).data
        np.testing.assert_array_equal(out, [0.5, 0.5])

    def test_against_high_precision(self):
        mpmath.mp.dps = 50
        ex = [mpmath.e ** k for k in (1, 2, 3)]
        ref = [float(e / sum(ex)) for e in ex]
        np.testing.assert_allclose(ad.softmax(Tensor([1.0, 2.0, 3.0]), 0).data, ref, rtol=0, atol=1e-12)

    def test_non_finite_input(self):
        with pytest.raises(NumericInputError):
            ad.softmax(Tensor([1.0, np.inf]), 0)

    def test_bad_axis(self):
        with pytest.raises(DimensionError):
            ad.softmax(Tensor(np.ones((2, 2))), 2)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)))
    def test_rows_sum_to_one(self, x):
        y = ad.softmax(Tensor(x), axis=-1).data
        assert np.all(y > 0)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    def test_gradient(self, rng):
        x = param(rng.normal(size=(3, 4)))
        w = Tensor(rng.normal(size=(3, 4)))
        assert grad_check(lambda: ad.sum(ad.mul(ad.softmax(x, 1), w)), [x]) < 1e-5


class TestLayerNorm:
    def test_constant_vector_maps_to_zero(self):
        out = ad.layer_norm(Tensor(np.full((1, 4), 3.7)), Tensor(np.ones(4)), Tensor(np.zeros(4)), 1e-5)
        np.testing.assert_array_equal(out.data, np.zeros((1, 4)))

    def test_zero_gain_returns_beta(self, rng):
        beta = rng.normal(size=4)
        out = ad.layer_norm(Tensor(rng.normal(size=(3, 4))), Tensor(np.zeros(4)), Tensor(beta), 1e-5)
        np.testing.assert_array_equal(out.data, np.tile(beta, (3, 1)))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            ad.layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 6), elements=st.floats(-100, 100)))
    def test_pre_affine_output_is_centred(self, x):
        y = ad.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6)), 1e-5).data
        assert np.all(np.abs(y.mean(axis=-1)) < 1e-10)

    def test_gradient_matches_finite_differences(self, rng):
        x, gamma, beta = param(rng.normal(size=(2, 4))), param(rng.normal(size=4)), param(rng.normal(size=4))
        w = Tensor(rng.normal(size=(2, 4)))
        assert grad_check(lambda: ad.sum(ad.mul(ad.layer_norm(x, gamma, beta, 1e-5), w)), [x, gamma, beta]) < 1e-5


class TestGelu:
    def test_zero(self):
        assert ad.gelu(Tensor([0.0])).data[0] == 0.0

    def test_large_input_is_identity(self):
        assert abs(ad.gelu(Tensor([10.0])).data[0] - 10.0) < 1e-6

    def test_gradient_at_half(self):
        x = param([0.5])
        with Graph() as g:
            loss = ad.sum(ad.gelu(x))
        backward(g, loss, [x])
        c = np.sqrt(2 / np.pi)
        f = lambda v: 0.5 * v * (1 + np.tanh(c * (v + 0.044715 * v ** 3)))  # noqa: E731
        fd = (f(0.5 + 1e-6) - f(0.5 - 1e-6)) / 2e-6
        assert abs(x.grad[0] - fd) < 1e-6


class TestBackward:
    def test_sum(self):
        w = param([1.0, 2.0, 3.0])
        with Graph() as g:
            loss = ad.sum(w)
        backward(g, loss, [w])
        np.testing.assert_array_equal(w.grad, [1, 1, 1])

    def test_half_squared_norm(self):
        w = param([1.0, 2.0, 3.0])
        with Graph() as g:
            loss = ad.scale(ad.sum(ad.mul(w, w)), 0.5)
        backward(g, loss, [w])
        np.testing.assert_array_equal(w.grad, [1, 2, 3])

    def test_non_scalar_loss_rejected(self):
        w = param([1.0, 2.0])
        with Graph() as g:
            out = ad.scale(w, 2.0)
        with pytest.raises(ContractError):
            backward(g, out, [w])

    def test_unused_parameter_gets_exact_zero(self):
        w, unused = param([1.0, 2.0]), param([[5.0, 6.0]])
        with Graph() as g:
            loss = ad.sum(w)
        grads = backward(g, loss, [w, unused])
        assert grads[unused].shape == (1, 2)
        assert np.all(unused.grad == 0.0)

    def test_fan_out_accumulates(self):
        w = param([2.0])
        with Graph() as g:
            loss = ad.sum(ad.add(ad.mul(w, w), w))
        backward(g, loss, [w])
        assert w.grad[0] == 5.0

    def test_default_collects_reachable_leaves(self):
        a, b = param([1.0]), param([2.0])
        with Graph() as g:
            loss = ad.sum(ad.mul(a, b))
        grads = backward(g, loss)
        assert set(map(id, grads)) == {id(a), id(b)}

    def test_no_graph_means_no_recording(self):
        w = param([1.0])
        out = ad.scale(w, 3.0)
        assert out.node_id is None

    def test_nodes_are_topologically_ordered(self):
        a = param(np.ones((2, 2)))
        with Graph() as g:
            ad.sum(ad.gelu(ad.matmul(a, a)))
        for node in g.nodes:
            for inp in node.inputs:
                if inp.node_id is not None:
                    assert inp.node_id < node.node_id

    def test_deterministic(self, rng):
        x = rng.normal(size=(3, 4))

        def run():
            a = param(x)
            with Graph() as g:
                loss = ad.sum(ad.gelu(ad.softmax(ad.matmul(a, ad.transpose(a)), 1)))
            backward(g, loss, [a])
            return loss.data.copy(), a.grad.copy()

        (l1, g1), (l2, g2) = run(), run()
        assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()


class TestShapeOps:
    def test_no_implicit_broadcasting(self):
        with pytest.raises(DimensionError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_bias_add_over_leading_axes(self, rng):
        x, b = param(rng.normal(size=(2, 3, 4))), param(rng.normal(size=(3, 4)))
        np.testing.assert_array_equal(ad.add_bias(x, b).data, x.data + b.data)
        w = Tensor(rng.normal(size=(2, 3, 4)))
        assert grad_check(lambda: ad.sum(ad.mul(ad.add_bias(x, b), w)), [x, b]) < 1e-8

    def test_bias_must_match_trailing_dims(self):
        with pytest.raises(DimensionError):
            ad.add_bias(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))

    @pytest.mark.parametrize("build", [
        lambda x: ad.transpose(x, (2, 0, 1)),
        lambda x: ad.reshape(x, (6, 4)),
        lambda x: x[:, 1, :],
        lambda x: ad.concat([x, ad.scale(x, 2.0)], axis=1),
        lambda x: ad.repeat_leading(x, 3),
        lambda x: ad.softplus(ad.scale(x, 5.0)),
        lambda x: ad.reshape(ad.mean(ad.mul(x, x)), (1,)),
        lambda x: ad.neg(ad.sub(x, ad.scale(x, 0.5))),
    ])
    def test_op_gradients(self, build, rng):
        x = param(rng.normal(size=(2, 3, 4)))
        out_shape = build(x).shape
        w = Tensor(rng.normal(size=out_shape))
        assert grad_check(lambda: ad.sum(ad.mul(build(x), w)), [x]) < 1e-5

    def test_softplus_is_stable(self):
        out = ad.softplus(Tensor([-1e4, 0.0, 1e4])).data
        assert np.all(np.isfinite(out))
        assert out[2] == 1e4 and out[0] == 0.0


class TestGradCheck:
    def test_quadratic(self, rng):
        w = param(rng.normal(size=5))
        assert grad_check(lambda: ad.scale(ad.sum(ad.mul(w, w)), 0.5), [w]) < 1e-9

    def test_softmax_cross_entropy_toy(self, rng):
        z = param(rng.normal(size=(2, 3)))
        y = Tensor(np.eye(3)[[0, 2]])
        assert grad_check(lambda: _cross_entropy(ad.softmax(z, 1), y), [z]) < 1e-6

    def test_corrupted_backward_is_detected(self, rng, monkeypatch):
        def bad_gelu(x):
            out = 0.5 * x.data * (1 + np.tanh(ad._GELU_C * (x.data + ad._GELU_A * x.data ** 3)))
            return ad._record("gelu", (x,), out, lambda g: (g * 0.5,))

        x = param(rng.normal(size=6) * 2)
        assert grad_check(lambda: ad.sum(ad.gelu(x)), [x]) < 1e-6
        monkeypatch.setattr(ad, "gelu", bad_gelu)
        assert grad_check(lambda: ad.sum(ad.gelu(x)), [x]) > 1e-2

    def test_eps_must_be_positive(self):
        w = param([1.0])
        with pytest.raises(ContractError):
            grad_check(lambda: ad.sum(w), [w], eps=0.0)

    def test_non_scalar_function(self):
        w = param([1.0, 2.0])
        with pytest.raises(ContractError):
            grad_check(lambda: ad.scale(w, 1.0), [w])


def _cross_entropy(p, y):
    return ad.neg(ad.sum(ad.mul(y, _log(p))))


def _log(t):
    # test-only op: natural log with its analytic derivative
    return ad._record("log", (t,), np.log(t.data), lambda g: (g / t.data,))
