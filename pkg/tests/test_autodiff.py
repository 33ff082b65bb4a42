import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alphagan import autodiff as ad
from alphagan.autodiff import DomainError, ShapeError, Tape, Tensor, TapeError


def watched(*values):
    tape = Tape()
    return tape, [tape.watch(Tensor(v)) for v in values]


class TestForward:
    def test_sigmoid_zero(self):
        assert ad.sigmoid(Tensor([0.0])).item() == 0.5

    def test_leaky_relu_slope(self):
        np.testing.assert_allclose(ad.leaky_relu(Tensor([-1.0]), 0.2).data, [-0.2])

    def test_matmul_identity(self):
        m = np.random.default_rng(0).standard_normal((3, 3))
        np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(m)).data, m)

    def test_linear_matches_matmul_plus_bias(self):
        rng = np.random.default_rng(1)
        x, w, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 2)), rng.standard_normal(2)
        np.testing.assert_allclose(ad.linear(x, w, b).data, x @ w + b)

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(np.array([[1000.0, 1001.0], [-5.0, 3.0]]))
        s = ad.softmax(x, axis=1).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0)
        assert np.all(np.isfinite(s))

    def test_log_softmax_consistent(self):
        x = np.random.default_rng(2).standard_normal((3, 5))
        np.testing.assert_allclose(np.exp(ad.log_softmax(x, axis=1).data), ad.softmax(x, axis=1).data)

    def test_softplus_is_stable(self):
        out = ad.softplus(Tensor([-800.0, 0.0, 800.0])).data
        np.testing.assert_allclose(out, [0.0, np.log(2.0), 800.0])

    def test_sigmoid_extremes_finite(self):
        out = ad.sigmoid(Tensor([-800.0, 800.0])).data
        np.testing.assert_allclose(out, [0.0, 1.0])

    def test_project_unit_ball(self):
        out = ad.project_unit_ball(Tensor([[3.0, 4.0], [0.3, 0.4]])).data
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), [1.0, 0.5])

    def test_forward_is_deterministic(self):
        x = np.random.default_rng(3).standard_normal((8, 4))
        a = ad.tanh(ad.matmul(x, x.T)).data
        b = ad.tanh(ad.matmul(x, x.T)).data
        assert a.tobytes() == b.tobytes()

    def test_untaped_ops_record_nothing(self):
        tape = Tape()
        ad.add(Tensor([1.0]), Tensor([2.0]))
        assert len(tape) == 0

    def test_taped_ops_are_recorded(self):
        tape, (x,) = watched([1.0, 2.0])
        ad.sum(ad.mul(x, x))
        assert len(tape) == 2


class TestErrors:
    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_add_mismatch(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_log_domain(self):
        with pytest.raises(DomainError):
            ad.log(Tensor([1.0, 0.0]))

    def test_exp_overflow_guard(self):
        with pytest.raises(DomainError):
            ad.exp(Tensor([701.0]))
        assert np.isfinite(ad.exp(Tensor([700.0])).item())

    def test_errors_are_value_errors(self):
        assert issubclass(ShapeError, ValueError)
        assert issubclass(DomainError, ValueError)

    def test_non_positive_dimension_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((0, 3)))

    def test_tensor_values_read_only(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_mixed_tapes_rejected(self):
        _, (a,) = watched([1.0])
        _, (b,) = watched([2.0])
        with pytest.raises(TapeError):
            ad.add(a, b)


class TestBackward:
    def test_square(self):
        _, (x,) = watched([3.0])
        ad.backward(ad.mul(x, x))
        np.testing.assert_allclose(x.grad, [6.0])

    def test_mean(self):
        _, (x,) = watched([1.0, 2.0, 3.0, 4.0])
        ad.backward(ad.mean(x))
        np.testing.assert_allclose(x.grad, [0.25] * 4)

    def test_non_scalar_rejected(self):
        _, (x,) = watched([1.0, 2.0])
        with pytest.raises(ShapeError):
            ad.backward(ad.mul(x, x))

    def test_double_backward_rejected(self):
        _, (x,) = watched([1.0])
        y = ad.sum(ad.mul(x, x))
        ad.backward(y)
        with pytest.raises(TapeError):
            ad.backward(y)

    def test_consumed_tape_rejects_new_ops(self):
        _, (x,) = watched([1.0])
        ad.backward(ad.sum(x))
        with pytest.raises(TapeError):
            ad.mul(x, x)

    def test_unreached_leaf_gets_zero_grad(self):
        _, (x, y) = watched([1.0, 2.0], [5.0])
        ad.backward(ad.sum(x))
        np.testing.assert_array_equal(y.grad, [0.0])

    def test_fan_out_accumulates(self):
        _, (x,) = watched([2.0])
        ad.backward(ad.add(ad.mul(x, x), ad.scale(x, 3.0)))
        np.testing.assert_allclose(x.grad, [7.0])

    def test_broadcast_bias_gradient(self):
        _, (x, b) = watched(np.ones((4, 3)), np.zeros(3))
        ad.backward(ad.sum(ad.add_bias(x, b)))
        np.testing.assert_allclose(b.grad, [4.0, 4.0, 4.0])

    def test_abs_subgradient_zero(self):
        _, (x,) = watched([0.0, -2.0, 3.0])
        ad.backward(ad.sum(ad.abs(x)))
        np.testing.assert_array_equal(x.grad, [0.0, -1.0, 1.0])

    def test_row_norm_zero_row(self):
        _, (x,) = watched(np.array([[0.0, 0.0], [3.0, 4.0]]))
        ad.backward(ad.sum(ad.row_norm(x)))
        np.testing.assert_allclose(x.grad, [[0.0, 0.0], [0.6, 0.8]])

    def test_two_layer_mlp_matches_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 3))

        def loss(w1, b1, w2, b2):
            h = ad.tanh(ad.linear(x, w1, b1))
            return ad.mean(ad.softplus(ad.linear(h, w2, b2)))

        points = [rng.standard_normal((3, 4)), rng.standard_normal(4), rng.standard_normal((4, 1)), rng.standard_normal(1)]
        assert ad.grad_check(loss, points) < 1e-5

    def test_deep_chain_rule(self):
        def nested(x):
            y = x
            for _ in range(20):
                y = ad.tanh(ad.scale(y, 1.1))
            return ad.sum(y)

        assert ad.grad_check(nested, np.random.default_rng(5).standard_normal(4)) < 1e-5

    def test_custom_op_through_apply_op(self):
        def cube(x):
            return ad.apply_op(x.data**3, (x,), lambda g: (3 * g * x.data**2,))

        _, (x,) = watched([2.0])
        ad.backward(ad.sum(cube(x)))
        np.testing.assert_allclose(x.grad, [12.0])


class TestGradCheck:
    def test_sigmoid_sum(self):
        x = np.random.default_rng(6).standard_normal(10)
        assert ad.grad_check(lambda t: ad.sum(ad.sigmoid(t)), x) < 1e-6

    def test_l1_away_from_zero(self):
        x = np.random.default_rng(7).uniform(0.5, 2.0, 6) * np.array([1, -1, 1, -1, 1, -1])
        assert ad.grad_check(lambda t: ad.sum(ad.abs(t)), x) < 1e-6

    def test_constant_function(self):
        assert ad.grad_check(lambda t: Tensor([3.0]), np.ones(3)) == 0.0

    def test_step_bounds(self):
        with pytest.raises(ValueError):
            ad.grad_check(lambda t: ad.sum(t), np.ones(2), step=0.1)
        with pytest.raises(ValueError):
            ad.grad_check(lambda t: ad.sum(t), np.ones(2), step=0.0)

    def test_detects_wrong_rule(self):
        def wrong_square(x):
            return ad.apply_op(x.data**2, (x,), lambda g: (g * x.data,))

        assert ad.grad_check(lambda t: ad.sum(wrong_square(t)), np.array([1.0, 2.0])) > 0.1


finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


class TestProperties:
    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=finite))
    def test_projection_idempotent_and_bounded(self, x):
        p = ad.project_unit_ball(x).data
        assert np.all(np.linalg.norm(p, axis=1) <= 1.0 + 1e-12)
        np.testing.assert_allclose(ad.project_unit_ball(p).data, p, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (2, 5), elements=finite))
    def test_softmax_is_a_distribution(self, x):
        s = ad.softmax(x, axis=1).data
        assert np.all(s >= 0)
        np.testing.assert_allclose(s.sum(axis=1), 1.0)

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)), arrays(np.float64, (2, 3), elements=st.floats(-3, 3)))
    def test_product_gradient(self, a, b):
        assert ad.grad_check(lambda x, y: ad.sum(ad.mul(ad.tanh(x), y)), [a, b]) < 1e-5
