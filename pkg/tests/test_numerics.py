"""Autodiff op set, Adam, and the gradient checker."""

import numpy as np
import pytest
import scipy.sparse as sp

from shortgcl import numerics as nm
from shortgcl.numerics import (
    AdamState,
    NumericsError,
    Tensor,
    adam_step,
    backward,
    grad_check,
)


def _rand(rng, rows, cols, margin=0.0):
    """Entries in [-1, 1]; with margin, kept away from zero for ReLU kinks."""
    x = rng.uniform(-1.0, 1.0, size=(rows, cols))
    if margin:
        x = np.where(np.abs(x) < margin, np.sign(x) * margin + (x == 0) * margin, x)
    return x


class TestBackwardBasics:
    def test_matmul_sum_hand_adjoint(self):
        # loss = sum(W @ x) with W = [[1,2],[3,4]], x = [1,1]^T
        w = nm.parameter(np.array([[1.0, 2.0], [3.0, 4.0]]))
        x = nm.parameter(np.array([[1.0], [1.0]]))
        loss = nm.sum_all(nm.matmul(w, x))
        backward(loss)
        np.testing.assert_allclose(w.grad, np.ones((2, 2)))
        np.testing.assert_allclose(x.grad, np.array([[4.0], [6.0]]))

    def test_relu_dead_region_blocks_gradient(self):
        x = nm.parameter(np.array([[-2.0]]))
        loss = nm.sum_all(nm.scale(nm.relu(x), 3.0))
        backward(loss)
        np.testing.assert_allclose(x.grad, np.zeros((1, 1)))

    def test_norm_then_dot_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = nm.parameter(rng.uniform(0.2, 1.0, size=(1, 4)))

        def loss_fn():
            y = nm.row_normalize(x)
            return nm.sum_all(nm.mul(y, y))

        err = grad_check(loss_fn, {"x": x})
        assert err < 1e-4

    def test_non_scalar_root_rejected(self):
        x = nm.parameter(np.ones((2, 2)))
        with pytest.raises(NumericsError):
            backward(nm.relu(x))

    def test_backward_twice_accumulates(self):
        x = nm.parameter(np.array([[2.0, 3.0]]))
        loss = nm.sum_all(x)
        backward(loss)
        backward(loss)
        np.testing.assert_allclose(x.grad, 2 * np.ones((1, 2)))

    def test_shared_subexpression_counts_both_paths(self):
        # loss = sum(x * x) => grad 2x
        x = nm.parameter(np.array([[1.5, -0.5]]))
        loss = nm.sum_all(nm.mul(x, x))
        backward(loss)
        np.testing.assert_allclose(x.grad, np.array([[3.0, -1.0]]))


class TestOpGradients:
    """Every registered op passes finite-difference checking on random small
    inputs kept away from ReLU kinks."""

    @pytest.mark.parametrize("seed", range(3))
    def test_matmul(self, seed):
        rng = np.random.default_rng(seed)
        a = nm.parameter(_rand(rng, 3, 4))
        b = nm.parameter(_rand(rng, 4, 2))
        err = grad_check(lambda: nm.sum_all(nm.mul(nm.matmul(a, b), nm.matmul(a, b))),
                         {"a": a, "b": b})
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_matmul_nt_and_similarity(self, seed):
        rng = np.random.default_rng(seed + 10)
        a = nm.parameter(_rand(rng, 3, 4))
        b = nm.parameter(_rand(rng, 5, 4))
        err = grad_check(lambda: nm.sum_all(nm.exp(nm.matmul_nt(a, b))), {"a": a, "b": b})
        assert err < 1e-4
        err = grad_check(lambda: nm.sum_all(nm.exp(nm.similarity(a))), {"a": a})
        assert err < 1e-4

    def test_spmm(self):
        rng = np.random.default_rng(4)
        s = sp.csr_matrix(np.array([[0.0, 2.0], [1.0, 0.0], [0.5, 0.5]]))
        x = nm.parameter(_rand(rng, 2, 3))
        err = grad_check(lambda: nm.sum_all(nm.mul(nm.spmm(s, x), nm.spmm(s, x))), {"x": x})
        assert err < 1e-4

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(5)
        x = nm.parameter(_rand(rng, 4, 4, margin=1e-3))
        err = grad_check(lambda: nm.sum_all(nm.mul(nm.relu(x), nm.relu(x))), {"x": x})
        assert err < 1e-4

    def test_row_normalize(self):
        rng = np.random.default_rng(6)
        x = nm.parameter(_rand(rng, 4, 3) + 2.0)  # rows well away from zero norm
        w = nm.constant(rng.uniform(-1, 1, size=(4, 3)))
        err = grad_check(lambda: nm.sum_all(nm.mul(nm.row_normalize(x), w)), {"x": x})
        assert err < 1e-4

    def test_concat_cols(self):
        rng = np.random.default_rng(7)
        a = nm.parameter(_rand(rng, 3, 2))
        b = nm.parameter(_rand(rng, 3, 4))
        w = nm.constant(rng.uniform(-1, 1, size=(3, 6)))
        err = grad_check(
            lambda: nm.sum_all(nm.mul(nm.concat_cols([a, b]), w)), {"a": a, "b": b}
        )
        assert err < 1e-4

    def test_softmax_rows(self):
        rng = np.random.default_rng(8)
        x = nm.parameter(_rand(rng, 3, 5))
        w = nm.constant(rng.uniform(-1, 1, size=(3, 5)))
        err = grad_check(lambda: nm.sum_all(nm.mul(nm.softmax_rows(x), w)), {"x": x})
        assert err < 1e-4

    def test_log_exp(self):
        rng = np.random.default_rng(9)
        x = nm.parameter(rng.uniform(0.5, 2.0, size=(3, 3)))
        err = grad_check(lambda: nm.sum_all(nm.log(x)), {"x": x})
        assert err < 1e-4
        err = grad_check(lambda: nm.sum_all(nm.exp(x)), {"x": x})
        assert err < 1e-4

    def test_gathers(self):
        rng = np.random.default_rng(10)
        x = nm.parameter(_rand(rng, 5, 4))
        rows = np.array([0, 2, 2, 4])
        cols = np.array([1, 3, 1])
        err = grad_check(
            lambda: nm.sum_all(nm.mul(nm.gather_rows(x, rows), nm.gather_rows(x, rows))),
            {"x": x},
        )
        assert err < 1e-4
        err = grad_check(
            lambda: nm.sum_all(nm.mul(nm.gather_cols(x, cols), nm.gather_cols(x, cols))),
            {"x": x},
        )
        assert err < 1e-4

    def test_elementwise_and_scalars(self):
        rng = np.random.default_rng(11)
        a = nm.parameter(_rand(rng, 2, 3))
        b = nm.parameter(_rand(rng, 2, 3))
        bias = nm.parameter(_rand(rng, 1, 3))

        def loss_fn():
            t = nm.add(a, b)
            t = nm.sub(t, nm.mul(a, b))
            t = nm.add_rowvec(t, bias)
            t = nm.add_scalar(t, 0.5)
            return nm.sum_all(nm.mul(nm.scale(t, 1.7), t))

        err = grad_check(loss_fn, {"a": a, "b": b, "bias": bias})
        assert err < 1e-4


class TestOpForwardValues:
    def test_row_normalize_unit_rows_and_zero_guard(self):
        x = nm.constant(np.array([[3.0, 4.0], [0.0, 0.0], [1e-15, 0.0]]))
        y = nm.row_normalize(x).data
        np.testing.assert_allclose(y[0], [0.6, 0.8])
        np.testing.assert_allclose(y[1], [0.0, 0.0])
        np.testing.assert_allclose(y[2], [0.0, 0.0])
        norms = np.linalg.norm(y, axis=1)
        assert abs(norms[0] - 1.0) < 1e-6

    def test_row_normalize_zero_row_zero_gradient(self):
        x = nm.parameter(np.array([[0.0, 0.0]]))
        loss = nm.sum_all(nm.row_normalize(x))
        backward(loss)
        np.testing.assert_allclose(x.grad, np.zeros((1, 2)))

    def test_softmax_rows_sum_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(6, 4))
        y = nm.softmax_rows(nm.constant(x)).data
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)
        y_shift = nm.softmax_rows(nm.constant(x + 123.4)).data
        np.testing.assert_allclose(y, y_shift, atol=1e-12)

    def test_log_floor_clamps_value_and_gradient(self):
        x = nm.parameter(np.array([[0.0, 1.0]]))
        out = nm.log(x, floor=1e-12)
        assert out.data[0, 0] == pytest.approx(np.log(1e-12))
        loss = nm.sum_all(out)
        backward(loss)
        assert x.grad[0, 0] == 0.0
        assert x.grad[0, 1] == pytest.approx(1.0)

    def test_sparse_tensors_stay_constant(self):
        # Sparse matrices enter only via spmm and never require gradients.
        s = sp.csr_matrix(np.eye(2))
        x = nm.parameter(np.ones((2, 2)))
        loss = nm.sum_all(nm.spmm(s, x))
        backward(loss)
        assert x.grad is not None


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        p = nm.parameter(np.array([[1.0, -2.0]]))
        params = {"p": p}
        state = AdamState(params)
        for _ in range(5):
            adam_step(params, {"p": np.zeros((1, 2))}, state, lr=0.1)
        np.testing.assert_allclose(p.data, [[1.0, -2.0]])

    def test_single_step_hand_value(self):
        # g=1: m_hat = v_hat = 1, so the update is -lr / (1 + eps)
        p = nm.parameter(np.array([[0.0]]))
        params = {"p": p}
        state = AdamState(params)
        adam_step(params, {"p": np.ones((1, 1))}, state, lr=0.1)
        expected = -0.1 / (1.0 + 1e-8)
        assert p.data[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_two_tensors_share_step_counter(self):
        a = nm.parameter(np.zeros((1, 1)))
        b = nm.parameter(np.zeros((2, 2)))
        params = {"a": a, "b": b}
        state = AdamState(params)
        adam_step(params, {"a": np.ones((1, 1)), "b": np.ones((2, 2))}, state, lr=0.1)
        adam_step(params, {"a": np.ones((1, 1)), "b": np.ones((2, 2))}, state, lr=0.1)
        assert state.t == 2

    def test_non_finite_gradient_names_parameter(self):
        p = nm.parameter(np.zeros((1, 1)))
        params = {"weights": p}
        state = AdamState(params)
        with pytest.raises(NumericsError, match="weights"):
            adam_step(params, {"weights": np.array([[np.nan]])}, state, lr=0.1)


class TestGradCheck:
    def test_quadratic_exactness(self):
        x = nm.parameter(np.array([[3.0, 4.0]]))
        err = grad_check(lambda: nm.scale(nm.sum_all(nm.mul(x, x)), 0.5), {"x": x})
        assert err < 1e-8
        # and the analytic gradient is x itself
        nm.zero_grads([x])
        backward(nm.scale(nm.sum_all(nm.mul(x, x)), 0.5))
        np.testing.assert_allclose(x.grad, [[3.0, 4.0]])

    def test_constant_loss_zero_error(self):
        x = nm.parameter(np.array([[1.0]]))
        err = grad_check(lambda: nm.sum_all(nm.scale(x, 0.0)), {"x": x})
        assert err == 0.0

    def test_subsampling_is_deterministic(self):
        rng = np.random.default_rng(13)
        x = nm.parameter(rng.normal(size=(40, 30)))
        w = nm.constant(rng.normal(size=(40, 30)))
        fn = lambda: nm.sum_all(nm.mul(x, w))
        e1 = grad_check(fn, {"x": x}, max_coords=100, seed=7)
        e2 = grad_check(fn, {"x": x}, max_coords=100, seed=7)
        assert e1 == e2 and e1 < 1e-8


class TestShapeErrors:
    def test_matmul_mismatch(self):
        with pytest.raises(NumericsError):
            nm.matmul(nm.constant(np.ones((2, 3))), nm.constant(np.ones((2, 3))))

    def test_add_mismatch(self):
        with pytest.raises(NumericsError):
            nm.add(nm.constant(np.ones((2, 3))), nm.constant(np.ones((3, 2))))

    def test_gather_out_of_range(self):
        with pytest.raises(NumericsError):
            nm.gather_rows(nm.constant(np.ones((2, 2))), np.array([5]))
