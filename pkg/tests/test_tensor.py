import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import fd_grad, grad_of
from ecacl import tensor as T
from ecacl.errors import DimensionError, DomainError, NumericError, ShapeError
from ecacl.tensor import Tensor


def matmul_oracle(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def sq_dist_oracle(a, b):
    out = np.zeros((len(a), len(b)))
    for i in range(len(a)):
        for j in range(len(b)):
            out[i, j] = sum((a[i, t] - b[j, t]) ** 2 for t in range(a.shape[1]))
    return out


def softmax_oracle(x):
    xs = [math.exp(float(v) - max(x)) for v in x]
    s = math.fsum(xs)
    return np.array([v / s for v in xs])


# --- matmul ---------------------------------------------------------------------


def test_matmul_identity():
    out = T.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_projection():
    out = T.matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[5.0], [7.0]]))
    np.testing.assert_array_equal(out.data, [[5], [0]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, matmul_oracle(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    build = lambda: T.total(T.mul(T.matmul(a, b), T.matmul(a, b)))
    ga, gb = grad_of(build, a, b)
    np.testing.assert_allclose(ga, fd_grad(build, a), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gb, fd_grad(build, b), rtol=1e-6, atol=1e-8)


# --- elementwise ------------------------------------------------------------------


def test_relu_values():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_log_exp_inverse():
    np.testing.assert_allclose(T.log(T.exp(Tensor([0.5]))).data, [0.5], atol=1e-12)


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    (g,) = grad_of(lambda: T.total(T.relu(x)), x)
    np.testing.assert_array_equal(g, [0, 1])
    z = Tensor([0.0], requires_grad=True)
    (g0,) = grad_of(lambda: T.total(T.relu(z)), z)
    assert g0[0] == 0.0


def test_log_of_nonpositive_names_index():
    with pytest.raises(DomainError, match=r"\(1,\)"):
        T.log(Tensor([1.0, -2.0, 3.0]))


@pytest.mark.parametrize(
    "op",
    [
        lambda x, y: T.add(x, y),
        lambda x, y: T.sub(x, y),
        lambda x, y: T.mul(x, y),
        lambda x, y: T.div(x, T.add(T.mul(y, y), Tensor(np.ones(y.shape)))),
        lambda x, y: T.scale(x, -2.5),
        lambda x, y: T.neg(x),
        lambda x, y: T.exp(x),
        lambda x, y: T.log(T.add(T.mul(x, x), Tensor(np.ones(x.shape)))),
        lambda x, y: T.sqrt(T.add(T.mul(x, x), Tensor(np.ones(x.shape)))),
        lambda x, y: T.xlogx(T.softmax(x)),
        lambda x, y: T.normalize_rows(x),
        lambda x, y: T.row_sum(x),
        lambda x, y: T.add_row(x, T.reshape(T.slice_rows(y, 0, 1), (y.shape[1],))),
        lambda x, y: T.take_rows(x, [2, 0, 0]),
        lambda x, y: T.slice_rows(x, 1, 3),
        lambda x, y: T.pick(x, [1, 0, 3]),
        lambda x, y: T.concat_rows([x, y]),
        lambda x, y: T.log_softmax(x),
        lambda x, y: T.softmax(x),
        lambda x, y: T.sq_euclidean_rows(x, y),
    ],
)
def test_op_gradients_match_finite_differences(op, rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    y = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=op(Tensor(x.data), Tensor(y.data)).shape)
    build = lambda: T.total(T.mul(op(x, y), Tensor(w)))
    for leaf, g in zip((x, y), grad_of(build, x, y)):
        g = np.zeros(leaf.shape) if g is None else g
        np.testing.assert_allclose(g, fd_grad(build, leaf), rtol=1e-5, atol=1e-8)


# --- softmax ---------------------------------------------------------------------


def test_softmax_symmetric():
    np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_large_logits_stay_finite():
    p = T.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_matches_naive_oracle(rng):
    x = rng.normal(size=5) * 3
    np.testing.assert_allclose(T.softmax(Tensor(x)).data, softmax_oracle(x), rtol=0, atol=1e-12)


def test_softmax_nan_is_numeric_error():
    with pytest.raises(NumericError):
        T.softmax(Tensor([0.0, float("nan")]))


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 6)), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    p = T.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all(p >= 0)


@given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-30, 30)), st.floats(-100, 100))
def test_softmax_shift_invariant(x, c):
    a = T.softmax(Tensor(x)).data
    b = T.softmax(Tensor(x + c)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


# --- distances ---------------------------------------------------------------------


def test_self_distance_is_zero():
    np.testing.assert_array_equal(T.sq_euclidean_rows(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]])).data, [[0.0]])


def test_three_four_five():
    np.testing.assert_array_equal(T.sq_euclidean_rows(Tensor([[0.0, 0.0]]), Tensor([[3.0, 4.0]])).data, [[25.0]])


def test_distances_match_double_loop(rng):
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(T.sq_euclidean_rows(Tensor(a), Tensor(b)).data, sq_dist_oracle(a, b), atol=1e-12)


def test_distance_width_mismatch():
    with pytest.raises(DimensionError):
        T.sq_euclidean_rows(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


# --- backward ----------------------------------------------------------------------


def test_grad_of_sum_is_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (g,) = grad_of(lambda: T.total(x), x)
    np.testing.assert_array_equal(g, [1, 1, 1])


def test_grad_of_square():
    x = Tensor(3.0, requires_grad=True)
    (g,) = grad_of(lambda: T.mul(x, x), x)
    assert float(g) == 6.0


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with T.Tape() as tape:
        y = T.scale(x, 2.0)
        with pytest.raises(ShapeError):
            T.backward(y, tape)


def test_fan_out_accumulates():
    x = Tensor([2.0], requires_grad=True)
    (g,) = grad_of(lambda: T.total(T.add(T.mul(x, x), T.scale(x, 3.0))), x)
    np.testing.assert_allclose(g, [7.0])


def test_replay_is_bit_identical(rng):
    a0 = rng.normal(size=(4, 3))

    def run():
        a = Tensor(a0, requires_grad=True)
        (g,) = grad_of(lambda: T.total(T.softmax(T.matmul(a, Tensor(a0.T)))), a)
        return g

    assert run().tobytes() == run().tobytes()


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.Tape() as tape:
        with T.no_grad():
            y = T.mul(x, x)
        assert len(tape) == 0
        assert not y.requires_grad


def test_data_is_read_only():
    x = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        x.data[0] = 5.0


# --- gradient reversal ------------------------------------------------------------


def test_reversal_forward_is_identity(rng):
    x = rng.normal(size=(3, 2))
    assert T.gradient_reversal(Tensor(x), 0.7).data.tobytes() == x.tobytes()


def test_reversal_flips_sign():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    (g,) = grad_of(lambda: T.total(T.gradient_reversal(x, 1.0)), x)
    np.testing.assert_array_equal(g, [-1, -1, -1])


def test_reversal_zero_coeff_annihilates():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (g,) = grad_of(lambda: T.total(T.mul(T.gradient_reversal(x, 0.0), x)), x)
    # only the non-reversed factor contributes: d/dx (r * x) with dr/dx = 0 -> r = x
    np.testing.assert_array_equal(g, [1.0, 2.0])


@given(st.floats(0, 3), st.integers(0, 2**31))
def test_reversal_scales_finite_difference_gradient(c, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=4), requires_grad=True)
    w = Tensor(rng.normal(size=4))
    plain = lambda: T.total(T.exp(T.mul(x, w)))
    (g,) = grad_of(lambda: T.total(T.exp(T.mul(T.gradient_reversal(x, c), w))), x)
    np.testing.assert_allclose(g, -c * fd_grad(plain, x), rtol=1e-6, atol=1e-8)
