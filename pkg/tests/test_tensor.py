import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssmzsl import tensor as T
from ssmzsl.tensor import Tape, Tensor

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


# ---------------------------------------------------------------- matmul

def test_matmul_identity_and_zeros():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(a, Tensor(np.eye(2))).data, a.data)
    np.testing.assert_array_equal(T.matmul(a, Tensor(np.zeros((2, 3)))).data, np.zeros((2, 3)))


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, triple_loop(a, b), atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_batched_matmul_gradients():
    rng = np.random.default_rng(0)
    b = leaf(rng.normal(size=(2, 4, 3)))
    w = Tensor(rng.normal(size=(2, 3, 5)))
    assert T.finite_diff_check(lambda a: T.reduce("sum", T.mul(T.matmul(a, w), T.matmul(a, w))),
                               rng.normal(size=(2, 4, 3))) < 1e-6
    assert T.finite_diff_check(lambda x: T.reduce("sum", T.exp(T.matmul(b, x))),
                               rng.normal(size=(3, 2))) < 1e-6


# ---------------------------------------------------------------- softmax

def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    x = np.array([1.0, 2.0, 3.0])
    oracle = np.exp(x) / np.exp(x).sum()
    out = T.softmax(Tensor(x)).data
    np.testing.assert_allclose(out, oracle, rtol=1e-14)
    np.testing.assert_allclose(out, [0.09003, 0.24473, 0.66524], atol=5e-6)


@given(arrays(np.float64, (3, 5), elements=finite), finite)
def test_softmax_positive_normalized_shift_invariant(x, c):
    y = T.softmax(Tensor(x), axis=1).data
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(T.softmax(Tensor(x + c), axis=1).data, y, atol=1e-12)


# ---------------------------------------------------------------- layernorm

def _ones_zeros(n):
    return Tensor(np.ones(n)), Tensor(np.zeros(n))


def test_layernorm_constant_slice_is_zero():
    g, b = _ones_zeros(4)
    np.testing.assert_array_equal(T.layernorm(Tensor(np.full((2, 4), 3.0)), g, b).data, 0.0)


def test_layernorm_already_normalized():
    g, b = _ones_zeros(2)
    np.testing.assert_allclose(T.layernorm(Tensor([1.0, -1.0]), g, b, eps=1e-12).data, [1, -1], atol=1e-9)


def test_layernorm_moments_and_axis():
    rng = np.random.default_rng(1)
    x = rng.normal(3, 5, size=(4, 6, 3))
    g, b = _ones_zeros(6)
    y = T.layernorm(Tensor(x), g, b, axis=1).data
    assert np.abs(y.mean(axis=1)).max() < 1e-6
    assert np.abs(y.var(axis=1) - 1).max() < 1e-4


def test_layernorm_rejects_bad_gain():
    with pytest.raises(ValueError):
        T.layernorm(Tensor(np.zeros((2, 3))), *_ones_zeros(2))


# ---------------------------------------------------------------- elementwise / reductions

def test_elementwise_examples():
    np.testing.assert_array_equal(T.elementwise("relu", Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert T.elementwise("softplus", Tensor(0.0)).item() == pytest.approx(np.log(2), abs=1e-12)
    x = leaf(1.0)
    with Tape() as tape:
        (g,) = tape.gradients(T.elementwise("exp", x), [x])
    assert g == pytest.approx(np.e, rel=1e-15)


def test_elementwise_rejects_general_broadcasting():
    with pytest.raises(ValueError, match="incompatible"):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))
    # scalar operands are allowed
    assert T.add(Tensor(np.zeros((2, 3))), Tensor(1.0)).data.sum() == 6


def test_reductions():
    assert T.reduce("mean", Tensor([2.0, 4.0, 6.0])).item() == 4
    assert T.reduce("l2_norm", Tensor([3.0, 4.0])).item() == 5
    assert T.reduce("l2_norm", Tensor([0.0, 0.0])).item() == 0
    x = leaf(np.arange(6.0).reshape(2, 3))
    with Tape() as tape:
        (g,) = tape.gradients(T.reduce("sum", x), [x])
    np.testing.assert_array_equal(g, np.ones((2, 3)))


def test_l2_normalize_zero_vector_stays_zero():
    np.testing.assert_array_equal(T.l2_normalize(Tensor([0.0, 0.0, 0.0])).data, 0.0)
    np.testing.assert_allclose(T.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8])


def test_cosine_examples():
    u = Tensor([1.0, 2.0, -0.5])
    assert T.cosine_similarity(u, u).item() == pytest.approx(1.0, abs=1e-15)
    assert T.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0
    assert T.cosine_similarity(u, T.scale(u, -1)).item() == pytest.approx(-1.0, abs=1e-15)
    assert T.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 1.0])).item() == 0.0


@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite))
def test_cosine_bounded(u, v):
    assert abs(T.cosine_similarity(Tensor(u), Tensor(v)).item()) <= 1 + 1e-12


# ---------------------------------------------------------------- backward

def test_backward_square():
    x = leaf(3.0)
    with Tape() as tape:
        (g,) = tape.gradients(T.mul(x, x), [x])
    assert g == 6


def test_backward_matmul_sum_is_outer_product():
    W = leaf(np.arange(6.0).reshape(2, 3))
    v = np.array([[1.0], [-2.0], [0.5]])
    with Tape() as tape:
        (g,) = tape.gradients(T.reduce("sum", T.matmul(W, Tensor(v))), [W])
    np.testing.assert_array_equal(g, np.ones((2, 1)) @ v.T)


def test_backward_requires_scalar():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(T.scale(x, 2.0))


def test_untracked_tensor_gets_no_gradient_and_unreachable_leaf_gets_zero():
    x, y = leaf([1.0, 2.0]), leaf([5.0])
    const = Tensor([1.0, 1.0])
    with Tape() as tape:
        table = tape.backward(T.reduce("sum", T.mul(x, const)), wrt=[y])
    assert const.grad_id is None
    assert set(table) == {x.grad_id, y.grad_id}
    np.testing.assert_array_equal(table[y.grad_id], [0.0])


def test_leaf_gradients_accumulate_across_uses():
    x = leaf(2.0)
    with Tape() as tape:
        loss = T.add(T.mul(x, x), T.add(T.scale(x, 3.0), x))
        (g,) = tape.gradients(loss, [x])
    assert g == 2 * 2 + 3 + 1


def test_tape_records_in_creation_order():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        T.reduce("sum", T.exp(T.scale(x, 2.0)))
    assert [n.kind for n in tape.nodes] == ["scale", "exp", "sum"]


def test_no_tape_records_nothing():
    x = leaf([1.0])
    y = T.exp(x)
    assert y._node is None


def test_sliced_gradients_do_not_alias():
    # the same upstream array feeds a dense and a sliced accumulation
    x = leaf(np.arange(4.0))
    with Tape() as tape:
        y = T.add(x, x)
        loss = T.add(T.reduce("sum", y), T.reduce("sum", T.take(y, 1)))
        (g,) = tape.gradients(loss, [x])
    np.testing.assert_array_equal(g, [2, 4, 2, 2])


# ---------------------------------------------------------------- finite differences

def test_finite_diff_quadratic_form():
    rng = np.random.default_rng(5)
    Q = rng.normal(size=(4, 4))
    Q = Q + Q.T
    x0 = rng.normal(size=(4, 1))
    fn = lambda x: T.reduce("sum", T.mul(x, T.matmul(Tensor(Q), x)))  # noqa: E731
    assert T.finite_diff_check(fn, x0) < 1e-10
    xt = leaf(x0)
    with Tape() as tape:
        (g,) = tape.gradients(fn(xt), [xt])
    np.testing.assert_allclose(g, 2 * Q @ x0, rtol=1e-12)


def test_finite_diff_softmax_cross_entropy():
    rng = np.random.default_rng(6)
    onehot = Tensor(np.eye(3)[[0, 2]])
    fn = lambda x: T.scale(T.reduce("sum", T.mul(T.log_softmax(x), onehot)), -1.0)  # noqa: E731
    assert T.finite_diff_check(fn, rng.normal(size=(2, 3))) < 1e-6


def test_finite_diff_constant_function():
    x = leaf(np.ones(3))
    fn = lambda: Tensor(2.0) + T.scale(T.reduce("sum", x), 0.0)  # noqa: E731
    with Tape() as tape:
        (g,) = tape.gradients(fn(), [x])
    np.testing.assert_array_equal(g, 0)
    np.testing.assert_array_equal(T.numeric_gradient(fn, x), 0)


def _ops():
    rng = np.random.default_rng(11)
    w = Tensor(rng.normal(size=(3, 4)))
    g, b = Tensor(rng.normal(size=4) + 1), Tensor(rng.normal(size=4))
    other = Tensor(rng.normal(size=(2, 4)))
    weights = Tensor(rng.normal(size=(2, 4)))

    def wsum(y):
        return T.reduce("sum", T.mul(y, Tensor(np.linspace(-1, 1, y.size).reshape(y.shape))))

    return {
        "add": lambda x: wsum(T.add(x, other)),
        "sub": lambda x: wsum(T.sub(other, x)),
        "mul": lambda x: wsum(T.mul(x, x)),
        "scale": lambda x: wsum(T.scale(x, -2.5)),
        "exp": lambda x: wsum(T.exp(x)),
        "relu": lambda x: wsum(T.relu(x)),
        "softplus": lambda x: wsum(T.softplus(x)),
        "abs": lambda x: wsum(T.absolute(x)),
        "exp_ratio": lambda x: wsum(T.exp_ratio(x)),
        "matmul": lambda x: wsum(T.matmul(x, T.transpose(w, (1, 0)))),
        "linear": lambda x: wsum(T.linear(x, T.transpose(w, (1, 0)), Tensor(np.ones(3)))),
        "sum_axis": lambda x: wsum(T.reduce("sum", x, axis=1)),
        "mean": lambda x: wsum(T.reduce("mean", x, axis=0)),
        "l2_norm": lambda x: wsum(T.reduce("l2_norm", x, axis=1)),
        "l2_normalize": lambda x: wsum(T.l2_normalize(x)),
        "softmax": lambda x: wsum(T.softmax(x, axis=1)),
        "log_softmax": lambda x: wsum(T.log_softmax(x, axis=0)),
        "layernorm": lambda x: wsum(T.layernorm(x, g, b)),
        "cosine": lambda x: wsum(T.cosine_similarity(x, weights)),
        "reshape": lambda x: wsum(T.exp(T.reshape(x, (4, 2)))),
        "transpose": lambda x: wsum(T.exp(T.transpose(x, (1, 0)))),
        "broadcast": lambda x: wsum(T.exp(T.broadcast_to(T.reshape(x, (2, 1, 4)), (3, 2, 5, 4)))),
        "take_int": lambda x: wsum(T.exp(T.take(x, 1, axis=1))),
        "take_perm": lambda x: wsum(T.exp(T.take(x, [3, 0, 2, 1], axis=1))),
        "take_repeat": lambda x: wsum(T.exp(T.take(x, [0, 0, 3], axis=1))),
        "stack": lambda x: wsum(T.stack([x, T.exp(x)], axis=1)),
        "concat": lambda x: wsum(T.concat([x, T.mul(x, x)], axis=0)),
    }


@pytest.mark.parametrize("name", sorted(_ops()))
def test_every_op_matches_finite_differences(name):
    x0 = np.random.default_rng(2).normal(size=(2, 4))
    x0[np.abs(x0) < 0.05] = 0.3  # keep relu/abs away from their kinks
    assert T.finite_diff_check(_ops()[name], x0) < 1e-4


def test_float32_preserved():
    x = Tensor(np.ones((2, 2), dtype=np.float32))
    for y in (T.exp(x), T.softplus(x), T.scale(x, 3), T.layernorm(x, *_ones_zeros(2)),
              T.exp_ratio(x), T.relu(x)):
        assert y.dtype == np.float32


@settings(max_examples=20)
@given(arrays(np.float64, (3, 4), elements=finite))
def test_deterministic(x):
    f = lambda: T.softmax(T.layernorm(Tensor(x), *_ones_zeros(4)), axis=0).data  # noqa: E731
    assert f().tobytes() == f().tobytes()
