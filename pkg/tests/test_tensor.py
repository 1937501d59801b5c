import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biasorder import tensor as T


def test_matvec_identity():
    assert np.array_equal(T.matvec(np.eye(2), [3.0, 4.0]), [3.0, 4.0])


def test_matvec_2x2():
    assert np.array_equal(T.matvec([[1, 2], [3, 4]], [1, 1]), [3.0, 7.0])


def test_matvec_zero_matrix():
    assert np.array_equal(T.matvec(np.zeros((3, 2)), [5.0, -1.0]), np.zeros(3))


def test_matvec_shape_error_names_both_shapes():
    with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(2,\)"):
        T.matvec(np.ones((2, 3)), np.ones(2))


@pytest.mark.parametrize(
    "u, v, expected",
    [
        ([1, 0], [0, 1], [[0, 1], [0, 0]]),
        ([2], [3], [[6]]),
        ([1, 0, 0], [1, 0, 0], [[1, 0, 0], [0, 0, 0], [0, 0, 0]]),
    ],
)
def test_outer(u, v, expected):
    assert np.array_equal(T.outer(u, v), expected)


def test_dot_hadamard_transpose_matvec():
    assert T.dot([1, 2], [3, 4]) == 11.0
    assert np.array_equal(T.hadamard([1, 2], [3, 4]), [3.0, 8.0])
    assert np.array_equal(T.transpose_matvec([[1, 2], [3, 4]], [1, 0]), [1.0, 2.0])
    assert np.array_equal(T.axpy(2.0, [1, 2], [1, 1]), [3.0, 5.0])


@pytest.mark.parametrize("op", [T.dot, T.hadamard])
def test_length_mismatch(op):
    with pytest.raises(T.ShapeError):
        op([1.0, 2.0], [1.0])


def test_transpose_matvec_shape_error():
    with pytest.raises(T.ShapeError):
        T.transpose_matvec(np.ones((2, 3)), np.ones(3))


dims = st.integers(min_value=1, max_value=64)


@settings(max_examples=60, deadline=None)
@given(m=dims, n=dims, seed=st.integers(0, 2**32 - 1))
def test_transpose_matvec_bitwise_equal(m, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (m, n))
    v = rng.uniform(-1, 1, m)
    assert np.array_equal(T.matvec(T.transpose(A), v), T.transpose_matvec(A, v))


@settings(max_examples=60, deadline=None)
@given(m=dims, n=dims, seed=st.integers(0, 2**32 - 1))
def test_adjoint_identity(m, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (m, n))
    u = rng.uniform(-1, 1, m)
    v = rng.uniform(-1, 1, n)
    lhs = T.dot(u, T.matvec(A, v))
    rhs = T.dot(T.transpose_matvec(A, u), v)
    # scale by the magnitude of the summands so a cancelling sum is not judged relatively
    scale = np.abs(u) @ np.abs(A) @ np.abs(v)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), scale)
