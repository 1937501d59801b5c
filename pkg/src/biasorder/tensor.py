"""Dense float64 vectors and matrices.

Vectors are 1-D ``numpy.float64`` arrays; matrices are 2-D, C-contiguous
(row-major) ``float64`` arrays.  All products sum left to right over the
contracted index (see ``kernels``), so ``matvec(transpose(m), v)`` and
``transpose_matvec(m, v)`` agree bit for bit.
"""
import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where a finite value was required."""


def vector(data) -> np.ndarray:
    v = np.ascontiguousarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {v.shape}")
    return v


def matrix(data) -> np.ndarray:
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    return m


def check_finite(x: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite entries in {what}")
    return x


def _same_len(u, v, op):
    if u.shape != v.shape:
        raise ShapeError(f"{op}: shapes {u.shape} and {v.shape} differ")


def matvec(m, v) -> np.ndarray:
    m, v = matrix(m), vector(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: matrix {m.shape} cannot multiply vector ({v.shape[0]},)")
    return kernels.matvec(m, v)


def transpose_matvec(m, v) -> np.ndarray:
    """Return ``m.T @ v`` without forming the transpose."""
    m, v = matrix(m), vector(v)
    if m.shape[0] != v.shape[0]:
        raise ShapeError(f"transpose_matvec: matrix {m.shape} transposed cannot multiply vector ({v.shape[0]},)")
    return kernels.transpose_matvec(m, v)


def transpose(m) -> np.ndarray:
    return np.ascontiguousarray(matrix(m).T)


def outer(u, v) -> np.ndarray:
    u, v = vector(u), vector(v)
    return np.multiply.outer(u, v)


def dot(u, v) -> float:
    u, v = vector(u), vector(v)
    _same_len(u, v, "dot")
    return float(kernels.dot(u, v))


def hadamard(u, v) -> np.ndarray:
    u, v = vector(u), vector(v)
    _same_len(u, v, "hadamard")
    return u * v


def axpy(a: float, x, y) -> np.ndarray:
    """Return ``a * x + y`` as a new vector."""
    x, y = vector(x), vector(y)
    _same_len(x, y, "axpy")
    return a * x + y
