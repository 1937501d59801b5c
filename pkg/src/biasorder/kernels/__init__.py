"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``BIASORDER_DISABLE_NUMBA`` is
unset (or ``0``).  Both backends expose the same functions; see
``benchmarks/bench_kernels.py`` for a timing comparison.
"""
import os

from . import _numpy as numpy_backend

TANH = numpy_backend.TANH
RELU = numpy_backend.RELU

_disabled = os.environ.get("BIASORDER_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

numba_backend = None
if not _disabled:
    try:
        from . import _numba as numba_backend
    except ImportError:  # pragma: no cover - numba is an optional accelerator
        numba_backend = None

backend = numba_backend if numba_backend is not None else numpy_backend
BACKEND_NAME = "numba" if backend is numba_backend else "numpy"

matvec = backend.matvec
transpose_matvec = backend.transpose_matvec
dot = backend.dot
forward = backend.forward
backward = backend.backward
bfgs_inverse_update = backend.bfgs_inverse_update

__all__ = [
    "BACKEND_NAME",
    "RELU",
    "TANH",
    "backward",
    "bfgs_inverse_update",
    "dot",
    "forward",
    "matvec",
    "numba_backend",
    "numpy_backend",
    "transpose_matvec",
]
