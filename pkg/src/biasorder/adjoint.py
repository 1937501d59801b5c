"""Reverse-mode gradient of ``J_gamma`` from the state/adjoint recursion.

With ``psi_L = -dJ/dy_L`` the adjoint runs downward as::

    psi_{L-1} = W_{L-1}^T psi_L
    psi_j     = P^T psi_{j+1} + tau * W_j^T (psi_{j+1} * act'(z_j))      j = L-2 .. 1

and the parameter gradient is::

    dW_{L-1} = -psi_L y_{L-1}^T
    dW_j     = -tau * (psi_{j+1} * act'(z_j)) y_j^T
    db_j     = -tau * (psi_{j+1} * act'(z_j))

where ``z_j = W_j y_j + b_j``.  ``act'(0)`` is 0 for ReLU.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .loss import LossConfig, Objective, mse_term
from .network import ACTIVATIONS, LayerTrace, NetworkSpec, Params, flatten, forward_batch, unflatten
from .tensor import NonFiniteError, ShapeError, hadamard, outer, transpose_matvec, vector


class GradientBundle(Params):
    """Gradient blocks shaped like the Params they differentiate."""


@dataclass
class AdjointTrace:
    psi: list[np.ndarray]  # psi[0] is psi_1, psi[-1] is psi_L


def _dact(z, activation):
    if activation == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


def backward(spec: NetworkSpec, p: Params, trace: LayerTrace, residual) -> tuple[AdjointTrace, GradientBundle]:
    """Single-sample adjoint sweep.

    ``residual`` is the derivative of this sample's misfit with respect to
    the output ``y_L``.  Regularizer gradients are not included.
    """
    L = spec.depth
    residual = vector(residual)
    if residual.shape[0] != spec.widths[-1]:
        raise ShapeError(f"residual has length {residual.shape[0]}, output width is {spec.widths[-1]}")
    if len(trace.states) != L + 1:
        raise ShapeError("trace does not match the network depth")
    y = trace.states
    psi = [None] * (L + 1)
    dW = [None] * L
    db = [None] * (L - 1)

    psi[L] = -residual
    dW[L - 1] = -outer(psi[L], y[L - 1])
    psi[L - 1] = transpose_matvec(p.weights[L - 1], psi[L])
    for j in range(L - 2, -1, -1):
        w = spec.tau * hadamard(psi[j + 1], _dact(trace.preactivations[j], spec.activation))
        dW[j] = -outer(w, y[j])
        db[j] = -w
        if j > 0:
            back = transpose_matvec(p.weights[j], w)
            psi[j] = back + psi[j + 1] if spec.identity_skip else back
        if j > 0 and not np.all(np.isfinite(psi[j])):
            raise NonFiniteError(f"non-finite adjoint at layer {j}")
    return AdjointTrace(psi[1:]), GradientBundle(dW, db)


def data_gradient(spec: NetworkSpec, theta: np.ndarray, X: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """MSE value and its flat gradient for a batch, via the batched kernels."""
    lay = spec.layout
    S, Z = forward_batch(spec, theta, X)
    out = S[:, lay.soff[-1]:]
    N = X.shape[0]
    R = np.ascontiguousarray((out - Y) / N)
    grad = kernels.backward(
        theta, lay.widths, lay.woff, lay.boff, lay.soff, lay.zoff,
        float(spec.tau), ACTIVATIONS[spec.activation], spec.identity_skip, S, Z, R,
    )
    return mse_term(out, Y), grad


def full_gradient(spec: NetworkSpec, p: Params, X, Y, cfg: LossConfig) -> GradientBundle:
    obj = Objective(spec, X, Y, cfg)
    _, g = obj.value_and_grad(flatten(p.check(spec)))
    q = unflatten(spec, g)
    return GradientBundle(q.weights, q.biases)


def fd_gradient_flat(f, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function of a flat vector."""
    if not h > 0:
        raise ValueError("h must be > 0")
    theta = np.array(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for k in range(theta.size):
        old = theta[k]
        theta[k] = old + h
        fp = f(theta)
        theta[k] = old - h
        fm = f(theta)
        theta[k] = old
        g[k] = (fp - fm) / (2 * h)
    return g


def fd_gradient(spec: NetworkSpec, p: Params, X, Y, cfg: LossConfig, h: float = 1e-6) -> GradientBundle:
    obj = Objective(spec, X, Y, cfg)
    g = fd_gradient_flat(obj, flatten(p.check(spec)), h)
    q = unflatten(spec, g)
    return GradientBundle(q.weights, q.biases)


def relative_errors(analytic: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Per-component ``|a - r| / (1 + |r|)``."""
    return np.abs(analytic - reference) / (1.0 + np.abs(reference))


def min_abs_preactivation(spec: NetworkSpec, theta: np.ndarray, X) -> float:
    _, Z = forward_batch(spec, theta, np.ascontiguousarray(X, dtype=np.float64))
    return float(np.min(np.abs(Z))) if Z.size else np.inf
