"""Pure-numpy implementations of the hot kernels.

Every function here has a loop-based twin in ``_numba`` with the same
signature.  Results agree to rounding; only the summation order differs.
"""
import numpy as np

TANH = 0
RELU = 1


def matvec(m, v):
    return m @ v


def transpose_matvec(m, v):
    # same gemv call as matvec on a materialized transpose, so the two agree exactly
    return np.ascontiguousarray(m.T) @ v


def dot(u, v):
    return float(u @ v)


def _act(z, act):
    if act == TANH:
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _dact(z, act):
    if act == TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


def forward(theta, widths, woff, boff, soff, zoff, tau, act, skip, U):
    N = U.shape[0]
    L = widths.shape[0] - 1
    S = np.empty((N, soff[L] + widths[L]))
    Z = np.empty((N, zoff[L - 1]))
    S[:, : widths[0]] = U
    y = U
    for l in range(L - 1):
        nin, nout = widths[l], widths[l + 1]
        W = theta[woff[l] : woff[l] + nout * nin].reshape(nout, nin)
        b = theta[boff[l] : boff[l] + nout]
        z = y @ W.T + b
        Z[:, zoff[l] : zoff[l] + nout] = z
        ynew = tau * _act(z, act)
        if l > 0 and skip:
            ynew = ynew + y
        S[:, soff[l + 1] : soff[l + 1] + nout] = ynew
        y = ynew
    nin, nout = widths[L - 1], widths[L]
    W = theta[woff[L - 1] : woff[L - 1] + nout * nin].reshape(nout, nin)
    S[:, soff[L] :] = y @ W.T
    return S, Z


def backward(theta, widths, woff, boff, soff, zoff, tau, act, skip, S, Z, R):
    L = widths.shape[0] - 1
    grad = np.zeros(theta.shape[0])
    nin, nout = widths[L - 1], widths[L]
    W = theta[woff[L - 1] : woff[L - 1] + nout * nin].reshape(nout, nin)
    y = S[:, soff[L - 1] : soff[L - 1] + nin]
    grad[woff[L - 1] : woff[L - 1] + nout * nin] = (R.T @ y).ravel()
    a = R @ W
    for l in range(L - 2, -1, -1):
        nin, nout = widths[l], widths[l + 1]
        W = theta[woff[l] : woff[l] + nout * nin].reshape(nout, nin)
        z = Z[:, zoff[l] : zoff[l] + nout]
        delta = tau * a * _dact(z, act)
        y = S[:, soff[l] : soff[l] + nin]
        grad[woff[l] : woff[l] + nout * nin] = (delta.T @ y).ravel()
        grad[boff[l] : boff[l] + nout] = delta.sum(axis=0)
        back = delta @ W
        if l > 0 and skip:
            back = back + a
        a = back
    return grad


def bfgs_inverse_update(H, s, y, rho):
    Hy = H @ y
    yHy = float(y @ Hy)
    # H += s v' + v s' with v = c/2 s - rho Hy; M + M' is exactly symmetric
    v = 0.5 * (rho * rho * yHy + rho) * s - rho * Hy
    M = np.outer(s, v)
    M += M.T.copy()
    H += M
    return H
