"""Loop kernels compiled with numba.

Summation is plain left-to-right over the innermost index, so results are
reproducible run to run.  ``nogil`` lets concurrent training runs overlap.
"""
import math

import numpy as np
from numba import njit

TANH = 0
RELU = 1

_opts = dict(cache=True, nogil=True)


@njit(**_opts)
def matvec(m, v):
    rows, cols = m.shape
    out = np.empty(rows)
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += m[i, j] * v[j]
        out[i] = acc
    return out


@njit(**_opts)
def transpose_matvec(m, v):
    rows, cols = m.shape
    out = np.empty(cols)
    for j in range(cols):
        acc = 0.0
        for i in range(rows):
            acc += m[i, j] * v[i]
        out[j] = acc
    return out


@njit(**_opts)
def dot(u, v):
    acc = 0.0
    for i in range(u.shape[0]):
        acc += u[i] * v[i]
    return acc


@njit(**_opts)
def _act(z, act):
    if act == TANH:
        return math.tanh(z)
    return z if z > 0.0 else 0.0


@njit(**_opts)
def _dact(z, act):
    if act == TANH:
        t = math.tanh(z)
        return 1.0 - t * t
    return 1.0 if z > 0.0 else 0.0


@njit(**_opts)
def forward(theta, widths, woff, boff, soff, zoff, tau, act, skip, U):
    N = U.shape[0]
    L = widths.shape[0] - 1
    S = np.empty((N, soff[L] + widths[L]))
    Z = np.empty((N, zoff[L - 1]))
    for i in range(N):
        for k in range(widths[0]):
            S[i, k] = U[i, k]
        for l in range(L - 1):
            nin = widths[l]
            nout = widths[l + 1]
            w0 = woff[l]
            for r in range(nout):
                acc = 0.0
                for c in range(nin):
                    acc += theta[w0 + r * nin + c] * S[i, soff[l] + c]
                z = acc + theta[boff[l] + r]
                Z[i, zoff[l] + r] = z
                y = tau * _act(z, act)
                if l > 0 and skip:
                    y += S[i, soff[l] + r]
                S[i, soff[l + 1] + r] = y
        nin = widths[L - 1]
        nout = widths[L]
        w0 = woff[L - 1]
        for r in range(nout):
            acc = 0.0
            for c in range(nin):
                acc += theta[w0 + r * nin + c] * S[i, soff[L - 1] + c]
            S[i, soff[L] + r] = acc
    return S, Z


@njit(**_opts)
def backward(theta, widths, woff, boff, soff, zoff, tau, act, skip, S, Z, R):
    N = S.shape[0]
    L = widths.shape[0] - 1
    nmax = 0
    for k in range(L + 1):
        if widths[k] > nmax:
            nmax = widths[k]
    grad = np.zeros(theta.shape[0])
    a = np.empty(nmax)
    back = np.empty(nmax)
    delta = np.empty(nmax)
    for i in range(N):
        nin = widths[L - 1]
        nout = widths[L]
        w0 = woff[L - 1]
        for c in range(nin):
            back[c] = 0.0
        for r in range(nout):
            ar = R[i, r]
            for c in range(nin):
                grad[w0 + r * nin + c] += ar * S[i, soff[L - 1] + c]
                back[c] += theta[w0 + r * nin + c] * ar
        for c in range(nin):
            a[c] = back[c]
        for l in range(L - 2, -1, -1):
            nin = widths[l]
            nout = widths[l + 1]
            w0 = woff[l]
            for r in range(nout):
                delta[r] = tau * a[r] * _dact(Z[i, zoff[l] + r], act)
            for c in range(nin):
                back[c] = a[c] if (l > 0 and skip) else 0.0
            for r in range(nout):
                dr = delta[r]
                grad[boff[l] + r] += dr
                for c in range(nin):
                    grad[w0 + r * nin + c] += dr * S[i, soff[l] + c]
                    back[c] += theta[w0 + r * nin + c] * dr
            for c in range(nin):
                a[c] = back[c]
    return grad


@njit(**_opts)
def bfgs_inverse_update(H, s, y, rho):
    n = s.shape[0]
    Hy = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += H[i, j] * y[j]
        Hy[i] = acc
    yHy = 0.0
    for i in range(n):
        yHy += y[i] * Hy[i]
    coef = rho * rho * yHy + rho
    for i in range(n):
        for j in range(i, n):
            h = 0.5 * (H[i, j] + H[j, i])
            h += -rho * (s[i] * Hy[j] + Hy[i] * s[j]) + coef * s[i] * s[j]
            H[i, j] = h
            H[j, i] = h
    return H
