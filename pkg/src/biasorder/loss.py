"""Data misfit, weight regularization and the bias-ordering penalty.

    J       = 1/(2N) sum_i |y_L^i - s^i|^2  +  lam/2 * sum(|theta|_1 + |theta|_2^2)
    J_gamma = J + gamma/2 * sum_l sum_j min(b_l^{j+1} - b_l^j, 0)^2

Matrix norms are entrywise.  ``|x|`` in the L1 term is replaced by the
pseudo-Huber ``sqrt(x^2 + eps^2) - eps`` so the objective is smooth for BFGS.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .network import NetworkSpec, Params, flatten, forward_batch
from .tensor import NonFiniteError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1e-4
    gamma: float = 0.0
    l1_smoothing: float = 1e-8
    mse: bool = True
    l1: bool = True
    l2: bool = True
    order_penalty: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.l1 and not self.l1_smoothing > 0:
            raise ValueError("l1_smoothing must be > 0 when the l1 term is enabled")

    def replace(self, **kw) -> "LossConfig":
        d = asdict(self)
        d.update(kw)
        return LossConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        terms = d.pop("terms", None)
        if terms is not None:
            for name in ("mse", "l1", "l2", "order_penalty"):
                d[name] = name in terms
        return cls(**d)


@dataclass(frozen=True)
class LossBreakdown:
    mse: float
    l1: float
    l2: float
    order_penalty: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def _as_2d(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    return a


def mse_term(outputs, targets) -> float:
    """``1/(2N) * sum_i |y_i - s_i|^2`` over a batch of output vectors."""
    Y = _as_2d(outputs)
    S = _as_2d(targets)
    if Y.shape[0] == 0:
        raise ValueError("mse_term needs at least one sample")
    if Y.shape != S.shape:
        raise ShapeError(f"outputs {Y.shape} and targets {S.shape} differ")
    r = Y - S
    return float(np.sum(r * r) / (2 * Y.shape[0]))


def smoothed_abs(x, eps: float):
    x = np.asarray(x, dtype=np.float64)
    # written as x^2 / (sqrt(x^2+eps^2) + eps) to avoid cancellation when |x| << eps
    x2 = x * x
    return x2 / (np.sqrt(x2 + eps * eps) + eps)


def smoothed_abs_grad(x, eps: float):
    x = np.asarray(x, dtype=np.float64)
    return x / np.sqrt(x * x + eps * eps)


def reg_terms(p: Params | np.ndarray, cfg: LossConfig) -> tuple[float, float]:
    """``(l1, l2)`` weight-regularization values, each already scaled by lam/2."""
    theta = flatten(p) if isinstance(p, Params) else np.asarray(p, dtype=np.float64)
    half = 0.5 * cfg.lam
    l1 = half * float(np.sum(smoothed_abs(theta, cfg.l1_smoothing))) if cfg.l1 else 0.0
    l2 = half * float(theta @ theta) if cfg.l2 else 0.0
    return l1, l2


def reg_grad(theta: np.ndarray, cfg: LossConfig) -> np.ndarray:
    g = np.zeros_like(theta)
    if cfg.l1:
        g += 0.5 * cfg.lam * smoothed_abs_grad(theta, cfg.l1_smoothing)
    if cfg.l2:
        g += cfg.lam * theta
    return g


def _penalty_blocks(biases, gamma):
    value = 0.0
    grads = []
    for b in biases:
        b = np.asarray(b, dtype=np.float64)
        neg = np.minimum(np.diff(b), 0.0)
        value += float(neg @ neg)
        g = np.zeros_like(b)
        g[1:] += gamma * neg
        g[:-1] -= gamma * neg
        grads.append(g)
    return 0.5 * gamma * value, grads


def order_penalty(p: Params, gamma: float) -> float:
    """``gamma/2 * sum min(b^{j+1} - b^j, 0)^2`` over hidden-layer biases."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    biases = p.biases if isinstance(p, Params) else p
    return _penalty_blocks(biases, gamma)[0]


def order_penalty_grad(p: Params, gamma: float) -> Params:
    """Gradient of ``order_penalty``; weight blocks are zero."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    _, grads = _penalty_blocks(p.biases, gamma)
    return Params([np.zeros_like(W) for W in p.weights], grads)


def constraint_gap(p: Params) -> float:
    """``g(theta)``: the unscaled sum of squared negative bias differences."""
    return _penalty_blocks(p.biases, 1.0)[0] * 2.0


class Objective:
    """``J_gamma`` on a fixed data slice, evaluated on flat parameter vectors."""

    def __init__(self, spec: NetworkSpec, X, Y, cfg: LossConfig):
        self.spec = spec
        self.X = np.ascontiguousarray(_as_2d(X))
        self.Y = np.ascontiguousarray(_as_2d(Y))
        self.cfg = cfg
        if self.X.shape[0] == 0:
            raise ValueError("empty data slice")
        if self.X.shape[0] != self.Y.shape[0]:
            raise ShapeError(f"{self.X.shape[0]} inputs but {self.Y.shape[0]} targets")
        if self.Y.shape[1] != spec.widths[-1]:
            raise ShapeError(f"targets have {self.Y.shape[1]} columns, network outputs {spec.widths[-1]}")
        self._bias_slices = spec.layout.bias_slices()
        self.n_evals = 0

    def _penalty(self, theta):
        biases = [theta[s] for s in self._bias_slices]
        return _penalty_blocks(biases, self.cfg.gamma)

    def breakdown(self, theta: np.ndarray) -> LossBreakdown:
        self.n_evals += 1
        cfg = self.cfg
        mse = 0.0
        if cfg.mse:
            S, _ = forward_batch(self.spec, theta, self.X)
            mse = mse_term(S[:, self.spec.layout.soff[-1]:], self.Y)
        l1, l2 = reg_terms(theta, cfg)
        pen = self._penalty(theta)[0] if cfg.order_penalty else 0.0
        total = mse + l1 + l2 + pen
        if not np.isfinite(total):
            raise NonFiniteError("loss is not finite")
        return LossBreakdown(mse, l1, l2, pen, total)

    def __call__(self, theta: np.ndarray) -> float:
        return self.breakdown(theta).total

    def value_and_grad(self, theta: np.ndarray) -> tuple[LossBreakdown, np.ndarray]:
        from .adjoint import data_gradient

        cfg = self.cfg
        if cfg.mse:
            mse, grad = data_gradient(self.spec, theta, self.X, self.Y)
        else:
            mse, grad = 0.0, np.zeros_like(theta)
        l1, l2 = reg_terms(theta, cfg)
        grad = grad + reg_grad(theta, cfg)
        pen = 0.0
        if cfg.order_penalty:
            pen, pgrads = self._penalty(theta)
            for s, g in zip(self._bias_slices, pgrads):
                grad[s] += g
        total = mse + l1 + l2 + pen
        if not (np.isfinite(total) and np.all(np.isfinite(grad))):
            raise NonFiniteError("loss or gradient is not finite")
        self.n_evals += 1
        return LossBreakdown(mse, l1, l2, pen, total), grad


def total_loss(spec: NetworkSpec, p: Params, X, Y, cfg: LossConfig) -> LossBreakdown:
    return Objective(spec, X, Y, cfg).breakdown(flatten(p.check(spec)))


def validation_mse(spec: NetworkSpec, theta: np.ndarray, X, Y) -> float:
    S, _ = forward_batch(spec, theta, np.ascontiguousarray(_as_2d(X)))
    return mse_term(S[:, spec.layout.soff[-1]:], _as_2d(Y))


__all__ = [
    "LossBreakdown",
    "LossConfig",
    "Objective",
    "constraint_gap",
    "mse_term",
    "order_penalty",
    "order_penalty_grad",
    "reg_grad",
    "reg_terms",
    "smoothed_abs",
    "total_loss",
    "validation_mse",
]
