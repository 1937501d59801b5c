"""BFGS with Armijo backtracking, validation-patience early stopping, and
gamma continuation (path following) for the bias-ordering penalty."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .loss import LossBreakdown, LossConfig, Objective, validation_mse
from .network import NetworkSpec, Params, ViolationReport, flatten, order_violations, unflatten


class LineSearchFailed(RuntimeError):
    """Backtracking shrank the step below ``min_step`` without sufficient decrease."""


@dataclass(frozen=True)
class TrainConfig:
    max_iters: int = 5000
    patience: int = 400
    c1: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    grad_tol: float = 1e-8
    method: str = "bfgs"
    memory: int = 20
    restore_best: bool = True
    violation_tol: float = 1e-6
    debug_spd_every: int = 0

    def __post_init__(self):
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.method not in ("bfgs", "lbfgs"):
            raise ValueError(f"method must be 'bfgs' or 'lbfgs', got {self.method!r}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def armijo_search(f, theta, direction, g0, f0=None, c1=1e-4, backtrack=0.5, min_step=1e-12):
    """Backtracking line search over steps ``1, beta, beta^2, ...``.

    Returns ``(step, theta_new, f_new)`` for the first step with
    ``f(theta + a d) <= f(theta) + c1 a g0.d``.  A non-descent ``direction``
    is replaced by ``-g0``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    g0 = np.asarray(g0, dtype=np.float64)
    slope = float(g0 @ d)
    if not slope < 0:
        d = -g0
        slope = -float(g0 @ g0)
        if slope == 0:
            raise LineSearchFailed("zero gradient: nothing to search")
    if f0 is None:
        f0 = f(theta)
    step = 1.0
    while step >= min_step:
        trial = theta + step * d
        try:
            ft = f(trial)
        except FloatingPointError:
            ft = math.inf
        if ft <= f0 + c1 * step * slope:
            return step, trial, ft
        step *= backtrack
    raise LineSearchFailed(f"no sufficient decrease for steps down to {min_step:g}")


@dataclass
class BfgsState:
    """Dense inverse-Hessian approximation and the current iterate."""

    H: np.ndarray
    theta: np.ndarray
    grad: np.ndarray
    iteration: int = 0
    skipped: int = 0

    @classmethod
    def start(cls, theta, grad) -> "BfgsState":
        n = len(theta)
        return cls(np.eye(n), np.array(theta, dtype=np.float64), np.array(grad, dtype=np.float64))

    def direction(self, g):
        return -kernels.matvec(self.H, g)

    def reset(self):
        self.H = np.eye(len(self.theta))


def curvature_ok(s, y) -> bool:
    sy = float(s @ y)
    return sy > 1e-10 * float(np.linalg.norm(y) * np.linalg.norm(s))


def bfgs_update(state: BfgsState, s, y) -> BfgsState:
    """Inverse BFGS update ``H <- (I - r s y') H (I - r y s') + r s s'``, skipped
    unless the curvature condition holds."""
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not curvature_ok(s, y):
        state.skipped += 1
        return state
    kernels.bfgs_inverse_update(state.H, s, y, 1.0 / float(s @ y))
    return state


class LbfgsState:
    """Limited-memory variant for large parameter vectors."""

    def __init__(self, theta, grad, memory=20):
        self.theta = np.array(theta, dtype=np.float64)
        self.grad = np.array(grad, dtype=np.float64)
        self.pairs = deque(maxlen=memory)
        self.skipped = 0
        self.iteration = 0

    def direction(self, g):
        q = np.array(g, dtype=np.float64)
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * float(s @ q)
            q -= a * y
            alphas.append(a)
        if self.pairs:
            s, y, _ = self.pairs[-1]
            q *= float(s @ y) / float(y @ y)
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return -q

    def reset(self):
        self.pairs.clear()

    def update(self, s, y):
        if not curvature_ok(s, y):
            self.skipped += 1
            return
        self.pairs.append((s, y, 1.0 / float(s @ y)))


@dataclass
class TrainReport:
    iterations: int
    stop_reason: str
    train_total: list[float]
    train_mse: list[float]
    val_mse: list[float]
    gamma_half_g: list[float]
    best_iter: int
    best_val: float
    final: LossBreakdown
    violations: ViolationReport
    seed: int | None
    config: dict
    skipped_updates: int = 0
    direction_resets: int = 0
    armijo_checked: int = 0
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "iterations": self.iterations,
            "stop_reason": self.stop_reason,
            "best_iter": self.best_iter,
            "best_val": self.best_val,
            "final": self.final.to_dict(),
            "violations": self.violations.to_dict(),
            "seed": self.seed,
            "config": self.config,
            "skipped_updates": self.skipped_updates,
            "direction_resets": self.direction_resets,
            "armijo_checked": self.armijo_checked,
            "traces": {
                "train_total": self.train_total,
                "train_mse": self.train_mse,
                "val_mse": self.val_mse,
                "gamma_half_g": self.gamma_half_g,
            },
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1) + "\n"

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "train_total", "train_mse", "val_mse", "gamma_half_g"])
        for k in range(len(self.train_total)):
            w.writerow([k] + [repr(float(t[k])) for t in (self.train_total, self.train_mse, self.val_mse, self.gamma_half_g)])
        return buf.getvalue()


def _check_spd(H):
    ev = np.linalg.eigvalsh(H)
    if not ev[0] > 0:
        raise AssertionError(f"inverse Hessian lost positive definiteness (min eigenvalue {ev[0]:.3e})")


@dataclass
class MinimizeResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    iterations: int
    stop_reason: str
    f_trace: list[float]
    skipped_updates: int = 0
    direction_resets: int = 0
    armijo_checked: int = 0


def minimize(f, fg, x0, cfg: TrainConfig = TrainConfig(), on_iter=None) -> MinimizeResult:
    """BFGS (or L-BFGS) with Armijo backtracking.

    ``f(x)`` returns the objective value, ``fg(x)`` returns ``(value, grad)``;
    ``value`` may be any object with a ``total`` attribute.  ``on_iter(k, x,
    value, grad)`` is called after each accepted step and may return a stop
    reason string to end the run.
    """
    total = lambda v: float(getattr(v, "total", v))  # noqa: E731
    x = np.array(x0, dtype=np.float64)
    val, g = fg(x)
    state = BfgsState.start(x, g) if cfg.method == "bfgs" else LbfgsState(x, g, cfg.memory)
    trace = [total(val)]
    stop = "max_iters"
    resets = checked = 0
    for k in range(1, cfg.max_iters + 1):
        if float(np.linalg.norm(g)) <= cfg.grad_tol:
            stop = "grad_tol"
            break
        d = state.direction(g)
        slope = float(g @ d)
        if not slope < 0:
            state.reset()
            d = -g
            slope = -float(g @ g)
            resets += 1
        try:
            step, x_new, f_new = armijo_search(
                f, x, d, g, f0=trace[-1], c1=cfg.c1, backtrack=cfg.backtrack, min_step=cfg.min_step,
            )
        except LineSearchFailed:
            stop = "line_search_failed"
            break
        # sufficient decrease, re-asserted on the accepted step
        assert f_new <= trace[-1] + cfg.c1 * step * slope, "Armijo condition violated"
        checked += 1

        val_new, g_new = fg(x_new)
        s, y = x_new - x, g_new - g
        if isinstance(state, BfgsState):
            bfgs_update(state, s, y)
            if cfg.debug_spd_every and x.size <= 30 and k % cfg.debug_spd_every == 0:
                _check_spd(state.H)
        else:
            state.update(s, y)
        x, g, val = x_new, g_new, val_new
        state.theta, state.grad, state.iteration = x, g, k
        trace.append(total(val))
        if on_iter is not None:
            reason = on_iter(k, x, val, g)
            if reason:
                stop = reason
                break
    return MinimizeResult(x, trace[-1], g, len(trace) - 1, stop, trace, state.skipped, resets, checked)


def train(
    spec: NetworkSpec,
    p0: Params,
    dataset,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig = TrainConfig(),
    seed: int | None = None,
) -> tuple[Params, TrainReport]:
    """Minimize ``J_gamma`` on the training split with BFGS + Armijo.

    Stops on gradient tolerance, ``max_iters``, line-search failure, or when
    the validation MSE has not reached a new minimum for more than
    ``patience`` iterations.  Returns the parameters with the best
    validation MSE (unless ``restore_best`` is off).
    """
    t0 = time.perf_counter()
    Xtr, Ytr = dataset.train()
    Xva, Yva = dataset.validation()
    if len(Xtr) == 0 or len(Xva) == 0:
        raise ValueError("training needs nonempty train and validation splits")
    obj = Objective(spec, Xtr, Ytr, loss_cfg)
    penalty_on = loss_cfg.order_penalty

    theta0 = flatten(p0.check(spec))
    bd0 = obj.breakdown(theta0)
    val0 = validation_mse(spec, theta0, Xva, Yva)
    tr_mse, va_mse, pen_tr = [bd0.mse], [val0], [bd0.order_penalty if penalty_on else 0.0]
    best = {"val": val0, "iter": 0, "theta": theta0.copy()}

    def on_iter(k, theta, bd, g):
        val = validation_mse(spec, theta, Xva, Yva)
        tr_mse.append(bd.mse)
        va_mse.append(val)
        pen_tr.append(bd.order_penalty if penalty_on else 0.0)
        if val < best["val"]:
            best.update(val=val, iter=k, theta=theta.copy())
        elif k - best["iter"] > train_cfg.patience:
            return "patience"
        return None

    res = minimize(obj, obj.value_and_grad, theta0, train_cfg, on_iter)

    final_theta = best["theta"] if train_cfg.restore_best else res.x
    p_final = unflatten(spec, final_theta)
    report = TrainReport(
        iterations=res.iterations,
        stop_reason=res.stop_reason,
        train_total=res.f_trace,
        train_mse=tr_mse,
        val_mse=va_mse,
        gamma_half_g=pen_tr,
        best_iter=best["iter"],
        best_val=best["val"],
        final=obj.breakdown(final_theta),
        violations=order_violations(p_final, train_cfg.violation_tol),
        seed=seed,
        config={"network": spec.to_dict(), "loss": loss_cfg.to_dict(), "train": train_cfg.to_dict()},
        skipped_updates=res.skipped_updates,
        direction_resets=res.direction_resets,
        armijo_checked=res.armijo_checked,
        wall_time=time.perf_counter() - t0,
    )
    return p_final, report


def path_follow(spec, p0, dataset, loss_cfg: LossConfig, ladder, train_cfg=TrainConfig(), seed=None):
    """Solve for each gamma in an increasing ladder, warm-starting every stage."""
    ladder = [float(g) for g in ladder]
    if not ladder:
        raise ValueError("gamma ladder is empty")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError(f"gamma ladder must be strictly increasing, got {ladder}")
    p = p0
    reports = []
    for gamma in ladder:
        p, rep = train(spec, p, dataset, loss_cfg.replace(gamma=gamma), train_cfg, seed=seed)
        reports.append(rep)
    return p, reports


def gamma_ladder(gamma0: float, ratio: float, stages: int) -> list[float]:
    return [gamma0 * ratio**k for k in range(stages)]


@dataclass
class Prop1Table:
    """Penalty-continuation diagnostics over a gamma grid."""

    gammas: list[float]
    objective: list[float]  # J_gamma at the computed solution
    half_gamma_g: list[float]  # gamma/2 * g at the computed solution
    monotone: bool
    penalty_vanishing: bool
    tol: float
    threshold: float
    rows_extra: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["gamma", "J_gamma", "half_gamma_g"])
        for row in zip(self.gammas, self.objective, self.half_gamma_g):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def prop1_diagnostics(reports, tol: float = 1e-6, threshold: float = 1e-6) -> Prop1Table:
    """Check that ``J_gamma(theta^gamma)`` is nondecreasing in gamma (within
    ``tol``) and that the last ``gamma/2 g`` is below ``threshold``."""
    rows = sorted(
        ((r.config["loss"]["gamma"], r.final.total, r.final.order_penalty) for r in reports),
        key=lambda t: t[0],
    )
    if len(rows) < 1:
        raise ValueError("need at least one report")
    gammas = [r[0] for r in rows]
    obj = [r[1] for r in rows]
    pen = [r[2] for r in rows]
    monotone = all(b >= a - tol for a, b in zip(obj, obj[1:]))
    return Prop1Table(gammas, obj, pen, monotone, pen[-1] <= threshold, tol, threshold)


def gamma_sweep(spec, p0, dataset, loss_cfg: LossConfig, grid, train_cfg=TrainConfig(), warm_start=True, seed=None):
    """Train at each gamma of ``grid`` (ascending); returns the stage reports.

    With ``warm_start`` each stage starts from the previous solution,
    otherwise every stage starts from ``p0``.
    """
    grid = sorted(float(g) for g in grid)
    if warm_start and len(set(grid)) == len(grid):
        return path_follow(spec, p0, dataset, loss_cfg, grid, train_cfg, seed)[1]
    return [train(spec, p0, dataset, loss_cfg.replace(gamma=g), train_cfg, seed=seed)[1] for g in grid]
