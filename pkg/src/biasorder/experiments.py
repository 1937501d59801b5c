"""Experiment configs and runners shared by the CLI and the acceptance suite."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from .adjoint import fd_gradient_flat, min_abs_preactivation, relative_errors
from .loss import LossConfig, Objective
from .network import NetworkSpec, Params, flatten, init_params, predict
from .optim import TrainConfig, TrainReport, gamma_sweep, prop1_diagnostics, train

ARMS = ("plain", "ordered")


class ConfigError(ValueError):
    """An experiment config is malformed or violates a module invariant."""


@dataclass
class ExperimentConfig:
    network: NetworkSpec
    loss: LossConfig
    train: TrainConfig
    data: dict
    seed: int = 0
    output_dir: str = "runs/experiment"
    name: str = "experiment"
    arms: str = "both"
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            doc = copy.deepcopy(doc)
            net = NetworkSpec.from_dict(doc.pop("network"))
            loss = LossConfig.from_dict(doc.pop("loss", {}))
            tr = TrainConfig.from_dict(doc.pop("train", {}))
            data = doc.pop("data")
            if data.get("kind") not in ("sin", "robertson", "csv"):
                raise ConfigError(f"data.kind must be 'sin', 'robertson' or 'csv', got {data.get('kind')!r}")
            cfg = cls(
                network=net, loss=loss, train=tr, data=data,
                seed=int(doc.pop("seed", 0)),
                output_dir=str(doc.pop("output_dir", "runs/experiment")),
                name=str(doc.pop("name", "experiment")),
                arms=str(doc.pop("arms", "both")),
                extra=doc,
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if cfg.arms not in ("both",) + ARMS:
            raise ConfigError(f"arms must be 'both', 'plain' or 'ordered', got {cfg.arms!r}")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "seed": self.seed,
            "arms": self.arms,
            "output_dir": self.output_dir,
            "network": self.network.to_dict(),
            "loss": self.loss.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data,
        }
        d.update(self.extra)
        return d

    def arm_list(self) -> list[str]:
        return list(ARMS) if self.arms == "both" else [self.arms]

    def arm_loss(self, arm: str) -> LossConfig:
        """``plain`` trains J (gamma = 0); ``ordered`` trains J_gamma."""
        return self.loss.replace(gamma=0.0) if arm == "plain" else self.loss


def theta_checksum(theta: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(theta, dtype="<f8").tobytes()).hexdigest()[:16]


# -- data construction --------------------------------------------------------

def build_dataset(cfg: ExperimentConfig) -> D.Dataset:
    d = cfg.data
    if d["kind"] == "sin":
        return D.make_sin_dataset(
            n_points=int(d.get("n_points", 1000)),
            interval=tuple(d.get("interval", (0.0, 2 * math.pi))),
            split=tuple(d.get("split", (400, 200, 400))),
            seed=int(d.get("split_seed", cfg.seed)),
        )
    if d["kind"] == "csv":
        return D.load_dataset_csv(d["path"], d.get("inputs"), d.get("targets"),
                                  tuple(d.get("split", (0.8, 0.2, 0.0))), int(d.get("split_seed", cfg.seed)))
    raise ConfigError(f"data kind {d['kind']!r} does not define a single dataset")


def integrator_config(d: dict) -> D.IntegratorConfig:
    keys = ("method", "rtol", "atol", "t_first", "t_final", "n_times")
    return D.IntegratorConfig(**{k: d[k] for k in keys if k in d})


def _ics(values) -> list[np.ndarray]:
    out = []
    for v in values:
        out.append(D.robertson_ic(v) if np.isscalar(v) else np.asarray(v, dtype=np.float64))
    return out


def build_trajectories(cfg: ExperimentConfig):
    """Training and held-out Robertson trajectory sets for a ``robertson`` config."""
    d = cfg.data
    icfg = integrator_config(d)
    train_ts = D.make_stiff_ode_set(_ics(d.get("train_ics", [1.0, 0.8, 0.6])), icfg)
    test_ts = D.make_stiff_ode_set(_ics(d.get("test_ics", [0.7])), icfg)
    return train_ts, test_ts


def build_pairs(cfg: ExperimentConfig, train_ts) -> D.PairSet:
    d = cfg.data
    return D.trajectory_to_pairs(
        train_ts, time_feature=bool(d.get("time_feature", True)),
        time_shift=float(d.get("time_shift", 1e-7)),
        val_fraction=float(d.get("val_fraction", 0.2)), seed=int(d.get("split_seed", cfg.seed)),
    )


def stiff_spec(cfg: ExperimentConfig, pairs: D.PairSet) -> NetworkSpec:
    spec = cfg.network
    n_in = pairs.datasets[0].inputs.shape[1]
    if spec.widths[0] != n_in or spec.widths[-1] != 1:
        raise ConfigError(f"network widths {list(spec.widths)} must start with {n_in} inputs and end with 1 output")
    return spec


# -- runs -----------------------------------------------------------------------

@dataclass
class ArmResult:
    arm: str
    name: str  # network name within the arm ("net" or a quantity)
    spec: NetworkSpec
    params: Params
    report: TrainReport
    init_checksum: str


def _train_task(arm, name, spec, p0, dataset, loss_cfg, train_cfg, seed):
    p, rep = train(spec, p0, dataset, loss_cfg, train_cfg, seed=seed)
    return ArmResult(arm, name, spec, p, rep, theta_checksum(flatten(p0)))


def _run_tasks(tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [_train_task(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda t: _train_task(*t), tasks))


def run_single(cfg: ExperimentConfig, jobs: int = 1, dataset=None) -> list[ArmResult]:
    """Train every arm on one dataset from the same initial parameters."""
    dataset = build_dataset(cfg) if dataset is None else dataset
    p0 = init_params(cfg.network, cfg.seed)
    tasks = [(arm, "net", cfg.network, p0, dataset, cfg.arm_loss(arm), cfg.train, cfg.seed) for arm in cfg.arm_list()]
    return _run_tasks(tasks, jobs)


def run_parallel_nets(cfg: ExperimentConfig, jobs: int = 1, pairs=None) -> list[ArmResult]:
    """One network per quantity, per arm; arms share initial parameters."""
    if pairs is None:
        pairs = build_pairs(cfg, build_trajectories(cfg)[0])
    spec = stiff_spec(cfg, pairs)
    tasks = []
    for q, (qname, ds) in enumerate(zip(pairs.quantities, pairs.datasets)):
        p0 = init_params(spec, cfg.seed + q)
        for arm in cfg.arm_list():
            tasks.append((arm, qname, spec, p0, ds, cfg.arm_loss(arm), cfg.train, cfg.seed))
    return _run_tasks(tasks, jobs)


def holdout_error(spec, params, dataset: D.Dataset) -> float:
    X, Y = dataset.test()
    return D.relative_l2_error(predict(spec, flatten(params), X), Y)


# -- gradient check -----------------------------------------------------------

@dataclass
class GradcheckResult:
    instances: int
    max_error: float
    tol: float
    skipped: int

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def gradcheck(spec: NetworkSpec, loss_cfg: LossConfig, instances=5, n_samples=3, h=1e-6, tol=1e-6,
              seed=0, corrupt=False, kink_margin=1e-3) -> GradcheckResult:
    """Compare the adjoint gradient with central differences at random points.

    Error per component is ``|a - f| / (1 + |f|)``.  For ReLU, instances
    with any pre-activation within ``kink_margin`` of 0 are redrawn.
    ``corrupt`` perturbs one analytic component (a self-test of the check).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    skipped = 0
    done = 0
    while done < instances:
        theta = rng.uniform(-1, 1, spec.n_params)
        X = rng.uniform(-1, 1, (n_samples, spec.widths[0]))
        Y = rng.uniform(-1, 1, (n_samples, spec.widths[-1]))
        if spec.activation == "relu" and min_abs_preactivation(spec, theta, X) <= kink_margin:
            skipped += 1
            if skipped > 1000 * instances:
                raise RuntimeError("could not draw kink-free ReLU instances")
            continue
        obj = Objective(spec, X, Y, loss_cfg)
        _, g = obj.value_and_grad(theta)
        if corrupt:
            g = g.copy()
            g[rng.integers(g.size)] += 1e-3
        fd = fd_gradient_flat(obj, theta, h)
        worst = max(worst, float(relative_errors(g, fd).max()))
        done += 1
    return GradcheckResult(instances, worst, tol, skipped)


# -- penalty continuation diagnostics -------------------------------------------

def prop1_run(cfg: ExperimentConfig, grid, warm_start=True, tol=1e-6, threshold=1e-6, dataset=None):
    """Solve on a gamma grid from one initialization and tabulate
    ``J_gamma`` and ``gamma/2 g`` at each computed solution.

    Stages keep their final iterate (``restore_best`` off) so each value is
    taken at a stationary point rather than an early-stopped one.
    """
    dataset = build_dataset(cfg) if dataset is None else dataset
    p0 = init_params(cfg.network, cfg.seed)
    tcfg = TrainConfig(**{**cfg.train.to_dict(), "restore_best": False})
    reports = gamma_sweep(cfg.network, p0, dataset, cfg.loss, grid, tcfg, warm_start=warm_start, seed=cfg.seed)
    return prop1_diagnostics(reports, tol=tol, threshold=threshold), reports


# -- rollout ----------------------------------------------------------------------

@dataclass
class RolloutSummary:
    ic: list[float]
    completed: bool
    failed_step: int | None
    rel_errors: dict[str, float]
    conservation_error: float

    def to_dict(self) -> dict:
        return {
            "ic": self.ic,
            "completed": self.completed,
            "failed_step": self.failed_step,
            "rel_errors": self.rel_errors,
            "conservation_error": self.conservation_error,
        }


def rollout_summary(networks, pairs: D.PairSet, truth: D.Trajectory, steps=None):
    t = truth.t if steps is None else truth.t[: steps + 1]
    ro = D.rollout(networks, pairs, truth.states[0], t)
    ref = truth.states[: ro.t.size]
    errs = {q: D.relative_l2_error(ro.states[:, k], ref[:, k]) for k, q in enumerate(pairs.quantities)}
    cons = float(np.max(np.abs(ro.states.sum(axis=1) - ref.sum(axis=1))))
    return ro, RolloutSummary(truth.states[0].tolist(), ro.completed, ro.failed_step, errs, cons)
