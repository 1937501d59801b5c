"""Datasets: the sin(x) regression set, Robertson stiff-kinetics trajectories,
next-step supervision pairs, closed-loop rollout, and CSV/JSON I/O."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from .network import predict


class CsvFormatError(ValueError):
    """A CSV file does not match the expected layout."""


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, n_in)
    targets: np.ndarray  # (N, n_out)
    split: dict[str, np.ndarray]
    provenance: str = ""
    seed: int | None = None
    input_names: list[str] = field(default_factory=list)
    target_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets")
        n = self.inputs.shape[0]
        for key in ("train", "validation", "test"):
            self.split[key] = np.asarray(self.split.get(key, []), dtype=np.int64)
        allidx = np.concatenate([self.split[k] for k in ("train", "validation", "test")])
        if allidx.size != n or not np.array_equal(np.sort(allidx), np.arange(n)):
            raise ValueError("split index lists must be disjoint and cover every sample")
        if not self.input_names:
            self.input_names = [f"x{k}" for k in range(self.inputs.shape[1])]
        if not self.target_names:
            self.target_names = [f"y{k}" for k in range(self.targets.shape[1])]

    def __len__(self):
        return self.inputs.shape[0]

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.split[name]
        return self.inputs[idx], self.targets[idx]

    def train(self):
        return self.part("train")

    def validation(self):
        return self.part("validation")

    def test(self):
        return self.part("test")


def random_split(n: int, sizes: tuple[int, int, int], seed) -> dict[str, np.ndarray]:
    """Shuffle ``range(n)`` and cut it into train/validation/test blocks."""
    if sum(sizes) != n or min(sizes) < 0:
        raise ValueError(f"split sizes {sizes} must be nonnegative and sum to {n}")
    order = np.random.default_rng(seed).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return {"train": np.sort(order[:a]), "validation": np.sort(order[a:b]), "test": np.sort(order[b:])}


def make_sin_dataset(n_points=1000, interval=(0.0, 2 * math.pi), split=(400, 200, 400), seed=0) -> Dataset:
    """Evenly spaced ``x`` on ``interval`` with targets ``sin(x)``.

    ``split`` is (train, validation, test).
    """
    x = np.linspace(interval[0], interval[1], n_points)
    parts = random_split(n_points, tuple(split), seed)
    return Dataset(
        x[:, None], np.sin(x)[:, None], parts,
        provenance=f"sin(x) on [{interval[0]}, {interval[1]}], {n_points} evenly spaced points",
        seed=seed, input_names=["x"], target_names=["sin_x"],
    )


# -- stiff kinetics ---------------------------------------------------------

ROBERTSON_SPECIES = ("y1", "y2", "y3")


def robertson_rhs(t, y, k1=0.04, k2=3e7, k3=1e4):
    y1, y2, y3 = y
    return np.array([
        -k1 * y1 + k3 * y2 * y3,
        k1 * y1 - k3 * y2 * y3 - k2 * y2 * y2,
        k2 * y2 * y2,
    ])


def robertson_jac(t, y, k1=0.04, k2=3e7, k3=1e4):
    _, y2, y3 = y
    return np.array([
        [-k1, k3 * y3, k3 * y2],
        [k1, -k3 * y3 - 2 * k2 * y2, -k3 * y2],
        [0.0, 2 * k2 * y2, 0.0],
    ])


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "Radau"
    rtol: float = 1e-10
    atol: float = 1e-14
    t_first: float = 1e-6
    t_final: float = 1e5
    n_times: int = 41

    def time_grid(self) -> np.ndarray:
        """``t = 0`` followed by a log-spaced grid."""
        return np.concatenate([[0.0], np.logspace(math.log10(self.t_first), math.log10(self.t_final), self.n_times - 1)])


@dataclass
class Trajectory:
    name: str
    t: np.ndarray
    states: np.ndarray  # (steps, quantities)


@dataclass
class TrajectorySet:
    quantities: list[str]
    trajectories: list[Trajectory]

    def __post_init__(self):
        for tr in self.trajectories:
            tr.t = np.asarray(tr.t, dtype=np.float64)
            tr.states = np.atleast_2d(np.asarray(tr.states, dtype=np.float64))
            if np.any(np.diff(tr.t) <= 0):
                raise ValueError(f"trajectory {tr.name!r}: time grid must be strictly increasing")
            if tr.states.shape != (tr.t.size, len(self.quantities)):
                raise ValueError(f"trajectory {tr.name!r}: states shape {tr.states.shape} does not match grid")
            if not np.all(np.isfinite(tr.states)):
                raise ValueError(f"trajectory {tr.name!r}: non-finite state")

    def __getitem__(self, name: str) -> Trajectory:
        for tr in self.trajectories:
            if tr.name == name:
                return tr
        raise KeyError(name)

    def to_json(self) -> str:
        doc = {
            "quantities": self.quantities,
            "trajectories": [{"name": tr.name, "t": tr.t.tolist(), "states": tr.states.tolist()} for tr in self.trajectories],
        }
        return json.dumps(doc) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrajectorySet":
        doc = json.loads(text)
        return cls(doc["quantities"], [Trajectory(d["name"], d["t"], d["states"]) for d in doc["trajectories"]])


class IntegrationError(RuntimeError):
    pass


def ic_name(ic) -> str:
    return "ic[" + ",".join(f"{v:g}" for v in ic) + "]"


def integrate_robertson(y0, cfg: IntegratorConfig = IntegratorConfig(), t=None) -> Trajectory:
    t = cfg.time_grid() if t is None else np.asarray(t, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64)
    sol = solve_ivp(
        robertson_rhs, (t[0], t[-1]), y0, method=cfg.method, t_eval=t,
        rtol=cfg.rtol, atol=cfg.atol, jac=robertson_jac,
    )
    if not sol.success:
        raise IntegrationError(f"integration failed for initial condition {y0.tolist()}: {sol.message}")
    states = sol.y.T.copy()
    states[0] = y0
    return Trajectory(ic_name(y0), t, states)


def make_stiff_ode_set(initial_conditions, cfg: IntegratorConfig = IntegratorConfig()) -> TrajectorySet:
    """Robertson kinetics trajectories, one per initial condition."""
    trajs = []
    for ic in initial_conditions:
        ic = np.asarray(ic, dtype=np.float64)
        if ic.shape != (3,) or np.any(ic < 0) or not np.all(np.isfinite(ic)):
            raise ValueError(f"invalid Robertson initial condition {ic.tolist()}")
        trajs.append(integrate_robertson(ic, cfg))
    return TrajectorySet(list(ROBERTSON_SPECIES), trajs)


def robertson_ic(fraction: float) -> np.ndarray:
    """Initial state ``(f, 0, 1 - f)``: a fraction ``f`` of reactant, the rest product."""
    return np.array([fraction, 0.0, 1.0 - fraction])


# -- next-step supervision --------------------------------------------------

@dataclass
class Normalizer:
    """Per-column affine map onto [0, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalizer":
        lo = data.min(axis=0)
        hi = data.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        return cls(lo, hi)

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.lo) / (self.hi - self.lo)

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * (self.hi - self.lo) + self.lo

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(np.asarray(d["lo"], dtype=np.float64), np.asarray(d["hi"], dtype=np.float64))


@dataclass
class PairSet:
    """One next-step Dataset per quantity plus the shared normalization."""

    datasets: list[Dataset]
    state_norm: Normalizer
    time_norm: Normalizer | None
    time_shift: float
    quantities: list[str]
    times: np.ndarray | None = None  # training time grid, reused by rollouts

    def features(self, state, t) -> np.ndarray:
        """Normalized network input for a (batch of) state(s) at time(s) ``t``."""
        state = np.atleast_2d(state)
        x = self.state_norm.normalize(state)
        if self.time_norm is None:
            return x
        tf = np.log10(np.atleast_1d(np.asarray(t, dtype=np.float64)) + self.time_shift)[:, None]
        return np.hstack([x, self.time_norm.normalize(tf)])

    def meta(self) -> dict:
        return {
            "quantities": self.quantities,
            "state_norm": self.state_norm.to_dict(),
            "time_norm": None if self.time_norm is None else self.time_norm.to_dict(),
            "time_shift": self.time_shift,
            "times": None if self.times is None else self.times.tolist(),
        }

    @classmethod
    def from_meta(cls, d: dict) -> "PairSet":
        tn = d.get("time_norm")
        return cls([], Normalizer.from_dict(d["state_norm"]), None if tn is None else Normalizer.from_dict(tn),
                   float(d["time_shift"]), list(d["quantities"]),
                   None if d.get("times") is None else np.asarray(d["times"], dtype=np.float64))


def trajectory_to_pairs(ts: TrajectorySet, time_feature=True, time_shift=1e-7,
                        val_fraction=0.2, seed=0) -> PairSet:
    """Map state at ``t_k`` (plus ``log10(t_k + shift)``) to each quantity at ``t_{k+1}``.

    Inputs and targets are scaled to [0, 1] per quantity.  Pairs are split
    randomly into train and validation; the test split is empty.
    """
    if any(tr.t.size < 2 for tr in ts.trajectories):
        raise ValueError("every trajectory needs at least two time steps")
    cur = np.vstack([tr.states[:-1] for tr in ts.trajectories])
    nxt = np.vstack([tr.states[1:] for tr in ts.trajectories])
    tk = np.concatenate([tr.t[:-1] for tr in ts.trajectories])
    snorm = Normalizer.fit(np.vstack([tr.states for tr in ts.trajectories]))
    tnorm = None
    if time_feature:
        tnorm = Normalizer.fit(np.log10(tk + time_shift)[:, None])
    pairs = PairSet([], snorm, tnorm, time_shift, list(ts.quantities), ts.trajectories[0].t.copy())
    X = pairs.features(cur, tk)
    Yn = snorm.normalize(nxt)
    n = X.shape[0]
    n_val = int(round(val_fraction * n)) if n > 1 else 0
    parts = random_split(n, (n - n_val, n_val, 0), seed)
    in_names = list(ts.quantities) + (["log_t"] if time_feature else [])
    for q, name in enumerate(ts.quantities):
        pairs.datasets.append(Dataset(
            X, Yn[:, q:q + 1], {k: v.copy() for k, v in parts.items()},
            provenance=f"next-step {name} from {len(ts.trajectories)} trajectories", seed=seed,
            input_names=in_names, target_names=[name + "_next"],
        ))
    return pairs


@dataclass
class Rollout:
    t: np.ndarray
    states: np.ndarray
    completed: bool
    failed_step: int | None = None


def rollout(networks, pairs: PairSet, initial_state, times) -> Rollout:
    """Closed-loop prediction: only ``initial_state`` comes from data.

    ``networks`` is one ``(spec, theta)`` per quantity; ``times`` is the
    time grid (its length fixes the number of steps).
    """
    times = np.asarray(times, dtype=np.float64)
    nq = len(pairs.quantities)
    if len(networks) != nq:
        raise ValueError(f"need one network per quantity ({nq}), got {len(networks)}")
    n_in = nq + (0 if pairs.time_norm is None else 1)
    for spec, _ in networks:
        if spec.widths[0] != n_in or spec.widths[-1] != 1:
            raise ValueError(f"network widths {list(spec.widths)} do not fit {n_in} inputs and 1 output")
    states = np.full((times.size, nq), np.nan)
    states[0] = initial_state
    for k in range(times.size - 1):
        x = pairs.features(states[k], times[k])
        nxt = np.array([predict(spec, theta, x)[0, 0] for spec, theta in networks])
        nxt = pairs.state_norm.denormalize(nxt)
        if not np.all(np.isfinite(nxt)):
            return Rollout(times[: k + 1], states[: k + 1], False, k + 1)
        states[k + 1] = nxt
    return Rollout(times, states, True, None)


def relative_l2_error(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    denom = float(np.linalg.norm(truth))
    num = float(np.linalg.norm(pred - truth))
    return num / denom if denom > 0 else num


# -- CSV --------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset_csv(ds: Dataset, path) -> None:
    """Columns ``split, in:<name>..., out:<name>...``, one row per sample."""
    labels = np.empty(len(ds), dtype=object)
    for key in ("train", "validation", "test"):
        labels[ds.split[key]] = key
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split"] + [f"in:{n}" for n in ds.input_names] + [f"out:{n}" for n in ds.target_names])
        for i in range(len(ds)):
            w.writerow([labels[i]] + [_fmt(v) for v in ds.inputs[i]] + [_fmt(v) for v in ds.targets[i]])


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    return rows[0], rows[1:]


def _parse_float(text, path, lineno, col):
    try:
        return float(text)
    except ValueError:
        raise CsvFormatError(f"{path}:{lineno}: column {col!r}: cannot parse {text!r} as a number") from None


def load_dataset_csv(path, inputs=None, targets=None, split=(0.8, 0.2, 0.0), seed=0) -> Dataset:
    """Read a dataset CSV.

    Without explicit ``inputs``/``targets`` column lists, columns prefixed
    ``in:`` and ``out:`` are used.  A ``split`` column, when present, assigns
    rows; otherwise rows are split randomly by the ``split`` fractions.
    """
    header, rows = _read_rows(path)
    if inputs is None:
        inputs = [h for h in header if h.startswith("in:")]
    if targets is None:
        targets = [h for h in header if h.startswith("out:")]
    if not inputs or not targets:
        raise CsvFormatError(f"{path}: no input/target columns found in header {header}")
    for name in list(inputs) + list(targets):
        if name not in header:
            raise CsvFormatError(f"{path}: missing column {name!r}")
    in_idx = [header.index(c) for c in inputs]
    out_idx = [header.index(c) for c in targets]
    split_col = header.index("split") if "split" in header else None
    X = np.empty((len(rows), len(in_idx)))
    Y = np.empty((len(rows), len(out_idx)))
    labels = []
    for r, row in enumerate(rows):
        lineno = r + 2
        if len(row) != len(header):
            raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        X[r] = [_parse_float(row[c], path, lineno, header[c]) for c in in_idx]
        Y[r] = [_parse_float(row[c], path, lineno, header[c]) for c in out_idx]
        if split_col is not None:
            lab = row[split_col]
            if lab not in ("train", "validation", "test"):
                raise CsvFormatError(f"{path}:{lineno}: unknown split label {lab!r}")
            labels.append(lab)
    if split_col is not None:
        labels = np.array(labels)
        parts = {k: np.flatnonzero(labels == k) for k in ("train", "validation", "test")}
    else:
        n = len(rows)
        n_tr = int(round(split[0] * n))
        n_va = int(round(split[1] * n))
        parts = random_split(n, (n_tr, n_va, n - n_tr - n_va), seed)
    strip = lambda c: c.split(":", 1)[1] if ":" in c else c  # noqa: E731
    return Dataset(X, Y, parts, provenance=f"csv:{path}", seed=seed,
                   input_names=[strip(c) for c in inputs], target_names=[strip(c) for c in targets])


def save_trajectories_csv(ts: TrajectorySet, path) -> None:
    """Columns ``trajectory, t, <quantities>``, one row per time step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "t"] + list(ts.quantities))
        for tr in ts.trajectories:
            for k in range(tr.t.size):
                w.writerow([tr.name, _fmt(tr.t[k])] + [_fmt(v) for v in tr.states[k]])


def load_trajectories_csv(path, quantities=None) -> TrajectorySet:
    header, rows = _read_rows(path)
    for name in ("trajectory", "t"):
        if name not in header:
            raise CsvFormatError(f"{path}: missing column {name!r}")
    if quantities is None:
        quantities = [h for h in header if h not in ("trajectory", "t")]
    for q in quantities:
        if q not in header:
            raise CsvFormatError(f"{path}: missing column {q!r}")
    ti = header.index("t")
    ni = header.index("trajectory")
    qi = [header.index(q) for q in quantities]
    groups: dict[str, tuple[list, list]] = {}
    for r, row in enumerate(rows):
        lineno = r + 2
        if len(row) != len(header):
            raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        t, s = groups.setdefault(row[ni], ([], []))
        t.append(_parse_float(row[ti], path, lineno, "t"))
        s.append([_parse_float(row[c], path, lineno, header[c]) for c in qi])
    return TrajectorySet(list(quantities), [Trajectory(n, t, s) for n, (t, s) in groups.items()])


def rollout_csv(ro: Rollout, quantities, truth=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["t"] + [f"pred_{q}" for q in quantities]
    if truth is not None:
        head += [f"true_{q}" for q in quantities]
    w.writerow(head)
    for k in range(ro.t.size):
        row = [_fmt(ro.t[k])] + [_fmt(v) for v in ro.states[k]]
        if truth is not None:
            row += [_fmt(v) for v in truth[k]]
        w.writerow(row)
    return buf.getvalue()

