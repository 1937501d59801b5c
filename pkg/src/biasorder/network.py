"""ResNet / feedforward architecture, forward evaluation and weight-space symmetry.

Layer maps, for an input ``u`` and hidden states ``y_1 .. y_{L-1}``::

    y_1 = tau * act(W_0 u + b_0)
    y_j = P y_{j-1} + tau * act(W_{j-1} y_{j-1} + b_{j-1})     2 <= j <= L-1
    y_L = W_{L-1} y_{L-1}

``P`` is the identity (``skip_policy="identity"``) or zero (``"zero"``).  With
zero skips and ``tau = 1`` this is a plain feedforward net.

``W_l`` is stored with shape ``(n_{l+1}, n_l)`` so each layer is a plain
matvec.  The output layer has no bias.

Flat parameter layout (layer-major): ``W_0`` row-major, ``b_0``, ``W_1``,
``b_1``, ..., ``W_{L-2}``, ``b_{L-2}``, ``W_{L-1}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels
from .tensor import NonFiniteError, ShapeError, matvec, vector

ACTIVATIONS = {"tanh": kernels.TANH, "relu": kernels.RELU}
SKIP_POLICIES = ("identity", "zero")


class InvalidSpecError(ValueError):
    """A NetworkSpec violates one of its invariants."""


@dataclass(frozen=True)
class NetworkSpec:
    widths: tuple[int, ...]
    activation: str = "tanh"
    tau: float = 1.0
    skip_policy: str = "identity"
    order_biases: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activation", str(self.activation).lower())
        object.__setattr__(self, "skip_policy", str(self.skip_policy).lower())
        if len(self.widths) < 3:
            raise InvalidSpecError(
                f"need at least one hidden layer (L >= 2), got widths {list(self.widths)}"
            )
        if any(w < 1 for w in self.widths):
            raise InvalidSpecError(f"all widths must be >= 1, got {list(self.widths)}")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpecError(f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}")
        if self.skip_policy not in SKIP_POLICIES:
            raise InvalidSpecError(f"skip_policy must be one of {SKIP_POLICIES}, got {self.skip_policy!r}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InvalidSpecError(f"tau must be positive, got {self.tau}")
        if self.skip_policy == "identity" and len(set(self.hidden_widths)) > 1:
            raise InvalidSpecError(
                f"identity skips require a uniform hidden width, got {list(self.hidden_widths)}"
            )

    @property
    def depth(self) -> int:
        """Number of layer maps ``L``."""
        return len(self.widths) - 1

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return self.widths[1:-1]

    @property
    def identity_skip(self) -> bool:
        return self.skip_policy == "identity"

    @cached_property
    def layout(self) -> "Layout":
        return Layout.build(self.widths)

    @property
    def n_params(self) -> int:
        return self.layout.n_params

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "activation": self.activation,
            "tau": self.tau,
            "skip_policy": self.skip_policy,
            "order_biases": self.order_biases,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            widths=tuple(d["widths"]),
            activation=d.get("activation", "tanh"),
            tau=float(d.get("tau", 1.0)),
            skip_policy=d.get("skip_policy", "identity"),
            order_biases=bool(d.get("order_biases", True)),
        )


@dataclass(frozen=True)
class Layout:
    """Offsets of each block in the flat parameter / packed state arrays."""

    widths: np.ndarray
    woff: np.ndarray
    boff: np.ndarray
    soff: np.ndarray
    zoff: np.ndarray
    n_params: int

    @classmethod
    def build(cls, widths) -> "Layout":
        w = np.asarray(widths, dtype=np.int64)
        L = len(w) - 1
        woff = np.zeros(L, dtype=np.int64)
        boff = np.zeros(L, dtype=np.int64)
        pos = 0
        for l in range(L):
            woff[l] = pos
            pos += w[l + 1] * w[l]
            if l < L - 1:
                boff[l] = pos
                pos += w[l + 1]
            else:
                boff[l] = -1
        soff = np.concatenate([[0], np.cumsum(w)[:-1]]).astype(np.int64)
        zoff = np.concatenate([[0], np.cumsum(w[1:-1])]).astype(np.int64)
        return cls(w, woff, boff, soff, zoff, int(pos))

    def bias_slices(self) -> list[slice]:
        return [slice(int(self.boff[l]), int(self.boff[l] + self.widths[l + 1])) for l in range(len(self.widths) - 2)]

    def weight_slices(self) -> list[slice]:
        L = len(self.widths) - 1
        return [
            slice(int(self.woff[l]), int(self.woff[l] + self.widths[l + 1] * self.widths[l]))
            for l in range(L)
        ]


@dataclass
class Params:
    """Weights ``W_0..W_{L-1}`` and biases ``b_0..b_{L-2}``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "Params":
        return Params([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check(self, spec: NetworkSpec) -> "Params":
        L = spec.depth
        if len(self.weights) != L or len(self.biases) != L - 1:
            raise ShapeError(
                f"expected {L} weight matrices and {L - 1} bias vectors, "
                f"got {len(self.weights)} and {len(self.biases)}"
            )
        for l in range(L):
            want = (spec.widths[l + 1], spec.widths[l])
            if self.weights[l].shape != want:
                raise ShapeError(f"W_{l} has shape {self.weights[l].shape}, expected {want}")
        for l in range(L - 1):
            want = (spec.widths[l + 1],)
            if self.biases[l].shape != want:
                raise ShapeError(f"b_{l} has shape {self.biases[l].shape}, expected {want}")
        return self

    def __eq__(self, other):
        if not isinstance(other, Params):
            return NotImplemented
        return (
            len(self.weights) == len(other.weights)
            and len(self.biases) == len(other.biases)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


@dataclass
class LayerTrace:
    states: list[np.ndarray]
    preactivations: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class Permutation:
    """One permutation per hidden layer; new neuron ``i`` is old neuron ``perms[k][i]``."""

    perms: tuple[np.ndarray, ...]

    @classmethod
    def identity(cls, spec: NetworkSpec) -> "Permutation":
        return cls(tuple(np.arange(n) for n in spec.hidden_widths))

    @classmethod
    def random(cls, spec: NetworkSpec, rng: np.random.Generator) -> "Permutation":
        if spec.identity_skip:
            shared = rng.permutation(spec.hidden_widths[0])
            return cls(tuple(shared.copy() for _ in spec.hidden_widths))
        return cls(tuple(rng.permutation(n) for n in spec.hidden_widths))


@dataclass
class ViolationReport:
    count: int
    worst_gap: float
    pairs: int
    violations: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def ordered_fraction(self) -> float:
        return 1.0 if self.pairs == 0 else 1.0 - self.count / self.pairs

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "pairs": self.pairs,
            "worst_gap": self.worst_gap,
            "violations": [{"layer": l, "index": j, "gap": g} for l, j, g in self.violations],
        }


def flatten(p: Params) -> np.ndarray:
    parts = []
    for l, W in enumerate(p.weights):
        parts.append(np.ravel(W))
        if l < len(p.biases):
            parts.append(p.biases[l])
    return np.concatenate(parts).astype(np.float64)


def unflatten(spec: NetworkSpec, theta) -> Params:
    theta = vector(theta)
    lay = spec.layout
    if theta.shape[0] != lay.n_params:
        raise ShapeError(f"parameter vector has length {theta.shape[0]}, spec needs {lay.n_params}")
    weights = [
        theta[s].reshape(spec.widths[l + 1], spec.widths[l]).copy()
        for l, s in enumerate(lay.weight_slices())
    ]
    biases = [theta[s].copy() for s in lay.bias_slices()]
    return Params(weights, biases)


def init_params(spec: NetworkSpec, seed: int | np.random.Generator) -> Params:
    """Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    weights = []
    for l in range(spec.depth):
        nin, nout = spec.widths[l], spec.widths[l + 1]
        limit = math.sqrt(6.0 / (nin + nout))
        weights.append(rng.uniform(-limit, limit, size=(nout, nin)))
    biases = [np.zeros(n) for n in spec.widths[1:-1]]
    return Params(weights, biases)


def _act(z, activation):
    return np.tanh(z) if activation == "tanh" else np.maximum(z, 0.0)


def forward(spec: NetworkSpec, p: Params, u) -> LayerTrace:
    """Evaluate one input and keep every state and pre-activation."""
    u = vector(u)
    if u.shape[0] != spec.widths[0]:
        raise ShapeError(f"input has length {u.shape[0]}, network expects {spec.widths[0]}")
    p.check(spec)
    L = spec.depth
    states = [u]
    pre = []
    y = u
    for l in range(L - 1):
        z = matvec(p.weights[l], y) + p.biases[l]
        ynew = spec.tau * _act(z, spec.activation)
        if l > 0 and spec.identity_skip:
            ynew = ynew + y
        if not np.all(np.isfinite(ynew)):
            raise NonFiniteError(f"non-finite state at layer {l + 1}")
        pre.append(z)
        states.append(ynew)
        y = ynew
    out = matvec(p.weights[L - 1], y)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite state at layer {L}")
    states.append(out)
    return LayerTrace(states, pre)


def forward_batch(spec: NetworkSpec, theta: np.ndarray, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Packed states ``(N, sum widths)`` and pre-activations for a batch of inputs."""
    lay = spec.layout
    U = np.ascontiguousarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != spec.widths[0]:
        raise ShapeError(f"inputs have shape {U.shape}, expected (N, {spec.widths[0]})")
    return kernels.forward(
        theta, lay.widths, lay.woff, lay.boff, lay.soff, lay.zoff,
        float(spec.tau), ACTIVATIONS[spec.activation], spec.identity_skip, U,
    )


def predict(spec: NetworkSpec, theta: np.ndarray, U: np.ndarray) -> np.ndarray:
    S, _ = forward_batch(spec, theta, U)
    return S[:, spec.layout.soff[-1]:]


def apply_permutation(spec: NetworkSpec, p: Params, perm: Permutation) -> Params:
    """Relabel hidden neurons without changing the network function."""
    hidden = spec.hidden_widths
    if len(perm.perms) != len(hidden):
        raise ShapeError(f"permutation covers {len(perm.perms)} hidden layers, network has {len(hidden)}")
    for k, (pi, n) in enumerate(zip(perm.perms, hidden)):
        if sorted(np.asarray(pi).tolist()) != list(range(n)):
            raise ShapeError(f"permutation for hidden layer {k + 1} is not a bijection of {n} neurons")
    if spec.identity_skip and any(not np.array_equal(perm.perms[0], pi) for pi in perm.perms[1:]):
        raise ValueError("identity skips need the same permutation in every hidden layer")
    q = p.copy()
    for k, pi in enumerate(perm.perms):
        pi = np.asarray(pi)
        q.weights[k] = q.weights[k][pi, :]
        q.biases[k] = q.biases[k][pi]
        q.weights[k + 1] = q.weights[k + 1][:, pi]
    return q


def count_equivalent_parameterizations(spec: NetworkSpec, product: bool = False) -> int:
    """Sum of ``n_l!`` over hidden layers (or the product, with ``product=True``)."""
    facts = [math.factorial(n) for n in spec.hidden_widths]
    return math.prod(facts) if product else sum(facts)


def order_violations(biases, tol: float = 0.0) -> ViolationReport:
    """Adjacent pairs with ``b[j+1] - b[j] < -tol``, per hidden layer.

    Accepts a Params or a list of bias vectors.  ``worst_gap`` is the most
    negative difference over all pairs (0.0 if none is negative).
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if isinstance(biases, Params):
        biases = biases.biases
    found = []
    worst = 0.0
    pairs = 0
    for l, b in enumerate(biases):
        d = np.diff(np.asarray(b, dtype=np.float64))
        pairs += d.size
        if d.size:
            worst = min(worst, float(d.min()))
        for j in np.flatnonzero(d < -tol):
            found.append((l, int(j), float(d[j])))
    return ViolationReport(len(found), worst, pairs, found)


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, spec: NetworkSpec, p: Params, **meta) -> None:
    doc = spec.to_dict()
    doc["weights"] = [W.tolist() for W in p.weights]
    doc["biases"] = [b.tolist() for b in p.biases]
    for key in ("seed", "gamma", "lambda"):
        doc[key] = meta.pop(key, None)
    doc.update(meta)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[NetworkSpec, Params, dict]:
    doc = json.loads(Path(path).read_text())
    spec = NetworkSpec.from_dict(doc)
    weights = []
    for l, W in enumerate(doc["weights"]):
        W = np.asarray(W, dtype=np.float64)
        if W.ndim == 1:
            W = W.reshape(spec.widths[l + 1], spec.widths[l])
        weights.append(W)
    biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
    p = Params(weights, biases).check(spec)
    meta = {k: v for k, v in doc.items() if k not in ("weights", "biases")}
    return spec, p, meta
