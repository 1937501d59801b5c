"""Time the numba and numpy kernel backends on the shapes used in training.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from biasorder import kernels
from biasorder.network import ACTIVATIONS, NetworkSpec

CASES = [
    ("sin [1,50,50,1] N=400", (1, 50, 50, 1), 400),
    ("stiff [4,20x4,1] N=96", (4, 20, 20, 20, 20, 1), 96),
    ("stiff [4,30x8,1] N=96", (4,) + (30,) * 8 + (1,), 96),
]


def bench(backend, spec, N, repeat, rng):
    lay = spec.layout
    theta = rng.uniform(-0.5, 0.5, spec.n_params)
    U = rng.uniform(0, 1, (N, spec.widths[0]))
    R = rng.uniform(-1, 1, (N, spec.widths[-1])) / N
    args = (theta, lay.widths, lay.woff, lay.boff, lay.soff, lay.zoff, 1.0, ACTIVATIONS["tanh"], True)
    S, Z = backend.forward(*args, U)
    backend.backward(*args, S, Z, R)
    n = spec.n_params
    H = np.eye(n)
    s = rng.normal(size=n)
    y = s + 0.1 * rng.normal(size=n)
    backend.bfgs_inverse_update(H.copy(), s, y, 1.0 / (s @ y))

    def best(fn):
        return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3

    return {
        "forward": best(lambda: backend.forward(*args, U)),
        "backward": best(lambda: backend.backward(*args, S, Z, R)),
        "bfgs_update": best(lambda: backend.bfgs_inverse_update(H, s, y, 1.0 / (s @ y))),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = [("numpy", kernels.numpy_backend)]
    if kernels.numba_backend is not None:
        backends.append(("numba", kernels.numba_backend))
    else:
        print("numba backend unavailable; timing numpy only")
    print(f"{'case':26s} {'kernel':12s} " + " ".join(f"{name + ' ms':>10s}" for name, _ in backends))
    for label, widths, N in CASES:
        spec = NetworkSpec(widths, "tanh", 1.0, "identity")
        rows = {name: bench(b, spec, N, args.repeat, np.random.default_rng(0)) for name, b in backends}
        for kernel in ("forward", "backward", "bfgs_update"):
            print(f"{label:26s} {kernel:12s} " + " ".join(f"{rows[name][kernel]:10.3f}" for name, _ in backends))


if __name__ == "__main__":
    main()
