"""Command-line front end.

Exit codes: 0 success / constraint satisfied, 1 property violated,
2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import data as D
from . import kernels
from .experiments import (
    ConfigError,
    ExperimentConfig,
    build_dataset,
    build_pairs,
    build_trajectories,
    gradcheck,
    prop1_run,
    rollout_summary,
    run_parallel_nets,
    run_single,
    holdout_error,
)
from .network import (
    InvalidSpecError,
    NetworkSpec,
    Permutation,
    apply_permutation,
    count_equivalent_parameterizations,
    flatten,
    load_checkpoint,
    order_violations,
    predict,
    save_checkpoint,
)
from .tensor import ShapeError

log = logging.getLogger("biasorder")

EXIT_OK, EXIT_VIOLATED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=1) + "\n"


def _load_config(path) -> ExperimentConfig:
    return ExperimentConfig.load(path)


def _save_arm(outdir: Path, res, cfg: ExperimentConfig) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    loss = cfg.arm_loss(res.arm)
    save_checkpoint(outdir / "checkpoint.json", res.spec, res.params,
                    seed=cfg.seed, gamma=loss.gamma, **{"lambda": loss.lam})
    _write(outdir / "report.json", res.report.to_json())
    _write(outdir / "trace.csv", res.report.trace_csv())


def _metadata(out: Path, cfg, results, started) -> None:
    meta = {
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "backend": kernels.BACKEND_NAME,
        "python": platform.python_version(),
        "wall_time": {f"{r.arm}/{r.name}": r.report.wall_time for r in results},
    }
    _write(out / "metadata.json", _dump(meta))


# -- commands -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.arms:
        cfg.arms = args.arms
    if args.out:
        cfg.output_dir = args.out
    out = Path(cfg.output_dir)
    started = datetime.now(timezone.utc).isoformat()
    _write(out / "config.json", _dump(cfg.to_dict()))

    if cfg.data["kind"] == "robertson":
        train_ts, test_ts = build_trajectories(cfg)
        pairs = build_pairs(cfg, train_ts)
        _write(out / "pairs.json", _dump(pairs.meta()))
        _write(out / "train_trajectories.json", train_ts.to_json())
        _write(out / "test_trajectories.json", test_ts.to_json())
        results = run_parallel_nets(cfg, jobs=args.jobs, pairs=pairs)
        for res in results:
            _save_arm(out / res.arm / res.name, res, cfg)
    else:
        dataset = build_dataset(cfg)
        results = run_single(cfg, jobs=args.jobs, dataset=dataset)
        for res in results:
            _save_arm(out / res.arm, res, cfg)

    _metadata(out, cfg, results, started)
    for res in results:
        v = res.report.violations
        print(f"{res.arm:8s} {res.name:6s} init={res.init_checksum} iters={res.report.iterations:5d} "
              f"stop={res.report.stop_reason:18s} total={res.report.final.total:.6e} "
              f"violations={v.count}/{v.pairs} worst_gap={v.worst_gap:.3e}")
    return EXIT_OK


def cmd_check_order(args) -> int:
    _, p, _ = load_checkpoint(args.checkpoint)
    rep = order_violations(p, args.tol)
    print(_dump(rep.to_dict()), end="")
    return EXIT_OK if rep.count == 0 else EXIT_VIOLATED


def cmd_permute(args) -> int:
    if args.count:
        spec = NetworkSpec(widths=tuple(args.widths)) if args.widths else load_checkpoint(args.checkpoint)[0]
        print(f"sum_of_factorials {count_equivalent_parameterizations(spec):,}")
        if args.product:
            print(f"product_of_factorials {count_equivalent_parameterizations(spec, product=True):,}")
        return EXIT_OK
    if not args.checkpoint:
        raise UsageError("permute needs a checkpoint unless --count is given")
    spec, p, _ = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    perm = Permutation.identity(spec) if args.identity else Permutation.random(spec, rng)
    q = apply_permutation(spec, p, perm)
    U = rng.uniform(-1, 1, (args.inputs, spec.widths[0]))
    dev = float(np.max(np.abs(predict(spec, flatten(p), U) - predict(spec, flatten(q), U))))
    print(f"max_output_deviation {dev:.3e}")
    return EXIT_OK if dev <= args.tol else EXIT_VIOLATED


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args.config)
    loss = cfg.loss if args.gamma is None else cfg.loss.replace(gamma=args.gamma)
    res = gradcheck(cfg.network, loss, instances=args.instances, h=args.h, tol=args.tol,
                    seed=cfg.seed, corrupt=args.corrupt)
    status = "PASS" if res.passed else "FAIL"
    print(f"{status} max_rel_error={res.max_error:.3e} tol={res.tol:g} instances={res.instances} "
          f"redrawn={res.skipped}")
    return EXIT_OK if res.passed else EXIT_VIOLATED


def cmd_prop1(args) -> int:
    cfg = _load_config(args.config)
    grid = [float(g) for g in args.grid.split(",")]
    table, _ = prop1_run(cfg, grid, warm_start=not args.cold, tol=args.tol, threshold=args.threshold)
    out = Path(args.out)
    _write(out, table.to_csv())
    print(table.to_csv(), end="")
    print(f"monotone={table.monotone} penalty_vanishing={table.penalty_vanishing}")
    return EXIT_OK if (table.monotone and table.penalty_vanishing) else EXIT_VIOLATED


def _parse_ic(text: str) -> np.ndarray:
    vals = [float(v) for v in text.split(",")]
    return D.robertson_ic(vals[0]) if len(vals) == 1 else np.asarray(vals)


def cmd_rollout(args) -> int:
    pairs = D.PairSet.from_meta(json.loads(Path(args.pairs).read_text()))
    nets = []
    for path in args.checkpoints:
        spec, p, _ = load_checkpoint(path)
        nets.append((spec, flatten(p)))
    ic = _parse_ic(args.ic)
    if pairs.times is None:
        raise UsageError(f"{args.pairs} has no time grid")
    times = pairs.times if args.steps is None else pairs.times[: args.steps + 1]
    if times.size < 2:
        raise UsageError("need at least one rollout step")
    truth = D.integrate_robertson(ic, t=times)
    ro, summary = rollout_summary(nets, pairs, truth)
    out = Path(args.out)
    _write(out, D.rollout_csv(ro, pairs.quantities, truth.states[: ro.t.size]))
    _write(out.with_suffix(".summary.json"), _dump(summary.to_dict()))
    print(_dump(summary.to_dict()), end="")
    return EXIT_OK if summary.completed else EXIT_VIOLATED


def bias_table(results) -> str:
    """Rows ``network, layer, index, bias`` for every hidden neuron."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["network", "layer", "index", "bias"])
    for name, p in results:
        for l, b in enumerate(p.biases):
            for j, v in enumerate(b):
                w.writerow([name, l, j, repr(float(v))])
    return buf.getvalue()


def cmd_plotdata(args) -> int:
    run = Path(args.run_dir)
    cfg = ExperimentConfig.from_dict(json.loads((run / "config.json").read_text()))
    out = Path(args.out) if args.out else run / "plotdata"
    errors = [("arm", "network", "rel_l2_error")]
    if cfg.data["kind"] == "robertson":
        pairs = D.PairSet.from_meta(json.loads((run / "pairs.json").read_text()))
        test_ts = D.TrajectorySet.from_json((run / "test_trajectories.json").read_text())
        for arm in cfg.arm_list():
            loaded = [(q, load_checkpoint(run / arm / q / "checkpoint.json")) for q in pairs.quantities]
            _write(out / f"biases_{arm}.csv", bias_table([(q, p) for q, (_, p, _) in loaded]))
            nets = [(spec, flatten(p)) for _, (spec, p, _) in loaded]
            for tr in test_ts.trajectories:
                ro, summ = rollout_summary(nets, pairs, tr)
                tag = tr.name.replace("[", "_").replace("]", "").replace(",", "_")
                _write(out / f"rollout_{arm}_{tag}.csv", D.rollout_csv(ro, pairs.quantities, tr.states[: ro.t.size]))
                for q, e in summ.rel_errors.items():
                    errors.append((arm, f"{tr.name}:{q}", e))
    else:
        dataset = build_dataset(cfg)
        X, Y = dataset.test()
        order = np.argsort(X[:, 0])
        for arm in cfg.arm_list():
            spec, p, _ = load_checkpoint(run / arm / "checkpoint.json")
            _write(out / f"biases_{arm}.csv", bias_table([("net", p)]))
            pred = predict(spec, flatten(p), X)
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(dataset.input_names + [f"true_{n}" for n in dataset.target_names]
                       + [f"pred_{n}" for n in dataset.target_names])
            for i in order:
                w.writerow([repr(float(v)) for v in (*X[i], *Y[i], *pred[i])])
            _write(out / f"predictions_{arm}.csv", buf.getvalue())
            errors.append((arm, "net", holdout_error(spec, p, dataset)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in errors:
        w.writerow([row[0], row[1], row[2] if isinstance(row[2], str) else repr(float(row[2]))])
    _write(out / "errors.csv", buf.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_data(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if cfg.data["kind"] == "robertson":
        train_ts, test_ts = build_trajectories(cfg)
        D.save_trajectories_csv(D.TrajectorySet(train_ts.quantities, train_ts.trajectories + test_ts.trajectories), out)
    else:
        D.save_dataset_csv(build_dataset(cfg), out)
    print(out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="biasorder", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one or both arms (J and J_gamma) from a config")
    p.add_argument("config")
    p.add_argument("--arms", choices=["both", "plain", "ordered"])
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="worker threads for concurrent arms/networks (default: CPU count)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("check-order", help="report bias-ordering violations of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_check_order)

    p = sub.add_parser("permute", help="count equivalent parameterizations or test permutation invariance")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--count", action="store_true")
    p.add_argument("--product", action="store_true", help="also print the product of n_l!")
    p.add_argument("--widths", type=int, nargs="+", help="count for these widths instead of a checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identity", action="store_true")
    p.add_argument("--inputs", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_permute)

    p = sub.add_parser("gradcheck", help="adjoint gradient vs central finite differences")
    p.add_argument("config")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--gamma", type=float)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("prop1", help="J_gamma and gamma/2 g over a gamma grid")
    p.add_argument("config")
    p.add_argument("--grid", default="1,10,100,1000")
    p.add_argument("--out", default="prop1.csv")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--threshold", type=float, default=1e-6)
    p.add_argument("--cold", action="store_true", help="start every gamma from the initial parameters")
    p.set_defaults(func=cmd_prop1)

    p = sub.add_parser("rollout", help="closed-loop prediction from an initial condition")
    p.add_argument("checkpoints", nargs="+", help="one checkpoint per quantity, in quantity order")
    p.add_argument("--pairs", required=True, help="pairs.json normalization file from a train run")
    p.add_argument("--ic", required=True, help="'f' for (f, 0, 1-f) or a comma-separated state")
    p.add_argument("--steps", type=int)
    p.add_argument("--out", default="rollout.csv")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("plotdata", help="plot-ready CSVs from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("data", help="write the configured dataset as CSV")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_data)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidSpecError, UsageError, ShapeError, D.CsvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
