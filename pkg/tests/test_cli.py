import json
from pathlib import Path

import numpy as np
import pytest

from biasorder.cli import main
from biasorder.network import NetworkSpec, Params, init_params, save_checkpoint

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path, **overrides):
    doc = {
        "name": "tiny",
        "seed": 0,
        "network": {"widths": [1, 4, 4, 1], "activation": "tanh", "tau": 1.0, "skip_policy": "identity"},
        "loss": {"lambda": 1e-4, "gamma": 100.0},
        "train": {"max_iters": 25, "patience": 400},
        "data": {"kind": "sin", "n_points": 60, "split": [30, 15, 15], "split_seed": 0},
        "output_dir": str(tmp_path / "run"),
    }
    doc.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def robertson_config(tmp_path):
    return write_config(
        tmp_path,
        network={"widths": [4, 3, 3, 1], "activation": "tanh", "tau": 1.0, "skip_policy": "identity"},
        loss={"lambda": 1e-6, "gamma": 1000.0},
        train={"max_iters": 10},
        data={"kind": "robertson", "train_ics": [1.0, 0.8], "test_ics": [0.7], "n_times": 11},
    )


def checkpoint(tmp_path, biases):
    spec = NetworkSpec((1, 3, 1), "tanh", 1.0, "zero")
    p = init_params(spec, 0)
    p.biases = [np.asarray(biases, dtype=float)]
    path = tmp_path / "ck.json"
    save_checkpoint(path, spec, p, seed=0)
    return path


def test_check_order_exit_codes(tmp_path, capsys):
    assert main(["check-order", str(checkpoint(tmp_path, [0.0, 1.0, 2.0]))]) == 0
    assert main(["check-order", str(checkpoint(tmp_path, [0.0, 1.0, 0.5]))]) == 1


def test_check_order_reports_violation(tmp_path, capsys):
    main(["check-order", str(checkpoint(tmp_path, [0.0, 1.0, 0.5]))])
    rep = json.loads(capsys.readouterr().out)
    assert rep["count"] == 1 and rep["violations"][0]["index"] == 1
    assert rep["worst_gap"] == pytest.approx(-0.5)


def test_usage_errors_exit_2(tmp_path):
    assert main([]) == 2
    assert main(["nonsense"]) == 2
    assert main(["check-order", str(tmp_path / "missing.json")]) == 2
    bad = write_config(tmp_path, network={"widths": [1, 1]})
    assert main(["train", str(bad)]) == 2
    bad = write_config(tmp_path, data={"kind": "mnist"})
    assert main(["train", str(bad)]) == 2


def test_permute_count(capsys):
    assert main(["permute", "--count", "--widths", "1", "10", "10", "1", "--product"]) == 0
    out = capsys.readouterr().out
    assert "sum_of_factorials 7,257,600" in out
    assert "product_of_factorials 13,168,189,440,000" in out


def test_permute_checkpoint_invariance(tmp_path, capsys):
    assert main(["permute", str(checkpoint(tmp_path, [0.3, -0.2, 0.1])), "--seed", "5"]) == 0
    dev = float(capsys.readouterr().out.split()[-1])
    assert dev <= 1e-12


def test_permute_needs_checkpoint():
    assert main(["permute"]) == 2


def test_gradcheck_pass_and_corrupt(capsys):
    cfg = str(CONFIGS / "gradcheck_relu.json")
    assert main(["gradcheck", cfg, "--instances", "2"]) == 0
    assert capsys.readouterr().out.startswith("PASS")
    assert main(["gradcheck", cfg, "--instances", "1", "--corrupt"]) == 1
    assert capsys.readouterr().out.startswith("FAIL")


def test_prop1_single_gamma(tmp_path, capsys):
    cfg = write_config(tmp_path, loss={"lambda": 1e-4})
    out = tmp_path / "p.csv"
    code = main(["prop1", str(cfg), "--grid", "0", "--out", str(out), "--threshold", "1.0"])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "gamma,J_gamma,half_gamma_g" and len(lines) == 2
    assert float(lines[1].split(",")[2]) == 0.0


def test_train_and_plotdata(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["train", str(cfg), "--jobs", "1"]) == 0
    out = capsys.readouterr().out
    inits = [tok for tok in out.split() if tok.startswith("init=")]
    assert len(inits) == 2 and inits[0] == inits[1]
    run = tmp_path / "run"
    for arm in ("plain", "ordered"):
        assert (run / arm / "checkpoint.json").exists()
        assert (run / arm / "trace.csv").read_text().startswith("iteration,")
    ck = json.loads((run / "ordered" / "checkpoint.json").read_text())
    assert ck["gamma"] == 100.0 and ck["lambda"] == 1e-4 and ck["seed"] == 0
    assert json.loads((run / "plain" / "checkpoint.json").read_text())["gamma"] == 0.0
    assert main(["plotdata", str(run)]) == 0
    rows = (run / "plotdata" / "biases_ordered.csv").read_text().splitlines()
    assert rows[0] == "network,layer,index,bias" and len(rows) == 1 + 8
    preds = (run / "plotdata" / "predictions_plain.csv").read_text().splitlines()
    assert len(preds) == 1 + 15
    errors = (run / "plotdata" / "errors.csv").read_text().splitlines()
    assert errors[0] == "arm,network,rel_l2_error" and len(errors) == 3


def test_train_single_arm(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", str(cfg), "--arms", "plain", "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "plain").is_dir() and not (tmp_path / "p" / "ordered").exists()


def test_training_is_reproducible(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", str(cfg), "--out", str(tmp_path / "a"), "--jobs", "2"]) == 0
    assert main(["train", str(cfg), "--out", str(tmp_path / "b"), "--jobs", "1"]) == 0
    for arm in ("plain", "ordered"):
        for name in ("trace.csv", "checkpoint.json", "report.json"):
            assert (tmp_path / "a" / arm / name).read_bytes() == (tmp_path / "b" / arm / name).read_bytes()


def test_robertson_train_rollout_plotdata(tmp_path, capsys):
    cfg = robertson_config(tmp_path)
    run = tmp_path / "run"
    assert main(["train", str(cfg), "--arms", "ordered"]) == 0
    for q in ("y1", "y2", "y3"):
        assert (run / "ordered" / q / "checkpoint.json").exists()
    capsys.readouterr()
    cks = [str(run / "ordered" / q / "checkpoint.json") for q in ("y1", "y2", "y3")]
    out = tmp_path / "ro.csv"
    code = main(["rollout", *cks, "--pairs", str(run / "pairs.json"), "--ic", "0.7", "--steps", "5", "--out", str(out)])
    summary = json.loads(capsys.readouterr().out)
    assert code == (0 if summary["completed"] else 1)
    assert summary["ic"] == [0.7, 0.0, pytest.approx(0.3)]
    assert len(out.read_text().splitlines()) == 1 + 6
    assert main(["plotdata", str(run)]) == 0
    assert (run / "plotdata" / "biases_ordered.csv").exists()
    assert len(list((run / "plotdata").glob("rollout_ordered_*.csv"))) == 1


def test_data_command(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "d.csv"
    assert main(["data", str(cfg), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "split,in:x,out:sin_x"
