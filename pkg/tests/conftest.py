import numpy as np
import pytest

from biasorder.network import NetworkSpec, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_resnet():
    spec = NetworkSpec((2, 5, 5, 1), "tanh", 1.0, "identity")
    return spec, init_params(spec, 0)


def random_params(spec, rng, scale=1.0):
    from biasorder.network import unflatten

    return unflatten(spec, rng.uniform(-scale, scale, spec.n_params))


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
