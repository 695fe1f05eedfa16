import numpy as np
import pytest

from neuralut import data, topology, training
from neuralut.lutgen import model_to_lutnetwork


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` with respect to array ``x`` (mutated and restored)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


TINY_CONFIG = {
    "input_dim": 2, "layers": [8, 6, 2], "beta": 2, "fan_in": 3,
    "exceptions": {"0": {"fan_in": 2, "beta": 5}},
    "subnet": {"L": 4, "N": 8, "S": 2},
}


@pytest.fixture(scope="session")
def toy_split():
    ds = data.gen_two_semicircles(300, 0.1, seed=0)
    return data.split(ds, 0.2, seed=0)


@pytest.fixture(scope="session")
def trained_tiny(toy_split):
    train_set, test_set = toy_split
    model = topology.build_model(TINY_CONFIG, seed=0)
    best, _ = training.train(model, train_set, test_set,
                             training.TrainConfig(epochs=8, batch_size=64, restart_period=4))
    return best


@pytest.fixture(scope="session")
def tiny_lutnet(trained_tiny):
    return model_to_lutnetwork(trained_tiny)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report(request):
    """Record one status line per acceptance criterion, echoed in the terminal summary."""
    def record(criterion, ok, detail):
        status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
        line = f"criterion {criterion}: {status} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if status == "SKIP":
            pytest.skip(detail)
        assert status != "FAIL", line
        return line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
