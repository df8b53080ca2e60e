import numpy as np
import pytest

from gradsight import network as N
from gradsight.data import synth_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    return synth_dataset(400, 32, seed=11)


@pytest.fixture(scope="session")
def trained_net(small_dataset):
    ds = small_dataset
    net = N.reference_network(5, mean_image=ds.images.mean(axis=0), class_names=ds.class_names, seed=3)
    return N.train_sgd(net, ds.images, ds.labels, N.TrainConfig(lr=0.02, epochs=8, seed=5))


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion and print it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def report(number, ok, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        lines.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
