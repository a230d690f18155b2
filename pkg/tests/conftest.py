import numpy as np
import pytest

from gstconv.blocks import BlockKind, make_network, tiny_spec
from gstconv.training import SyntheticSpec, TrainConfig, gen_synthetic, train

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_sets():
    """Train/eval splits of the four-class moving-square task."""
    tr = gen_synthetic(SyntheticSpec(samples_per_class=48, seed=1))
    ev = gen_synthetic(SyntheticSpec(samples_per_class=32, seed=2))
    return tr, ev


def _train(kind, sets):
    tr, ev = sets
    net = make_network(tiny_spec(kind, seed=0))
    net, hist = train(net, tr, TrainConfig(epochs=30, seed=0), ev)
    return net, hist


@pytest.fixture(scope="session")
def trained_gst(synthetic_sets):
    return _train(BlockKind.gst("1/4"), synthetic_sets)


@pytest.fixture(scope="session")
def trained_c2d(synthetic_sets):
    return _train(BlockKind.c2d(), synthetic_sets)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
