import numpy as np
import pytest

from gspnet.data import synth_planted_band
from gspnet.graph import from_dense, geometric_knn_graph
from gspnet.spectral import basis_for_graph
from gspnet.train import split_dataset

from oracles import P3_WEIGHTS


@pytest.fixture(scope="session")
def p3_graph():
    return from_dense(P3_WEIGHTS)


@pytest.fixture(scope="session")
def small_basis():
    return basis_for_graph(geometric_knn_graph(16, k=4, seed=3))


@pytest.fixture(scope="session")
def basis64():
    return basis_for_graph(geometric_knn_graph(64, k=8, seed=0))


@pytest.fixture(scope="session")
def small_splits(small_basis):
    ds = synth_planted_band(small_basis, 3, [0, 1, 2, 3], snr=5.0, samples_per_class=30, seed=0)
    return split_dataset(ds, seed=0)


def random_symmetric(rng, n):
    a = rng.uniform(-1, 1, size=(n, n))
    return (a + a.T) / 2


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda v: int(v.split()[1])):
            terminalreporter.write_line(line)
