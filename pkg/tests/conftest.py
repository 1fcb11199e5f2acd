import math

import numpy as np
import pytest

from epig_bench.core import PredictiveSamples

LN2 = math.log(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_ps(rng, S, N, C):
    return PredictiveSamples(rng.dirichlet(np.ones(C), size=(S, N)))


@pytest.fixture
def disagreement():
    # two samples, two identical inputs, opposite one-hot predictions
    return PredictiveSamples(np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]]))


# one line per acceptance criterion, echoed at the end of the session
CRITERION_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES):
            terminalreporter.write_line(line)
