import numpy as np
import pytest

from gopvi.models import ModelVariant, build_problem, minimal_dataset

VARIANTS = ("gmm", "pm", "gauss")


@pytest.fixture(scope="session")
def data():
    return minimal_dataset()


@pytest.fixture(scope="session")
def problems(data):
    return {kind: build_problem(ModelVariant(kind), data) for kind in VARIANTS}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_lines():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
