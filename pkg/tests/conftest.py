from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from spiderem.gmm import GaussianMixture, init_params
from spiderem.samplers import split_rng

ROOT = Path(__file__).resolve().parents[1]
TOY = np.array([[-2.0], [-1.0], [1.0], [2.0]])

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def toy():
    return GaussianMixture(TOY, 2)


@pytest.fixture
def toy_state(toy):
    """A feasible statistic on the toy model and the parameters it came from."""
    theta = init_params(toy.X, 2, split_rng(7, 0))
    return toy.full_expectation(theta), theta


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
