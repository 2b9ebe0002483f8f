import numpy as np
import pytest

from phenolens.data import SyntheticConfig, generate_dataset


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(SyntheticConfig(n_per_class=10, image_size=16), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, printed in the terminal summary so it
# survives pytest's output capturing.
ACCEPTANCE_LINES = {}


def record_acceptance(number, title, passed, detail):
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
