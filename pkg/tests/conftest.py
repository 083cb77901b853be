import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from parity_transformer.construction import DEFAULT_PARAMS, build_full_model, build_majority_model, build_restricted_model  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def params():
    return DEFAULT_PARAMS


@pytest.fixture(scope="session")
def full_model(params):
    return build_full_model(params)


@pytest.fixture(scope="session")
def restricted_model(params):
    return build_restricted_model(params)


@pytest.fixture(scope="session")
def majority_model():
    return build_majority_model()


def _criterion_order(line):
    m = re.match(r"(\d+)(\w*)", line)
    return (int(m.group(1)), m.group(2)) if m else (0, line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_order):
            terminalreporter.write_line(line)
