import numpy as np
import pytest

from lfrr import autodiff as ad


@pytest.fixture(autouse=True)
def _f64():
    # tests that switch precision must not leak it into others
    with ad.precision("f64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    def record(line: str):
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
