from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def mnist_paths():
    return DATA / "mnist-subset-images-idx3-ubyte.gz", DATA / "mnist-subset-labels-idx1-ubyte.gz"


_CRITERIA = []


@pytest.fixture(scope="session")
def criterion():
    """``record(n, ok, detail)`` prints one pass/fail line and keeps it for the summary."""

    def record(n, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
        print(line)
        _CRITERIA.append((n, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
