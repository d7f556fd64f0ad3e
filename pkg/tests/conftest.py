import numpy as np
import pytest

from dyadkde.data import DyadicDataset

ACCEPTANCE_LINES = []


def record(number, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


def random_dataset(rng, n, missing=0.0, loc=0.0, scale=1.0):
    m = n * (n - 1) // 2
    values = rng.normal(loc, scale, m)
    present = rng.random(m) >= missing
    present[0] = True
    values = np.where(present, values, np.nan)
    return DyadicDataset(n, values, present, tuple(range(n)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
