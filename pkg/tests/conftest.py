import numpy as np
import pytest

from treeimpute.dataset import Column, Dataset


def mixed_dataset(rng, n=200, p_ordinal=3, p_categorical=2, miss=0.15, y_miss=0.3, n_levels=5):
    """Small mixed-type dataset with an ordinal target ``y`` that depends on x1."""
    cols = []
    for j in range(p_ordinal):
        v = rng.normal(size=n).round(2)
        v[rng.random(n) < miss] = np.nan
        cols.append(Column.ordinal(f"x{j + 1}", v.tolist()))
    for j in range(p_categorical):
        v = [f"L{k}" for k in rng.integers(0, n_levels, size=n)]
        v = [None if rng.random() < miss else s for s in v]
        cols.append(Column.categorical(f"c{j + 1}", v))
    base = np.nan_to_num(cols[0].values) if p_ordinal else np.zeros(n)
    y = 10 + 3 * base + rng.normal(size=n)
    y[rng.random(n) < y_miss] = np.nan
    cols.append(Column.ordinal("y", y.tolist()))
    return Dataset(tuple(cols))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_data(rng):
    return mixed_dataset(rng)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    """Remember one acceptance verdict; all of them are printed at the end of the run."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
