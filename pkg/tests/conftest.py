import numpy as np
import pytest

from missddim.data import TabularDataset
from missddim.evaluation import make_synthetic_gaussian
from missddim.schedule import build_schedule


def hide_column(ds: TabularDataset, column: int, rate: float, seed: int) -> TabularDataset:
    """Hide one column MCAR without the keep-one-cell rule (the other column stays observed)."""
    sim = np.zeros_like(ds.native_missing)
    sim[:, column] = np.random.default_rng(seed).random(ds.n) < rate
    return TabularDataset(ds.schema, ds.values, ds.native_missing, sim, ds.row_ids)


@pytest.fixture
def schedule():
    return build_schedule()


@pytest.fixture
def small_schedule():
    return build_schedule("quadratic", 20, 1e-4, 0.3)


@pytest.fixture
def gaussian_small():
    return hide_column(make_synthetic_gaussian(200, 0.8, seed=0), 1, 0.5, seed=1)


@pytest.fixture
def mixed_rows():
    return [
        ["age", "color", "score"],
        ["31", "red", "1.5"],
        ["45", "blue", ""],
        ["", "red", "2.25"],
        ["52", "green", "0.5"],
        ["38", "?", "3.0"],
        ["29", "blue", "1.0"],
        ["61", "red", "NA"],
        ["47", "green", "2.0"],
    ]


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def record():
    """Collect one verdict line per acceptance criterion for the terminal summary."""
    def add(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
