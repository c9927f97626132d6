import numpy as np
import pytest

from pixhomog.phase import PhaseGrid, default_two_phase_table


@pytest.fixture
def table():
    return default_two_phase_table()


@pytest.fixture
def checker4():
    iy, ix = np.mgrid[0:4, 0:4]
    return PhaseGrid.from_ids((ix + iy) % 2, phase_ids=(0, 1))


def two_phase_grid(ids, eps=1.0):
    return PhaseGrid.from_ids(np.asarray(ids), phase_ids=(0, 1), eps_x=eps)


ACCEPTANCE = {}


def record(number, name, ok, detail=""):
    """Keep one acceptance verdict for the end-of-run summary."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}"
    if detail:
        line += f"  ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
