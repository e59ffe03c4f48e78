from fractions import Fraction

import numpy as np
import pytest

from ptu_reserving.claims import ClaimRecord, Portfolio
from ptu_reserving.triangle import Triangle

HAND_CELLS = {
    (1, 0): 100, (1, 1): 150, (1, 2): 180,
    (2, 0): 110, (2, 1): 160,
    (3, 0): 120,
}


@pytest.fixture
def hand_triangle():
    return Triangle.from_cells(HAND_CELLS)


@pytest.fixture
def hand_exact():
    """Exact values for the 3x3 fixture, worked out with rationals."""
    C = {k: Fraction(v) for k, v in HAND_CELLS.items()}
    f0 = (C[1, 1] + C[2, 1]) / (C[1, 0] + C[2, 0])
    f1 = C[1, 2] / C[1, 1]
    u2 = C[2, 1] * f1
    u3 = C[3, 0] * f0 * f1
    s2_0 = (C[1, 0] * (C[1, 1] / C[1, 0] - f0) ** 2 + C[2, 0] * (C[2, 1] / C[2, 0] - f0) ** 2) / 1
    return {
        "f": (f0, f1),
        "F": (f0 * f1, f1),
        "ult": (C[1, 2], u2, u3),
        "reserves": (Fraction(0), u2 - C[2, 1], u3 - C[3, 0]),
        "sigma2_0": s2_0,
    }


def random_trapezoid(rng, n_acc=None, n_dev=None):
    """Lognormal-positive cumulative trapezoid with random shape."""
    if n_acc is None:
        n_acc = int(rng.integers(3, 13))
    if n_dev is None:
        n_dev = int(rng.integers(2, n_acc))
    first = rng.lognormal(3.0, 1.0, size=n_acc)
    growth = rng.lognormal(0.1, 0.2, size=(n_acc, n_dev))
    vals = np.column_stack([first, first[:, None] * np.cumprod(growth, axis=1)])
    return Triangle(vals)


def make_portfolio(rows, n_acc, n_dev, square=False, incurred=False):
    """Build a portfolio from compact tuples ``(i, T, payments[, status])``."""
    recs = []
    for k, row in enumerate(rows):
        i, T, pay = row[:3]
        status = row[3] if len(row) > 3 else [1] * len(pay)
        seq = [np.nan] * T + list(pay)
        st = [np.nan] * T + list(status)
        recs.append(ClaimRecord(
            claim_id=f"c{k}", accident_period=i, reporting_delay_periods=T,
            reporting_delay_days=30 * T, accident_month=1 + k % 12, line_flag=k % 2,
            payments=np.array(seq, float), status=np.array(st, float),
            incurred=np.array(seq, float) * 1.1 if incurred else None,
        ))
    return Portfolio.from_records(recs, n_acc, n_dev, evaluation_square=square)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for the acceptance summary and return the flag."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
