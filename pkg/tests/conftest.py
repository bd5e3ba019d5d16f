"""Shared fixtures: the lawyer-hiring 2^3 experiment and small science tables."""

import csv
import itertools
from fractions import Fraction

import numpy as np
import pytest

from factorial_platform.design import FactorialDesign, treatment_levels
from factorial_platform.estimation import GroupSummary

LAWYER_FACTORS = ("R", "G", "I")
LAWYER_N = (12,) * 8
LAWYER_N1 = (2, 2, 2, 3, 5, 2, 5, 6)
LAWYER_EFFECTS = (
    Fraction(3, 16),
    Fraction(5, 48),
    Fraction(-1, 48),
    Fraction(1, 16),
    Fraction(-1, 16),
    Fraction(5, 48),
    Fraction(1, 16),
)


@pytest.fixture
def lawyer_design():
    return FactorialDesign(LAWYER_FACTORS)


@pytest.fixture
def lawyer_summary(lawyer_design):
    return GroupSummary(lawyer_design, LAWYER_N, LAWYER_N1)


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return str(path)


@pytest.fixture
def lawyer_summary_csv(tmp_path):
    rows = [(j, n, n1) for j, (n, n1) in enumerate(zip(LAWYER_N, LAWYER_N1), start=1)]
    return write_rows(tmp_path / "table3.csv", ("treatment", "n", "n1"), rows)


@pytest.fixture
def lawyer_units_csv(tmp_path, lawyer_design):
    """96 unit rows with columns race, gender, income, y."""
    rows = []
    for j, (n, n1) in enumerate(zip(LAWYER_N, LAWYER_N1), start=1):
        levels = treatment_levels(lawyer_design, j)
        rows.extend(levels + (1,) for _ in range(n1))
        rows.extend(levels + (0,) for _ in range(n - n1))
    return write_rows(tmp_path / "lawyers.csv", ("race", "gender", "income", "y"), rows)


def all_science_tables(N, J):
    """Every N×J binary table, as arrays."""
    for cells in itertools.product((0, 1), repeat=N * J):
        yield np.array(cells, dtype=np.int64).reshape(N, J)
