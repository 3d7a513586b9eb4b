import json
from fractions import Fraction
from importlib import resources

import numpy as np
import pytest

from polystab.geometry import interval, parse_polytope, trapezium

SHIPPED = [
    "p1",
    "p2",
    "square",
    "hirzebruch_f1",
    "trapezium_l2",
    "interval_w01",
    "interval_w01e",
    "interval_half_one",
    "octagon_two_plane",
]


def load_shipped(name):
    doc = json.loads((resources.files("polystab") / "specs" / f"{name}.json").read_text())
    return parse_polytope(doc), doc


def l2(values, quad):
    v = np.asarray(values, float)
    return float(np.sqrt(max(v @ quad.mass_matrix @ v, 0.0)))


@pytest.fixture
def p1():
    return interval(0, 1, (1, 1))


@pytest.fixture
def w01():
    return interval(0, 1, (0, 1))


@pytest.fixture
def square():
    return load_shipped("square")[0]


@pytest.fixture
def p2():
    return load_shipped("p2")[0]


@pytest.fixture
def octagon():
    return load_shipped("octagon_two_plane")[0]


@pytest.fixture
def trap2():
    return trapezium(Fraction(2))


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
