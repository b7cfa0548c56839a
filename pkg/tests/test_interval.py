import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import helpers as H
from clbfgp import interval as iv
from clbfgp.interval import Box, Interval
from clbfgp.parse import parse_expr
from clbfgp.program import DivisorStraddlesZero, ieval


def test_box_validation():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    b = Box([[0, 1], [2, 4]])
    assert b.dim == 2 and list(b.center) == [0.5, 3.0]
    assert b.contains([0.5, 2.0]) and not b.contains([2.0, 3.0])


def test_interval_arithmetic_basics():
    a, b = Interval(1, 2), Interval(-1, 3)
    assert 3.0 in a + b and -1.0 in a - b
    p = a * b
    assert p.lo <= -2 and p.hi >= 6


def test_sin_cos_tight_ranges():
    lo, hi = iv.isin(np.array([0.0]), np.array([math.pi]))
    assert lo[0] <= 0 and lo[0] > -1e-12 and hi[0] >= 1.0 and hi[0] < 1 + 1e-12
    lo, hi = iv.icos(np.array([0.1]), np.array([0.2]))
    assert lo[0] <= math.cos(0.2) and hi[0] >= math.cos(0.1) and hi[0] < 1.0


def test_even_power_of_straddling_interval():
    lo, hi = iv.ipow(np.array([-2.0]), np.array([1.0]), 2)
    assert lo[0] == 0.0 and hi[0] >= 4.0


def test_ieval_rejects_straddling_divisor():
    with pytest.raises(DivisorStraddlesZero):
        ieval(parse_expr("1/x1", ["x1"]), [[-1.0, 1.0]])


@settings(max_examples=1000)
@given(H.expr_cases(n=3))
def test_enclosure_contains_point_value(case):
    e, lo, hi, pt = case
    assert not H.containment_violation(e, lo, hi, pt)


@settings(max_examples=200)
@given(st.floats(-50, 50), st.floats(0, 10), st.floats(0, 1))
def test_sin_enclosure(a, w, t):
    lo, hi = iv.isin(np.array([a]), np.array([a + w]))
    x = a + t * w
    assert lo[0] <= math.sin(x) <= hi[0]
    lo, hi = iv.icos(np.array([a]), np.array([a + w]))
    assert lo[0] <= math.cos(x) <= hi[0]
