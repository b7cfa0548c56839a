import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clbfgp import config
from clbfgp.expr import const, eval_expr, max_
from clbfgp.fitness import (RSWS, Candidate, NonDifferentiableCandidate, SampleBank, bias,
                            build_conditions, center_condition, combine, error_measure,
                            sample_fitness, total_fitness, weights)
from clbfgp.parse import parse_expr

unit = st.floats(0, 1)


def linear():
    return config.load_problem("linear")


def test_error_measure():
    assert error_measure([-3, -4, 2]) == 5.0
    assert error_measure([1, 2]) == 0.0
    with pytest.raises(ValueError):
        error_measure([])


def test_sample_fitness():
    assert [sample_fitness(e) for e in (0, 1, 3)] == [1.0, 0.5, 0.25]
    with pytest.raises(ValueError):
        sample_fitness(-1)


def test_weights_cascade():
    assert weights([0.8, 1, 1]) == [1, 0, 0]
    assert weights([1, 0.99, 1]) == [1, 1, 0]
    assert weights([1, 1, 1, 1, 1]) == [1] * 5


def test_maximum_totals():
    assert combine([1] * 3, [1] * 3) == 6
    assert combine([1] * 5, [1] * 5) == 10


def oracle(f, s, fc):
    w, total = [1], 0.0
    for i in range(1, len(f)):
        w.append(math.floor(w[-1] * f[i - 1]))
    total = sum(a * b for a, b in zip(w, f)) + sum(s)
    return total + w[2] * (fc - 1)


@given(st.lists(unit, min_size=3, max_size=5), st.data(), unit)
def test_combine_matches_reimplementation(f, data, fc):
    s = data.draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=len(f), max_size=len(f)))
    assert combine(f, s, fc) == pytest.approx(oracle(f, s, fc))
    assert combine(f, s, fc) <= 2 * len(f) + 1e-12


def test_bias_shifts_to_nonpositive_on_I():
    pf = linear()
    V = parse_expr("x1^2 + x2^2 + 1", pf.state_names)
    pts = np.random.default_rng(0).uniform(pf.problem.I.lo, pf.problem.I.hi, (50, 2))
    Vb = bias(V, pts)
    assert max(eval_expr(Vb, list(x)) for x in pts) == pytest.approx(0.0)
    Vn = parse_expr("-1 - x1^2", pf.state_names)
    assert bias(Vn, pts) is Vn


def test_center_condition_values():
    p = linear().problem
    V = parse_expr("x1^2 + x2^2", ["x1", "x2"])
    cond = center_condition(p, V)
    assert eval_expr(cond.phi, [0.5, 0.5]) == pytest.approx(0.5 - eval_expr(V, list(p.x_c)) + 0.0, abs=1)
    assert not cond.verifiable


def test_third_order_extended_dimension():
    p = config.load_problem("third_order").problem
    conds = build_conditions(p, Candidate(parse_expr("x1^2", ["x1", "x2", "x3"])))
    assert conds.dim == 3 + 7 * (1 + 3) == 31


def test_reach_and_stay_has_five_verifiable_conditions():
    pf = config.load_problem("linear", {"beta": -0.1})
    assert pf.problem.spec == RSWS
    conds = build_conditions(pf.problem, Candidate(parse_expr("x1^2 + x2^2 - 0.6", pf.state_names)))
    assert [c.index for c in conds.verifiable()] == [1, 2, 3, 4, 5]


def test_min_max_candidates_rejected():
    p = linear().problem
    with pytest.raises(NonDifferentiableCandidate):
        build_conditions(p, Candidate(max_(parse_expr("x1", ["x1", "x2"]), const(0.0))))


def test_sample_bank_fifo():
    p = linear().problem
    bank = SampleBank(p, n_samples=10, cap=3)
    for k in range(5):
        bank.add(1, [k / 10, 0.0])
    pts = bank.points(1)
    assert len(pts) == 13
    assert [p_[0] for p_ in pts[-3:]] == [0.2, 0.3, 0.4]


def test_sample_bank_pads_short_points():
    p = linear().problem
    bank = SampleBank(p, n_samples=5)
    bank.add(3, [0.9, 0.9])
    assert bank.points(3).shape[1] == bank.domains[3].dim


def test_total_fitness_of_quadratic_on_linear():
    pf = linear()
    V = parse_expr("x1^2 + x2^2 - 0.2", pf.state_names)
    bd = total_fitness(pf.problem, Candidate(V), SampleBank(pf.problem))
    # the bias shift makes the initial-set samples pass by construction
    assert bd.f_samp[0] == 1.0 and 0.2 < bd.shift <= 0.3
    assert len(bd.f_smt) == 3
    assert bd.total == pytest.approx(combine(bd.f_samp, bd.f_smt, bd.f_center))
