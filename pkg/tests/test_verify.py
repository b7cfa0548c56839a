import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import helpers as H
from clbfgp.expr import abs_, const, var
from clbfgp.interval import Box
from clbfgp.parse import parse_expr
from clbfgp.verify import (BoxSet, BudgetExhausted, DegenerateDomain, ForallQuery, Proved,
                           Refuted, boxset_to_guards, check_nested, dump_query, prove_forall,
                           sup_bound)

X = ["x1", "x2", "u"]
UNIT = Box([-1.0], [1.0])


def q1(text, box=UNIT, guards=()):
    return ForallQuery(BoxSet.box(box), parse_expr(text, X), [parse_expr(g, X) for g in guards])


def test_square_above_negative_bound_is_proved():
    assert isinstance(prove_forall(q1("x1^2 + 0.1")), Proved)


def test_square_minus_half_is_refuted_exactly():
    out = prove_forall(q1("x1^2 - 0.5"))
    assert isinstance(out, Refuted) and out.exact
    assert abs(out.witness[0]) < 1 / math.sqrt(2)


def test_guard_restricts_domain():
    # x >= 0.4 fails only where x < 0.4, which the guard x >= 0.5 excludes
    assert isinstance(prove_forall(q1("x1 - 0.4", guards=["0.5 - x1"])), Proved)
    assert isinstance(prove_forall(q1("x1 - 0.4")), Refuted)


def test_touching_zero_gives_delta_refutation():
    out = prove_forall(q1("x1^2"), min_width=1e-3)
    assert isinstance(out, (Proved, Refuted))
    if isinstance(out, Refuted):
        assert not out.exact


def test_budget_exhaustion_reports_worst_box():
    out = prove_forall(q1("x1^2 - 1e-12*x1"), budget=5, min_width=1e-12)
    assert isinstance(out, BudgetExhausted)
    assert out.worst_box is not None and out.claim_lo < 0


def test_invalid_arguments():
    with pytest.raises(ValueError):
        prove_forall(q1("x1"), budget=0)
    with pytest.raises(ValueError):
        ForallQuery(BoxSet.box(UNIT), var(0), slack=-1.0)


def test_boundary_and_difference_pieces():
    S = Box([-1, -1], [1, 1])
    G = Box([-0.1, -0.1], [0.1, 0.1])
    assert len(BoxSet.boundary(S).pieces()) == 4
    diff = BoxSet.difference(S, G)
    assert len(diff.pieces()) == 4
    rng = np.random.default_rng(0)
    pts = diff.sample(2000, rng)
    assert not any(np.all(np.abs(p) < 0.1) for p in pts)
    bpts = BoxSet.boundary(S).sample(1000, rng)
    assert np.allclose(np.max(np.abs(bpts), axis=1), 1.0)


def test_difference_union_covers_exactly():
    S = Box([-1, -1], [1, 1])
    G = Box([-0.2, 0.0], [0.3, 0.5])
    d = BoxSet.difference(S, G)
    rng = np.random.default_rng(1)
    for x in rng.uniform(-1, 1, (3000, 2)):
        in_pieces = any(b.contains(x) for b in d.pieces())
        in_int_G = bool(np.all(x > G.lo) and np.all(x < G.hi))
        assert in_pieces == (not in_int_G)


def test_boundary_face_proportions():
    S = Box([0, 0], [4, 1])
    pts = BoxSet.boundary(S).sample(10_000, np.random.default_rng(2))
    long_faces = np.mean((pts[:, 1] == 0) | (pts[:, 1] == 1))
    assert abs(long_faces - 0.8) < 0.05


def test_nested_check():
    S = Box([-1, -1], [1, 1])
    check_nested(Box([-0.5, -0.5], [0.5, 0.5]), S)
    with pytest.raises(ValueError):
        check_nested(Box([-1, -0.5], [0.5, 0.5]), S)


def test_product_adds_dimensions_and_guards():
    d = BoxSet.box(UNIT).product(Box([0, 0], [1, 2]))
    assert d.dim == 3
    pieces = boxset_to_guards(BoxSet.difference(Box([-1, -1], [1, 1]), Box([0, 0], [0.5, 0.5])))
    assert pieces


def test_sup_bounds():
    sb = sup_bound(parse_expr("x1^2", X), BoxSet.box(UNIT), tol=1e-3)
    assert sb.upper >= 1.0 and sb.upper - 1.0 <= 1e-3
    dom = BoxSet.box(Box([-1, -1, -1], [1, 1, 1]))
    sb = sup_bound(abs_(parse_expr("-x1 + u", X)), dom, tol=1e-3)
    assert sb.upper == pytest.approx(2.0, abs=1e-3)
    sb = sup_bound(abs_(parse_expr("-3*x1^2*(x2 - x1^3) + u", X)), dom, tol=1e-3)
    assert sb.upper == pytest.approx(7.0, abs=1e-3)


def test_second_order_sup_against_grid():
    g = np.linspace(-1, 1, 201)
    a, b, u = np.meshgrid(g, g, g, indexing="ij")
    grid_max = float(np.max(np.abs(-3 * a ** 2 * (b - a ** 3) + u)))
    assert grid_max == pytest.approx(7.0)


def test_dump_query_mentions_claim():
    text = dump_query(q1("x1^2 - 0.5"))
    assert "s0" in text or "s1" in text


@settings(max_examples=150)
@given(st.integers(0, 2**32 - 1))
def test_prover_soundness(seed):
    rng = np.random.default_rng(seed)
    q, n = H.random_query(rng)
    out = prove_forall(q, budget=20_000, min_width=1e-3)
    box = q.domain.outer
    if isinstance(out, Proved):
        from clbfgp.program import Program
        pts = rng.uniform(box.lo, box.hi, (20_000, n))
        vals = Program([q.claim, *q.guards]).eval([pts[:, j] for j in range(n)])
        c = np.broadcast_to(vals[0], (len(pts),))
        active = np.ones(len(pts), dtype=bool)
        for g in vals[1:]:
            active &= np.broadcast_to(g, (len(pts),)) <= 0
        assert not np.any(active & (c < -1e-9 * (1 + np.abs(c))))
    elif isinstance(out, Refuted) and out.exact:
        from clbfgp.expr import eval_expr
        w = list(out.witness)
        assert eval_expr(q.claim, w) < 0
        assert all(eval_expr(g, w) <= 0 for g in q.guards)
        assert box.contains(np.array(w))
