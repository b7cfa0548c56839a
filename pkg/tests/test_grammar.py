import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import helpers as H
from clbfgp import grammar as gr
from clbfgp.expr import max_var_index, render
from clbfgp.parse import parse_expr


def derive(g, symbol, picks):
    """Build a tree by choosing alternatives from ``picks`` in preorder."""
    it = iter(picks)

    def rec(sym):
        alt = next(it)
        kids = tuple(rec(s[1]) if isinstance(s, tuple) else gr.Leaf(s) for s in g.rules[sym][alt])
        return gr.Node(sym, alt, kids)
    return rec(symbol)


def test_monomial_derivation():
    g = gr.monomial_grammar()
    t = derive(g, "mon", [1, 1, 0, 0])  # <var> * <mon> -> b * a
    gr.check_tree(g, t, "mon")
    assert render(gr.to_phenotype(g, t), ["a", "b"]) == render(parse_expr("b*a", ["a", "b"]), ["a", "b"])


def test_depth_one_gives_single_variable():
    g = gr.monomial_grammar(max_depth=1)
    rng = np.random.default_rng(0)
    seen = {render(gr.to_phenotype(g, gr.grow(g, "mon", rng)), ["a", "b"]) for _ in range(50)}
    assert seen == {"a", "b"}


def test_depth_limit_enforced_by_checker():
    g = gr.monomial_grammar(max_depth=2)
    with pytest.raises(gr.GrammarError):
        gr.check_tree(g, derive(g, "mon", [1, 0, 1, 0, 0, 0]), "mon")


def test_table3_variables_are_shifted():
    g = gr.table3_grammar(2, [-0.75, 0.0])
    assert [a[0].strip() for a in g.rules["var"]] == ["x1 + 0.75", "x2"]


def test_table3_constants_in_range():
    g = gr.table3_grammar(2, [0.0, 0.0])
    rng = np.random.default_rng(1)
    vals = [v for _ in range(200) for v in gr.const_values(gr.grow(g, "V", rng))]
    assert vals and all(-10 <= v <= 10 for v in vals)


def test_lin_can_be_a_bare_constant():
    g = gr.table3_grammar(1, [0.0])
    rng = np.random.default_rng(2)
    bare = 0
    for _ in range(300):
        e = gr.to_phenotype(g, gr.grow(g, "G", rng))
        bare += any(max_var_index(m) < 0 for m in e)
    assert bare > 0


def test_mode_sets_have_one_to_max_entries():
    g = gr.table3_grammar(2, [0.0, 0.0], max_modes=3)
    rng = np.random.default_rng(3)
    sizes = {len(gr.to_phenotype(g, gr.grow(g, "G", rng))) for _ in range(200)}
    assert sizes == {1, 2, 3}


def test_const_roundtrip():
    g = gr.table3_grammar(2, [0.0, 0.0])
    t = gr.grow(g, "V", np.random.default_rng(4))
    vals = gr.const_values(t)
    t2 = gr.with_constants(t, [v + 1 for v in vals])
    assert gr.const_values(t2) == [v + 1 for v in vals]
    with pytest.raises(ValueError):
        gr.with_constants(t, vals + [0.0])


def test_crossover_of_identical_parents_is_noop():
    g = gr.table3_grammar(2, [0.0, 0.0])
    t = gr.grow(g, "V", np.random.default_rng(5))
    assert gr.crossover(g, t, t, np.random.default_rng(0)) == (t, t)


def test_mutation_keeps_root_symbol():
    g = gr.table3_grammar(2, [0.0, 0.0])
    rng = np.random.default_rng(6)
    t = gr.grow(g, "V", rng)
    for _ in range(50):
        t = gr.mutate(g, t, rng)
        assert t.symbol == "V"
        gr.check_tree(g, t, "V")


def test_bad_grammars_rejected():
    with pytest.raises(gr.GrammarIncomplete):
        gr.Grammar.from_rules(["<a> ::= <a> + <a>"], [])
    with pytest.raises(gr.GrammarError):
        gr.Grammar.from_rules(["<a> ::= <b>"], [])
    with pytest.raises(gr.GrammarError):
        gr.Grammar.from_rules(["<a> ::= x"], ["x"], max_depth=0)
    with pytest.raises(gr.GrammarError):
        gr.table3_grammar(2, [0.0])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_operators_preserve_conformance(seed):
    rng = np.random.default_rng(seed)
    g = gr.table3_grammar(2, [0.25, -0.5], max_depth=int(rng.integers(1, 8)))
    for start in ("V", "G"):
        a, b = gr.grow(g, start, rng), gr.grow(g, start, rng)
        for t in (*gr.crossover(g, a, b, rng), gr.mutate(g, a, rng)):
            gr.check_tree(g, t, start)
            assert gr.tree_levels(g, t) <= g.max_depth
            gr.to_phenotype(g, t)


def test_grammar_suite_small():
    assert H.grammar_suite(500) == 0
