"""BNF grammars and derivation-tree genotypes.

Rules are written as strings such as ``"<mon> ::= <var> | <var> * <mon>"``.
Anything inside angle brackets is a nonterminal; everything else is terminal
text.  A rule whose only alternative is ``@uniform(lo, hi)`` is a constant
rule: expanding it draws a tunable constant uniformly from ``[lo, hi]``.

The phenotype is the infix text obtained by concatenating the leaves, where
every nonterminal expansion is wrapped in parentheses so that the tree
structure survives parsing.

Depth counts recursive expansions.  An alternative is recursive when it
mentions a nonterminal from which its own left-hand side is reachable.  A
node sits at level ``1 + (recursive expansions among its ancestors)``; once
that level reaches ``max_depth`` only non-recursive alternatives (``P*``)
are used.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .expr import Expr, const, param, substitute
from .parse import parse_expr, parse_list

_NT = re.compile(r"<([A-Za-z_][A-Za-z_0-9]*)>")
_UNIFORM = re.compile(r"^\s*@uniform\(\s*([^,]+),\s*([^)]+)\)\s*$")


class GrammarError(ValueError):
    pass


class GrammarIncomplete(GrammarError):
    """Some nonterminal cannot be expanded without recursion."""


# -- parse trees --------------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    text: str


@dataclass(frozen=True)
class ConstLeaf:
    value: float


@dataclass(frozen=True)
class Node:
    symbol: str
    alt: int
    children: tuple = ()


ParseTree = Union[Node, Leaf, ConstLeaf]


@dataclass(frozen=True)
class Genotype:
    """One tree for V and, when modes are evolved, one for the mode set."""

    gene_V: Node
    gene_G: Node | None = None

    def genes(self) -> list[Node]:
        return [self.gene_V] if self.gene_G is None else [self.gene_V, self.gene_G]


# -- grammar --------------------------------------------------------------------

@dataclass
class Grammar:
    rules: dict[str, list[list[str | tuple]]]
    var_names: list[str]
    max_depth: int = 7
    const_ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    starts: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.max_depth < 1:
            raise GrammarError("max_depth must be >= 1")
        for lhs, alts in self.rules.items():
            if not alts:
                raise GrammarError(f"<{lhs}> has no alternatives")
            for alt in alts:
                for sym in alt:
                    if isinstance(sym, tuple) and sym[1] not in self.rules \
                            and sym[1] not in self.const_ranges:
                        raise GrammarError(f"<{sym[1]}> used in <{lhs}> but never defined")
        self._recursive = {lhs: [self._is_recursive(lhs, alt) for alt in alts]
                           for lhs, alts in self.rules.items()}
        for lhs, flags in self._recursive.items():
            if all(flags):
                raise GrammarIncomplete(f"<{lhs}> has no non-recursive alternative")
        for s in self.starts.values():
            if s not in self.rules:
                raise GrammarError(f"start symbol <{s}> is not defined")

    @classmethod
    def from_rules(cls, lines: Sequence[str], var_names: Sequence[str], max_depth: int = 7,
                   starts: dict[str, str] | None = None) -> Grammar:
        """Build a grammar from ``"<lhs> ::= alt | alt"`` strings."""
        rules: dict[str, list[list]] = {}
        ranges: dict[str, tuple[float, float]] = {}
        for line in lines:
            if "::=" not in line:
                raise GrammarError(f"missing '::=' in rule {line!r}")
            lhs_text, rhs = line.split("::=", 1)
            m = _NT.fullmatch(lhs_text.strip())
            if not m:
                raise GrammarError(f"bad left-hand side {lhs_text!r}")
            lhs = m.group(1)
            u = _UNIFORM.match(rhs)
            if u:
                lo, hi = float(u.group(1)), float(u.group(2))
                if lo > hi:
                    raise GrammarError(f"<{lhs}>: empty range")
                ranges[lhs] = (lo, hi)
                continue
            rules.setdefault(lhs, []).extend(_split_alts(rhs))
        return cls(rules, list(var_names), max_depth, ranges, dict(starts or {}))

    def _reachable(self, sym: str) -> set[str]:
        seen, stack = set(), [sym]
        while stack:
            s = stack.pop()
            for alt in self.rules.get(s, ()):
                for t in alt:
                    if isinstance(t, tuple) and t[1] not in seen:
                        seen.add(t[1])
                        stack.append(t[1])
        return seen

    def _is_recursive(self, lhs: str, alt) -> bool:
        for t in alt:
            if isinstance(t, tuple) and (t[1] == lhs or lhs in self._reachable(t[1])):
                return True
        return False

    def is_recursive(self, symbol: str, alt: int) -> bool:
        return self._recursive[symbol][alt]

    def alternatives(self, symbol: str, terminal_only: bool) -> list[int]:
        flags = self._recursive[symbol]
        return [k for k, r in enumerate(flags) if not (terminal_only and r)]

    @property
    def nonterminals(self) -> set[str]:
        return set(self.rules) | set(self.const_ranges)


def _split_alts(rhs: str) -> list[list]:
    alts = []
    for part in rhs.split("|"):
        seq: list = []
        pos = 0
        for m in _NT.finditer(part):
            if m.start() > pos:
                seq.append(part[pos:m.start()])
            seq.append(("nt", m.group(1)))
            pos = m.end()
        if pos < len(part):
            seq.append(part[pos:])
        seq = [s for s in seq if not (isinstance(s, str) and not s.strip())]
        if not seq:
            raise GrammarError(f"empty alternative in {rhs!r}")
        alts.append(seq)
    return alts


# -- growing --------------------------------------------------------------------

def grow(g: Grammar, start: str, rng: np.random.Generator, level: int = 1) -> ParseTree:
    """Randomly expand ``start`` until no nonterminal leaves remain.

    ``level`` is the level of the new root (see module docstring), used when
    regrowing a subtree in place.
    """
    if start in g.const_ranges:
        lo, hi = g.const_ranges[start]
        return Node(start, 0, (ConstLeaf(float(rng.uniform(lo, hi))),))
    if start not in g.rules:
        raise GrammarError(f"unknown nonterminal <{start}>")
    choices = g.alternatives(start, terminal_only=level >= g.max_depth)
    alt = choices[int(rng.integers(len(choices)))]
    child_level = level + 1 if g.is_recursive(start, alt) else level
    kids = []
    for sym in g.rules[start][alt]:
        if isinstance(sym, tuple):
            kids.append(grow(g, sym[1], rng, child_level))
        else:
            kids.append(Leaf(sym))
    return Node(start, alt, tuple(kids))


def tree_levels(g: Grammar, t: ParseTree) -> int:
    """Highest node level in ``t``: 1 plus the most recursive expansions on a path."""
    def rec(node, level):
        if not isinstance(node, Node):
            return level
        nxt = level + 1 if node.symbol in g.rules and g.is_recursive(node.symbol, node.alt) else level
        return max([level] + [rec(c, nxt) for c in node.children])
    return rec(t, 1)


def check_tree(g: Grammar, t: ParseTree, start: str | None = None) -> None:
    """Raise :class:`GrammarError` unless ``t`` is a valid derivation."""
    if start is not None and (not isinstance(t, Node) or t.symbol != start):
        raise GrammarError(f"tree is not rooted at <{start}>")

    def rec(node, level):
        if not isinstance(node, Node):
            raise GrammarError("nonterminal position holds a bare leaf")
        if node.symbol in g.const_ranges:
            if len(node.children) != 1 or not isinstance(node.children[0], ConstLeaf):
                raise GrammarError(f"<{node.symbol}> must hold one constant")
            return
        alts = g.rules.get(node.symbol)
        if alts is None or not 0 <= node.alt < len(alts):
            raise GrammarError(f"bad node <{node.symbol}>/{node.alt}")
        recursive = g.is_recursive(node.symbol, node.alt)
        if recursive and level >= g.max_depth:
            raise GrammarError(f"recursive expansion of <{node.symbol}> beyond depth {g.max_depth}")
        seq = alts[node.alt]
        if len(seq) != len(node.children):
            raise GrammarError(f"<{node.symbol}> arity mismatch")
        nxt = level + 1 if recursive else level
        for sym, child in zip(seq, node.children):
            if isinstance(sym, tuple):
                if not isinstance(child, Node) or child.symbol != sym[1]:
                    raise GrammarError(f"expected <{sym[1]}> under <{node.symbol}>")
                rec(child, nxt)
            elif child != Leaf(sym):
                raise GrammarError(f"terminal mismatch under <{node.symbol}>")
    rec(t, 1)


# -- phenotype ------------------------------------------------------------------

def const_values(t: ParseTree) -> list[float]:
    """Constant leaves in depth-first order."""
    out: list[float] = []

    def rec(node):
        if isinstance(node, ConstLeaf):
            out.append(node.value)
        elif isinstance(node, Node):
            for c in node.children:
                rec(c)
    rec(t)
    return out


def with_constants(t: ParseTree, values: Sequence[float]) -> ParseTree:
    """Copy of ``t`` with its constant leaves replaced, in depth-first order."""
    it = iter(values)

    def rec(node):
        if isinstance(node, ConstLeaf):
            return ConstLeaf(float(next(it)))
        if isinstance(node, Node):
            return Node(node.symbol, node.alt, tuple(rec(c) for c in node.children))
        return node
    out = rec(t)
    if next(it, None) is not None:
        raise ValueError("more values than constant leaves")
    return out


def _text(t: ParseTree, counter: list[int]) -> str:
    if isinstance(t, Leaf):
        return t.text
    if isinstance(t, ConstLeaf):
        k = counter[0]
        counter[0] += 1
        return f"__k{k}"
    inner = "".join(_text(c, counter) for c in t.children)
    return f"({inner})" if t.children and not _is_list(t) else inner


def _is_list(t: Node) -> bool:
    first = t.children[0]
    return isinstance(first, Leaf) and first.text.lstrip().startswith("{")


def to_phenotype(g: Grammar, t: ParseTree, as_params: bool = False,
                 offset: int = 0) -> Expr | list[Expr]:
    """Map a derivation tree to an expression (a list for ``{...}`` rules).

    Constant leaves become tunable constants, or with ``as_params`` the
    parameters ``offset, offset + 1, ...`` in depth-first order, matching
    :func:`const_values`.
    """
    values = const_values(t)
    text = _text(t, [0])
    names = [f"__k{k}" for k in range(len(values))]
    if as_params:
        repl = [param(offset + k) for k in range(len(values))]
    else:
        repl = [const(v, tunable=True) for v in values]
    if isinstance(t, Node) and t.children and _is_list(t):
        exprs = parse_list(text, g.var_names, param_names=names)
        return [substitute(e, params=repl) for e in exprs]
    return substitute(parse_expr(text, g.var_names, param_names=names), params=repl)


# -- genetic operators --------------------------------------------------------------

def _sites(g: Grammar, t: ParseTree):
    """All nonterminal nodes as (path, node, level, subtree_height)."""
    out = []

    def rec(node, path, level):
        if not isinstance(node, Node):
            return 0
        recursive = node.symbol in g.rules and g.is_recursive(node.symbol, node.alt)
        nxt = level + 1 if recursive else level
        h = 0
        for k, c in enumerate(node.children):
            h = max(h, rec(c, path + (k,), nxt))
        height = h + (1 if recursive else 0)
        out.append((path, node, level, height))
        return height
    rec(t, (), 1)
    return out


def _fits(level: int, height: int, max_depth: int) -> bool:
    # the deepest recursive expansion of the subtree happens at level + height - 1
    return height == 0 or level + height <= max_depth


def _replace(t: Node, path: tuple, sub: ParseTree) -> ParseTree:
    if not path:
        return sub
    k = path[0]
    kids = list(t.children)
    kids[k] = _replace(kids[k], path[1:], sub)
    return Node(t.symbol, t.alt, tuple(kids))


def _get(t: ParseTree, path: tuple) -> ParseTree:
    for k in path:
        t = t.children[k]
    return t


def crossover(g: Grammar, a: Node, b: Node, rng: np.random.Generator) -> tuple[Node, Node]:
    """Swap two subtrees with the same nonterminal root.

    The site in ``a`` is drawn uniformly among nodes that have a
    depth-compatible partner in ``b``, the partner uniformly among those.
    Identical parents, or parents without any compatible pair, are returned
    unchanged.
    """
    if a == b:
        return a, b
    sa, sb = _sites(g, a), _sites(g, b)
    by_sym: dict[str, list] = {}
    for s in sb:
        by_sym.setdefault(s[1].symbol, []).append(s)

    def partners(site):
        _, node, level, height = site
        out = []
        for other in by_sym.get(node.symbol, ()):
            _, _, olevel, oheight = other
            if _fits(level, oheight, g.max_depth) and _fits(olevel, height, g.max_depth):
                out.append(other)
        return out

    eligible = [(s, p) for s in sa if (p := partners(s))]
    if not eligible:
        return a, b
    site, cands = eligible[int(rng.integers(len(eligible)))]
    other = cands[int(rng.integers(len(cands)))]
    na = _replace(a, site[0], other[1])
    nb = _replace(b, other[0], site[1])
    return na, nb


def mutate(g: Grammar, a: Node, rng: np.random.Generator) -> Node:
    """Regrow the subtree at a uniformly chosen nonterminal node."""
    sites = _sites(g, a)
    path, node, level, _ = sites[int(rng.integers(len(sites)))]
    return _replace(a, path, grow(g, node.symbol, rng, level))


# -- stock grammars --------------------------------------------------------------------

def _var_text(name: str, c: float) -> str:
    if c == 0:
        return name
    return f"{name} + {-c!r}" if c < 0 else f"{name} - {c!r}"


def table3_grammar(n: int, x_c: Sequence[float], max_depth: int = 7,
                   const_range: tuple[float, float] = (-10.0, 10.0),
                   max_modes: int = 3, names: Sequence[str] | None = None) -> Grammar:
    """Polynomial grammar for V (start ``V``) and linear mode sets (start ``G``).

    Variables are shifted by the goal center ``x_c``.
    """
    if n < 1:
        raise GrammarError("need at least one state")
    x_c = list(x_c)
    if len(x_c) != n:
        raise GrammarError("goal center has wrong dimension")
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(n)]
    if len(names) != n:
        raise GrammarError("need one variable name per state")
    shifted = [_var_text(names[i], float(x_c[i])) for i in range(n)]
    full_lin = " + ".join(f"<const>*({s})" for s in shifted)
    mode_sets = " | ".join("{" + ", ".join(["<lin>"] * k) + "}" for k in range(1, max_modes + 1))
    rules = [
        "<V> ::= <const> + <expr>",
        "<expr> ::= <expr> + <expr> | <pol>",
        "<pol> ::= <pol> + <pol> | <const> * <mon>",
        "<mon> ::= <var> | <var> * <var>",
        "<var> ::= " + " | ".join(shifted),
        f"<const> ::= @uniform({const_range[0]!r}, {const_range[1]!r})",
        f"<G> ::= {mode_sets}",
        f"<lin> ::= {full_lin} | <const> * <var> | <const>",
    ]
    return Grammar.from_rules(rules, names, max_depth, starts={"V": "V", "G": "G"})


def monomial_grammar(max_depth: int = 7) -> Grammar:
    """The two-variable monomial grammar over ``a`` and ``b``."""
    rules = ["<mon> ::= <var> | <var> * <mon>", "<var> ::= a | b"]
    return Grammar.from_rules(rules, ["a", "b"], max_depth, starts={"V": "mon"})
