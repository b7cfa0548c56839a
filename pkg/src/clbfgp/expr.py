"""Symbolic scalar expressions.

Expressions are immutable trees of :class:`Expr` nodes.  They support exact
point evaluation, symbolic differentiation, substitution, constant folding,
rendering back to the infix text syntax accepted by :func:`clbfgp.parse.parse_expr`,
and a complexity measure over tunable constants.

Tunable constants (the ones a ``<const>`` grammar rule introduces and that
CMA-ES is allowed to move) are ``const`` nodes with ``tunable=True``.
Exponents of ``pow`` nodes are structural and live in ``value``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Sequence

OPS = (
    "const", "var", "param",
    "add", "sub", "mul", "div", "pow",
    "neg", "sin", "cos", "exp",
    "min", "max",
)
_BINARY = {"add", "sub", "mul", "div"}
_UNARY = {"neg", "sin", "cos", "exp", "pow"}
_NARY = {"min", "max"}


class ExprError(Exception):
    """Base class for expression errors."""


class DimensionMismatch(ExprError):
    pass


class DivisionByZero(ExprError):
    pass


class NonFinite(ExprError):
    pass


class NonDifferentiableNode(ExprError):
    pass


@dataclass(frozen=True)
class Expr:
    """One node of an expression tree.

    ``value`` holds the constant for ``const``, the index for ``var`` and
    ``param``, and the integer exponent for ``pow``.
    """

    op: str
    children: tuple[Expr, ...] = ()
    value: float = 0.0
    tunable: bool = False

    def __post_init__(self):
        if self.op not in OPS:
            raise ExprError(f"unknown node kind {self.op!r}")
        n = len(self.children)
        if self.op in _BINARY and n != 2:
            raise ExprError(f"{self.op} needs 2 children, got {n}")
        if self.op in _UNARY and n != 1:
            raise ExprError(f"{self.op} needs 1 child, got {n}")
        if self.op in _NARY and n < 1:
            raise ExprError(f"{self.op} needs at least one child")
        if self.op == "pow" and (int(self.value) != self.value or self.value < 0):
            raise ExprError("pow exponent must be a non-negative integer")

    # -- construction sugar -------------------------------------------------
    def __add__(self, other) -> Expr:
        return Expr("add", (self, as_expr(other)))

    def __radd__(self, other) -> Expr:
        return Expr("add", (as_expr(other), self))

    def __sub__(self, other) -> Expr:
        return Expr("sub", (self, as_expr(other)))

    def __rsub__(self, other) -> Expr:
        return Expr("sub", (as_expr(other), self))

    def __mul__(self, other) -> Expr:
        return Expr("mul", (self, as_expr(other)))

    def __rmul__(self, other) -> Expr:
        return Expr("mul", (as_expr(other), self))

    def __truediv__(self, other) -> Expr:
        return Expr("div", (self, as_expr(other)))

    def __rtruediv__(self, other) -> Expr:
        return Expr("div", (as_expr(other), self))

    def __neg__(self) -> Expr:
        return Expr("neg", (self,))

    def __pow__(self, k: int) -> Expr:
        return Expr("pow", (self,), float(k))

    def __str__(self) -> str:
        return render(self)

    @property
    def index(self) -> int:
        return int(self.value)

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    def walk(self) -> Iterator[Expr]:
        """Pre-order traversal."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def size(self) -> int:
        return sum(1 for _ in self.walk())


def const(v: float, tunable: bool = False) -> Expr:
    return Expr("const", (), float(v), tunable)


def var(i: int) -> Expr:
    return Expr("var", (), float(i))


def param(i: int) -> Expr:
    return Expr("param", (), float(i))


def sin(e) -> Expr:
    return Expr("sin", (as_expr(e),))


def cos(e) -> Expr:
    return Expr("cos", (as_expr(e),))


def exp(e) -> Expr:
    return Expr("exp", (as_expr(e),))


def min_(*es) -> Expr:
    return Expr("min", tuple(as_expr(e) for e in es))


def max_(*es) -> Expr:
    return Expr("max", tuple(as_expr(e) for e in es))


def abs_(e) -> Expr:
    e = as_expr(e)
    return max_(e, -e)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float)):
        return const(float(x))
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


ZERO = const(0.0)
ONE = const(1.0)


# -- queries ----------------------------------------------------------------

def max_var_index(e: Expr) -> int:
    """Largest ``var`` index used, or -1."""
    return max((n.index for n in e.walk() if n.op == "var"), default=-1)


def max_param_index(e: Expr) -> int:
    return max((n.index for n in e.walk() if n.op == "param"), default=-1)


def has_minmax(e: Expr) -> bool:
    return any(n.op in _NARY for n in e.walk())


def complexity(e: Expr, params: Sequence[float] | None = None) -> tuple[int, float]:
    """Number of tunable constants and the largest absolute value among them.

    ``param`` nodes count as tunable constants; their values are looked up in
    ``params`` when given.
    """
    count = 0
    biggest = 0.0
    seen_params: set[int] = set()
    for node in e.walk():
        if node.op == "const" and node.tunable:
            count += 1
            biggest = max(biggest, abs(node.value))
        elif node.op == "param" and node.index not in seen_params:
            seen_params.add(node.index)
            count += 1
            if params is not None:
                biggest = max(biggest, abs(float(params[node.index])))
    return count, biggest


# -- point evaluation -------------------------------------------------------

def eval_expr(e: Expr, point: Sequence[float], params: Sequence[float] = ()) -> float:
    """Exact floating evaluation at one point.

    Raises :class:`DimensionMismatch` if the point or parameter vector is too
    short, :class:`DivisionByZero` on a zero denominator and
    :class:`NonFinite` on overflow or NaN.
    """
    if max_var_index(e) >= len(point):
        raise DimensionMismatch(
            f"expression uses x{max_var_index(e) + 1} but point has {len(point)} entries")
    if max_param_index(e) >= len(params):
        raise DimensionMismatch("parameter vector too short")
    return _eval(e, point, params)


def _check(v: float) -> float:
    if not math.isfinite(v):
        raise NonFinite(f"non-finite intermediate value {v}")
    return v


def _eval(e: Expr, x, p) -> float:
    op = e.op
    if op == "const":
        return e.value
    if op == "var":
        return float(x[e.index])
    if op == "param":
        return float(p[e.index])
    ch = [_eval(c, x, p) for c in e.children]
    try:
        if op == "add":
            return _check(ch[0] + ch[1])
        if op == "sub":
            return _check(ch[0] - ch[1])
        if op == "mul":
            return _check(ch[0] * ch[1])
        if op == "div":
            if ch[1] == 0.0:
                raise DivisionByZero("division by zero")
            return _check(ch[0] / ch[1])
        if op == "pow":
            return _check(ch[0] ** int(e.value))
        if op == "neg":
            return -ch[0]
        if op == "sin":
            return math.sin(ch[0])
        if op == "cos":
            return math.cos(ch[0])
        if op == "exp":
            return _check(math.exp(ch[0]))
        if op == "min":
            return min(ch)
        if op == "max":
            return max(ch)
    except OverflowError as exc:
        raise NonFinite(str(exc)) from None
    raise ExprError(op)


# -- transformations ----------------------------------------------------------

def map_bottom_up(e: Expr, fn: Callable[[Expr, tuple[Expr, ...]], Expr],
                  memo: dict | None = None) -> Expr:
    """Rebuild ``e`` bottom-up; ``fn`` receives the node and its new children."""
    memo = {} if memo is None else memo
    key = id(e)
    hit = memo.get(key)
    if hit is not None:
        return hit[1]
    kids = tuple(map_bottom_up(c, fn, memo) for c in e.children)
    out = fn(e, kids)
    memo[key] = (e, out)  # keep e alive so id() stays unique
    return out


def substitute(e: Expr, variables: Mapping[int, Expr] | Sequence[Expr] | None = None,
               params: Mapping[int, Expr] | Sequence[Expr] | None = None) -> Expr:
    """Replace ``var``/``param`` leaves by expressions.

    ``variables`` may be a mapping from index to expression or a sequence
    covering every index used.
    """
    def lookup(table, i, node):
        if table is None:
            return node
        if isinstance(table, Mapping):
            return table.get(i, node)
        return table[i]

    def fn(node: Expr, kids: tuple[Expr, ...]) -> Expr:
        if node.op == "var":
            return lookup(variables, node.index, node)
        if node.op == "param":
            return lookup(params, node.index, node)
        if not kids:
            return node
        return Expr(node.op, kids, node.value, node.tunable)

    return map_bottom_up(e, fn)


def bind_params(e: Expr, values: Sequence[float]) -> Expr:
    """Turn ``param`` leaves into tunable constants with the given values."""
    return substitute(e, params=[const(float(v), True) for v in values])


def lift_params(exprs: Sequence[Expr], start: int = 0) -> tuple[list[Expr], list[float]]:
    """Turn tunable constants into ``param`` leaves, numbered in pre-order.

    Returns the rewritten expressions and the extracted values.
    """
    values: list[float] = []

    def rec(node: Expr) -> Expr:
        if node.op == "const" and node.tunable:
            values.append(node.value)
            return param(start + len(values) - 1)
        if not node.children:
            return node
        return Expr(node.op, tuple(rec(c) for c in node.children), node.value, node.tunable)

    return [rec(e) for e in exprs], values


def _structural_const(e: Expr) -> bool:
    return e.op == "const" and not e.tunable


def fold(e: Expr) -> Expr:
    """Constant folding plus a few neutral-element identities.

    Tunable constants are never merged with each other, so the number of
    tunable constants is preserved (a negated tunable constant stays tunable).
    """
    def fn(node: Expr, kids: tuple[Expr, ...]) -> Expr:
        op = node.op
        if not kids:
            return node
        if op == "neg":
            (a,) = kids
            if a.op == "const":
                return const(-a.value, a.tunable)
            if a.op == "neg":
                return a.children[0]
            return Expr("neg", kids)
        if all(_structural_const(k) for k in kids):
            try:
                v = _eval(Expr(op, kids, node.value), (), ())
            except ExprError:
                v = None
            if v is not None and math.isfinite(v):
                return const(v)
        if op == "add":
            a, b = kids
            if _is_zero(a):
                return b
            if _is_zero(b):
                return a
        elif op == "sub":
            a, b = kids
            if _is_zero(b):
                return a
            if _is_zero(a):
                return fn(Expr("neg", (b,)), (b,))
        elif op == "mul":
            a, b = kids
            if _is_zero(a) or _is_zero(b):
                return ZERO
            if _is_one(a):
                return b
            if _is_one(b):
                return a
        elif op == "div":
            a, b = kids
            if _is_one(b):
                return a
            if _is_zero(a) and not _is_zero(b):
                return ZERO
        elif op == "pow":
            k = int(node.value)
            if k == 0:
                return ONE
            if k == 1:
                return kids[0]
        elif op in _NARY and len(kids) == 1:
            return kids[0]
        return Expr(op, kids, node.value, node.tunable)

    return map_bottom_up(e, fn)


def _is_zero(e: Expr) -> bool:
    return _structural_const(e) and e.value == 0.0


def _is_one(e: Expr) -> bool:
    return _structural_const(e) and e.value == 1.0


def diff(e: Expr, i: int) -> Expr:
    """Symbolic partial derivative with respect to ``var`` ``i``, folded."""
    return fold(_diff(e, i, {}))


def _diff(e: Expr, i: int, memo: dict) -> Expr:
    key = id(e)
    if key in memo:
        return memo[key][1]
    op = e.op
    if op in ("const", "param"):
        d = ZERO
    elif op == "var":
        d = ONE if e.index == i else ZERO
    elif op in _NARY:
        raise NonDifferentiableNode(f"cannot differentiate {op}")
    else:
        ds = [_diff(c, i, memo) for c in e.children]
        ch = e.children
        if op == "add":
            d = ds[0] + ds[1]
        elif op == "sub":
            d = ds[0] - ds[1]
        elif op == "mul":
            d = ds[0] * ch[1] + ch[0] * ds[1]
        elif op == "div":
            d = (ds[0] * ch[1] - ch[0] * ds[1]) / (ch[1] ** 2)
        elif op == "pow":
            k = int(e.value)
            d = ZERO if k == 0 else const(k) * (ch[0] ** (k - 1)) * ds[0]
        elif op == "neg":
            d = -ds[0]
        elif op == "sin":
            d = cos(ch[0]) * ds[0]
        elif op == "cos":
            d = -(sin(ch[0])) * ds[0]
        elif op == "exp":
            d = e * ds[0]
        else:  # pragma: no cover
            raise ExprError(op)
    memo[key] = (e, d)
    return d


def gradient(e: Expr, n: int) -> list[Expr]:
    return [diff(e, i) for i in range(n)]


# -- rendering ----------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def render(e: Expr, var_names: Sequence[str] | None = None,
           param_names: Sequence[str] | None = None) -> str:
    """Infix text that :func:`parse_expr` reads back to the same tree."""
    def vname(i: int) -> str:
        return var_names[i] if var_names is not None else f"x{i + 1}"

    def pname(i: int) -> str:
        return param_names[i] if param_names is not None else f"p{i}"

    def num(v: float) -> str:
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)

    def rec(node: Expr) -> tuple[str, int]:
        op = node.op
        if op == "const":
            if node.value < 0 or (node.value == 0 and math.copysign(1, node.value) < 0):
                return f"-{num(-node.value)}", 3
            return num(node.value), 5
        if op == "var":
            return vname(node.index), 5
        if op == "param":
            return pname(node.index), 5
        if op in ("sin", "cos", "exp", "min", "max"):
            args = ", ".join(rec(c)[0] for c in node.children)
            return f"{op}({args})", 5
        if op == "neg":
            s, p = rec(node.children[0])
            # neg binds looser than pow, tighter than mul; a bare literal
            # after the sign would read back as a negative constant
            wrap = p <= 3 or node.children[0].op == "const"
            return f"-{'(' + s + ')' if wrap else s}", 3
        if op == "pow":
            s, p = rec(node.children[0])
            return f"{s if p > 4 else '(' + s + ')'}^{int(node.value)}", 4
        prec = _PREC[op]
        (ls, lp), (rs, rp) = rec(node.children[0]), rec(node.children[1])
        left = ls if lp >= prec else f"({ls})"
        # right operand of a left-associative operator needs strictly higher precedence
        right = rs if rp > prec else f"({rs})"
        sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[op]
        return f"{left}{sym}{right}", prec

    return rec(e)[0]


# -- code generation -----------------------------------------------------------

def to_python(exprs: Sequence[Expr], n_vars: int) -> Callable:
    """Compile expressions into a fast scalar Python function.

    The function takes ``(x, p)`` sequences and returns a tuple.  No error
    checks: intended for simulation inner loops.
    """
    lines: list[str] = []
    names: dict[tuple, str] = {}

    def rec(node: Expr) -> str:
        op = node.op
        if op == "const":
            return f"({node.value!r})"
        if op == "var":
            return f"x{node.index}"
        if op == "param":
            return f"p[{node.index}]"
        args = [rec(c) for c in node.children]
        key = (op, node.value, tuple(args))
        if key in names:
            return names[key]
        if op == "add":
            code = f"{args[0]} + {args[1]}"
        elif op == "sub":
            code = f"{args[0]} - {args[1]}"
        elif op == "mul":
            code = f"{args[0]} * {args[1]}"
        elif op == "div":
            code = f"{args[0]} / {args[1]}"
        elif op == "pow":
            code = f"{args[0]} ** {int(node.value)}"
        elif op == "neg":
            code = f"-{args[0]}"
        elif op in ("sin", "cos", "exp"):
            code = f"_m.{op}({args[0]})"
        else:
            code = f"{op}({', '.join(args)})"
        name = f"t{len(names)}"
        names[key] = name
        lines.append(f"    {name} = {code}")
        return name

    outs = [rec(e) for e in exprs]
    head = ["def _f(x, p=()):"] + [f"    x{i} = x[{i}]" for i in range(n_vars)]
    src = "\n".join(head + lines + [f"    return ({', '.join(outs)}{',' if len(outs) == 1 else ''})"])
    scope: dict = {"_m": math}
    exec(compile(src, "<clbfgp-codegen>", "exec"), scope)
    return scope["_f"]
