"""Batched evaluation of expression DAGs.

A :class:`Program` linearises one or more expressions into a topologically
ordered instruction list, merging structurally identical subtrees.  It is
then evaluated on whole arrays of points (plain floating point) or of boxes
(guaranteed interval bounds).  Variables and parameters broadcast with numpy
rules, which lets the fitness code evaluate a CMA-ES population against a
sample bank in one pass.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import interval as iv
from .expr import Expr


class Program:
    __slots__ = ("code", "outputs", "n_vars", "n_params")

    def __init__(self, exprs: Sequence[Expr]):
        index: dict[tuple, int] = {}
        memo: dict[int, tuple[Expr, int]] = {}
        code: list[tuple] = []

        def emit(e: Expr) -> int:
            hit = memo.get(id(e))
            if hit is not None:
                return hit[1]
            args = tuple(emit(c) for c in e.children)
            key = (e.op, e.value, args)
            slot = index.get(key)
            if slot is None:
                slot = len(code)
                index[key] = slot
                code.append(key)
            memo[id(e)] = (e, slot)
            return slot

        self.outputs = [emit(e) for e in exprs]
        self.code = code
        self.n_vars = 1 + max((int(v) for op, v, _ in code if op == "var"), default=-1)
        self.n_params = 1 + max((int(v) for op, v, _ in code if op == "param"), default=-1)

    def __len__(self) -> int:
        return len(self.code)

    # -- point evaluation ------------------------------------------------------
    def eval(self, xs: Sequence, params: Sequence = ()) -> list[np.ndarray]:
        """Evaluate at points.

        ``xs[i]`` is the array (or scalar) of values of variable ``i``;
        ``params[j]`` likewise.  Division by zero and overflow produce
        inf/NaN silently; callers decide how to treat them.
        """
        if len(xs) < self.n_vars:
            raise ValueError(f"need {self.n_vars} variables, got {len(xs)}")
        if len(params) < self.n_params:
            raise ValueError(f"need {self.n_params} parameters, got {len(params)}")
        vals: list = [None] * len(self.code)
        with np.errstate(all="ignore"):
            for k, (op, v, a) in enumerate(self.code):
                if op == "const":
                    r = v
                elif op == "var":
                    r = xs[int(v)]
                elif op == "param":
                    r = params[int(v)]
                elif op == "add":
                    r = vals[a[0]] + vals[a[1]]
                elif op == "sub":
                    r = vals[a[0]] - vals[a[1]]
                elif op == "mul":
                    r = vals[a[0]] * vals[a[1]]
                elif op == "div":
                    r = np.divide(vals[a[0]], vals[a[1]])
                elif op == "pow":
                    r = vals[a[0]] ** int(v)
                elif op == "neg":
                    r = -vals[a[0]]
                elif op == "sin":
                    r = np.sin(vals[a[0]])
                elif op == "cos":
                    r = np.cos(vals[a[0]])
                elif op == "exp":
                    r = np.exp(vals[a[0]])
                elif op == "min":
                    r = vals[a[0]]
                    for j in a[1:]:
                        r = np.minimum(r, vals[j])
                elif op == "max":
                    r = vals[a[0]]
                    for j in a[1:]:
                        r = np.maximum(r, vals[j])
                else:  # pragma: no cover
                    raise ValueError(op)
                vals[k] = r
        return [np.asarray(vals[o], dtype=float) for o in self.outputs]

    # -- interval evaluation ------------------------------------------------------
    def ieval(self, lo: Sequence, hi: Sequence, params: Sequence = ()) -> list[tuple]:
        """Guaranteed enclosures over boxes ``[lo[i], hi[i]]`` per variable.

        Parameters are treated as exact point values.
        """
        if len(lo) < self.n_vars or len(hi) < self.n_vars:
            raise ValueError(f"need {self.n_vars} variables")
        L: list = [None] * len(self.code)
        H: list = [None] * len(self.code)
        for k, (op, v, a) in enumerate(self.code):
            if op == "const":
                l = h = np.float64(v)
            elif op == "var":
                l, h = np.asarray(lo[int(v)], dtype=float), np.asarray(hi[int(v)], dtype=float)
            elif op == "param":
                l = h = np.asarray(params[int(v)], dtype=float)
            elif op == "add":
                l, h = iv.iadd(L[a[0]], H[a[0]], L[a[1]], H[a[1]])
            elif op == "sub":
                l, h = iv.isub(L[a[0]], H[a[0]], L[a[1]], H[a[1]])
            elif op == "mul":
                l, h = iv.imul(L[a[0]], H[a[0]], L[a[1]], H[a[1]])
            elif op == "div":
                l, h = iv.idiv(L[a[0]], H[a[0]], L[a[1]], H[a[1]])
            elif op == "pow":
                l, h = iv.ipow(L[a[0]], H[a[0]], int(v))
            elif op == "neg":
                l, h = iv.ineg(L[a[0]], H[a[0]])
            elif op == "sin":
                l, h = iv.isin(L[a[0]], H[a[0]])
            elif op == "cos":
                l, h = iv.icos(L[a[0]], H[a[0]])
            elif op == "exp":
                l, h = iv.iexp(L[a[0]], H[a[0]])
            elif op == "min":
                l, h = iv.imin([(L[j], H[j]) for j in a])
            elif op == "max":
                l, h = iv.imax([(L[j], H[j]) for j in a])
            else:  # pragma: no cover
                raise ValueError(op)
            L[k], H[k] = l, h
        return [(np.asarray(L[o], dtype=float), np.asarray(H[o], dtype=float))
                for o in self.outputs]

    def divisor_nodes(self) -> list[int]:
        return [a[1] for op, _, a in self.code if op == "div"]


def ieval(e: Expr, box, params: Sequence[float] = ()) -> iv.Interval:
    """Natural interval extension of ``e`` over ``box``.

    Raises :class:`DivisorStraddlesZero` when a denominator's enclosure
    contains zero; the caller should split the box.
    """
    from .interval import Box

    box = box if isinstance(box, Box) else Box.from_pairs(box)
    prog = Program([e])
    if prog.n_vars > box.dim:
        from .expr import DimensionMismatch
        raise DimensionMismatch(f"expression needs {prog.n_vars} variables, box has {box.dim}")
    divs = prog.divisor_nodes()
    if divs:
        dprog = Program([_subexpr(prog, d) for d in divs])
        for lo, hi in dprog.ieval(box.lo, box.hi, params):
            if float(lo) <= 0.0 <= float(hi):
                raise DivisorStraddlesZero("denominator enclosure contains zero; split the box")
    (lo, hi), = prog.ieval(box.lo, box.hi, params)
    return iv.Interval(float(lo), float(hi))


class DivisorStraddlesZero(Exception):
    pass


def _subexpr(prog: Program, slot: int) -> Expr:
    """Rebuild the expression rooted at instruction ``slot``."""
    op, v, a = prog.code[slot]
    return Expr(op, tuple(_subexpr(prog, j) for j in a), v)
