"""One-step reachable sets from an Euler step plus a truncation-error bound.

For a mode ``g`` held over one sampling interval, every state reachable from
``x`` within ``[0, h]`` lies in::

    { x + tau*f(x, g(x)) + 0.5*tau**2*e  :  tau in [0, h], |e_i| <= eps_i }

where ``eps_i`` bounds the second time derivative of the i-th state, i.e.
``|grad_x f_i(x, u) . f(x, u)|`` over ``X x U`` at fixed input.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import Expr, abs_, const, diff, fold, has_minmax, substitute, var
from .interval import Box
from .program import Program
from .verify import BoxSet, ForallQuery, Proved, prove_forall, sup_bound


@dataclass
class SystemModel:
    """Continuous dynamics ``xdot = f(x, u)``.

    Each ``f[i]`` is written over ``n + m`` variables: states first, then
    inputs.
    """

    f: list[Expr]
    X: Box
    U: Box
    state_names: list[str] = field(default_factory=list)
    input_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        n, m = self.X.dim, self.U.dim
        if len(self.f) != n:
            raise ValueError(f"{len(self.f)} dynamics expressions for {n} states")
        for i, fi in enumerate(self.f):
            nv = Program([fi]).n_vars
            if nv > n + m:
                raise ValueError(f"f{i + 1} uses variable index {nv - 1} beyond x and u")
        if not self.state_names:
            self.state_names = [f"x{i + 1}" for i in range(n)]
        if not self.input_names:
            self.input_names = ["u"] if m == 1 else [f"u{j + 1}" for j in range(m)]

    @property
    def n(self) -> int:
        return self.X.dim

    @property
    def m(self) -> int:
        return self.U.dim

    @property
    def var_names(self) -> list[str]:
        return self.state_names + self.input_names

    def closed_loop(self, mode: Sequence[Expr], at: Sequence[Expr] | None = None) -> list[Expr]:
        """``f(z, g(x))`` with ``z`` given by ``at`` (defaults to ``x`` itself)."""
        n = self.n
        z = list(at) if at is not None else [var(i) for i in range(n)]
        mapping = {i: z[i] for i in range(n)}
        mapping.update({n + j: mode[j] for j in range(self.m)})
        return [substitute(fi, mapping) for fi in self.f]

    def rhs(self):
        """Fast scalar function ``(x, u) -> xdot`` for simulation."""
        from .expr import to_python

        fn = to_python(self.f, self.n + self.m)
        n = self.n

        def call(x, u):
            return fn(list(x) + list(u))
        call.n = n
        return call


@dataclass
class LteBounds:
    eps: np.ndarray
    h: float
    loose: tuple[bool, ...] = ()

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        if np.any(self.eps < 0):
            raise ValueError("eps must be non-negative")
        if self.h <= 0:
            raise ValueError("sampling time must be positive")

    def box(self) -> Box:
        return Box(-self.eps, self.eps.copy())


def second_derivative_exprs(sys: SystemModel) -> list[Expr]:
    """``grad_x f_i . f`` for every state, at fixed input."""
    if any(has_minmax(fi) for fi in sys.f):
        raise ValueError("dynamics must be differentiable in x (no min/max)")
    out = []
    for fi in sys.f:
        terms = [diff(fi, j) * sys.f[j] for j in range(sys.n)]
        acc = terms[0]
        for t in terms[1:]:
            acc = acc + t
        out.append(fold(acc))
    return out


def lte_bounds_detailed(sys: SystemModel, tol: float = 1e-3, budget: int = 400_000,
                        bisect_budget: int = 200_000) -> tuple[np.ndarray, list[bool]]:
    """Like :func:`lte_bounds` but also returns a per-state "loose" flag."""
    domain = BoxSet.box(sys.X.product(sys.U))
    eps, loose = [], []
    for expr in second_derivative_exprs(sys):
        target = fold(abs_(expr))
        sb = sup_bound(target, domain, tol=tol, budget=budget)
        lo, hi = max(sb.lower, 0.0), sb.upper
        if sb.loose:
            # prove "eps - |.| >= 0" at midpoints until the bracket is tight
            for _ in range(60):
                if hi - lo <= tol:
                    break
                mid = 0.5 * (lo + hi)
                out = prove_forall(ForallQuery(domain, const(mid) - target), budget=bisect_budget)
                if isinstance(out, Proved):
                    hi = mid
                else:
                    lo = mid
        eps.append(max(hi, 0.0))
        loose.append(hi - lo > tol)
    return np.array(eps), loose


def lte_bounds(sys: SystemModel, tol: float = 1e-3, budget: int = 400_000,
               bisect_budget: int = 200_000) -> np.ndarray:
    """Certified per-state bounds on the Euler local truncation error factor.

    Returns ``eps`` with ``eps_i >= max |grad_x f_i . f|`` over ``X x U`` and,
    unless a warning says otherwise, ``eps_i - max <= tol``.  A
    branch-and-bound upper bound brackets the value; bisection on the prover
    tightens the bracket when that bound came back loose.
    """
    eps, loose = lte_bounds_detailed(sys, tol, budget, bisect_budget)
    if any(loose):
        warnings.warn(f"eps bounds are valid but loose for states {[i for i, l in enumerate(loose) if l]}",
                      stacklevel=2)
    return eps


def reach_map(sys: SystemModel, mode: Sequence[Expr]) -> list[Expr]:
    """Symbolic ``r(x, tau, e) = x + tau*f(x, g(x)) + tau**2/2 * e``.

    Variables: ``x`` at ``0..n-1``, ``tau`` at ``n``, ``e`` at ``n+1..2n``.
    """
    n = sys.n
    if len(mode) != sys.m:
        from .expr import DimensionMismatch
        raise DimensionMismatch(f"mode has {len(mode)} components, system has {sys.m} inputs")
    fx = sys.closed_loop(mode)
    tau = var(n)
    return [fold(var(i) + tau * fx[i] + const(0.5) * tau ** 2 * var(n + 1 + i)) for i in range(n)]


def shift_reach(r: Sequence[Expr], n: int, offset: int) -> list[Expr]:
    """Re-index a reach map so ``tau``/``e`` live at ``offset..offset+n``."""
    mapping = {n + k: var(offset + k) for k in range(n + 1)}
    return [substitute(ri, mapping) for ri in r]


def reach_box(sys: SystemModel, mode: Sequence[Expr], x: Sequence[float], h: float,
              eps: Sequence[float]) -> Box:
    """Interval hull of the one-step reachable set from the point ``x``."""
    n = sys.n
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps, dtype=float)
    prog = Program(reach_map(sys, mode))
    lo = list(x) + [0.0] + list(-eps)
    hi = list(x) + [h] + list(eps)
    res = prog.ieval(lo, hi)
    return Box([float(a) for a, _ in res], [float(b) for _, b in res])


def check_mode_range(sys: SystemModel, mode: Sequence[Expr], tol: float = 1e-6) -> bool:
    """Warn (and return False) if a mode can leave ``U`` somewhere on ``X``."""
    ok = True
    dom = BoxSet.box(sys.X)
    for j, gj in enumerate(mode):
        hi = sup_bound(gj, dom, tol=1e-3, budget=20_000).upper
        lo = -sup_bound(-gj, dom, tol=1e-3, budget=20_000).upper
        if hi > sys.U.hi[j] + tol or lo < sys.U.lo[j] - tol:
            warnings.warn(f"mode component {j} may leave U: range ~[{lo:.4g}, {hi:.4g}]",
                          stacklevel=2)
            ok = False
    return ok
