"""Shared generators and seeded property suites.

The acceptance test runs the suites at their full sizes; the per-module
tests run hypothesis versions of the same properties.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from clbfgp import config, grammar as gr
from clbfgp.expr import (DivisionByZero, Expr, NonFinite, const, cos, diff, eval_expr, exp,
                         max_, min_, sin, var)
from clbfgp.fitness import EvolvedModes, candidate_modes, Candidate
from clbfgp.program import Program
from clbfgp.reach import reach_box
from clbfgp.verify import BoxSet, ForallQuery, Proved, Refuted, prove_forall

BENCHMARKS = ["linear", "second_order", "third_order", "pendulum", "cartpole", "cartpole_evolve"]


# -- random expressions ----------------------------------------------------------

def random_expr(rng: np.random.Generator, n: int, depth: int = 4, smooth: bool = False) -> Expr:
    """Random expression over ``x0..x{n-1}``; ``smooth`` avoids min/max and
    keeps denominators away from zero."""
    if depth <= 0 or rng.random() < 0.25:
        if rng.random() < 0.6:
            return var(int(rng.integers(n)))
        return const(float(np.round(rng.uniform(-3, 3), 3)))
    kinds = ["add", "sub", "mul", "div", "pow", "neg", "sin", "cos", "exp"]
    if not smooth:
        kinds += ["min", "max"]
    k = kinds[int(rng.integers(len(kinds)))]
    a = random_expr(rng, n, depth - 1, smooth)
    if k in ("add", "sub", "mul"):
        b = random_expr(rng, n, depth - 1, smooth)
        return {"add": a + b, "sub": a - b, "mul": a * b}[k]
    if k == "div":
        b = random_expr(rng, n, depth - 1, smooth)
        if smooth:
            return a / (const(1.0) + b ** 2)
        return a / b
    if k == "pow":
        return a ** int(rng.integers(0, 4))
    if k == "neg":
        return -a
    if k == "sin":
        return sin(a)
    if k == "cos":
        return cos(a)
    if k == "exp":
        # keep the argument bounded so values stay finite
        return exp(sin(a))
    b = random_expr(rng, n, depth - 1, smooth)
    return min_(a, b) if k == "min" else max_(a, b)


def random_box(rng: np.random.Generator, n: int, span: float = 4.0):
    c = rng.uniform(-span, span, n)
    w = rng.exponential(1.0, n) * rng.choice([1e-6, 1e-2, 1.0], n)
    return c - w, c + w


@st.composite
def expr_cases(draw, n: int = 2, smooth: bool = False):
    """Hypothesis strategy: (seed-derived expression, box lo, box hi, point)."""
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    e = random_expr(rng, n, 4, smooth)
    lo, hi = random_box(rng, n)
    t = np.array([draw(st.floats(0, 1)) for _ in range(n)])
    return e, lo, hi, lo + t * (hi - lo)


# -- mpmath oracle ---------------------------------------------------------------------

def mp_eval(e: Expr, x, p=()):
    op = e.op
    if op == "const":
        return mp.mpf(e.value)
    if op == "var":
        return mp.mpf(x[e.index]) if not isinstance(x[e.index], mp.mpf) else x[e.index]
    if op == "param":
        return mp.mpf(p[e.index])
    c = [mp_eval(ch, x, p) for ch in e.children]
    if op == "add":
        return c[0] + c[1]
    if op == "sub":
        return c[0] - c[1]
    if op == "mul":
        return c[0] * c[1]
    if op == "div":
        return c[0] / c[1]
    if op == "pow":
        return c[0] ** int(e.value)
    if op == "neg":
        return -c[0]
    if op == "sin":
        return mp.sin(c[0])
    if op == "cos":
        return mp.cos(c[0])
    if op == "exp":
        return mp.exp(c[0])
    if op == "min":
        return min(c)
    if op == "max":
        return max(c)
    raise ValueError(op)


# -- suites ------------------------------------------------------------------------------

def containment_violation(e: Expr, lo, hi, pt) -> bool:
    """True if the exact value at ``pt`` escapes the interval enclosure over the box."""
    try:
        v = eval_expr(e, list(pt))
    except (DivisionByZero, NonFinite, OverflowError, ValueError):
        return False
    ((ilo, ihi),) = Program([e]).ieval(list(lo), list(hi))
    return not (float(ilo) <= v <= float(ihi))


def containment_suite(n_cases: int = 1000, seed: int = 0) -> int:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_cases):
        n = int(rng.integers(1, 4))
        e = random_expr(rng, n, 4)
        lo, hi = random_box(rng, n)
        pts = [rng.uniform(lo, hi), lo, hi]
        bad += any(containment_violation(e, lo, hi, p) for p in pts)
    return bad


def gradient_error(e: Expr, x, i: int) -> float | None:
    """Relative error of the symbolic partial derivative against a
    high-precision central difference."""
    try:
        sym = eval_expr(diff(e, i), list(x))
    except (DivisionByZero, NonFinite, OverflowError):
        return None
    with mp.workdps(60):
        h = mp.mpf("1e-25")
        xp = [mp.mpf(v) for v in x]
        xm = list(xp)
        xp[i] += h
        xm[i] -= h
        try:
            fd = (mp_eval(e, xp) - mp_eval(e, xm)) / (2 * h)
        except ZeroDivisionError:
            return None
        fd = float(fd)
    if not math.isfinite(fd) or abs(fd) > 1e12:
        return None
    return abs(sym - fd) / max(1.0, abs(fd))


def gradient_suite(n_cases: int = 500, seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    worst, done = 0.0, 0
    while done < n_cases:
        n = int(rng.integers(1, 4))
        e = random_expr(rng, n, 4, smooth=True)
        x = rng.uniform(-2, 2, n)
        err = gradient_error(e, x, int(rng.integers(n)))
        if err is None:
            continue
        worst = max(worst, err)
        done += 1
    return worst


def random_query(rng: np.random.Generator):
    """Polynomial or trigonometric claim shifted near its sampled minimum, so
    both outcomes occur, optionally with a guard."""
    n = int(rng.integers(1, 4))
    e = random_expr(rng, n, 3, smooth=True)
    lo, hi = random_box(rng, n, 2.0)
    hi = np.maximum(hi, lo + 0.05)
    pts = rng.uniform(lo, hi, (2000, n))
    vals = np.broadcast_to(Program([e]).eval([pts[:, j] for j in range(n)])[0], (2000,))
    shift = float(np.min(vals)) - rng.choice([-0.05, 0.0, 0.05, 0.5]) * (1 + abs(float(np.min(vals))))
    claim = e - const(shift)
    guards = []
    if rng.random() < 0.3:
        j = int(rng.integers(n))
        guards = [var(j) - const(float(0.5 * (lo[j] + hi[j])))]
    from clbfgp.interval import Box
    return ForallQuery(BoxSet.box(Box(lo, hi)), claim, guards), n


def prover_suite(n_cases: int = 500, seed: int = 2, n_check: int = 10**6):
    """Returns ``(proved, contradicted, exact_refuted, bad_witnesses)``."""
    rng = np.random.default_rng(seed)
    proved = contradicted = exact = bad_wit = 0
    for _ in range(n_cases):
        q, n = random_query(rng)
        out = prove_forall(q, budget=20_000, min_width=1e-3)
        prog = Program([q.claim, *q.guards])
        if isinstance(out, Proved):
            proved += 1
            box = q.domain.outer
            pts = rng.uniform(box.lo, box.hi, (n_check, n))
            vals = prog.eval([pts[:, j] for j in range(n)])
            c = np.broadcast_to(vals[0], (n_check,))
            active = np.ones(n_check, dtype=bool)
            for g in vals[1:]:
                active &= np.broadcast_to(g, (n_check,)) <= 0
            tol = 1e-9 * (1.0 + np.abs(c))
            contradicted += bool(np.any(active & (c < -tol)))
        elif isinstance(out, Refuted) and out.exact:
            exact += 1
            w = list(out.witness)
            vals = [eval_expr(q.claim, w)] + [eval_expr(g, w) for g in q.guards]
            if not (vals[0] < 0 and all(g <= 0 for g in vals[1:])):
                bad_wit += 1
    return proved, contradicted, exact, bad_wit


def _mode_inputs(pf, modes, x):
    return [float(eval_expr(g, list(x))) for g in modes]


def flow_suite(name: str, n_cases: int = 100, seed: int = 3) -> tuple[int, int]:
    """True sampled-data flow versus the one-step reach box: ``(escapes, checked)``."""
    pf = config.load_problem(name)
    p = pf.problem
    rng = np.random.default_rng(seed)
    f = p.sys.rhs()
    if isinstance(p.modes, EvolvedModes):
        mode_sets = []
        for _ in range(8):
            k = rng.uniform(-15, 15, p.n)
            lin = sum((const(float(k[i])) * var(i) for i in range(1, p.n)), const(float(k[0])) * var(0))
            mode_sets.append(candidate_modes(p, Candidate(const(0.0), modes=[[lin]]))[0])
    else:
        mode_sets = [list(g) for g in p.modes.modes]
    escapes = checked = 0
    while checked < n_cases:
        x = rng.uniform(p.S.lo, p.S.hi)
        mode = mode_sets[int(rng.integers(len(mode_sets)))]
        u = _mode_inputs(pf, mode, x)
        if not p.sys.U.contains(np.array(u)):
            continue
        tau = float(rng.uniform(0, p.h))
        sol = solve_ivp(lambda t, y: f(y, u), (0.0, tau), x, method="DOP853",
                        rtol=1e-12, atol=1e-12, dense_output=True)
        ts = np.linspace(0, tau, 5)
        traj = sol.sol(ts).T if tau > 0 else x[None, :]
        if not all(p.sys.X.contains(y) for y in traj):
            continue  # the error constants only hold inside X
        box = reach_box(p.sys, mode, x, p.h, p.eps)
        checked += 1
        # tolerance covers the integrator's own error
        escapes += any(not box.contains(y, 1e-9 * (1 + np.abs(y)).max()) for y in traj)
    return escapes, checked


def grammar_suite(n_cases: int = 10_000, seed: int = 4) -> int:
    """Grow / mutate / crossover outputs that fail the conformance check."""
    rng = np.random.default_rng(seed)
    g = gr.table3_grammar(2, [0.25, -0.5])
    bad = 0
    pool = {s: [gr.grow(g, s, rng) for _ in range(20)] for s in ("V", "G")}
    for k in range(n_cases):
        start = "V" if k % 2 == 0 else "G"
        trees = pool[start]
        op = k % 3
        if op == 0:
            t = gr.grow(g, start, rng)
        elif op == 1:
            t = gr.mutate(g, trees[int(rng.integers(len(trees)))], rng)
        else:
            a, b = (trees[int(i)] for i in rng.integers(len(trees), size=2))
            t = gr.crossover(g, a, b, rng)[int(rng.integers(2))]
        try:
            gr.check_tree(g, t, start)
            gr.to_phenotype(g, t)
        except Exception:
            bad += 1
        trees[int(rng.integers(len(trees)))] = t
    return bad


def sphere_run(n: int, seed: int = 0, iters: int = 2000):
    from clbfgp.cmaes import optimize
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-3, 3, n)
    return optimize(lambda x: -float(np.sum(x * x)), x0, 1.0, iters, rng,
                    target=-1e-8)
