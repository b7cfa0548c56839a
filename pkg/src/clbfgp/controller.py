"""Switching laws, certificate side conditions and closed-loop simulation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import Expr, const, fold, min_, to_python, var
from .fitness import (RSWS, Candidate, SynthesisProblem, build_conditions, candidate_modes,
                      decrease_claim, vdot)
from .program import Program
from .reach import reach_map, shift_reach
from .verify import (BoxSet, BudgetExhausted, ForallQuery, Proved, VerifierOutcome,
                     prove_forall)

FULL, RELAXED = "full", "relaxed"


class LeftDomain(RuntimeError):
    pass


@dataclass
class SwitchedController:
    """Modes ``g_q``, the certificate ``V`` and a switching law.

    ``modes`` are the applied (already saturated, if applicable) mode
    vectors.  The relaxed law needs one ``alpha`` expression per mode.
    """

    p: SynthesisProblem
    V: Expr
    modes: list[list[Expr]]
    law: str = FULL
    alpha: list[Expr] | None = None

    def __post_init__(self):
        if self.law not in (FULL, RELAXED):
            raise ValueError(f"unknown law {self.law!r}")
        if self.law == RELAXED and (self.alpha is None or len(self.alpha) != len(self.modes)):
            raise ValueError("relaxed law needs one alpha per mode")
        n = self.p.n
        self._vdot_xz = [vdot(self.p, self.V, g, [var(n + i) for i in range(n)]) for g in self.modes]
        self._prog_xz = Program(self._vdot_xz)
        self._prog_reach = Program([r for g in self.modes for r in reach_map(self.p.sys, g)])
        x = [var(i) for i in range(n)]
        self._vdot_xx = [vdot(self.p, self.V, g, x) for g in self.modes]
        scores = self._vdot_xx if self.alpha is None else \
            [fold(a + b) for a, b in zip(self._vdot_xx, self.alpha)]
        self._score = to_python(scores, n)
        self._V = to_python([self.V], n)
        self._u = to_python([e for g in self.modes for e in g], n)

    @classmethod
    def from_candidate(cls, p: SynthesisProblem, cand: Candidate, law: str = FULL,
                       alpha: Sequence[Expr] | None = None) -> SwitchedController:
        from .expr import bind_params
        V = fold(bind_params(cand.V, cand.params)) if cand.params.size else cand.V
        modes = candidate_modes(p, cand)
        if cand.params.size:
            modes = [[fold(bind_params(e, cand.params)) for e in g] for g in modes]
        return cls(p, V, modes, law, list(alpha) if alpha is not None else None)

    def V_at(self, x) -> float:
        return float(self._V(list(x))[0])

    def inputs(self, q: int, x) -> np.ndarray:
        m = self.p.sys.m
        return np.asarray(self._u(list(x))[q * m:(q + 1) * m], dtype=float)

    def vdot_bounds(self, x) -> np.ndarray:
        """Interval upper bound of ``Vdot_q(x, z)`` over ``z`` in the reach box, per mode."""
        n, nq = self.p.n, len(self.modes)
        x = [float(v) for v in x]
        eps = self.p.eps
        boxes = self._prog_reach.ieval(x + [0.0] + list(-eps), x + [self.p.h] + list(eps))
        # one batch row per mode: x fixed, z ranging over that mode's reach box
        zlo = [np.array([float(boxes[q * n + i][0]) for q in range(nq)]) for i in range(n)]
        zhi = [np.array([float(boxes[q * n + i][1]) for q in range(nq)]) for i in range(n)]
        xs = [np.full(nq, v) for v in x]
        res = self._prog_xz.ieval(xs + zlo, xs + zhi)
        return np.array([float(res[q][1][q]) for q in range(nq)])

    def select(self, x) -> int:
        if self.law == FULL:
            return mode_select_full(self, x)
        return mode_select_relaxed(self, x)


def mode_select_full(c: SwitchedController, x) -> int:
    """Mode with the smallest guaranteed worst-case decrease rate; lowest index on ties."""
    if len(c.modes) == 1:
        return 0
    return int(np.argmin(c.vdot_bounds(x)))


def mode_select_relaxed(c: SwitchedController, x) -> int:
    """``argmin_q Vdot_q(x, x) + alpha_q(x)``; lowest index on ties."""
    if len(c.modes) == 1:
        return 0
    return int(np.argmin(np.asarray(c._score(list(x)), dtype=float)))


# -- alpha condition ---------------------------------------------------------------------

def alpha_domain(p: SynthesisProblem, V: Expr, beta: float | None = None) -> tuple[BoxSet, list[Expr]]:
    """``A \\ G`` (or ``A \\ int B`` when ``beta`` is given) as a set plus guards."""
    if beta is None:
        return BoxSet.difference(p.S, p.G), [V]
    return BoxSet.box(p.S), [V, fold(const(beta) - V)]


def verify_alpha(p: SynthesisProblem, c: SwitchedController, domain: BoxSet | None = None,
                 guards: Sequence[Expr] | None = None, budget: int = 2_000_000,
                 min_width: float = 1e-4) -> list[VerifierOutcome]:
    """Check that whenever the relaxed law picks mode q, mode q decreases V by gamma.

    Per mode ``q`` this proves, for all ``x`` in the domain where the guards
    hold and ``q`` attains the relaxed minimum, and for all ``(tau, e)`` in E,
    that ``-gamma - Vdot_q(x, r_q(x, tau, e)) >= 0``.  This is the
    contrapositive of the alpha condition.
    """
    if c.alpha is None:
        raise ValueError("controller has no alpha functions")
    if domain is None:
        domain, guards = alpha_domain(p, c.V)
    guards = list(guards or [])
    n = p.n
    scores = [fold(a + b) for a, b in zip(c._vdot_xx, c.alpha)]
    best = scores[0] if len(scores) == 1 else min_(*scores)
    E = p.E_box(1)
    outs = []
    for q, g in enumerate(c.modes):
        r = shift_reach(reach_map(p.sys, g), n, n)
        claim = fold(const(-p.gamma) - vdot(p, c.V, g, r))
        picked = fold(scores[q] - best)
        query = ForallQuery(domain.product(E), claim, guards + [picked], p.delta,
                            name=f"alpha{q + 1}", split_first=tuple(range(n)))
        outs.append(prove_forall(query, budget=budget, min_width=min_width))
    return outs


# -- beta search ----------------------------------------------------------------------------

@dataclass
class BetaCheck:
    beta: float
    boundary: VerifierOutcome
    decrease: VerifierOutcome

    @property
    def proved(self) -> bool:
        return isinstance(self.boundary, Proved) and isinstance(self.decrease, Proved)


def check_beta(p: SynthesisProblem, cand: Candidate, beta: float, budget: int = 2_000_000,
               min_width: float = 1e-4) -> BetaCheck:
    """Prove the boundary condition (V > beta on the boundary of G) and the
    decrease condition on G outside the interior of the beta sublevel set."""
    q = p.with_beta(beta, RSWS)
    conds = build_conditions(q, cand)
    params = list(cand.params)
    b = prove_forall(conds[4].query(params, p.delta), budget=budget, min_width=min_width)
    d = prove_forall(conds[5].query(params, p.delta), budget=budget, min_width=min_width)
    return BetaCheck(beta, b, d)


@dataclass
class BetaSearch:
    beta: float | None
    trials: list[BetaCheck] = field(default_factory=list)
    reason: str = ""


def find_beta(p: SynthesisProblem, cand: Candidate, tol: float | None = None,
              max_iter: int = 40, n_samples: int = 4000, seed: int = 0,
              budget: int = 2_000_000) -> BetaSearch:
    """Largest certifiable beta, or ``None``.

    The boundary condition holds exactly for beta below the minimum of V on
    the boundary of G, while the decrease condition only gets harder as beta
    decreases.  So the search bisects for the largest beta whose boundary
    condition is proved and then checks the decrease condition there.
    """
    rng = np.random.default_rng(seed)
    prog = Program([cand.V])
    params = list(cand.params)

    def values(pts):
        return np.broadcast_to(prog.eval([pts[:, i] for i in range(p.n)], params)[0], (len(pts),))

    lo = float(np.min(values(BoxSet.box(p.G).sample(n_samples, rng))))
    hi = float(np.max(values(BoxSet.boundary(p.G).sample(n_samples, rng))))
    tol = tol if tol is not None else 1e-3 * max(hi - lo, 1e-12)
    q = p.with_beta(lo, RSWS)
    cond4 = build_conditions(q, cand)[4]
    search = BetaSearch(None)

    def boundary_ok(beta):
        c4 = ForallQuery(cond4.domain, fold(cond4.phi - (beta - lo)), [], p.delta, params)
        return prove_forall(c4, budget=budget)

    if not isinstance(boundary_ok(lo), Proved):
        search.reason = "boundary condition fails even at the smallest sampled value"
        return search
    a, b = lo, hi
    for _ in range(max_iter):
        if b - a <= tol:
            break
        mid = 0.5 * (a + b)
        if isinstance(boundary_ok(mid), Proved):
            a = mid
        else:
            b = mid
    check = check_beta(p, cand, a, budget)
    search.trials.append(check)
    if check.proved:
        search.beta = a
    else:
        search.reason = f"decrease condition fails at the largest admissible beta {a:.6g}"
    return search


# -- simulation ----------------------------------------------------------------------------

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    modes: np.ndarray
    inputs: np.ndarray
    h: float
    left_domain: bool = False

    def to_csv(self, state_names: Sequence[str] | None = None) -> str:
        n = self.states.shape[1]
        names = list(state_names or [f"x{i + 1}" for i in range(n)])
        m = self.inputs.shape[1] if self.inputs.ndim == 2 else 1
        unames = ["u"] if m == 1 else [f"u{j + 1}" for j in range(m)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + names + ["q"] + unames)
        for k in range(len(self.times)):
            q = self.modes[k] if k < len(self.modes) else ""
            u = list(self.inputs[k]) if k < len(self.inputs) else [""] * m
            w.writerow([f"{self.times[k]:.10g}"] + [f"{v:.12g}" for v in self.states[k]]
                       + [q] + [v if v == "" else f"{v:.12g}" for v in u])
        return buf.getvalue()


def simulate(p: SynthesisProblem, c: SwitchedController, x0, t_end: float = 10.0,
             substeps: int = 10) -> Trajectory:
    """Sampled-data closed loop: pick a mode at each sampling instant, hold the
    input and integrate with classical RK4 over ``substeps`` sub-intervals."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    f = p.sys.rhs()
    X = p.sys.X
    x = np.asarray(x0, dtype=float).copy()
    steps = int(round(t_end / p.h))
    dt = p.h / substeps
    times, states, modes, inputs = [0.0], [x.copy()], [], []
    left = False
    for k in range(steps):
        q = c.select(x)
        u = list(c.inputs(q, x))
        modes.append(q)
        inputs.append(u)
        for _ in range(substeps):
            k1 = np.asarray(f(x, u))
            k2 = np.asarray(f(x + 0.5 * dt * k1, u))
            k3 = np.asarray(f(x + 0.5 * dt * k2, u))
            k4 = np.asarray(f(x + dt * k3, u))
            x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        times.append((k + 1) * p.h)
        states.append(x.copy())
        if not X.contains(x):
            left = True
            break
    m = p.sys.m
    return Trajectory(np.array(times), np.array(states), np.array(modes, dtype=int),
                      np.array(inputs, dtype=float).reshape(-1, m), p.h, left)


@dataclass
class SpecResult:
    rws: bool
    reach_time: float | None
    rsws: bool
    settle_time: float | None = None


def check_spec(tr: Trajectory, p: SynthesisProblem) -> SpecResult:
    """Reach-while-stay and reach-and-stay verdicts at the sampling instants."""
    if len(tr.times) == 0:
        raise ValueError("empty trajectory")
    in_S = np.array([p.S.contains(x) for x in tr.states])
    in_G = np.array([p.G.contains(x) for x in tr.states])
    hits = np.nonzero(in_G)[0]
    if len(hits) == 0:
        return SpecResult(False, None, False)
    k = int(hits[0])
    rws = bool(np.all(in_S[:k + 1]))
    if not rws:
        return SpecResult(False, None, False)
    settle = None
    if in_G[-1] and not tr.left_domain:
        outside = np.nonzero(~in_G)[0]
        j = 0 if len(outside) == 0 else int(outside[-1]) + 1
        settle = float(tr.times[j])
    return SpecResult(True, float(tr.times[k]), settle is not None, settle)


def decrease_violations(tr: Trajectory, p: SynthesisProblem, c: SwitchedController,
                        tol: float = 1e-3) -> list[int]:
    """Sampling steps ``k`` with ``x_k`` in A minus G where
    ``V(x_{k+1}) - V(x_k) > -gamma*h + tol``."""
    v = np.array([c.V_at(x) for x in tr.states])
    bad = []
    for k in range(len(tr.states) - 1):
        x = tr.states[k]
        if v[k] <= 0 and p.S.contains(x) and not p.G.contains(x):
            if v[k + 1] - v[k] > -p.gamma * p.h + tol:
                bad.append(k)
    return bad
