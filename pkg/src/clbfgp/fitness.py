"""Sampled and certified fitness of candidate CLBF / mode pairs.

Condition indices follow the usual numbering:

1. ``-V >= 0`` on I
2. ``V - c >= 0`` on the boundary of S
3. ``-gamma - min_q Vdot_q(x, r_q(x, tau_q, e_q)) >= 0`` on (S minus int G) x E^Q,
   guarded by ``V(x) <= 0``
4. ``V - beta - c >= 0`` on the boundary of G (reach-and-stay only)
5. as 3 on G x E^Q, guarded by ``V(x) >= beta`` (reach-and-stay only)
6. ``V(x) - V(x_c) >= 0`` on S minus int G (sampled guidance only)

Extended points are laid out as ``(x, tau_1, e_1, ..., tau_Q, e_Q)``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import (Expr, NonFinite, const, diff, fold, has_minmax, max_, min_, param,
                   substitute, var)
from .interval import Box
from .program import Program
from .reach import SystemModel, reach_map, shift_reach
from .verify import (DEFAULT_SLACK, BoxSet, BudgetExhausted, ForallQuery, Proved, Refuted,
                     check_nested, prove_forall)

RWS, RSWS = "rws", "rsws"


class NonDifferentiableCandidate(ValueError):
    pass


# -- problem --------------------------------------------------------------------

@dataclass(frozen=True)
class FixedModes:
    modes: tuple[tuple[Expr, ...], ...]

    def __len__(self):
        return len(self.modes)


@dataclass(frozen=True)
class EvolvedModes:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    max_modes: int = 3


@dataclass
class SynthesisProblem:
    sys: SystemModel
    S: Box
    I: Box
    G: Box
    h: float
    eps: np.ndarray
    modes: FixedModes | EvolvedModes
    gamma: float = 0.1
    c: float = DEFAULT_SLACK
    delta: float = DEFAULT_SLACK
    spec: str = RWS
    beta: float | None = None

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        if self.gamma <= 0 or self.h <= 0:
            raise ValueError("gamma and h must be positive")
        if self.c < 0 or self.delta < 0:
            raise ValueError("slacks must be non-negative")
        if self.spec not in (RWS, RSWS):
            raise ValueError(f"unknown spec {self.spec!r}")
        if self.eps.shape != (self.sys.n,) or np.any(self.eps < 0):
            raise ValueError("eps must hold one non-negative entry per state")
        if not self.sys.X.contains_box(self.S):
            raise ValueError("S must lie inside X")
        check_nested(self.I, self.S, "I")
        check_nested(self.G, self.S, "G")
        if isinstance(self.modes, FixedModes):
            if len(self.modes) < 1:
                raise ValueError("need at least one mode")
            for g in self.modes.modes:
                if len(g) != self.sys.m:
                    raise ValueError("mode dimension does not match the input dimension")
        elif len(self.modes.lo) != self.sys.m or len(self.modes.hi) != self.sys.m:
            raise ValueError("saturation bounds do not match the input dimension")

    @property
    def n(self) -> int:
        return self.sys.n

    @property
    def x_c(self) -> np.ndarray:
        return self.G.center

    @property
    def max_modes(self) -> int:
        if isinstance(self.modes, FixedModes):
            return len(self.modes)
        return self.modes.max_modes

    def n_conditions(self) -> int:
        return 3 if self.spec == RWS else 5

    def ext_dim(self, q: int) -> int:
        return self.n + q * (1 + self.n)

    def E_box(self, q: int) -> Box:
        """``([0, h] x prod [-eps_i, eps_i])^q``."""
        lo = np.tile(np.concatenate([[0.0], -self.eps]), q)
        hi = np.tile(np.concatenate([[self.h], self.eps]), q)
        return Box(lo, hi)

    def with_beta(self, beta: float | None, spec: str | None = None, G: Box | None = None):
        from dataclasses import replace
        return replace(self, beta=beta, spec=spec or self.spec, G=G if G is not None else self.G)


def saturate(mode: Sequence[Expr], lo: Sequence[float], hi: Sequence[float]) -> list[Expr]:
    return [max_(const(float(l)), min_(const(float(u)), g)) for g, l, u in zip(mode, lo, hi)]


@dataclass
class Candidate:
    """A CLBF with free parameters and (for evolved modes) its mode set.

    ``V`` and ``modes`` may use ``param(k)`` leaves; ``params`` holds their
    values.  ``modes`` are the raw (unsaturated) mode expressions or ``None``
    for the problem's fixed modes.
    """

    V: Expr
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    modes: list[list[Expr]] | None = None

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float).reshape(-1)


def candidate_modes(p: SynthesisProblem, cand: Candidate) -> list[list[Expr]]:
    if isinstance(p.modes, FixedModes):
        if cand.modes is not None:
            raise ValueError("problem has fixed modes; candidate must not carry any")
        return [list(g) for g in p.modes.modes]
    if not cand.modes:
        raise ValueError("evolved-mode problem needs candidate modes")
    if len(cand.modes) > p.modes.max_modes:
        raise ValueError("too many modes")
    return [saturate(g, p.modes.lo, p.modes.hi) for g in cand.modes]


# -- conditions ---------------------------------------------------------------------

@dataclass
class Condition:
    index: int
    domain: BoxSet
    phi: Expr
    guards: list[Expr]
    verifiable: bool = True
    split_first: tuple[int, ...] | None = None

    def query(self, params=(), slack: float = DEFAULT_SLACK) -> ForallQuery:
        return ForallQuery(self.domain, self.phi, self.guards, slack, list(params),
                           f"phi{self.index}", self.split_first)


@dataclass
class ConditionSet:
    conditions: dict[int, Condition]
    n_modes: int
    dim: int

    def __getitem__(self, i: int) -> Condition:
        return self.conditions[i]

    def verifiable(self) -> list[Condition]:
        return [c for k, c in sorted(self.conditions.items()) if c.verifiable]


def vdot(p: SynthesisProblem, V: Expr, mode: Sequence[Expr], z: Sequence[Expr]) -> Expr:
    """``grad V(z) . f(z, g(x))``."""
    n = p.n
    if has_minmax(V):
        raise NonDifferentiableCandidate("V contains min/max")
    grad = [substitute(diff(V, i), dict(enumerate(z))) for i in range(n)]
    fz = p.sys.closed_loop(mode, at=z)
    acc = grad[0] * fz[0]
    for i in range(1, n):
        acc = acc + grad[i] * fz[i]
    return fold(acc)


def decrease_claim(p: SynthesisProblem, V: Expr, modes: Sequence[Sequence[Expr]]) -> Expr:
    """``-gamma - min_q Vdot_q(x, r_q(x, tau_q, e_q))`` over the extended layout."""
    n = p.n
    terms = []
    for q, g in enumerate(modes):
        r = shift_reach(reach_map(p.sys, g), n, n + q * (1 + n))
        terms.append(vdot(p, V, g, r))
    inner = terms[0] if len(terms) == 1 else min_(*terms)
    return fold(const(-p.gamma) - inner)


def build_conditions(p: SynthesisProblem, cand: Candidate) -> ConditionSet:
    V = cand.V
    if has_minmax(V):
        raise NonDifferentiableCandidate("V contains min/max")
    modes = candidate_modes(p, cand)
    q = len(modes)
    ext = p.E_box(q)
    claim = decrease_claim(p, V, modes)
    xdims = tuple(range(p.n))
    conds = {
        1: Condition(1, BoxSet.box(p.I), fold(-V), []),
        2: Condition(2, BoxSet.boundary(p.S), fold(V - p.c), []),
        3: Condition(3, BoxSet.difference(p.S, p.G).product(ext), claim, [V], True, xdims),
    }
    if p.spec == RSWS:
        if p.beta is None:
            raise ValueError("reach-and-stay needs beta")
        conds[4] = Condition(4, BoxSet.boundary(p.G), fold(V - p.beta - p.c), [])
        conds[5] = Condition(5, BoxSet.box(p.G).product(ext), claim, [fold(const(p.beta) - V)],
                             True, xdims)
    xc = [const(float(v)) for v in p.x_c]
    conds[6] = Condition(6, BoxSet.difference(p.S, p.G), fold(V - substitute(V, xc)), [],
                         verifiable=False)
    return ConditionSet(conds, q, p.ext_dim(q))


# -- formulas --------------------------------------------------------------------

def error_measure(phi_values) -> float:
    """Euclidean norm of the negative parts of ``phi`` over the samples."""
    v = np.asarray(phi_values, dtype=float)
    if v.size == 0:
        raise ValueError("no samples")
    if not np.all(np.isfinite(v)):
        raise NonFinite("condition value is not finite at some sample")
    return float(np.linalg.norm(np.minimum(v, 0.0)))


def _errors(values: np.ndarray) -> np.ndarray:
    """Row-wise error measure; rows with non-finite entries get ``inf``."""
    bad = ~np.isfinite(values)
    v = np.where(bad, 0.0, np.minimum(values, 0.0))
    e = np.sqrt(np.sum(v * v, axis=-1))
    return np.where(bad.any(axis=-1), np.inf, e)


def sample_fitness(e):
    """``1 / (1 + e)``."""
    if np.any(np.asarray(e) < 0):
        raise ValueError("error must be non-negative")
    return 1.0 / (1.0 + np.asarray(e, dtype=float)) if np.ndim(e) else 1.0 / (1.0 + float(e))


def weights(f_samp: Sequence[float]) -> list[int]:
    """``w_1 = 1`` and ``w_i = floor(w_{i-1} f_{i-1})``."""
    w = [1]
    for f in list(f_samp)[:-1]:
        w.append(int(math.floor(w[-1] * f)))
    return w[: len(f_samp)]


def _weights_batch(F: np.ndarray) -> np.ndarray:
    w = np.ones_like(F)
    for i in range(1, F.shape[1]):
        w[:, i] = np.floor(w[:, i - 1] * F[:, i - 1])
    return w


def combine(f_samp, f_smt, f_center: float = 1.0) -> float:
    """Total fitness from per-condition values.

    The center guidance term enters as ``w_3 (f_center - 1)``, a penalty that
    vanishes when the guidance condition holds, so the attainable maximum is
    unchanged.
    """
    w = weights(f_samp)
    total = sum(wi * fi for wi, fi in zip(w, f_samp)) + sum(f_smt)
    return float(total + w[2] * (f_center - 1.0))


# -- sample banks -------------------------------------------------------------------

class SampleBank:
    """Per-condition base samples plus a FIFO of counterexamples.

    Decrease-condition samples (3 and 5) are stored over the extended space
    for the largest mode count; candidates with fewer modes use a prefix.
    """

    def __init__(self, p: SynthesisProblem, n_samples: int = 100, cap: int = 300,
                 rng: np.random.Generator | None = None):
        self.p = p
        self.cap = cap
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.base: dict[int, np.ndarray] = {}
        self.cex: dict[int, deque] = {}
        qmax = p.max_modes
        doms = {1: BoxSet.box(p.I), 2: BoxSet.boundary(p.S),
                3: BoxSet.difference(p.S, p.G).product(p.E_box(qmax))}
        if p.spec == RSWS:
            doms[4] = BoxSet.boundary(p.G)
            doms[5] = BoxSet.box(p.G).product(p.E_box(qmax))
        self.domains = doms
        for i, d in doms.items():
            self.base[i] = sample_domain(d, n_samples, self.rng)
            self.cex[i] = deque(maxlen=cap)

    def points(self, i: int, dim: int | None = None) -> np.ndarray:
        pts = self.base[i]
        if self.cex[i]:
            pts = np.vstack([pts, np.array(self.cex[i])])
        return pts if dim is None else pts[:, :dim]

    def add(self, i: int, point) -> None:
        point = np.asarray(point, dtype=float).reshape(-1)
        full = self.domains[i].dim
        if point.size < full:
            # pad missing mode blocks with fresh samples of E
            tail = self.domains[i].sample(1, self.rng)[0, point.size:]
            point = np.concatenate([point, tail])
        self.cex[i].append(point[:full])

    def __len__(self) -> int:
        return sum(len(d) for d in self.cex.values())

    def snapshot(self) -> dict[int, np.ndarray]:
        return {i: self.points(i) for i in self.base}


def sample_domain(C: BoxSet, n: int, rng: np.random.Generator) -> np.ndarray:
    return C.sample(n, rng)


# -- evaluation -----------------------------------------------------------------------

@dataclass
class FitnessBreakdown:
    errors: list[float]
    f_samp: list[float]
    weights: list[int]
    f_smt: list[float]
    center_error: float
    total: float
    outcomes: dict[int, object] = field(default_factory=dict)
    budget_flags: list[int] = field(default_factory=list)
    counterexamples: list[tuple[int, np.ndarray]] = field(default_factory=list)
    shift: float = 0.0

    @property
    def verified(self) -> bool:
        return bool(self.f_smt) and all(v == 1.0 for v in self.f_smt)

    @property
    def f_center(self) -> float:
        return 1.0 / (1.0 + self.center_error)


class Evaluator:
    """Compiled sample evaluation of one candidate structure.

    Parameter vectors may be batched: ``scores`` takes an array of shape
    ``(P, k)`` and evaluates every condition for all ``P`` rows at once.
    The bias shift is applied per row before the conditions are evaluated.
    """

    def __init__(self, p: SynthesisProblem, cand: Candidate, bias: bool = True):
        self.p = p
        self.cand = cand
        self.bias = bias
        self.k = cand.params.size
        shift = param(self.k)
        self.Vb = fold(cand.V - shift)
        bc = Candidate(self.Vb, np.zeros(self.k + 1), cand.modes)
        self.conds = build_conditions(p, bc)
        self.prog_V = Program([cand.V])
        self.prog_dec = Program([self.conds[3].phi])
        self.dim = self.conds.dim

    def _params(self, P: np.ndarray, shift: np.ndarray) -> list:
        cols = [P[:, j:j + 1] for j in range(self.k)]
        return cols + [shift[:, None]]

    def _V(self, P, pts, shift):
        (v,) = self.prog_V.eval([pts[:, i] for i in range(self.p.n)],
                                [P[:, j:j + 1] for j in range(self.k)])
        return np.broadcast_to(v, (P.shape[0], pts.shape[0])) - shift[:, None]

    def shift_for(self, P: np.ndarray, bank: SampleBank) -> np.ndarray:
        if not self.bias:
            return np.zeros(P.shape[0])
        v = self._V(P, bank.points(1), np.zeros(P.shape[0]))
        with np.errstate(invalid="ignore"):
            m = np.max(v, axis=1)
        return np.where(np.isfinite(m), np.maximum(m, 0.0), 0.0)

    def scores(self, P, bank: SampleBank):
        """Per-row errors, shape ``(P, n_conditions)``, center errors and shifts."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[1] != self.k:
            P = P.reshape(-1, self.k)
        p = self.p
        npop = P.shape[0]
        shift = self.shift_for(P, bank)
        errs = np.zeros((npop, p.n_conditions()))
        errs[:, 0] = _errors(-self._V(P, bank.points(1), shift))
        errs[:, 1] = _errors(self._V(P, bank.points(2), shift) - p.c)
        ext3 = bank.points(3, self.dim)
        errs[:, 2] = _errors(self._decrease(P, ext3, shift, self._V(P, ext3, shift) <= 0))
        if p.spec == RSWS:
            errs[:, 3] = _errors(self._V(P, bank.points(4), shift) - p.beta - p.c)
            ext5 = bank.points(5, self.dim)
            errs[:, 4] = _errors(self._decrease(P, ext5, shift, self._V(P, ext5, shift) >= p.beta))
        xs = bank.points(3)[:, :p.n]
        vc = self._V(P, p.x_c[None, :], shift)
        center = _errors(self._V(P, xs, shift) - vc)
        return errs, center, shift

    def _decrease(self, P, pts, shift, active):
        (v,) = self.prog_dec.eval([pts[:, i] for i in range(pts.shape[1])],
                                  self._params(P, shift))
        v = np.broadcast_to(v, active.shape)
        # the membership factor zeroes the condition outside its region
        return np.where(active, v, 0.0)

    def sample_totals(self, P, bank: SampleBank) -> np.ndarray:
        """Sum of weighted sample fitnesses plus the center term, per row."""
        errs, center, _ = self.scores(P, bank)
        F = 1.0 / (1.0 + errs)
        W = _weights_batch(F)
        return np.sum(W * F, axis=1) + W[:, 2] * (1.0 / (1.0 + center) - 1.0)


@dataclass
class ProverConfig:
    budget: int = 200_000
    min_width: float = 1e-4
    batch: int = 512
    presample: int = 2000
    seed: int = 0


def total_fitness(p: SynthesisProblem, cand: Candidate, bank: SampleBank,
                  prover: ProverConfig | None = None, record: bool = False,
                  evaluator: Evaluator | None = None) -> FitnessBreakdown:
    """Full fitness: weighted sample terms, then certified terms if all samples pass.

    Counterexamples are collected in the breakdown and, with ``record``,
    appended to ``bank`` immediately.
    """
    prover = prover or ProverConfig()
    ev = evaluator or Evaluator(p, cand)
    errs, center, shift = ev.scores(cand.params[None, :], bank)
    errs, center, shift = errs[0], float(center[0]), float(shift[0])
    f_samp = [float(1.0 / (1.0 + e)) for e in errs]
    w = weights(f_samp)
    ncond = p.n_conditions()
    f_smt = [0.0] * ncond
    bd = FitnessBreakdown([float(e) for e in errs], f_samp, w, f_smt, center, 0.0, shift=shift)
    if all(f == 1.0 for f in f_samp):
        params = list(cand.params) + [shift]
        for cond in ev.conds.verifiable():
            out = prove_forall(
                cond.query(params, p.delta), budget=prover.budget, min_width=prover.min_width, batch=prover.batch,
                presample=prover.presample, seed=prover.seed)
            bd.outcomes[cond.index] = out
            if isinstance(out, Proved):
                f_smt[cond.index - 1] = 1.0
            elif isinstance(out, Refuted):
                bd.counterexamples.append((cond.index, np.asarray(out.witness, dtype=float)))
            elif isinstance(out, BudgetExhausted):
                bd.budget_flags.append(cond.index)
                if out.worst_box is not None:
                    bd.counterexamples.append((cond.index, out.worst_box.center))
    bd.total = combine(f_samp, f_smt, 1.0 / (1.0 + center))
    if record:
        for i, pt in bd.counterexamples:
            bank.add(i, pt)
    return bd


def bias(V: Expr, I_samples: np.ndarray, params: Sequence[float] = ()) -> Expr:
    """``V - max(max_{I_samp} V, 0)``."""
    (v,) = Program([V]).eval([I_samples[:, i] for i in range(I_samples.shape[1])], list(params))
    m = float(np.max(v))
    if m <= 0:
        return V
    return fold(V - m)


def center_condition(p: SynthesisProblem, V: Expr) -> Condition:
    """The sampled guidance condition ``V(x) >= V(x_c)`` on S minus int G."""
    xc = [const(float(v)) for v in p.x_c]
    return Condition(6, BoxSet.difference(p.S, p.G), fold(V - substitute(V, xc)), [], False)
