"""Interval branch-and-prune prover.

Proves statements of the form::

    for all s in D:  (g_1(s) <= 0 and ... and g_k(s) <= 0)  =>  claim(s) >= 0

over unions of boxes ``D``.  Boxes are discarded when the claim's interval
enclosure is non-negative or some guard is provably positive; otherwise the
box center is probed for a violation and the box is bisected.  A ``Proved``
answer rests only on interval containment and is therefore sound.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .expr import Expr, max_, min_, var, const, render
from .interval import Box
from .program import Program

DEFAULT_BUDGET = 2_000_000
DEFAULT_MIN_WIDTH = 1e-4
DEFAULT_SLACK = 1e-3


# -- sets ---------------------------------------------------------------------

@dataclass(frozen=True)
class BoxSet:
    """A box, a box boundary, or a box minus the interior of an inner box.

    ``extra`` appends further (full-box) dimensions, which is how the
    extended state space of the decrease conditions is built.
    """

    kind: str
    outer: Box
    inner: Box | None = None
    extra: Box | None = None

    def __post_init__(self):
        if self.kind not in ("box", "boundary", "difference"):
            raise ValueError(f"unknown BoxSet kind {self.kind!r}")
        if self.kind == "difference":
            if self.inner is None or self.inner.dim != self.outer.dim:
                raise ValueError("difference needs an inner box of the same dimension")

    @classmethod
    def box(cls, b: Box) -> BoxSet:
        return cls("box", b)

    @classmethod
    def boundary(cls, b: Box) -> BoxSet:
        return cls("boundary", b)

    @classmethod
    def difference(cls, outer: Box, inner: Box) -> BoxSet:
        return cls("difference", outer, inner)

    def product(self, extra: Box) -> BoxSet:
        ext = extra if self.extra is None else self.extra.product(extra)
        return BoxSet(self.kind, self.outer, self.inner, ext)

    @property
    def base_dim(self) -> int:
        return self.outer.dim

    @property
    def dim(self) -> int:
        return self.outer.dim + (0 if self.extra is None else self.extra.dim)

    def base_pieces(self) -> list[Box]:
        """Boxes over the base dimensions whose union is the set."""
        o = self.outer
        n = o.dim
        if self.kind == "box":
            return [o]
        if self.kind == "boundary":
            faces = []
            for i in range(n):
                for side in (o.lo[i], o.hi[i]):
                    lo, hi = o.lo.copy(), o.hi.copy()
                    lo[i] = hi[i] = side
                    faces.append(Box(lo, hi))
                    if o.lo[i] == o.hi[i]:
                        break
            return faces
        g = self.inner
        slabs = []
        for i in range(n):
            if g.lo[i] > o.lo[i]:
                lo, hi = o.lo.copy(), o.hi.copy()
                hi[i] = min(g.lo[i], o.hi[i])
                slabs.append(Box(lo, hi))
            if g.hi[i] < o.hi[i]:
                lo, hi = o.lo.copy(), o.hi.copy()
                lo[i] = max(g.hi[i], o.lo[i])
                slabs.append(Box(lo, hi))
        return slabs

    def pieces(self) -> list[Box]:
        base = self.base_pieces()
        if self.extra is None:
            return base
        return [b.product(self.extra) for b in base]

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        n = self.base_dim
        if self.extra is not None and not self.extra.contains(x[n:], tol):
            return False
        xb = x[:n]
        o = self.outer
        if not o.contains(xb, tol):
            return False
        if self.kind == "box":
            return True
        if self.kind == "boundary":
            return bool(np.any(np.abs(xb - o.lo) <= tol) or np.any(np.abs(xb - o.hi) <= tol))
        g = self.inner
        return not bool(np.all(xb > g.lo + tol) and np.all(xb < g.hi - tol))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform samples, shape ``(n, dim)``.

        Boundaries are sampled face by face in proportion to face measure;
        differences by rejection from the outer box.
        """
        if n < 1:
            raise ValueError("need n >= 1")
        d = self.base_dim
        o = self.outer
        if self.kind == "box":
            pts = rng.uniform(o.lo, o.hi, size=(n, d))
        elif self.kind == "boundary":
            faces = self.base_pieces()
            w = np.array([_face_measure(f) for f in faces])
            if w.sum() <= 0:
                w = np.ones(len(faces))
            which = rng.choice(len(faces), size=n, p=w / w.sum())
            los = np.array([f.lo for f in faces])[which]
            his = np.array([f.hi for f in faces])[which]
            pts = los + (his - los) * rng.random((n, d))
        else:
            g = self.inner
            if np.all(g.lo <= o.lo) and np.all(g.hi >= o.hi):
                raise DegenerateDomain("difference is contained in the inner box boundary")
            chunks, have = [], 0
            for _ in range(1000):
                cand = rng.uniform(o.lo, o.hi, size=(max(2 * n, 64), d))
                inside = np.all((cand > g.lo) & (cand < g.hi), axis=1)
                cand = cand[~inside]
                chunks.append(cand)
                have += len(cand)
                if have >= n:
                    break
            else:
                raise DegenerateDomain("rejection sampling failed")
            pts = np.concatenate(chunks)[:n]
        if self.extra is not None:
            e = self.extra
            pts = np.hstack([pts, rng.uniform(e.lo, e.hi, size=(n, e.dim))])
        return pts


class DegenerateDomain(ValueError):
    pass


def _face_measure(face: Box) -> float:
    w = face.width
    nz = w[w > 0]
    return float(np.prod(nz)) if nz.size else 1.0


def check_nested(inner: Box, outer: Box, what: str = "set") -> None:
    """Require ``inner`` to lie in the interior of ``outer``."""
    if inner.dim != outer.dim:
        raise ValueError(f"{what}: dimension mismatch")
    if not inner.strictly_inside(outer):
        raise ValueError(f"{what} {inner!r} is not inside the interior of {outer!r}")


def boxset_to_guards(domain: BoxSet, mode: str = "pieces") -> list[tuple[Box, list[Expr]]]:
    """Encode a set as ``(box, guards)`` pairs with guards meaning ``g <= 0``.

    ``mode="pieces"`` covers boundaries with faces and differences with slabs
    (no guards needed).  ``mode="guard"`` uses the outer box together with an
    exact membership guard instead.
    """
    n = domain.base_dim
    if mode == "pieces":
        return [(b, []) for b in domain.pieces()]
    if mode != "guard":
        raise ValueError(mode)
    o = domain.outer
    full = o if domain.extra is None else o.product(domain.extra)
    if domain.kind == "box":
        return [(full, [])]
    if domain.kind == "boundary":
        # distance to the nearest face is zero
        dist = min_(*[min_(var(i) - o.lo[i], const(o.hi[i]) - var(i)) for i in range(n)])
        return [(full, [dist])]
    g = domain.inner
    # outside the open inner box: max_i max(g.lo_i - x_i, x_i - g.hi_i) >= 0
    out = max_(*[max_(const(g.lo[i]) - var(i), var(i) - g.hi[i]) for i in range(n)])
    return [(full, [-out])]


# -- queries and outcomes --------------------------------------------------------

@dataclass
class ForallQuery:
    """``for all s in domain with every guard <= 0: claim(s) >= 0``."""

    domain: BoxSet | Sequence[Box]
    claim: Expr
    guards: Sequence[Expr] = ()
    slack: float = DEFAULT_SLACK
    params: Sequence[float] = ()
    name: str = ""
    # dimensions split first; the rest only once these reach min width
    split_first: Sequence[int] | None = None

    def __post_init__(self):
        if self.slack < 0:
            raise ValueError("slack must be >= 0")

    def boxes(self) -> list[Box]:
        if isinstance(self.domain, BoxSet):
            return self.domain.pieces()
        return list(self.domain)


@dataclass
class Proved:
    boxes: int = 0
    proved = True

    def __str__(self):
        return f"Proved ({self.boxes} boxes)"


@dataclass
class Refuted:
    witness: np.ndarray
    exact: bool
    claim_value: float = math.nan
    boxes: int = 0
    proved = False

    def __str__(self):
        kind = "exact" if self.exact else "delta"
        w = ", ".join(f"{v:.6g}" for v in self.witness)
        return f"Refuted[{kind}] at ({w}), claim={self.claim_value:.6g}"


@dataclass
class BudgetExhausted:
    worst_box: Box | None
    claim_lo: float = -math.inf
    boxes: int = 0
    proved = False

    def __str__(self):
        return f"BudgetExhausted after {self.boxes} boxes (worst claim bound {self.claim_lo:.6g})"


VerifierOutcome = Union[Proved, Refuted, BudgetExhausted]


# -- the prover -------------------------------------------------------------------

@dataclass
class _Work:
    lo: list = field(default_factory=list)
    hi: list = field(default_factory=list)

    def push(self, lo: np.ndarray, hi: np.ndarray):
        if len(lo):
            self.lo.append(lo)
            self.hi.append(hi)

    def pop(self, k: int):
        lo, hi = self.lo.pop(), self.hi.pop()
        if len(lo) > k:
            self.lo.append(lo[:-k])
            self.hi.append(hi[:-k])
            lo, hi = lo[-k:], hi[-k:]
        return lo, hi

    def __bool__(self):
        return bool(self.lo)


def _bcast(res, nb: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # outputs that do not depend on any variable come back as scalars
    return [(np.broadcast_to(a, (nb,)), np.broadcast_to(b, (nb,))) for a, b in res]


def _cols(a: np.ndarray) -> list[np.ndarray]:
    return [a[:, j] for j in range(a.shape[1])]


def prove_forall(q: ForallQuery, budget: int = DEFAULT_BUDGET,
                 min_width: float = DEFAULT_MIN_WIDTH, batch: int = 512,
                 presample: int = 0, seed: int = 0) -> VerifierOutcome:
    """Decide ``q`` by interval branch and prune.

    ``min_width`` is relative to the domain extent per dimension.  Boxes that
    reach it in every splittable dimension without being resolved produce a
    non-exact (delta-style) refutation at their center.  ``presample`` random
    points are tried first, which finds gross violations cheaply.

    ``budget`` counts box visits; exceeding it yields :class:`BudgetExhausted`
    carrying the unresolved box with the lowest claim bound.
    """
    if budget < 1 or min_width <= 0:
        raise ValueError("budget must be >= 1 and min_width > 0")
    boxes = q.boxes()
    if not boxes:
        return Proved(0)
    d = boxes[0].dim
    prog = Program([q.claim, *q.guards])
    if prog.n_vars > d:
        raise ValueError(f"query uses {prog.n_vars} variables but domain has {d}")
    ng = len(q.guards)
    params = [np.float64(p) for p in q.params]
    scale = np.max(np.array([b.width for b in boxes]), axis=0)
    min_w = min_width * scale
    splittable = scale > 0
    preferred = None
    if q.split_first is not None:
        preferred = np.zeros(d, dtype=bool)
        preferred[list(q.split_first)] = True

    def exact_check(pts: np.ndarray):
        """Certify violations at points with degenerate-box interval evaluation."""
        cols = _cols(pts)
        res = _bcast(prog.ieval(cols, cols, params), len(pts))
        ok = res[0][1] < 0
        for lo_g, hi_g in res[1:]:
            ok &= hi_g <= 0
        return ok, res[0][1]

    if presample:
        rng = np.random.default_rng(seed)
        per = max(1, presample // len(boxes))
        pts = np.vstack([rng.uniform(b.lo, b.hi, size=(per, d)) for b in boxes])
        vals = [np.broadcast_to(v, (len(pts),)) for v in prog.eval(_cols(pts), params)]
        cand = vals[0] < 0
        for g in vals[1:]:
            cand &= g <= 0
        if cand.any():
            idx = np.nonzero(cand)[0]
            ok, cv = exact_check(pts[idx])
            if ok.any():
                k = idx[int(np.argmax(ok))]
                return Refuted(pts[k], True, float(vals[0][k]), 0)

    work = _Work()
    for b in reversed(boxes):
        work.push(b.lo[None, :].copy(), b.hi[None, :].copy())
    visits = 0
    worst = (math.inf, None)
    while work:
        lo, hi = work.pop(batch)
        visits += len(lo)
        res = _bcast(prog.ieval(_cols(lo), _cols(hi), params), len(lo))
        clo, chi = res[0]
        keep = clo < 0
        for glo, _ in res[1:]:
            keep &= ~(glo > 0)
        if not keep.any():
            if visits >= budget and work:
                return _exhausted(work, worst, visits)
            continue
        lo, hi = lo[keep], hi[keep]
        clo, chi = clo[keep], chi[keep]
        gres = [(g[0][keep], g[1][keep]) for g in res[1:]]

        mid = 0.5 * (lo + hi)
        vals = prog.eval(_cols(mid), params)
        cval = np.broadcast_to(vals[0], (len(lo),))
        cand = cval < 0
        for g in vals[1:]:
            cand &= np.broadcast_to(g, (len(lo),)) <= 0
        if cand.any():
            idx = np.nonzero(cand)[0]
            ok, _ = exact_check(mid[idx])
            if ok.any():
                k = idx[int(np.argmax(ok))]
                return Refuted(mid[k].copy(), True, float(cval[k]), visits)

        width = hi - lo
        can_split = (width > min_w) & splittable
        tiny = ~can_split.any(axis=1)
        if preferred is not None:
            pref = can_split & preferred
            can_split = np.where(pref.any(axis=1)[:, None], pref, can_split)
        if tiny.any():
            k = int(np.nonzero(tiny)[0][0])
            return Refuted(mid[k].copy(), False, float(cval[k]), visits)

        i_worst = int(np.argmin(clo))
        if clo[i_worst] < worst[0]:
            worst = (float(clo[i_worst]), (lo[i_worst].copy(), hi[i_worst].copy()))
        if visits >= budget:
            work.push(lo, hi)
            return _exhausted(work, worst, visits)

        dim = _choose_split(prog, lo, hi, mid, vals, (clo, chi), gres, can_split, scale, params)
        rows = np.arange(len(lo))
        cut = mid[rows, dim]
        lo2, hi2 = lo.copy(), hi.copy()
        hi[rows, dim] = cut
        lo2[rows, dim] = cut
        work.push(np.vstack([lo2, lo]), np.vstack([hi2, hi]))
    return Proved(visits)


def _exhausted(work: _Work, worst, visits) -> BudgetExhausted:
    box = None
    if worst[1] is not None:
        box = Box(worst[1][0], worst[1][1])
    return BudgetExhausted(box, worst[0], visits)


def _choose_split(prog, lo, hi, mid, vals, claim_iv, gres, can_split, scale, params):
    """Pick a split dimension per box from a finite-difference smear estimate.

    The score of dimension j is the change of the claim (and of guards whose
    enclosure straddles zero) when moving half a width along j, relative to
    the width of the respective enclosure.  Falls back to the widest scaled
    dimension when every score vanishes.
    """
    nb, d = lo.shape
    cols = [j for j in range(d) if can_split[:, j].any()]
    half = 0.5 * (hi - lo)
    pts = np.repeat(mid[None, :, :], len(cols), axis=0)
    for k, j in enumerate(cols):
        pts[k, :, j] += half[:, j]
    flat = pts.reshape(-1, d)
    shifted = prog.eval(_cols(flat), params)
    score = np.zeros((nb, d))
    clo, chi = claim_iv
    outs = [(0, clo, chi)] + [
        (g + 1, glo, ghi) for g, (glo, ghi) in enumerate(gres)]
    for slot, olo, ohi in outs:
        if slot > 0:
            active = (olo <= 0) & (ohi > 0)
            if not active.any():
                continue
        else:
            active = np.ones(nb, dtype=bool)
        base = np.broadcast_to(vals[slot], (nb,))
        moved = np.broadcast_to(shifted[slot], (len(cols) * nb,)).reshape(len(cols), nb)
        span = np.where(np.isfinite(ohi - olo), ohi - olo, 1.0)
        span = np.maximum(span, 1e-300)
        delta = np.abs(moved - base[None, :]) / span[None, :]
        delta = np.where(np.isfinite(delta), delta, 1.0)
        for k, j in enumerate(cols):
            score[:, j] += np.where(active, delta[k], 0.0)
    score = np.where(can_split, score, -1.0)
    dim = np.argmax(score, axis=1)
    flat_score = score[np.arange(nb), dim] <= 0
    if flat_score.any():
        rel = np.where(can_split, (hi - lo) / np.where(scale > 0, scale, 1.0), -1.0)
        dim = np.where(flat_score, np.argmax(rel, axis=1), dim)
    return dim


# -- supremum bounding -----------------------------------------------------------

@dataclass
class SupBound:
    upper: float
    lower: float
    loose: bool = False
    boxes: int = 0

    def __float__(self) -> float:
        return self.upper


def sup_bound(e: Expr, domain: BoxSet | Sequence[Box], tol: float = 1e-3,
              budget: int = 200_000, params: Sequence[float] = (),
              batch: int = 256) -> SupBound:
    """Guaranteed upper bound on ``sup e`` over ``domain``.

    Best-first branch and bound: the box with the largest interval upper
    bound is bisected until that bound is within ``tol`` of the best sampled
    value.  On budget exhaustion the current (valid but loose) bound is
    returned with ``loose=True``.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    boxes = domain.pieces() if isinstance(domain, BoxSet) else list(domain)
    d = boxes[0].dim
    prog = Program([e])
    params = [np.float64(p) for p in params]
    scale = np.max(np.array([b.width for b in boxes]), axis=0)
    splittable = scale > 0
    heap: list = []
    counter = 0
    best = -math.inf
    visits = 0

    def push(lo, hi):
        nonlocal counter, best, visits
        visits += len(lo)
        (ilo, ihi), = prog.ieval(_cols(lo), _cols(hi), params)
        ihi = np.broadcast_to(ihi, (len(lo),))
        mid = 0.5 * (lo + hi)
        pv = np.broadcast_to(prog.eval(_cols(mid), params)[0], (len(lo),))
        finite = np.isfinite(pv)
        if finite.any():
            best = max(best, float(np.max(pv[finite])))
        for k in range(len(lo)):
            if ihi[k] >= best:
                heapq.heappush(heap, (-float(ihi[k]), counter, lo[k], hi[k]))
                counter += 1

    push(np.array([b.lo for b in boxes]), np.array([b.hi for b in boxes]))
    while heap:
        upper = -heap[0][0]
        if upper - best <= tol:
            return SupBound(upper, best, False, visits)
        if visits >= budget:
            return SupBound(upper, best, True, visits)
        los, his = [], []
        while heap and len(los) < batch:
            negub, _, lo, hi = heapq.heappop(heap)
            if -negub < best:
                continue
            los.append(lo)
            his.append(hi)
        if not los:
            break
        lo, hi = np.array(los), np.array(his)
        rel = np.where(splittable, (hi - lo) / np.where(scale > 0, scale, 1.0), -1.0)
        dim = np.argmax(rel, axis=1)
        if np.all(rel[np.arange(len(lo)), dim] <= 0):
            # nothing left to split: the enclosure of a point is the answer
            return SupBound(upper, best, True, visits)
        rows = np.arange(len(lo))
        cut = 0.5 * (lo[rows, dim] + hi[rows, dim])
        lo2, hi2 = lo.copy(), hi.copy()
        hi[rows, dim] = cut
        lo2[rows, dim] = cut
        push(np.vstack([lo, lo2]), np.vstack([hi, hi2]))
    return SupBound(best, best, False, visits)


# -- textual dump -------------------------------------------------------------------

def dump_query(q: ForallQuery, var_prefix: str = "s") -> str:
    """SMT-LIB style rendering of the negated query for an external solver.

    The result asserts domain membership, the guards and ``claim < 0``; an
    ``unsat`` answer from the external tool corresponds to ``Proved``.
    """
    boxes = q.boxes()
    d = boxes[0].dim
    names = [f"{var_prefix}{i}" for i in range(d)]
    pnames = [repr(float(p)) for p in q.params]
    lines = [f"; query {q.name}".rstrip(), "(set-logic QF_NRA)"]
    lines += [f"(declare-fun {v} () Real)" for v in names]
    alts = []
    for b in boxes:
        conj = " ".join(f"(<= {_num(lo)} {v}) (<= {v} {_num(hi)})"
                        for v, lo, hi in zip(names, b.lo, b.hi))
        alts.append(f"(and {conj})")
    lines.append(f"(assert (or {' '.join(alts)}))" if len(alts) > 1 else f"(assert {alts[0]})")
    for g in q.guards:
        lines.append(f"(assert (<= {_sexpr(g, names, pnames)} 0))")
    lines.append(f"(assert (< {_sexpr(q.claim, names, pnames)} 0))")
    lines.append("(check-sat)")
    lines.append("(exit)")
    return "\n".join(lines) + "\n"


def _num(v: float) -> str:
    v = float(v)
    return f"(- {repr(-v)})" if v < 0 else repr(v)


def _sexpr(e: Expr, names, pnames) -> str:
    op = e.op
    if op == "const":
        return _num(e.value)
    if op == "var":
        return names[e.index]
    if op == "param":
        return pnames[e.index]
    ch = [_sexpr(c, names, pnames) for c in e.children]
    table = {"add": "+", "sub": "-", "mul": "*", "div": "/", "neg": "-",
             "sin": "sin", "cos": "cos", "exp": "exp", "min": "min", "max": "max"}
    if op == "pow":
        return f"(^ {ch[0]} {int(e.value)})"
    if op in ("min", "max") and len(ch) > 2:
        acc = ch[0]
        for c in ch[1:]:
            acc = f"({table[op]} {acc} {c})"
        return acc
    return f"({table[op]} {' '.join(ch)})"


__all__ = [
    "BoxSet", "ForallQuery", "Proved", "Refuted", "BudgetExhausted", "VerifierOutcome",
    "prove_forall", "sup_bound", "SupBound", "boxset_to_guards", "check_nested",
    "dump_query", "DegenerateDomain", "render",
]
