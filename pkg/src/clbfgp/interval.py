"""Guaranteed interval arithmetic.

The kernels operate on numpy arrays of lower and upper bounds so that whole
batches of boxes are evaluated at once.  Every kernel returns bounds that are
widened outward (one ulp after correctly rounded operations, a few ulps after
library transcendentals) so that the exact real image is always contained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

_INF = np.inf
_TWO_PI = 2.0 * math.pi
_HALF_PI = 0.5 * math.pi
# slack when deciding whether an extremum of sin/cos lies inside an interval
_PEAK_TOL = 1e-9
# relative widening applied after libm calls (a few ulps)
_LIBM_REL = 8.0 * np.finfo(float).eps


def _down(a):
    return np.nextafter(a, -_INF)


def _up(a):
    return np.nextafter(a, _INF)


def _clean(lo, hi):
    lo = np.where(np.isnan(lo), -_INF, lo)
    hi = np.where(np.isnan(hi), _INF, hi)
    return lo, hi


def _widen_rel(lo, hi, rel):
    lo = lo - np.abs(lo) * rel
    hi = hi + np.abs(hi) * rel
    return _down(lo), _up(hi)


def iadd(alo, ahi, blo, bhi):
    return _clean(_down(alo + blo), _up(ahi + bhi))


def isub(alo, ahi, blo, bhi):
    return _clean(_down(alo - bhi), _up(ahi - blo))


def ineg(alo, ahi):
    return -ahi, -alo


def imul(alo, ahi, blo, bhi):
    with np.errstate(invalid="ignore", over="ignore"):
        p1, p2, p3, p4 = alo * blo, alo * bhi, ahi * blo, ahi * bhi
    # 0 * inf gives NaN; the true product bound there is 0
    p = [np.where(np.isnan(q), 0.0, q) for q in (p1, p2, p3, p4)]
    lo = np.minimum(np.minimum(p[0], p[1]), np.minimum(p[2], p[3]))
    hi = np.maximum(np.maximum(p[0], p[1]), np.maximum(p[2], p[3]))
    return _down(lo), _up(hi)


def idiv(alo, ahi, blo, bhi):
    """Interval quotient; a divisor containing zero yields (-inf, inf)."""
    straddle = (blo <= 0.0) & (bhi >= 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = [alo / blo, alo / bhi, ahi / blo, ahi / bhi]
    lo = np.minimum(np.minimum(q[0], q[1]), np.minimum(q[2], q[3]))
    hi = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
    lo, hi = _clean(_down(lo), _up(hi))
    lo = np.where(straddle, -_INF, lo)
    hi = np.where(straddle, _INF, hi)
    return lo, hi


def ipow(alo, ahi, k: int):
    if k == 0:
        return np.ones_like(alo), np.ones_like(ahi)
    if k == 1:
        return alo, ahi
    with np.errstate(over="ignore"):
        plo, phi = alo ** k, ahi ** k
    if k % 2:
        lo, hi = plo, phi
    else:
        lo = np.where(alo >= 0, plo, np.where(ahi <= 0, phi, 0.0))
        hi = np.where(alo >= 0, phi, np.where(ahi <= 0, plo, np.maximum(plo, phi)))
    # integer power in floating point accumulates up to ~k roundings
    lo, hi = _widen_rel(lo, hi, 2.0 * k * np.finfo(float).eps)
    if k % 2 == 0:
        lo = np.maximum(lo, 0.0)
    return lo, hi


def _contains_point(lo, hi, offset):
    """True where lo <= offset + 2*pi*k <= hi for some integer k."""
    k = np.ceil((lo - offset) / _TWO_PI - _PEAK_TOL)
    return offset + _TWO_PI * k <= hi + _PEAK_TOL * (1.0 + np.abs(hi))


def isin(alo, ahi):
    finite = np.isfinite(alo) & np.isfinite(ahi)
    alo_f = np.where(finite, alo, 0.0)
    ahi_f = np.where(finite, ahi, 0.0)
    s1, s2 = np.sin(alo_f), np.sin(ahi_f)
    lo, hi = np.minimum(s1, s2), np.maximum(s1, s2)
    hi = np.where(_contains_point(alo_f, ahi_f, _HALF_PI), 1.0, hi)
    lo = np.where(_contains_point(alo_f, ahi_f, -_HALF_PI), -1.0, lo)
    lo, hi = lo - 4 * _LIBM_REL, hi + 4 * _LIBM_REL
    full = (~finite) | (ahi_f - alo_f >= _TWO_PI)
    lo = np.where(full, -1.0, np.maximum(lo, -1.0))
    hi = np.where(full, 1.0, np.minimum(hi, 1.0))
    return lo, hi


def icos(alo, ahi):
    finite = np.isfinite(alo) & np.isfinite(ahi)
    alo_f = np.where(finite, alo, 0.0)
    ahi_f = np.where(finite, ahi, 0.0)
    c1, c2 = np.cos(alo_f), np.cos(ahi_f)
    lo, hi = np.minimum(c1, c2), np.maximum(c1, c2)
    hi = np.where(_contains_point(alo_f, ahi_f, 0.0), 1.0, hi)
    lo = np.where(_contains_point(alo_f, ahi_f, math.pi), -1.0, lo)
    lo, hi = lo - 4 * _LIBM_REL, hi + 4 * _LIBM_REL
    full = (~finite) | (ahi_f - alo_f >= _TWO_PI)
    lo = np.where(full, -1.0, np.maximum(lo, -1.0))
    hi = np.where(full, 1.0, np.minimum(hi, 1.0))
    return lo, hi


def iexp(alo, ahi):
    with np.errstate(over="ignore"):
        lo, hi = np.exp(alo), np.exp(ahi)
    lo, hi = _widen_rel(lo, hi, _LIBM_REL)
    return np.maximum(lo, 0.0), hi


def imin(pairs: Sequence[tuple]):
    lo, hi = pairs[0]
    for l2, h2 in pairs[1:]:
        lo, hi = np.minimum(lo, l2), np.minimum(hi, h2)
    return lo, hi


def imax(pairs: Sequence[tuple]):
    lo, hi = pairs[0]
    for l2, h2 in pairs[1:]:
        lo, hi = np.maximum(lo, l2), np.maximum(hi, h2)
    return lo, hi


# -- scalar value types -----------------------------------------------------

@dataclass(frozen=True)
class Interval:
    """Closed real interval ``[lo, hi]``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, v: float) -> Interval:
        return cls(v, v)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __contains__(self, v) -> bool:
        if isinstance(v, Interval):
            return self.lo <= v.lo and v.hi <= self.hi
        return self.lo <= v <= self.hi

    def _bin(self, other, fn):
        other = other if isinstance(other, Interval) else Interval.point(float(other))
        lo, hi = fn(np.float64(self.lo), np.float64(self.hi),
                    np.float64(other.lo), np.float64(other.hi))
        return Interval(float(lo), float(hi))

    def __add__(self, o):
        return self._bin(o, iadd)

    __radd__ = __add__

    def __sub__(self, o):
        return self._bin(o, isub)

    def __rsub__(self, o):
        return Interval.point(float(o))._bin(self, isub)

    def __mul__(self, o):
        return self._bin(o, imul)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return self._bin(o, idiv)

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __repr__(self) -> str:
        return f"[{self.lo!r}, {self.hi!r}]"


class Box:
    """Axis-aligned box, one :class:`Interval` per dimension."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo: Iterable[float], hi: Iterable[float] | None = None):
        lo = np.asarray(list(lo) if not isinstance(lo, np.ndarray) else lo, dtype=float)
        if hi is None:
            # sequence of (lo, hi) pairs
            pairs = lo.reshape(-1, 2)
            lo, hi = pairs[:, 0].copy(), pairs[:, 1].copy()
        else:
            hi = np.asarray(list(hi) if not isinstance(hi, np.ndarray) else hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ValueError("box bounds must be equal-length nonempty vectors")
        if np.any(~(lo <= hi)):
            bad = int(np.argmax(~(lo <= hi)))
            raise ValueError(f"box dimension {bad} has lo > hi ({lo[bad]} > {hi[bad]})")
        self.lo, self.hi = lo, hi

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> Box:
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    @classmethod
    def point(cls, x: Sequence[float]) -> Box:
        x = np.asarray(x, dtype=float)
        return cls(x, x.copy())

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def __len__(self) -> int:
        return self.dim

    def __getitem__(self, i: int) -> Interval:
        return Interval(float(self.lo[i]), float(self.hi[i]))

    def __iter__(self):
        return (self[i] for i in range(self.dim))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def contains_box(self, other: Box) -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def strictly_inside(self, other: Box) -> bool:
        """True if this box lies in the interior of ``other``."""
        return bool(np.all(self.lo > other.lo) and np.all(self.hi < other.hi))

    def product(self, other: Box) -> Box:
        return Box(np.concatenate([self.lo, other.lo]), np.concatenate([self.hi, other.hi]))

    def as_pairs(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]

    def __eq__(self, other) -> bool:
        return (isinstance(other, Box) and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi))

    def __repr__(self) -> str:
        return "Box(" + " x ".join(f"[{a:g}, {b:g}]" for a, b in zip(self.lo, self.hi)) + ")"
