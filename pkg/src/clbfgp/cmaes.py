"""Separable CMA-ES (diagonal covariance), maximizing an objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ObjectiveNonFinite(ValueError):
    pass


@dataclass
class CmaState:
    mean: np.ndarray
    sigma: float
    var: np.ndarray  # diagonal of C
    p_sigma: np.ndarray
    p_c: np.ndarray
    weights: np.ndarray
    iteration: int = 0


@dataclass
class CmaResult:
    best_x: np.ndarray
    best_f: float
    evaluations: int
    iterations: int
    history: list[float] = field(default_factory=list)  # best-so-far per iteration
    means: list[np.ndarray] = field(default_factory=list)
    state: CmaState | None = None


def default_popsize(n: int) -> int:
    return 4 + int(math.floor(3 * math.log(max(n, 1))))


def optimize(objective: Callable, init, sigma0: float, max_iters: int = 30,
             rng: np.random.Generator | None = None, popsize: int | None = None,
             vectorized: bool = False, target: float | None = None) -> CmaResult:
    """Maximize ``objective`` starting from ``init``.

    With ``vectorized`` the objective receives a ``(popsize, n)`` array and
    returns one score per row.  Non-finite scores count as ``-inf``.  The
    returned point is the best one evaluated, ``init`` included.  Iteration
    stops early once ``target`` is reached.
    """
    x0 = np.asarray(init, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x0)):
        raise ValueError("init must be finite")
    if max_iters < 1 or sigma0 <= 0:
        raise ValueError("max_iters must be >= 1 and sigma0 > 0")
    rng = rng if rng is not None else np.random.default_rng(0)

    def score(X: np.ndarray) -> np.ndarray:
        if vectorized:
            f = np.asarray(objective(X), dtype=float).reshape(-1)
        else:
            f = np.array([float(objective(x)) for x in X])
        return np.where(np.isfinite(f), f, -np.inf)

    f0 = float(score(x0[None, :])[0])
    n = x0.size
    if n == 0:
        return CmaResult(x0, f0, 1, 0, [f0])

    lam = popsize or default_popsize(n)
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w = w / w.sum()
    mueff = 1.0 / float(np.sum(w * w))
    c_sigma = (mueff + 2) / (n + mueff + 5)
    d_sigma = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + c_sigma
    c_c = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    c_1 = 2 / ((n + 1.3) ** 2 + mueff)
    c_mu = min(1 - c_1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    # the diagonal model learns faster
    scale = (n + 2) / 3
    c_1, c_mu = min(1.0, c_1 * scale), min(1.0 - min(1.0, c_1 * scale), c_mu * scale)
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    st = CmaState(x0.copy(), float(sigma0), np.ones(n), np.zeros(n), np.zeros(n), w)
    best_x, best_f = x0.copy(), f0
    res = CmaResult(best_x, best_f, 1, 0, [], [st.mean.copy()], st)
    for it in range(max_iters):
        if target is not None and best_f >= target:
            break
        z = rng.standard_normal((lam, n))
        d = np.sqrt(st.var)
        y = z * d
        X = st.mean + st.sigma * y
        f = score(X)
        res.evaluations += lam
        order = np.argsort(-f, kind="stable")
        if f[order[0]] > best_f:
            best_f, best_x = float(f[order[0]]), X[order[0]].copy()
        sel = order[:mu]
        y_w = w @ y[sel]
        z_w = w @ z[sel]
        st.mean = st.mean + st.sigma * y_w
        st.p_sigma = (1 - c_sigma) * st.p_sigma + math.sqrt(c_sigma * (2 - c_sigma) * mueff) * z_w
        norm_ps = float(np.linalg.norm(st.p_sigma))
        h_sig = norm_ps / math.sqrt(1 - (1 - c_sigma) ** (2 * (it + 1))) < (1.4 + 2 / (n + 1)) * chi_n
        st.p_c = (1 - c_c) * st.p_c + h_sig * math.sqrt(c_c * (2 - c_c) * mueff) * y_w
        rank_mu = w @ (y[sel] ** 2)
        st.var = ((1 - c_1 - c_mu + (0 if h_sig else c_1 * c_c * (2 - c_c))) * st.var
                  + c_1 * st.p_c ** 2 + c_mu * rank_mu)
        st.var = np.maximum(st.var, 1e-300)
        st.sigma *= math.exp((c_sigma / d_sigma) * (norm_ps / chi_n - 1))
        st.iteration = it + 1
        res.history.append(best_f)
        res.means.append(st.mean.copy())
    res.best_x, res.best_f, res.iterations = best_x, best_f, st.iteration
    return res
