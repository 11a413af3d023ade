"""Limited-memory BFGS with a strong-Wolfe line search (minimization)."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


class LineSearchError(RuntimeError):
    pass


class OptimizationError(RuntimeError):
    pass


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    nit: int
    nfev: int
    converged: bool
    message: str
    trace: list = field(default_factory=list)


def _finite(f, g) -> bool:
    return np.isfinite(f) and np.all(np.isfinite(g))


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db), or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = np.copysign(np.sqrt(rad), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe(fun, x, f0, g0, d, step=1.0, c1=1e-4, c2=0.9, max_evals=30):
    """Find a step satisfying the strong Wolfe conditions along ``d``.

    Trial points with non-finite value or gradient are treated as
    overshooting. If the evaluation budget runs out, the best point found
    that satisfies sufficient decrease is returned; failing that,
    :class:`LineSearchError` is raised.

    Returns ``(step, f, g, nfev)``.
    """
    dphi0 = float(g0 @ d)
    if not dphi0 < 0:
        raise LineSearchError("search direction is not a descent direction")
    nfev = 0
    a_prev, f_prev, dp_prev = 0.0, f0, dphi0
    best = None  # (a, f, g) satisfying sufficient decrease
    a = step

    def zoom(lo, f_lo, dp_lo, hi, f_hi, dp_hi):
        nonlocal nfev, best
        while nfev < max_evals:
            trial = None
            if np.isfinite(f_hi) and np.isfinite(dp_hi):
                trial = _cubic_min(lo, f_lo, dp_lo, hi, f_hi, dp_hi)
            width = hi - lo
            lo_b, hi_b = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if trial is None or not lo_b <= trial <= hi_b:
                trial = 0.5 * (lo + hi)
            f, g = fun(x + trial * d)
            nfev += 1
            if not _finite(f, g):
                hi, f_hi, dp_hi = trial, np.inf, np.nan
                continue
            dp = float(g @ d)
            if f > f0 + c1 * trial * dphi0 or f >= f_lo:
                hi, f_hi, dp_hi = trial, f, dp
                continue
            if best is None or f < best[1]:
                best = (trial, f, g)
            if abs(dp) <= -c2 * dphi0:
                return trial, f, g
            if dp * (hi - lo) >= 0:
                hi, f_hi, dp_hi = lo, f_lo, dp_lo
            lo, f_lo, dp_lo = trial, f, dp
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return None

    while nfev < max_evals:
        f, g = fun(x + a * d)
        nfev += 1
        if not _finite(f, g):
            res = zoom(a_prev, f_prev, dp_prev, a, np.inf, np.nan)
            break
        dp = float(g @ d)
        if f > f0 + c1 * a * dphi0 or (nfev > 1 and f >= f_prev):
            res = zoom(a_prev, f_prev, dp_prev, a, f, dp)
            break
        best = (a, f, g) if best is None or f < best[1] else best
        if abs(dp) <= -c2 * dphi0:
            return a, f, g, nfev
        if dp >= 0:
            res = zoom(a, f, dp, a_prev, f_prev, dp_prev)
            break
        a_prev, f_prev, dp_prev = a, f, dp
        a = 2.0 * a
    else:
        res = None
    if res is not None:
        return res[0], res[1], res[2], nfev
    if best is not None:
        return best[0], best[1], best[2], nfev
    raise LineSearchError(f"no acceptable step after {nfev} evaluations")


def lbfgs(fun: Callable, x0, memory: int = 10, max_iter: int = 1000, rel_tol: float = 1e-6,
          grad_tol: float = 1e-5, c1: float = 1e-4, c2: float = 0.9,
          max_ls_evals: int = 30) -> OptimizeResult:
    """Minimize ``fun(x) -> (f, grad)`` with L-BFGS.

    Stops when ``|f_prev - f| < rel_tol * |f|``, when ``max|grad| < grad_tol``
    or after ``max_iter`` iterations. A line-search failure halves the
    memory and restarts from the current iterate once; a second failure
    raises :class:`OptimizationError`.

    ``trace`` holds ``f`` at the start point and after every accepted step.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    nfev = 1
    if not _finite(f, g):
        raise OptimizationError(f"objective is not finite at the starting point (f={f})")
    trace = [float(f)]
    hist = deque(maxlen=memory)
    restarted = False
    first = True
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < grad_tol:
            return OptimizeResult(x, f, g, it - 1, nfev, True, "gradient tolerance reached", trace)
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(hist):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if hist:
            s, y, _ = hist[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(hist, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        if not g @ d < 0:
            hist.clear()
            d = -g
        step = min(1.0, 1.0 / np.max(np.abs(g))) if first or not hist else 1.0
        try:
            t, f_new, g_new, n = strong_wolfe(fun, x, f, g, d, step, c1, c2, max_ls_evals)
        except LineSearchError as exc:
            if restarted:
                raise OptimizationError(f"line search failed twice (iteration {it}): {exc}") from exc
            restarted = True
            memory = max(1, memory // 2)
            log.warning("line search failed at iteration %d; restarting with memory %d", it, memory)
            hist = deque(maxlen=memory)
            first = True
            continue
        nfev += n
        first = False
        s = t * d
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.sqrt((s @ s) * (y @ y)):
            hist.append((s, y, 1.0 / sy))
        x = x + s
        f_old, f, g = f, f_new, g_new
        trace.append(float(f))
        if abs(f_old - f) < rel_tol * abs(f):
            return OptimizeResult(x, f, g, it, nfev, True, "relative change tolerance reached", trace)
    return OptimizeResult(x, f, g, max_iter, nfev, False, "iteration limit reached", trace)
