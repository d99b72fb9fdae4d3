"""Bracketing helpers shared by the solvers."""

from __future__ import annotations

from typing import Callable

from scipy.optimize import brentq

from .errors import NoConvergenceError

_GROWTH = 4.0
_MAX_EXPANSIONS = 80


def increasing_root(fn: Callable[[float], float], hint: float = 1.0,
                    lo: float = 0.0) -> float:
    """Root of an increasing function on [lo, inf), given fn(lo) <= 0.

    Expands the upper end geometrically from ``hint`` until the sign flips.
    """
    f_lo = fn(lo)
    if f_lo > 0.0:
        raise NoConvergenceError(f"no root: fn({lo}) = {f_lo} > 0 for increasing fn")
    if f_lo == 0.0:
        return lo
    hi = max(hint, lo + 1e-12)
    for _ in range(_MAX_EXPANSIONS):
        if fn(hi) >= 0.0:
            return brentq(fn, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
        hi *= _GROWTH
    raise NoConvergenceError("bracket expansion exhausted for increasing root")


def expand_bracket_decreasing(fn: Callable[[float], float], target: float,
                              start: float = 1.0) -> tuple:
    """Bracket [lo, hi] with fn decreasing, fn(lo) >= target >= fn(hi).

    Used for multiplier searches where spending falls as the multiplier
    rises.  Verifies the decreasing direction at the bracket endpoints.
    """
    lo = hi = max(start, 1e-300)
    v = fn(lo)
    for _ in range(_MAX_EXPANSIONS):
        if v >= target:
            break
        lo /= _GROWTH
        v = fn(lo)
    else:
        raise NoConvergenceError("could not bracket multiplier from below")
    for _ in range(_MAX_EXPANSIONS):
        if fn(hi) <= target:
            break
        hi *= _GROWTH
    else:
        raise NoConvergenceError("could not bracket multiplier from above")
    if fn(lo) < fn(hi):
        raise NoConvergenceError(
            "spending is not decreasing in the multiplier across the bracket"
        )
    return lo, hi
