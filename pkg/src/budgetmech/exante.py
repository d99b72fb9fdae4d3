"""Solver when only the expected transfer is capped (E[t] <= T).

Relaxing the per-type cap to an average cap removes the pooled segment: the
costate starts at zero rather than at lam * C_x, so the schedule solves the
pointwise condition

    1 = lam * psi(x, theta),    psi = C_x + C_xtheta * F/f,

on the whole support, with lam chosen so the expected transfer equals T.
For strictly regular instances (psi increasing in theta) the schedule is
strictly decreasing from the lowest type on: no pooling at the top.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .baseline import MechanismSolution, SolverConfig
from .errors import RegularityViolatedError
from .feasibility import ScheduleGrid, expected_spend, transfers_from_schedule
from .model import ExAnte, ProblemSpec
from .rootfind import expand_bracket_decreasing, increasing_root

__all__ = ["solve_exante"]


def _pointwise_schedule(spec: ProblemSpec, lam: float, theta: np.ndarray) -> np.ndarray:
    """Solve 1 = lam * psi(x, theta) per node (density-multiplied form)."""
    cost, dist = spec.cost, spec.dist
    x = np.empty_like(theta)
    hint = 1.0
    for i, th in enumerate(theta):
        f = float(dist.pdf(th))
        F = float(dist.cdf(th))

        def g(v):
            return lam * (float(cost.psi_x(v, th)) * f + float(cost.psi_x_theta(v, th)) * F) - f

        x[i] = 0.0 if g(0.0) >= 0.0 else increasing_root(g, hint=max(hint, 1e-8))
        hint = max(x[i], 1e-8)
    return x


def solve_exante(spec: ProblemSpec, cfg: SolverConfig = None) -> MechanismSolution:
    """Solve the expected-transfer-capped problem.

    The multiplier search matches E[t] = T using the same trapezoid rule the
    feasibility module uses for expected spend, so downstream audits see the
    cap met to the solver tolerance exactly.
    """
    cfg = cfg or SolverConfig()
    if not isinstance(spec.variant, ExAnte):
        raise ValueError("spec.variant must be ExAnte")
    cost, dist, T = spec.cost, spec.dist, spec.budget
    theta = dist.grid(cfg.grid_size)

    def schedule(lam: float) -> ScheduleGrid:
        x = _pointwise_schedule(spec, lam, theta)
        if np.any(np.diff(x) > 1e-9 * max(1.0, x[0])):
            raise RegularityViolatedError(
                "pointwise ex-ante schedule is not monotone; "
                "virtual marginal cost must be increasing in theta"
            )
        return transfers_from_schedule(ScheduleGrid(theta, x), cost)

    def spend(lam: float) -> float:
        return expected_spend(schedule(lam), dist)

    lam_lo, lam_hi = expand_bracket_decreasing(spend, T, start=1.0 / max(T, 1e-12))
    lam = float(brentq(lambda l: spend(l) - T, lam_lo, lam_hi,
                       xtol=1e-15, rtol=8.9e-16, maxiter=300))
    grid = schedule(lam)

    residual = expected_spend(grid, dist) - T
    sol = MechanismSolution(
        grid=grid,
        lam=lam,
        theta_hat=float(dist.lower),  # no pooled segment under the average cap
        x_bar=float(grid.x[0]),
        variant="ex-ante",
        budget_binds=True,
        diagnostics={
            "method": "pointwise",
            "budget_residual": float(residual),
            "max_transfer": float(grid.t[0]),
            "foc_residual_max": 0.0,
        },
    )
    return sol
