"""Closed-form solver for multiplicatively separable costs C(x, theta) = theta*G(x).

For separable costs the design problem decouples: extend the CDF by zero
below the support, take its least concave majorant on [0, upper], and let
ftilde be the left derivative of that envelope.  The optimal schedule is

    x*(theta) = (G')^{-1}( ftilde(theta) / lambda ),

with lambda > 0 chosen so the lowest type's transfer exhausts the budget:

    lo * G(x*(lo)) + integral_lo^hi G(x*(s)) ds = T.

Because ftilde is nonincreasing and (G')^{-1} increasing, x* is monotone by
construction; the pooling region is exactly the initial segment where the
envelope is a straight chord.  Its right endpoint does not depend on T or on
G at all, only on the belief -- which ``threshold_invariance_report``
demonstrates numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .baseline import MechanismSolution, SolverConfig, insert_threshold_nodes
from .errors import GammaNotStrictlyConvexError, NonSeparableCostError
from .feasibility import ScheduleGrid, transfers_from_schedule
from .model import ProblemSpec, TypeDistribution
from .rootfind import expand_bracket_decreasing, increasing_root

__all__ = [
    "ConcaveEnvelope",
    "concave_majorant",
    "solve_separable",
    "threshold_invariance_report",
]


@dataclass
class ConcaveEnvelope:
    """Least concave majorant of the CDF on [0, upper].

    Attributes
    ----------
    theta : grid over [0, upper]
    F : CDF values on the grid (zero below the support)
    cav : envelope values on the grid
    f_tilde : left derivative of the envelope on the grid
    hull_theta, hull_value : envelope vertices (the hull polyline)
    """

    theta: np.ndarray
    F: np.ndarray
    cav: np.ndarray
    f_tilde: np.ndarray
    hull_theta: np.ndarray
    hull_value: np.ndarray

    def f_tilde_at(self, theta) -> np.ndarray:
        """Left slope of the envelope at arbitrary points in [0, upper]."""
        th = np.asarray(theta, dtype=float)
        slopes = np.diff(self.hull_value) / np.diff(self.hull_theta)
        # Index of the hull segment whose *closed right end* covers th: the
        # left derivative at a vertex is the incoming segment's slope.
        seg = np.searchsorted(self.hull_theta, th, side="left") - 1
        seg = np.clip(seg, 0, len(slopes) - 1)
        return slopes[seg]


def _upper_hull(points_x: np.ndarray, points_y: np.ndarray):
    """Upper convex hull of a path sorted by x (monotone-chain scan)."""
    hull = []  # list of indices
    for i in range(len(points_x)):
        while len(hull) >= 2:
            x1, y1 = points_x[hull[-2]], points_y[hull[-2]]
            x2, y2 = points_x[hull[-1]], points_y[hull[-1]]
            x3, y3 = points_x[i], points_y[i]
            # Middle point below or on the chord (x1,y1)-(x3,y3): drop it.
            if (y2 - y1) * (x3 - x1) <= (y3 - y1) * (x2 - x1) + 0.0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull, dtype=int)


def concave_majorant(dist: TypeDistribution, grid_size: int = 4096) -> ConcaveEnvelope:
    """Least concave majorant of F extended by zero on [0, lower).

    Exact for the piecewise-linear interpolant of F on the grid; the hull is
    computed with a single monotone-chain pass over the grid points.
    """
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    upper = dist.upper
    theta = np.linspace(0.0, upper, grid_size)
    # Ensure the support's lower end is a grid point so the extension kink
    # is represented exactly.
    if dist.lower > 0.0 and not np.any(np.isclose(theta, dist.lower, atol=1e-15)):
        theta = np.sort(np.append(theta, dist.lower))
    F = np.where(theta < dist.lower, 0.0, np.clip(dist.cdf_grid(theta), 0.0, 1.0))
    F[0] = 0.0
    F[-1] = 1.0

    idx = _upper_hull(theta, F)
    hull_theta = theta[idx]
    hull_value = F[idx]

    cav = np.interp(theta, hull_theta, hull_value)
    slopes = np.diff(hull_value) / np.diff(hull_theta)
    seg = np.clip(np.searchsorted(hull_theta, theta, side="left") - 1, 0, len(slopes) - 1)
    f_tilde = slopes[seg]
    return ConcaveEnvelope(theta, F, cav, f_tilde, hull_theta, hull_value)


def _gamma_prime_inverse(cost, y: float, x_hint: float) -> float:
    """Invert G' numerically (G' increasing); clamps at zero below G'(0)."""
    g1 = cost.gamma_prime
    if g1 is None:
        raise NonSeparableCostError("cost has no separable action factor")
    if y <= float(g1(0.0)):
        return 0.0
    return increasing_root(lambda x: float(g1(x)) - y, hint=max(x_hint, 1e-8))


def solve_separable(spec: ProblemSpec, cfg: SolverConfig = None) -> MechanismSolution:
    """Solve the ex-post-budget problem in closed form for separable costs.

    Raises NonSeparableCostError when the cost model carries no action
    factor G, and GammaNotStrictlyConvexError when G' is not strictly
    increasing on the relevant range (no well-defined inverse).
    """
    cfg = cfg or SolverConfig()
    cost, dist, T = spec.cost, spec.dist, spec.budget
    if not cost.separable:
        raise NonSeparableCostError(
            "solve_separable needs C(x, theta) = theta * G(x); use solve_baseline instead"
        )

    env = concave_majorant(dist, cfg.envelope_grid)
    interior = env.hull_theta[env.hull_theta > dist.lower + 1e-12]
    theta_hat = float(min(interior[0], dist.upper)) if len(interior) else float(dist.upper)

    theta = dist.grid(cfg.grid_size)
    theta = insert_threshold_nodes(theta, theta_hat, dist.lower, dist.upper,
                                   cfg.refine_levels)
    ft = env.f_tilde_at(theta)

    gamma = cost.gamma
    ginv = cost.gamma_prime_inv
    if ginv is None:
        ginv_fn = lambda y: _gamma_prime_inverse(cost, float(y), x_hint=1.0)
    else:
        ginv_fn = lambda y: float(ginv(y))

    # Sanity: G' must actually increase, otherwise the inverse is ill-posed.
    g1 = cost.gamma_prime
    probe = np.linspace(0.0, 1.0, 9)
    g1v = np.array([float(g1(p)) for p in probe])
    if np.any(np.diff(g1v) <= 0):
        raise GammaNotStrictlyConvexError("G' must be strictly increasing")

    def schedule_for(lam: float) -> np.ndarray:
        return np.array([ginv_fn(f / lam) for f in ft])

    def spend(lam: float) -> float:
        x = schedule_for(lam)
        gx = np.array([float(gamma(v)) for v in x])
        # Same right-constant cell rule as the transfer construction, so the
        # bound below binds to machine precision in the final audit.
        return float(theta[0] * gx[0] + np.sum(gx[1:] * np.diff(theta)))

    lam_lo, lam_hi = expand_bracket_decreasing(spend, T, start=1.0 / max(T, 1e-12))
    lam = brentq(lambda l: spend(l) - T, lam_lo, lam_hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)

    x = schedule_for(lam)
    grid = transfers_from_schedule(ScheduleGrid(theta, x), cost)
    sol = MechanismSolution(
        grid=grid,
        lam=float(lam),
        theta_hat=theta_hat,
        x_bar=float(x[0]),
        variant="baseline",
        budget_binds=True,
        diagnostics={
            "method": "separable-closed-form",
            "budget_residual": float(grid.t[0] - T),
            "envelope_grid": cfg.envelope_grid,
        },
    )
    return sol


def threshold_invariance_report(spec: ProblemSpec, budgets, cfg: SolverConfig = None):
    """Pooling threshold for each budget in ``budgets`` plus the max spread.

    For separable costs the threshold is a property of the belief alone, so
    the spread should not exceed the grid resolution.
    """
    budgets = list(budgets)
    if len(budgets) < 2:
        raise ValueError("need at least two budgets to compare")
    cfg = cfg or SolverConfig()
    rows = []
    for T in budgets:
        sol = solve_separable(ProblemSpec(spec.cost, spec.dist, T, spec.variant), cfg)
        rows.append((float(T), float(sol.theta_hat)))
    hats = np.array([h for _, h in rows])
    return {"rows": rows, "max_spread": float(hats.max() - hats.min())}
