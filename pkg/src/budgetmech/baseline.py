"""Shooting solver for the ex-post-budget design problem.

The optimal mechanism has a two-piece structure, characterised by a shadow
value lam for the resource and a costate rho enforcing monotonicity:

  * a pooled segment [lo, theta_hat] on which every type takes the same
    action x_bar and receives the full budget T, and
  * a separating branch on (theta_hat, hi] where x(theta) solves the
    pointwise condition  lam * C_xtheta(x, theta) = f(theta).

The pooled/separating boundary (x_bar, theta_hat) solves the smooth-pasting
pair

    lam * C_x(x_bar, theta_hat)      = F(theta_hat)
    lam * C_xtheta(x_bar, theta_hat) = f(theta_hat)

and the outer loop moves lam until the lowest type's transfer equals T
(spending falls monotonically as lam rises).  A complete-pooling test runs
first: with x_bar defined by C(x_bar, hi) = T, the whole population pools
iff C_x(x_bar, theta) >= F(theta) * C_x(x_bar, hi) for every theta.

The same nested scheme drives the linear-resource-value variant, which only
swaps the two first-order-condition callables; see ``linear_value``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DegenerateDistributionError,
    NoConvergenceError,
    RegularityViolatedError,
    UnboundedActionError,
)
from .feasibility import (
    MONOTONE_SLACK,
    ScheduleGrid,
    normalization_value,
    transfers_from_schedule,
)
from .model import Baseline, CostModel, ProblemSpec
from .rootfind import expand_bracket_decreasing, increasing_root

__all__ = [
    "SolverConfig",
    "MechanismSolution",
    "solve_baseline",
    "check_complete_pooling",
    "pooling_threshold_residual",
    "verify_interior_foc",
    "extract_pooling_threshold",
]


@dataclass(frozen=True)
class SolverConfig:
    """Knobs shared by the continuous solvers.

    grid_size        -- uniform type nodes (threshold nodes are inserted)
    envelope_grid    -- concavification grid for the separable solver; fine
                        by default because the envelope's tangency vertex is
                        only located to one envelope cell and the two solver
                        routes are compared at 1e-4
    foc_tol          -- acceptance tolerance on first-order residuals
    budget_rtol     -- |t(lo) - T| <= budget_rtol * max(1, T) at exit
    refine_levels    -- dyadic refinement levels around the threshold node
    restarts, seed   -- multistart budget for the discrete optimizer
    """

    grid_size: int = 512
    envelope_grid: int = 65536
    foc_tol: float = 1e-6
    budget_rtol: float = 1e-10
    refine_levels: int = 3
    restarts: int = 64
    seed: int = 0


@dataclass
class MechanismSolution:
    """Solved mechanism on a type grid plus solver diagnostics.

    diagnostics carries budget_residual, foc_residual_max, the costate trace
    (rho) when available, the exclusion costate (w) for the resource-value
    variant, and method notes.
    """

    grid: ScheduleGrid
    lam: float
    theta_hat: float
    x_bar: float
    variant: str
    exclusion_threshold: Optional[float] = None
    budget_binds: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return self.grid.theta

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def t(self) -> np.ndarray:
        return self.grid.t


def extract_pooling_threshold(grid: ScheduleGrid) -> float:
    """Upper end of the maximal initial constant segment of x."""
    x = grid.x
    slack = MONOTONE_SLACK * max(1.0, abs(float(x[0])))
    i = 0
    while i + 1 < len(x) and abs(x[i + 1] - x[0]) <= slack:
        i += 1
    return float(grid.theta[i])


# =============================================================================
# Complete pooling
# =============================================================================

@dataclass
class CompletePoolingCheck:
    pools_all: bool
    x_bar: float
    worst_margin: float  # min over grid of C_x(x_bar,th) - F(th) C_x(x_bar,hi)


def check_complete_pooling(spec: ProblemSpec, n_check: int = 1024) -> CompletePoolingCheck:
    """Does the optimum pay T to everybody?

    x_bar solves C(x_bar, hi) = T; pooling everywhere is optimal iff
    C_x(x_bar, theta) >= F(theta) * C_x(x_bar, hi) across the support.
    """
    cost, dist, T = spec.cost, spec.dist, spec.budget
    hi = dist.upper

    try:
        x_bar = increasing_root(lambda x: float(cost.psi(x, hi)) - T, hint=1.0)
    except NoConvergenceError as exc:
        raise UnboundedActionError(
            "budget cannot be exhausted at the least efficient type; "
            "C(x, hi) appears bounded below T"
        ) from exc

    thetas = dist.grid(n_check)
    lhs = np.array([float(cost.psi_x(x_bar, th)) for th in thetas])
    rhs = dist.cdf_grid(thetas) * float(cost.psi_x(x_bar, hi))
    margin = lhs - rhs
    worst = float(np.min(margin))
    tol = 1e-9 * max(1.0, float(cost.psi_x(x_bar, hi)))
    return CompletePoolingCheck(pools_all=bool(worst >= -tol), x_bar=float(x_bar), worst_margin=worst)


# =============================================================================
# Nested shooting core (shared with the linear-value variant)
# =============================================================================

def _solve_separating_action(sep_foc, theta: float, lam: float, hint: float) -> float:
    """Root in x of the separating condition; clamps at zero when the
    condition already holds weakly there."""
    fn = lambda x: sep_foc(x, theta, lam)
    if fn(0.0) >= 0.0:
        return 0.0
    return increasing_root(fn, hint=max(hint, 1e-8))


def _threshold_for(sep_foc, pool_res, spec, lam, x_hint):
    """Locate (x_bar, theta_hat) for a fixed multiplier.

    Primary: damped Newton on the smooth-pasting pair.  Fallback: scan the
    residual r(th) = pool_res(x_sep(th), th) for its first sign change and
    bisect.  Returns (x_bar, theta_hat, full_pooling_flag).
    """
    dist = spec.dist
    lo, hi = dist.lower, dist.upper

    def r_of(th: float, hint: float) -> float:
        xs = _solve_separating_action(sep_foc, th, lam, hint)
        return pool_res(xs, th, lam), xs

    # --- damped Newton on G(x, th) = (pool_res, sep_foc) ------------------
    newton = _newton_pair(sep_foc, pool_res, spec, lam, x_hint)
    if newton is not None:
        x_bar, theta_hat = newton
        return x_bar, theta_hat, False

    # --- nested bisection fallback ----------------------------------------
    n_scan = 129
    eps = 1e-9 * (hi - lo)
    ths = np.linspace(lo + eps, hi, n_scan)
    hint = x_hint
    prev_r, prev_th = None, None
    for th in ths:
        r, xs = r_of(float(th), hint)
        hint = max(xs, 1e-8)
        if prev_r is None and r <= 0.0:
            # No pooling at this multiplier: the threshold degenerates to
            # the lower end.  (Transient during bracket expansion only.)
            x_bar = _solve_separating_action(sep_foc, lo, lam, hint)
            return float(x_bar), float(lo), False
        if prev_r is not None and prev_r > 0.0 >= r:
            f = lambda tt: r_of(tt, hint)[0]
            theta_hat = brentq(f, prev_th, float(th), xtol=1e-14, rtol=8.9e-16, maxiter=200)
            x_bar = _solve_separating_action(sep_foc, theta_hat, lam, hint)
            return float(x_bar), float(theta_hat), False
        prev_r, prev_th = r, float(th)
    # rho stays positive across the whole support: pooling covers everything
    # at this multiplier; x_bar comes from the upper boundary condition.
    x_bar = increasing_root(lambda x: pool_res(x, hi, lam), hint=max(x_hint, 1e-8))
    return float(x_bar), float(hi), True


def _newton_pair(sep_foc, pool_res, spec, lam, x_hint):
    dist = spec.dist
    lo, hi = dist.lower, dist.upper
    x, th = max(x_hint, 1e-6), hi - 1e-6 * (hi - lo)

    def G(x, th):
        return np.array([pool_res(x, th, lam), sep_foc(x, th, lam)])

    g = G(x, th)
    for _ in range(60):
        if np.linalg.norm(g) < 1e-13 * max(1.0, lam):
            break
        hx = 1e-7 * max(1.0, x)
        ht = 1e-7 * (hi - lo)
        J = np.column_stack([(G(x + hx, th) - G(x - hx, th)) / (2 * hx),
                             (G(x, min(th + ht, hi)) - G(x, max(th - ht, lo))) / (min(th + ht, hi) - max(th - ht, lo))])
        try:
            step = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            return None
        scale = 1.0
        for _damp in range(40):
            xn = x + scale * step[0]
            thn = th + scale * step[1]
            if xn > 0 and lo < thn < hi:
                gn = G(xn, thn)
                if np.linalg.norm(gn) < np.linalg.norm(g):
                    x, th, g = xn, thn, gn
                    break
            scale *= 0.5
        else:
            return None
    if np.linalg.norm(g) < 1e-10 * max(1.0, lam) and lo + 1e-12 < th < hi - 1e-12 and x > 0:
        return float(x), float(th)
    return None


def insert_threshold_nodes(theta: np.ndarray, theta_hat: float, lo: float,
                           hi: float, levels: int) -> np.ndarray:
    """Snap a kink location into the grid, with dyadic refinement around it."""
    if not (lo < theta_hat < hi):
        return theta
    h = (hi - lo) / (len(theta) - 1)
    extras = [theta_hat]
    for level in range(1, levels + 1):
        step = h / 2**level
        extras.extend([theta_hat - step, theta_hat + step])
    extras = [e for e in extras if lo < e < hi]
    return np.unique(np.concatenate([theta, extras]))


def _assemble_grid(spec, cfg, sep_foc, lam, x_bar, theta_hat, full_pooling):
    """Type grid with the threshold inserted and dyadically refined around."""
    dist = spec.dist
    theta = dist.grid(cfg.grid_size)
    if not full_pooling:
        theta = insert_threshold_nodes(theta, theta_hat, dist.lower, dist.upper,
                                       cfg.refine_levels)

    x = np.empty_like(theta)
    pooled = theta <= theta_hat + 1e-15
    x[pooled] = x_bar
    hint = x_bar
    for i in np.where(~pooled)[0]:
        xi = _solve_separating_action(sep_foc, float(theta[i]), lam, hint)
        x[i] = xi
        hint = max(xi, 1e-8)
    return theta, x


def _nested_shooting(spec, cfg, sep_foc, pool_res, variant_name):
    """Outer multiplier search wrapped around the threshold/branch solve."""
    cost, dist, T = spec.cost, spec.dist, spec.budget

    try:
        x_cp = increasing_root(lambda x: float(cost.psi(x, dist.upper)) - T, hint=1.0)
    except NoConvergenceError as exc:
        raise UnboundedActionError("budget cannot be exhausted at the top type") from exc
    lam0 = float(dist.cdf(dist.upper)) / max(float(cost.psi_x(x_cp, dist.upper)), 1e-300)

    cache = {}

    def build(lam: float):
        if lam not in cache:
            x_bar, theta_hat, full = _threshold_for(sep_foc, pool_res, spec, lam, x_cp)
            theta, x = _assemble_grid(spec, cfg, sep_foc, lam, x_bar, theta_hat, full)
            cache[lam] = (x_bar, theta_hat, full, theta, x)
        return cache[lam]

    def spend(lam: float) -> float:
        _, _, _, theta, x = build(lam)
        return normalization_value(ScheduleGrid(theta, x), cost)

    lam_lo, lam_hi = expand_bracket_decreasing(spend, T, start=max(lam0, 1e-12))
    lam = float(brentq(lambda l: spend(l) - T, lam_lo, lam_hi,
                       xtol=1e-15, rtol=8.9e-16, maxiter=300))

    x_bar, theta_hat, full, theta, x = build(lam)

    slack = MONOTONE_SLACK * max(1.0, x_bar)
    if np.any(np.diff(x) > slack):
        raise RegularityViolatedError(
            "separating branch is not monotone; the instance needs interior "
            "ironing -- use the discrete oracle instead"
        )
    grid = transfers_from_schedule(ScheduleGrid(theta, x), cost)
    residual = float(grid.t[0] - T)
    if abs(residual) > cfg.budget_rtol * max(1.0, T):
        raise NoConvergenceError(f"budget residual {residual:.3e} above tolerance")
    return grid, lam, x_bar, theta_hat, full


# =============================================================================
# Baseline entry points
# =============================================================================

def _baseline_focs(spec: ProblemSpec):
    cost, dist = spec.cost, spec.dist

    def sep_foc(x, th, lam):
        return lam * float(cost.psi_x_theta(x, th)) - float(dist.pdf(th))

    def pool_res(x, th, lam):
        return lam * float(cost.psi_x(x, th)) - float(dist.cdf(th))

    return sep_foc, pool_res


def solve_baseline(spec: ProblemSpec, cfg: SolverConfig = None) -> MechanismSolution:
    """Solve the ex-post-budget problem by nested shooting.

    Raises RegularityViolatedError when the separating branch comes out
    non-monotone (interior ironing needed; fall back to the oracle), and
    NoConvergenceError when the multiplier bracket cannot be closed.
    """
    cfg = cfg or SolverConfig()
    cost, dist, T = spec.cost, spec.dist, spec.budget
    if dist.upper - dist.lower <= 0:
        raise DegenerateDistributionError("support has zero length")

    cp = check_complete_pooling(spec)
    if cp.pools_all:
        theta = dist.grid(cfg.grid_size)
        x = np.full_like(theta, cp.x_bar)
        grid = transfers_from_schedule(ScheduleGrid(theta, x), cost)
        lam = 1.0 / float(cost.psi_x(cp.x_bar, dist.upper))
        rho = lam * np.array([float(cost.psi_x(cp.x_bar, th)) for th in theta]) - dist.cdf_grid(theta)
        return MechanismSolution(
            grid=grid,
            lam=lam,
            theta_hat=float(dist.upper),
            x_bar=cp.x_bar,
            variant="baseline",
            diagnostics={
                "method": "complete-pooling",
                "budget_residual": float(grid.t[0] - T),
                "foc_residual_max": 0.0,
                "rho": rho,
                "complete_pooling_margin": cp.worst_margin,
            },
        )

    sep_foc, pool_res = _baseline_focs(spec)
    grid, lam, x_bar, theta_hat, full = _nested_shooting(spec, cfg, sep_foc, pool_res, "baseline")

    if np.min(grid.x) <= 0.0 and float(dist.pdf(dist.upper)) > 1e-12:
        warnings.warn(
            "baseline separating action clamped at zero where the density is "
            "positive; this should not happen for valid inputs",
            RuntimeWarning,
        )

    theta = grid.theta
    rho = np.where(
        theta <= theta_hat,
        lam * np.array([float(cost.psi_x(x_bar, th)) for th in theta]) - dist.cdf_grid(theta),
        0.0,
    )
    sol = MechanismSolution(
        grid=grid,
        lam=lam,
        theta_hat=theta_hat,
        x_bar=x_bar,
        variant="baseline",
        diagnostics={
            "method": "nested-shooting",
            "budget_residual": float(grid.t[0] - T),
            "rho": rho,
        },
    )
    foc = verify_interior_foc(sol, spec)
    sol.diagnostics["foc_residual_max"] = foc["max_pointwise_residual"]
    sol.diagnostics["threshold_foc_residual"] = foc["highest_action_foc_residual"]
    return sol


def pooling_threshold_residual(sol: MechanismSolution, spec: ProblemSpec) -> Optional[float]:
    """|C_xtheta/C_x - f/F| at (x_bar, theta_hat); None for complete pooling."""
    cost, dist = spec.cost, spec.dist
    if sol.theta_hat >= dist.upper - 1e-12:
        return None  # no interior threshold
    x_bar, th = sol.x_bar, sol.theta_hat
    lhs = float(cost.psi_x_theta(x_bar, th)) / float(cost.psi_x(x_bar, th))
    rhs = float(dist.pdf(th)) / float(dist.cdf(th))
    return abs(lhs - rhs)


def verify_interior_foc(sol: MechanismSolution, spec: ProblemSpec) -> dict:
    """Recompute the accepted solution's first-order residuals from its grid.

    max_pointwise_residual: max over separating nodes of
    |lam C_xtheta(x, th) - f(th)| / f(th).  highest_action_foc_residual:
    |lam C_x(x_bar, theta_hat) - F(theta_hat)|.  Both zero by convention
    for complete pooling.
    """
    cost, dist = spec.cost, spec.dist
    if sol.theta_hat >= dist.upper - 1e-12:
        return {"max_pointwise_residual": 0.0, "highest_action_foc_residual": 0.0}
    lam = sol.lam
    theta, x = sol.grid.theta, sol.grid.x
    mask = theta > sol.theta_hat + 1e-12
    worst = 0.0
    for th, xi in zip(theta[mask], x[mask]):
        f = float(dist.pdf(th))
        if f <= 1e-14 or xi <= 0.0:
            continue
        worst = max(worst, abs(lam * float(cost.psi_x_theta(xi, th)) - f) / f)
    top = abs(lam * float(cost.psi_x(sol.x_bar, sol.theta_hat)) - float(dist.cdf(sol.theta_hat)))
    return {"max_pointwise_residual": worst, "highest_action_foc_residual": top}
