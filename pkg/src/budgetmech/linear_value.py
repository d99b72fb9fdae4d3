"""Design problem when the principal values the resource linearly at rate k.

The objective becomes E[x(theta) - k t(theta)], which changes the problem in
three ways relative to the baseline:

  * the budget need not bind: when k is large the unconstrained mechanism
    (shadow value lam = 0) may already spend less than T;
  * a tail of inefficient types can be excluded (x = 0) once their virtual
    marginal cost  psi(x, theta) = C_x + C_xtheta * F/f  exceeds 1/k;
  * when the budget does bind, the separating branch solves
        lam * C_xtheta(x, theta) = f(theta) * (1 - k * psi(x, theta)),
    and the pooled/separating boundary solves
        lam * C_x(x_bar, th) = F(th) * (1 - k * C_x(x_bar, th)).

``naive_solution`` implements the benchmark that ignores the cap when
designing (lam = 0) and simply truncates transfers at T afterwards; the
result is generally not incentive compatible and ships with its audit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .baseline import (
    MechanismSolution,
    SolverConfig,
    _nested_shooting,
    solve_baseline,
)
from .errors import DegenerateMechanismError, RegularityViolatedError
from .feasibility import (
    AuditReport,
    ScheduleGrid,
    audit_ic_ir,
    expected_spend,
    normalization_value,
    objective_value,
    transfers_from_schedule,
)
from .model import LinearValue, ProblemSpec
from .rootfind import increasing_root

__all__ = [
    "LinearValueDiagnostics",
    "virtual_marginal_cost",
    "solve_linear_value",
    "linear_threshold_residual",
    "naive_solution",
    "comparative_statics",
]


@dataclass
class LinearValueDiagnostics:
    """Shadow value, binding flag, thresholds and the exclusion costate."""

    lam: float
    budget_binds: bool
    theta_hat: float
    exclusion_threshold: Optional[float]
    w_trace: np.ndarray  # positive only where x = 0


def virtual_marginal_cost(x: float, theta: float, spec: ProblemSpec) -> float:
    """psi(x, theta) = C_x + C_xtheta * F(theta)/f(theta).

    Marginal cost inflated by the marginal information rent owed to all
    more efficient types.  Rejects points where the density vanishes.
    """
    cost, dist = spec.cost, spec.dist
    f = float(dist.pdf(theta))
    if f <= 0.0:
        raise ZeroDivisionError(f"density vanishes at theta={theta}; psi undefined")
    return float(cost.psi_x(x, theta)) + float(cost.psi_x_theta(x, theta)) * float(dist.cdf(theta)) / f


def _linear_focs(spec: ProblemSpec, k: float):
    cost, dist = spec.cost, spec.dist

    def sep_foc(x, th, lam):
        f = float(dist.pdf(th))
        psi_v = float(cost.psi_x(x, th)) * f + float(cost.psi_x_theta(x, th)) * float(dist.cdf(th))
        return lam * float(cost.psi_x_theta(x, th)) - (f - k * psi_v)

    def pool_res(x, th, lam):
        cx = float(cost.psi_x(x, th))
        return lam * cx - float(dist.cdf(th)) * (1.0 - k * cx)

    return sep_foc, pool_res


def _unconstrained_schedule(spec: ProblemSpec, k: float, theta: np.ndarray) -> np.ndarray:
    """Pointwise lam = 0 solution: k * psi(x, theta) = 1, clamped at zero.

    Written density-multiplied so types where f vanishes stay well-defined.
    """
    cost, dist = spec.cost, spec.dist
    x = np.empty_like(theta)
    hint = 1.0
    for i, th in enumerate(theta):
        f = float(dist.pdf(th))
        F = float(dist.cdf(th))

        def g(v):
            return k * (float(cost.psi_x(v, th)) * f + float(cost.psi_x_theta(v, th)) * F) - f

        if g(0.0) >= 0.0:
            x[i] = 0.0
        else:
            x[i] = increasing_root(g, hint=max(hint, 1e-8))
        hint = max(x[i], 1e-8)
    return x


def _exclusion_from_grid(theta: np.ndarray, x: np.ndarray, boundary_fn) -> Optional[float]:
    """Refine the first zero of x into a root of the boundary condition."""
    zero = x <= 0.0
    if not np.any(zero):
        return None
    j = int(np.argmax(zero))
    if j == 0:
        return float(theta[0])
    lo, hi = float(theta[j - 1]), float(theta[j])
    try:
        if boundary_fn(lo) < 0.0 < boundary_fn(hi):
            return float(brentq(boundary_fn, lo, hi, xtol=1e-13))
    except ValueError:
        pass
    return float(theta[j])


def solve_linear_value(spec: ProblemSpec, cfg: SolverConfig = None):
    """Solve the linear-resource-value problem.

    Returns (MechanismSolution, LinearValueDiagnostics).  With k = 0 the
    problem is the baseline one and the baseline solver is used verbatim.
    Raises DegenerateMechanismError when even the most efficient type's
    virtual marginal cost at zero action exceeds 1/k.
    """
    cfg = cfg or SolverConfig()
    if not isinstance(spec.variant, LinearValue):
        raise ValueError("spec.variant must be LinearValue")
    k = float(spec.variant.k)
    cost, dist, T = spec.cost, spec.dist, spec.budget

    if k == 0.0:
        sol = solve_baseline(ProblemSpec(cost, dist, T), cfg)
        sol.variant = "linear-value"
        diag = LinearValueDiagnostics(
            lam=sol.lam,
            budget_binds=True,
            theta_hat=sol.theta_hat,
            exclusion_threshold=None,
            w_trace=np.zeros_like(sol.theta),
        )
        sol.diagnostics["k"] = 0.0
        return sol, diag

    psi0_low = float(cost.psi_x(0.0, dist.lower))  # psi(0, lo): F(lo) = 0
    if psi0_low > 0.0 and k > 1.0 / psi0_low:
        raise DegenerateMechanismError(
            f"k = {k} exceeds 1/psi(0, lo) = {1.0 / psi0_low:.6g}; "
            "the optimal mechanism is x = t = 0"
        )

    sep_foc, pool_res = _linear_focs(spec, k)

    # ---- unconstrained pass (lam = 0) -------------------------------------
    theta = dist.grid(cfg.grid_size)
    x_unc = _unconstrained_schedule(spec, k, theta)
    if np.any(np.diff(x_unc) > 1e-9 * max(1.0, x_unc[0])):
        raise RegularityViolatedError(
            "unconstrained pointwise schedule is not monotone; "
            "virtual marginal cost must be increasing in theta"
        )
    spend_unc = normalization_value(ScheduleGrid(theta, x_unc), cost)

    if spend_unc <= T * (1.0 + 1e-10):
        grid = transfers_from_schedule(ScheduleGrid(theta, x_unc), cost)
        excl = _exclusion_from_grid(theta, x_unc, lambda th: sep_foc(0.0, th, 0.0))
        w = np.array([max(sep_foc(0.0, th, 0.0), 0.0) if xi <= 0.0 else 0.0
                      for th, xi in zip(theta, x_unc)])
        sol = MechanismSolution(
            grid=grid,
            lam=0.0,
            theta_hat=float(dist.lower),
            x_bar=float(x_unc[0]),
            variant="linear-value",
            exclusion_threshold=excl,
            budget_binds=False,
            diagnostics={
                "method": "unconstrained",
                "k": k,
                "budget_residual": float(grid.t[0] - T),
                "w": w,
                "foc_residual_max": 0.0,
            },
        )
        return sol, LinearValueDiagnostics(0.0, False, sol.theta_hat, excl, w)

    # ---- budget binds: complete pooling first, else shoot lam > 0 ----------
    cp = _linear_complete_pooling(spec, k, cfg)
    if cp is not None:
        return cp

    grid, lam, x_bar, theta_hat, full = _nested_shooting(spec, cfg, sep_foc, pool_res, "linear-value")
    excl = _exclusion_from_grid(grid.theta, grid.x, lambda th: sep_foc(0.0, th, lam))
    w = np.array([max(sep_foc(0.0, th, lam), 0.0) if xi <= 0.0 else 0.0
                  for th, xi in zip(grid.theta, grid.x)])
    rho = np.where(
        grid.theta <= theta_hat,
        [max(-pool_res(x_bar, float(th), lam), 0.0) for th in grid.theta],
        0.0,
    )
    sol = MechanismSolution(
        grid=grid,
        lam=lam,
        theta_hat=theta_hat,
        x_bar=x_bar,
        variant="linear-value",
        exclusion_threshold=excl,
        budget_binds=True,
        diagnostics={
            "method": "nested-shooting",
            "k": k,
            "budget_residual": float(grid.t[0] - T),
            "w": w,
            "rho": rho,
        },
    )
    sol.diagnostics["threshold_residual"] = linear_threshold_residual(sol, spec)
    return sol, LinearValueDiagnostics(lam, True, theta_hat, excl, w)


def _linear_complete_pooling(spec: ProblemSpec, k: float, cfg: SolverConfig):
    """Exact full-pooling branch for a binding budget.

    With everyone pooled and the budget binding, the pooled action solves
    C(x_bar, hi) = T outright; the candidate is valid iff the implied
    shadow value is positive and the costate stays nonnegative across the
    support.  Returns None when the candidate fails.
    """
    cost, dist, T = spec.cost, spec.dist, spec.budget
    try:
        x_bar = increasing_root(lambda x: float(cost.psi(x, dist.upper)) - T, hint=1.0)
    except Exception:
        return None
    cx_top = float(cost.psi_x(x_bar, dist.upper))
    lam = (1.0 - k * cx_top) / cx_top
    if lam <= 0.0:
        return None
    theta = dist.grid(cfg.grid_size)
    cx = np.array([float(cost.psi_x(x_bar, th)) for th in theta])
    rho = lam * cx - dist.cdf_grid(theta) * (1.0 - k * cx)
    if np.min(rho) < -1e-9 * max(1.0, lam):
        return None
    grid = transfers_from_schedule(ScheduleGrid(theta, np.full_like(theta, x_bar)), cost)
    sol = MechanismSolution(
        grid=grid,
        lam=float(lam),
        theta_hat=float(dist.upper),
        x_bar=float(x_bar),
        variant="linear-value",
        exclusion_threshold=None,
        budget_binds=True,
        diagnostics={
            "method": "complete-pooling",
            "k": k,
            "budget_residual": float(grid.t[0] - T),
            "w": np.zeros_like(theta),
            "rho": rho,
            "foc_residual_max": 0.0,
        },
    )
    return sol, LinearValueDiagnostics(float(lam), True, sol.theta_hat, None, sol.diagnostics["w"])


def linear_threshold_residual(sol: MechanismSolution, spec: ProblemSpec) -> Optional[float]:
    """| C_xtheta / (C_x (1 - k C_x)) - f/F | at the pooling boundary."""
    if not isinstance(spec.variant, LinearValue):
        raise ValueError("spec.variant must be LinearValue")
    k = float(spec.variant.k)
    cost, dist = spec.cost, spec.dist
    th, xb = sol.theta_hat, sol.x_bar
    if th >= dist.upper - 1e-12 or th <= dist.lower + 1e-12:
        return None
    cx = float(cost.psi_x(xb, th))
    lhs = float(cost.psi_x_theta(xb, th)) / (cx * (1.0 - k * cx))
    rhs = float(dist.pdf(th)) / float(dist.cdf(th))
    return abs(lhs - rhs)


def naive_solution(spec: ProblemSpec, cfg: SolverConfig = None):
    """Design ignoring the cap (lam = 0), then truncate transfers at T.

    Returns (MechanismSolution, AuditReport).  The truncated pair keeps the
    unconstrained actions, caps t pointwise at T, and is generally not IC;
    the attached audit quantifies the violation.  x_bar reports the action
    at which the truncation starts paying exactly T (the action a type must
    deliver to collect the full budget).
    """
    cfg = cfg or SolverConfig()
    if not isinstance(spec.variant, LinearValue):
        raise ValueError("spec.variant must be LinearValue")
    k = float(spec.variant.k)
    if k <= 0.0:
        raise ValueError("naive benchmark needs k > 0: with k = 0 the uncapped problem is unbounded")
    cost, dist, T = spec.cost, spec.dist, spec.budget

    theta = dist.grid(cfg.grid_size)
    x = _unconstrained_schedule(spec, k, theta)
    full = transfers_from_schedule(ScheduleGrid(theta, x), cost)
    t_capped = np.minimum(full.t, T)
    grid = ScheduleGrid(theta, x, t_capped)

    if full.t[0] > T:
        # First grid cell where the envelope transfer dips under the cap.
        j = int(np.argmax(full.t <= T))
        t0, t1 = float(full.t[j - 1]), float(full.t[j])
        w = 0.0 if t1 == t0 else (t0 - T) / (t0 - t1)
        theta_T = float(theta[j - 1] + w * (theta[j] - theta[j - 1]))
        x_bar = float(x[j - 1] + w * (x[j] - x[j - 1]))
    else:
        theta_T = None
        x_bar = float(x[0])

    audit = audit_ic_ir(grid, cost, budget=T)
    sol = MechanismSolution(
        grid=grid,
        lam=0.0,
        theta_hat=float(dist.lower),
        x_bar=x_bar,
        variant="naive",
        exclusion_threshold=_exclusion_from_grid(theta, x, lambda th: _linear_focs(spec, k)[0](0.0, th, 0.0)),
        budget_binds=bool(full.t[0] > T),
        diagnostics={
            "method": "naive-truncation",
            "k": k,
            "cap_onset_type": theta_T,
            "expected_spend": expected_spend(grid, dist),
            "objective": objective_value(grid, dist),
            "max_ic_gain": audit.max_ic_gain,
        },
    )
    return sol, audit


def comparative_statics(spec: ProblemSpec, k_grid, cfg: SolverConfig = None) -> dict:
    """Re-solve across k and report finite-difference signs of x_bar and lam.

    Non-binding k values are flagged and excluded from the sign checks.
    Needs at least three budget-binding k values to report both signs.
    """
    cfg = cfg or SolverConfig()
    ks = [float(k) for k in k_grid]
    rows = []
    for k in ks:
        s = ProblemSpec(spec.cost, spec.dist, spec.budget, LinearValue(k))
        sol, diag = solve_linear_value(s, cfg)
        rows.append({
            "k": k,
            "x_bar": sol.x_bar,
            "lam": sol.lam,
            "theta_hat": sol.theta_hat,
            "exclusion_threshold": sol.exclusion_threshold,
            "binding": diag.budget_binds,
            "objective": objective_value(sol.grid, spec.dist),
            "spend": float(sol.grid.t[0]),
            "x_top": float(sol.grid.x[-1]),
        })
    binding = [r for r in rows if r["binding"]]
    if len(binding) < 3:
        raise ValueError("need at least three budget-binding k values for sign checks")
    dx = [b2["x_bar"] - b1["x_bar"] for b1, b2 in zip(binding, binding[1:])]
    dl = [b2["lam"] - b1["lam"] for b1, b2 in zip(binding, binding[1:])]
    return {
        "rows": rows,
        "x_bar_increments": dx,
        "lam_increments": dl,
        "x_bar_increasing": all(d > 0 for d in dx),
        "lam_decreasing": all(d < 0 for d in dl),
        "non_binding_k": [r["k"] for r in rows if not r["binding"]],
    }
