"""Feasible schedules: transfer construction, IC/IR/budget audits, subsidy export.

A schedule x: [lo, hi] -> R+ is implementable by some transfer scheme meeting
incentive compatibility (IC), individual rationality (IR) and the per-type
transfer cap T if and only if

    (1) x is nonincreasing, and
    (2) C(x(lo), lo) + integral_lo^hi C_theta(x(s), s) ds <= T.

The supporting transfer pays each type its cost plus the information rent of
every less efficient type above it:

    t(theta) = C(x(theta), theta) + integral_theta^hi C_theta(x(s), s) ds.

On a grid we represent x as a right-constant step function (x(s) = x_{i+1} on
(theta_i, theta_{i+1}]), under which the rent integral telescopes into exact
cost differences.  That makes the grid transfers satisfy every pairwise IC
inequality to machine precision whenever x is monotone, and makes the budget
check reduce to the lowest type: max_i t_i = t_0 = value of condition (2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InfeasibleScheduleError, NonMonotoneScheduleError
from .model import CostModel, TypeDistribution

_trapz = getattr(np, "trapezoid", None) or np.trapz

__all__ = [
    "ScheduleGrid",
    "SubsidySchedule",
    "AuditReport",
    "transfers_from_schedule",
    "information_rents",
    "normalization_value",
    "check_feasibility",
    "audit_ic_ir",
    "subsidy_schedule",
    "expected_spend",
    "objective_value",
]

# Monotonicity slack for "nonincreasing" checks and constant-run detection.
MONOTONE_SLACK = 1e-9
# Feasibility / IC slack scale: tolerances are tol * max(1, T).
FEASIBILITY_RTOL = 1e-8


@dataclass
class ScheduleGrid:
    """Type grid with per-node action and (optionally) transfer.

    theta must be strictly increasing and span the support it came from;
    x and t are aligned with theta.
    """

    theta: np.ndarray
    x: np.ndarray
    t: Optional[np.ndarray] = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if self.theta.ndim != 1 or self.theta.shape != self.x.shape:
            raise ValueError("theta and x must be matching 1-D arrays")
        if len(self.theta) < 2:
            raise ValueError("need at least two grid nodes")
        if np.any(np.diff(self.theta) <= 0):
            raise ValueError("theta grid must be strictly increasing")
        if self.t is not None:
            self.t = np.asarray(self.t, dtype=float)
            if self.t.shape != self.theta.shape:
                raise ValueError("t must align with theta")

    @property
    def n(self) -> int:
        return len(self.theta)

    def x_monotone(self, slack: float = None) -> bool:
        if slack is None:
            slack = MONOTONE_SLACK * max(1.0, float(self.x[0]))
        return bool(np.all(np.diff(self.x) <= slack))

    def with_t(self, t: np.ndarray) -> "ScheduleGrid":
        return ScheduleGrid(self.theta.copy(), self.x.copy(), np.asarray(t, dtype=float))


@dataclass
class SubsidySchedule:
    """Action-contingent payment map: pay t_level for reaching x_level.

    Stored ascending in action.  Evaluation is piecewise linear between
    breakpoints, linear down to (0, 0) below the lowest one, and flat at the
    top payment above the highest one.
    """

    x_levels: np.ndarray
    t_levels: np.ndarray

    def __post_init__(self):
        self.x_levels = np.asarray(self.x_levels, dtype=float)
        self.t_levels = np.asarray(self.t_levels, dtype=float)
        if np.any(np.diff(self.x_levels) <= 0):
            raise ValueError("action breakpoints must be strictly increasing")
        if np.any(np.diff(self.t_levels) < -1e-12):
            raise ValueError("payment must be nondecreasing in action")

    def __call__(self, x) -> np.ndarray:
        xs = np.concatenate(([0.0], self.x_levels)) if self.x_levels[0] > 0 else self.x_levels
        ts = np.concatenate(([0.0], self.t_levels)) if self.x_levels[0] > 0 else self.t_levels
        return np.interp(np.asarray(x, dtype=float), xs, ts)


@dataclass
class AuditReport:
    """Outcome of the grid IC / IR / budget audit.

    max_ic_gain     -- largest payoff gain over all ordered (type, report)
                       grid pairs; <= tol for honest schedules
    min_ir_slack    -- min over the grid of t - C(x, theta)
    budget_slack    -- T - max_i t_i (None when no budget was supplied)
    normalization_value -- value of feasibility condition (2) for x
    monotone        -- whether x was nonincreasing within slack
    worst_ic_pair   -- (theta, theta_report) achieving max_ic_gain
    """

    max_ic_gain: float
    min_ir_slack: float
    budget_slack: Optional[float]
    normalization_value: float
    monotone: bool
    worst_ic_pair: tuple = (None, None)
    tol: float = FEASIBILITY_RTOL

    def feasible(self, budget: Optional[float] = None) -> bool:
        scale = max(1.0, abs(budget) if budget is not None else 1.0)
        ok = self.monotone and self.max_ic_gain <= self.tol * scale
        ok = ok and self.min_ir_slack >= -self.tol * scale
        if self.budget_slack is not None:
            ok = ok and self.budget_slack >= -self.tol * scale
        return ok


# =============================================================================
# Transfer construction (envelope form)
# =============================================================================

def information_rents(grid: ScheduleGrid, cost: CostModel) -> np.ndarray:
    """Rent of each type: integral of C_theta along the step schedule above it.

    With right-constant steps the cell integral is an exact cost difference,
    so rent_i = sum_{j >= i} [C(x_{j+1}, theta_{j+1}) - C(x_{j+1}, theta_j)].
    """
    th, x = grid.theta, grid.x
    hi = cost.psi_grid(x[1:], th[1:])
    lo = cost.psi_grid(x[1:], th[:-1])
    increments = hi - lo
    rents = np.zeros_like(th)
    rents[:-1] = np.cumsum(increments[::-1])[::-1]
    return rents


def transfers_from_schedule(grid: ScheduleGrid, cost: CostModel) -> ScheduleGrid:
    """Fill in the supporting transfers for a nonincreasing action schedule.

    Raises NonMonotoneScheduleError when x increases beyond slack.  The
    resulting t is nonincreasing and satisfies the grid IC inequalities
    exactly (up to floating-point roundoff).
    """
    if not grid.x_monotone():
        raise NonMonotoneScheduleError("action schedule must be nonincreasing")
    rents = information_rents(grid, cost)
    own_cost = cost.psi_grid(grid.x, grid.theta)
    return grid.with_t(own_cost + rents)


def normalization_value(grid: ScheduleGrid, cost: CostModel) -> float:
    """Value of feasibility condition (2): the transfer owed to the lowest type."""
    rents = information_rents(grid, cost)
    return float(cost.psi(float(grid.x[0]), float(grid.theta[0])) + rents[0])


def check_feasibility(grid: ScheduleGrid, cost: CostModel, budget: float) -> AuditReport:
    """Monotonicity + normalization check, without constructing transfers."""
    monotone = grid.x_monotone()
    norm = normalization_value(grid, cost) if monotone else float("nan")
    slack = budget - norm if monotone else float("-inf")
    return AuditReport(
        max_ic_gain=0.0 if monotone else float("inf"),
        min_ir_slack=0.0,
        budget_slack=slack,
        normalization_value=norm,
        monotone=monotone,
    )


# =============================================================================
# Audits
# =============================================================================

def audit_ic_ir(grid: ScheduleGrid, cost: CostModel, budget: Optional[float] = None) -> AuditReport:
    """Exhaustive pairwise IC scan plus IR and (optional) budget slack.

    For every grid pair (theta, theta'), the gain from reporting theta' is
    [t' - C(x', theta)] - [t - C(x, theta)]; the audit reports the max over
    all ordered pairs.  Exact on the grid; no interpolation.
    """
    if grid.t is None:
        raise ValueError("schedule has no transfers; run transfers_from_schedule first")
    th, x, t = grid.theta, grid.x, grid.t
    # cost_matrix[i, j] = C(x_j, theta_i): cost of type i taking report j's action
    cost_matrix = cost.psi_grid(x[None, :], th[:, None])
    own = t - np.diag(cost_matrix)
    gains = (t[None, :] - cost_matrix) - own[:, None]
    np.fill_diagonal(gains, -np.inf)
    i, j = np.unravel_index(np.argmax(gains), gains.shape)
    max_gain = float(gains[i, j])
    ir = own  # t_i - C(x_i, theta_i)
    report = AuditReport(
        max_ic_gain=max_gain,
        min_ir_slack=float(np.min(ir)),
        budget_slack=None if budget is None else float(budget - np.max(t)),
        normalization_value=normalization_value(grid, cost) if grid.x_monotone() else float("nan"),
        monotone=grid.x_monotone(),
        worst_ic_pair=(float(th[i]), float(th[j])),
    )
    return report


# =============================================================================
# Subsidy-schedule export
# =============================================================================

def _constant_runs(x: np.ndarray, slack: float):
    """Maximal index runs on which x is constant within slack."""
    runs = []
    start = 0
    for i in range(1, len(x)):
        if abs(x[i] - x[start]) > slack:
            runs.append((start, i - 1))
            start = i
    runs.append((start, len(x) - 1))
    return runs


def subsidy_schedule(grid: ScheduleGrid) -> SubsidySchedule:
    """Collapse an implementable (x, t) grid to an action-contingent payment map.

    Any two types assigned the same action must receive the same transfer;
    a violation beyond tolerance means the input never came from a feasible
    mechanism and raises InfeasibleScheduleError.
    """
    if grid.t is None:
        raise ValueError("schedule has no transfers")
    x, t = grid.x, grid.t
    slack = MONOTONE_SLACK * max(1.0, float(x[0]))
    if not grid.x_monotone():
        raise NonMonotoneScheduleError("subsidy export requires nonincreasing x")
    if np.any(np.diff(t) > slack + 1e-9 * max(1.0, float(abs(t[0])))):
        raise InfeasibleScheduleError("transfers must be nonincreasing alongside x")

    t_tol = 1e-7 * max(1.0, float(np.max(np.abs(t))))
    levels = []
    for lo, hi in _constant_runs(x, slack):
        t_run = t[lo : hi + 1]
        if float(np.max(t_run) - np.min(t_run)) > t_tol:
            raise InfeasibleScheduleError(
                f"types with equal action x={x[lo]:.6g} receive different transfers "
                f"(spread {np.max(t_run) - np.min(t_run):.3e}); input is not implementable"
            )
        levels.append((float(np.mean(x[lo : hi + 1])), float(np.mean(t_run))))

    # Ascending in action; drop duplicate action levels produced by slack.
    levels.sort(key=lambda p: p[0])
    xs, ts = [], []
    for xv, tv in levels:
        if xs and abs(xv - xs[-1]) <= slack:
            continue
        xs.append(xv)
        ts.append(tv)
    return SubsidySchedule(np.array(xs), np.array(ts))


# =============================================================================
# Quadrature helpers shared by the solvers
# =============================================================================

def expected_spend(grid: ScheduleGrid, dist: TypeDistribution) -> float:
    """E[t] under the type density, by trapezoid on the schedule grid."""
    if grid.t is None:
        raise ValueError("schedule has no transfers")
    f = dist.pdf_grid(grid.theta)
    return float(_trapz(grid.t * f, grid.theta))


def objective_value(grid: ScheduleGrid, dist: TypeDistribution) -> float:
    """E[x] under the type density: the principal's objective."""
    f = dist.pdf_grid(grid.theta)
    return float(_trapz(grid.x * f, grid.theta))
