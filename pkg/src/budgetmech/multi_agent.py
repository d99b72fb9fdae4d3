"""Multi-agent variants: order-statistic reduction and the two-agent BIC example.

With N symmetric agents and the principal contracting the best reported
type, the design problem collapses to the single-agent one under the
first-order-statistic belief F_min = 1 - (1 - F)^N: solve the baseline
problem against that distribution.

``solve_discrete_bic`` handles the weaker Bayesian-IC notion for two agents
on a finite type set: each agent's deviation payoff is scaled by the
probability of being selected given the reported type, which lets the
designer suppress the information rent of intermediate types so hard that
the optimal action schedule can be non-monotone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baseline import MechanismSolution, SolverConfig, solve_baseline
from .model import CostModel, MultiAgent, ProblemSpec, TypeDistribution
from .rootfind import increasing_root

__all__ = [
    "DiscreteMechanism",
    "order_statistic_distribution",
    "solve_multi_agent",
    "solve_discrete_bic",
    "bic_table",
]


@dataclass
class DiscreteMechanism:
    """Finite-type mechanism: per-type action, transfer and win probability."""

    types: np.ndarray
    probs: np.ndarray
    actions: np.ndarray
    transfers: np.ndarray
    objective: float
    win_probs: Optional[np.ndarray] = None  # BIC case only
    diagnostics: dict = field(default_factory=dict)


# =============================================================================
# Order-statistic reduction
# =============================================================================

def order_statistic_distribution(dist: TypeDistribution, n_agents: int) -> TypeDistribution:
    """Distribution of the minimum of n_agents independent draws from dist.

    F_min = 1 - (1 - F)^N with density N (1 - F)^(N-1) f.  N = 1 returns the
    input object unchanged so the reduction is exactly the identity.
    """
    if int(n_agents) != n_agents or n_agents < 1:
        raise ValueError(f"n_agents must be an integer >= 1, got {n_agents}")
    n = int(n_agents)
    if n == 1:
        return dist

    def pdf(th):
        return n * (1.0 - np.asarray(dist.cdf(th), dtype=float)) ** (n - 1) * np.asarray(dist.pdf(th), dtype=float)

    def cdf(th):
        return 1.0 - (1.0 - np.asarray(dist.cdf(th), dtype=float)) ** n

    return TypeDistribution(dist.lower, dist.upper, pdf, cdf, name=f"min{n}({dist.name})")


def solve_multi_agent(spec: ProblemSpec, cfg: SolverConfig = None) -> MechanismSolution:
    """Solve the N-agent best-type contracting problem.

    Equivalent to the baseline problem under the first-order-statistic
    belief; with N = 1 this is bit-for-bit the baseline solve.
    """
    if not isinstance(spec.variant, MultiAgent):
        raise ValueError("spec.variant must be MultiAgent")
    tilted = order_statistic_distribution(spec.dist, spec.variant.n_agents)
    sol = solve_baseline(ProblemSpec(spec.cost, tilted, spec.budget), cfg)
    sol.variant = "multi-agent"
    sol.diagnostics["n_agents"] = spec.variant.n_agents
    return sol


# =============================================================================
# Two-agent Bayesian-IC optimizer on a finite type set
# =============================================================================

def _win_probs(probs: np.ndarray, tie_break: str) -> np.ndarray:
    """Selection probability of an agent reporting type i, opponent truthful.

    'split': ties selected with probability 1/2 each.  'none': nobody is
    selected on a tie (the principal may keep the resource).
    """
    above = np.concatenate([np.cumsum(probs[::-1])[::-1][1:], [0.0]])  # P(other > type_i)
    if tie_break == "split":
        return above + 0.5 * probs
    if tie_break == "none":
        return above
    raise ValueError(f"unknown tie_break {tie_break!r}")


def _winner_type_probs(probs: np.ndarray, tie_break: str) -> np.ndarray:
    """Probability that the contracted agent has type i (two agents)."""
    tail = np.cumsum(probs[::-1])[::-1]  # P(type >= i)
    tail_strict = np.concatenate([tail[1:], [0.0]])
    q = tail**2 - tail_strict**2  # P(min of two draws = i)
    if tie_break == "none":
        q = q - probs**2  # both reporting i leaves the contract unassigned
    return q


def _min_rents(u_dev: np.ndarray, w: np.ndarray):
    """Least nonnegative rents satisfying w_i U_i >= w_j (U_j + u_dev[i, j]).

    u_dev[i, j] = C(x_j, type_j) - C(x_j, type_i): the transfer component of
    mimicking j net of the deviator's own cost.  In the scaled variables
    V_i = w_i U_i the system is a set of difference constraints
    V_i >= V_j + b_ij with b_ij = w_j * u_dev[i, j] (the probability ratios
    cancel around every cycle), so the least solution is a longest-path
    computation: n relaxation rounds of Bellman-Ford, with a further
    relaxation meaning a positive cycle, i.e. no finite rents exist.
    Returns None in that case.  Rows with w_i = 0 owe no rent; their IC
    constraints are transfer caps handled by the caller.
    """
    n = len(w)
    b = w[None, :] * u_dev  # b[i, j]: j -> i edge weight
    active = w > 0.0
    V = np.zeros(n)
    for round_ in range(n + 1):
        cand = V[None, :] + b
        np.fill_diagonal(cand, -np.inf)
        cand[:, ~active] = -np.inf  # deviating to a never-winning report pays nothing
        new = np.maximum(cand.max(axis=1), 0.0)
        new = np.where(active, new, 0.0)
        if np.all(new <= V + 1e-12 * np.maximum(1.0, np.abs(V))):
            return np.where(active, new / np.where(active, w, 1.0), 0.0)
        V = new
    return None


def _rent_floor(x: np.ndarray, types, probs, cost, T, W) -> Optional[np.ndarray]:
    """Least transfers supporting actions x under BIC; None if infeasible."""
    dev_cost = cost.psi_grid(x[None, :], types[:, None])  # C(x_j, type_i)
    own = np.diag(dev_cost).copy()
    u_dev = own[None, :] - dev_cost  # C(x_j, t_j) - C(x_j, t_i)
    U = _min_rents(u_dev, W)
    if U is None:
        return None
    t = U + own
    # Types that never win constrain others' transfers directly.
    for i in np.where(W <= 0)[0]:
        for j in range(len(x)):
            if j != i and W[j] > 0 and t[j] - dev_cost[i, j] > 1e-12:
                return None
    if np.any(t > T * (1 + 1e-12)):
        return None
    return t


def _max_feasible_action(i, x, types, probs, cost, T, W, x_cap) -> float:
    """Largest x_i keeping the profile implementable, others fixed."""
    trial = x.copy()

    def ok(v):
        trial[i] = v
        return _rent_floor(trial, types, probs, cost, T, W) is not None

    if not ok(0.0):
        return -1.0
    lo, hi = 0.0, x_cap[i]
    if ok(hi):
        return hi
    for _ in range(52):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def solve_discrete_bic(
    types,
    probs,
    cost: CostModel,
    budget: float,
    cfg: SolverConfig = None,
    tie_break: str = "split",
) -> DiscreteMechanism:
    """Expected-winner-output maximization under two-agent Bayesian IC.

    Maximizes sum_i P(winner type = i) x_i over per-type actions and
    transfers subject to interim IC (deviation payoffs scaled by the
    report's selection probability), IR, and t_i <= T.  Multistart
    projected search: seeded random starts, coordinate-wise maximal
    actions via bisection on the feasibility frontier, then pairwise
    frontier polish.  Deterministic for a fixed cfg.seed.
    """
    cfg = cfg or SolverConfig()
    types = np.asarray(types, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if len(types) < 2 or np.any(np.diff(types) <= 0):
        raise ValueError("need at least two strictly increasing types")
    if abs(probs.sum() - 1.0) > 1e-9 or np.any(probs < 0):
        raise ValueError("probs must be a probability vector")
    if budget < 0:
        raise ValueError("budget must be nonnegative")

    n = len(types)
    W = _win_probs(probs, tie_break)
    weights = _winner_type_probs(probs, tie_break)
    x_cap = np.array([
        increasing_root(lambda v, th=th: float(cost.psi(v, th)) - budget, hint=1.0)
        for th in types
    ])

    def objective(x):
        return float(np.dot(weights, x))

    def sweep(x, freeze=()):
        """Coordinate ascent to a frontier point, richest types first.

        Coordinates in ``freeze`` are left alone; coordinates that admit no
        feasible value given the rest are repaired to zero.
        """
        order = [i for i in np.argsort(-weights) if i not in freeze]
        for _round in range(30):
            moved = 0.0
            for i in order:
                best = _max_feasible_action(i, x, types, probs, cost, budget, W, x_cap)
                if best < 0.0:
                    best = 0.0
                moved = max(moved, abs(best - x[i]))
                x[i] = best
            if moved < 1e-10:
                break
        return x

    def polish(x):
        """Walk the feasibility frontier: concede on one coordinate, let the
        others re-maximize, keep the move when the objective improves."""
        best_obj = objective(x)
        step = 0.25 * float(np.max(x_cap))
        while step > 1e-9:
            improved = False
            for i in range(n):
                trial = x.copy()
                trial[i] = max(trial[i] - step, 0.0)
                trial = sweep(trial, freeze=(i,))
                if _rent_floor(trial, types, probs, cost, budget, W) is None:
                    continue
                obj = objective(trial)
                if obj > best_obj + 1e-12:
                    x, best_obj, improved = trial, obj, True
            if not improved:
                step *= 0.5
        return x, best_obj

    rng = np.random.default_rng(cfg.seed)
    starts = [np.zeros(n), x_cap.copy(), np.full(n, 0.5) * x_cap]
    while len(starts) < max(cfg.restarts, 8):
        starts.append(rng.uniform(0.0, 1.0, size=n) * x_cap)

    # Frontier points from every restart; the expensive pairwise polish runs
    # only on the leading candidates (the frontier is low-dimensional).
    candidates = []
    for start in starts:
        x = sweep(np.minimum(start.astype(float), x_cap))
        if _rent_floor(x, types, probs, cost, budget, W) is None:
            continue
        candidates.append((objective(x), x))
    if not candidates:
        raise RuntimeError("no feasible mechanism found (should not happen: x = 0 is feasible)")
    candidates.sort(key=lambda c: -c[0])
    leaders, seen = [], []
    for obj, x in candidates:
        if any(np.max(np.abs(x - s)) < 1e-6 for s in seen):
            continue
        leaders.append(x)
        seen.append(x)
        if len(leaders) >= 3:
            break

    best_x, best_obj = None, -np.inf
    for x in leaders:
        xp, obj = polish(x.copy())
        if obj > best_obj:
            best_x, best_obj = xp.copy(), obj

    t = _rent_floor(best_x, types, probs, cost, budget, W)
    audit = audit_discrete_bic(types, probs, best_x, t, cost, budget, W)
    return DiscreteMechanism(
        types=types,
        probs=probs,
        actions=best_x,
        transfers=t,
        objective=best_obj,
        win_probs=W,
        diagnostics={"tie_break": tie_break, **audit},
    )


def audit_discrete_bic(types, probs, x, t, cost, budget, W) -> dict:
    """Worst BIC / IR / budget violations of a finite mechanism."""
    n = len(types)
    own = np.array([float(cost.psi(x[i], types[i])) for i in range(n)])
    U = W * (t - own)
    worst_bic = -np.inf
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dev = W[j] * (t[j] - float(cost.psi(x[j], types[i])))
            worst_bic = max(worst_bic, dev - U[i])
    return {
        "max_bic_gain": float(worst_bic),
        "min_ir_slack": float(np.min(t - own)),
        "budget_slack": float(budget - np.max(t)),
    }


def bic_table(deltas=(0.3, 0.4, 0.5), cfg: SolverConfig = None, tie_break: str = "split"):
    """Three-type two-agent example across the mid-type weight delta.

    Types {1, 2, 3} with quadratic-in-action cost theta x^2, budget 3; the
    top type has probability 0.8 and delta is the conditional probability
    of the middle type among the rest.
    """
    from .model import power_cost

    cost = power_cost(2.0)
    rows = []
    for delta in deltas:
        p3 = 0.8
        p2 = delta * (1.0 - p3)
        p1 = (1.0 - delta) * (1.0 - p3)
        mech = solve_discrete_bic([1.0, 2.0, 3.0], [p1, p2, p3], cost, 3.0, cfg, tie_break)
        rows.append({
            "delta": float(delta),
            "x": mech.actions.copy(),
            "t": mech.transfers.copy(),
            "objective": mech.objective,
            "mechanism": mech,
        })
    return rows
