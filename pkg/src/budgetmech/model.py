"""Economic primitives: agent cost functions, type distributions, problem specs.

The agent produces an action x >= 0 at private cost C(x, theta), where the
type theta is drawn from a known distribution on a bounded interval.  All
solvers in this package consume the three value objects defined here:

    CostModel        -- C and its partial derivatives, with structural checks
    TypeDistribution -- density f and CDF F on [lower, upper]
    ProblemSpec      -- cost + distribution + budget + problem variant

Cost functions must satisfy, on the region of interest:

    * C(0, theta) = 0                       (normalisation)
    * C_x > 0, C_theta > 0                  (strictly increasing)
    * C_xtheta > 0                          (supermodular: high types face
                                             steeper marginal costs)
    * C_xx >= 0 and C_xx nondecreasing in theta
    * C_theta convex in x                   (keeps the pointwise first-order
                                             conditions sufficient)

``validate_cost_model`` checks every clause on a deterministic sample grid
and reports the worst violating point per clause.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, interpolate

from .errors import CostModelError, DistributionError

__all__ = [
    "CostModel",
    "TypeDistribution",
    "ProblemSpec",
    "Baseline",
    "LinearValue",
    "ExAnte",
    "MultiAgent",
    "ClauseResult",
    "ValidationReport",
    "validate_cost_model",
    "builtin_distribution",
    "builtin_cost",
    "uniform",
    "linear_density",
    "truncated_power",
    "power_cost",
    "quadratic_plus_linear_cost",
    "table_cost",
]


# =============================================================================
# Cost model
# =============================================================================

@dataclass(frozen=True)
class CostModel:
    """Agent cost function C(x, theta) together with its partial derivatives.

    Derivatives are user-supplied (no symbolic differentiation); the
    validator cross-checks them against central finite differences.

    Parameters
    ----------
    psi : Callable[[float, float], float]
        Cost C(x, theta).  Should broadcast over numpy arrays when possible;
        scalar-only callables also work (solvers fall back to loops).
    psi_x, psi_theta, psi_x_theta, psi_xx : Callable[[float, float], float]
        Partial derivatives dC/dx, dC/dtheta, d2C/dxdtheta, d2C/dx2.
    gamma, gamma_prime, gamma_prime_inv : optional callables
        Present when the cost is multiplicatively separable,
        C(x, theta) = theta * gamma(x).  ``gamma_prime_inv`` inverts
        gamma' on [gamma'(0), inf); the closed-form solver clamps the
        action at zero for arguments below gamma'(0).
    name : str
        Human-readable label used in reports and CSV headers.
    """

    psi: Callable[[float, float], float]
    psi_x: Callable[[float, float], float]
    psi_theta: Callable[[float, float], float]
    psi_x_theta: Callable[[float, float], float]
    psi_xx: Callable[[float, float], float]
    gamma: Optional[Callable[[float], float]] = None
    gamma_prime: Optional[Callable[[float], float]] = None
    gamma_prime_inv: Optional[Callable[[float], float]] = None
    name: str = "custom"

    @property
    def separable(self) -> bool:
        """True when C(x, theta) = theta * gamma(x) with gamma supplied."""
        return self.gamma is not None

    def psi_grid(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Evaluate C on broadcastable arrays, falling back to a loop."""
        return _grid_eval(self.psi, x, theta)

    def psi_theta_grid(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return _grid_eval(self.psi_theta, x, theta)


def _grid_eval(fn, x, theta) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    shape = np.broadcast_shapes(x.shape, theta.shape)
    try:
        out = np.asarray(fn(x, theta), dtype=float)
        if out.shape == shape:
            return out
    except Exception:
        pass
    xb = np.broadcast_to(x, shape).ravel()
    tb = np.broadcast_to(theta, shape).ravel()
    return np.array([fn(xi, ti) for xi, ti in zip(xb, tb)]).reshape(shape)


def power_cost(exponent: float = 2.0) -> CostModel:
    """Separable cost theta * x**p with p >= 1.

    For p = 2 this is the workhorse quadratic family: C_x = 2 theta x,
    C_xtheta = 2x, C_xx = 2 theta.
    """
    if exponent < 1.0:
        raise CostModelError(f"power cost needs exponent >= 1, got {exponent}")
    p = float(exponent)

    def gamma_prime_inv(y):
        y = np.asarray(y, dtype=float)
        if p == 1.0:
            # gamma' is constant; no interior inverse exists.
            raise CostModelError("gamma' not invertible for the linear cost x**1")
        return np.where(y <= 0.0, 0.0, (np.maximum(y, 0.0) / p) ** (1.0 / (p - 1.0)))

    return CostModel(
        psi=lambda x, th: th * x**p,
        psi_x=lambda x, th: th * p * x ** (p - 1.0),
        psi_theta=lambda x, th: x**p + 0.0 * th,
        psi_x_theta=lambda x, th: p * x ** (p - 1.0) + 0.0 * th,
        psi_xx=lambda x, th: th * p * (p - 1.0) * x ** (p - 2.0) if p != 1.0 else 0.0 * x * th,
        gamma=lambda x: x**p,
        gamma_prime=lambda x: p * x ** (p - 1.0),
        gamma_prime_inv=None if p == 1.0 else gamma_prime_inv,
        name=f"power(p={p:g})",
    )


def quadratic_plus_linear_cost() -> CostModel:
    """Separable cost theta * (x**2 + x).

    Unlike the pure power family, the marginal cost at x = 0 is theta > 0,
    so a principal with a high enough resource value excludes inefficient
    types entirely.
    """
    return CostModel(
        psi=lambda x, th: th * (x**2 + x),
        psi_x=lambda x, th: th * (2.0 * x + 1.0),
        psi_theta=lambda x, th: x**2 + x + 0.0 * th,
        psi_x_theta=lambda x, th: 2.0 * x + 1.0 + 0.0 * th,
        psi_xx=lambda x, th: 2.0 * th + 0.0 * x,
        gamma=lambda x: x**2 + x,
        gamma_prime=lambda x: 2.0 * x + 1.0,
        gamma_prime_inv=lambda y: np.maximum(np.asarray(y, dtype=float) - 1.0, 0.0) / 2.0,
        name="quadratic_plus_linear",
    )


def table_cost(x_knots: Sequence[float], gamma_values: Sequence[float]) -> CostModel:
    """Separable cost theta * gamma(x) with gamma tabulated on a knot grid.

    gamma is interpolated with a monotone cubic (PCHIP), so the table must
    be strictly increasing and start at gamma(0) = 0.
    """
    xs = np.asarray(x_knots, dtype=float)
    gs = np.asarray(gamma_values, dtype=float)
    if xs.ndim != 1 or xs.shape != gs.shape or len(xs) < 3:
        raise CostModelError("table cost needs matching 1-D knot arrays of length >= 3")
    if xs[0] != 0.0 or gs[0] != 0.0:
        raise CostModelError("table cost must start at (x, gamma) = (0, 0)")
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(gs) <= 0):
        raise CostModelError("table cost knots must be strictly increasing")

    g = interpolate.PchipInterpolator(xs, gs, extrapolate=True)
    g1 = g.derivative(1)
    g2 = g.derivative(2)

    return CostModel(
        psi=lambda x, th: th * g(x),
        psi_x=lambda x, th: th * g1(x),
        psi_theta=lambda x, th: g(x) + 0.0 * th,
        psi_x_theta=lambda x, th: g1(x) + 0.0 * th,
        psi_xx=lambda x, th: th * g2(x),
        gamma=lambda x: float(g(x)) if np.isscalar(x) else g(x),
        gamma_prime=lambda x: float(g1(x)) if np.isscalar(x) else g1(x),
        gamma_prime_inv=None,  # inverted numerically by the separable solver
        name="custom-table",
    )


_COST_FAMILIES = {
    "power": lambda params: power_cost(params.get("exponent", 2.0)),
    "quadratic_plus_linear": lambda params: quadratic_plus_linear_cost(),
    "custom-table": lambda params: table_cost(params["x"], params["gamma"]),
}


def builtin_cost(family: str, **params) -> CostModel:
    """Construct a cost model from its string key ('power', ...)."""
    try:
        maker = _COST_FAMILIES[family]
    except KeyError:
        raise CostModelError(
            f"unknown cost family {family!r}; known: {sorted(_COST_FAMILIES)}"
        ) from None
    return maker(params)


# =============================================================================
# Type distribution
# =============================================================================

@dataclass(frozen=True)
class TypeDistribution:
    """Continuous type distribution on a bounded support [lower, upper].

    ``pdf`` must be strictly positive on the open support and ``cdf`` must
    run from 0 at ``lower`` to 1 at ``upper``.  Point masses are not allowed
    here; discrete problems go through the oracle / discrete modules.
    """

    lower: float
    upper: float
    pdf: Callable[[float], float]
    cdf: Callable[[float], float]
    name: str = "custom"

    def __post_init__(self):
        if not (self.upper > self.lower):
            raise DistributionError(
                f"support must have positive length, got [{self.lower}, {self.upper}]"
            )
        if self.lower < 0.0:
            raise DistributionError("types must be nonnegative")

    def grid(self, n: int) -> np.ndarray:
        """Uniform grid of n nodes spanning the support."""
        return np.linspace(self.lower, self.upper, n)

    def pdf_grid(self, theta: np.ndarray) -> np.ndarray:
        return _grid_eval(lambda t, _z: self.pdf(t), np.asarray(theta, float), 0.0)

    def cdf_grid(self, theta: np.ndarray) -> np.ndarray:
        return _grid_eval(lambda t, _z: self.cdf(t), np.asarray(theta, float), 0.0)


def uniform(lower: float, upper: float) -> TypeDistribution:
    """Uniform distribution on [lower, upper]."""
    width = upper - lower
    if width <= 0:
        raise DistributionError("uniform needs lower < upper")
    return TypeDistribution(
        lower=float(lower),
        upper=float(upper),
        pdf=lambda th: 0.0 * np.asarray(th, dtype=float) + 1.0 / width,
        cdf=lambda th: np.clip((np.asarray(th, dtype=float) - lower) / width, 0.0, 1.0),
        name=f"uniform[{lower:g},{upper:g}]",
    )


def linear_density(lower: float, upper: float, slope: float) -> TypeDistribution:
    """Linearly tilted density on [lower, upper].

    f(theta) = 1/(b-a) + slope * (theta - (a+b)/2), which integrates to one
    for any slope; positivity at the endpoints bounds |slope| by 2/(b-a)^2.
    slope = -2 on [1, 2] gives the downward-sloping f(theta) = 2(2-theta).
    """
    a, b = float(lower), float(upper)
    if b <= a:
        raise DistributionError("linear_density needs lower < upper")
    mid = 0.5 * (a + b)
    base = 1.0 / (b - a)
    # Density may vanish at an endpoint but not inside the support.
    if base + slope * (a - mid) < 0 or base + slope * (b - mid) < 0:
        raise DistributionError(
            f"slope {slope} makes the density negative inside the support"
        )

    def pdf(th):
        th = np.asarray(th, dtype=float)
        return base + slope * (th - mid)

    def cdf(th):
        th = np.asarray(th, dtype=float)
        z = np.clip(th, a, b)
        return base * (z - a) + 0.5 * slope * ((z - mid) ** 2 - (a - mid) ** 2)

    return TypeDistribution(a, b, pdf, cdf, name=f"linear[{a:g},{b:g};slope={slope:g}]")


def truncated_power(lower: float, upper: float, exponent: float) -> TypeDistribution:
    """Density proportional to theta**exponent on [lower, upper] (lower >= 0)."""
    a, b, p = float(lower), float(upper), float(exponent)
    if b <= a or a < 0:
        raise DistributionError("truncated_power needs 0 <= lower < upper")
    if p <= -1.0 and a == 0.0:
        raise DistributionError("exponent <= -1 not integrable at zero")
    if p == -1.0:
        norm = math.log(b) - math.log(a)
        cdf_raw = lambda th: np.log(np.asarray(th, dtype=float)) - math.log(a)
    else:
        norm = (b ** (p + 1) - a ** (p + 1)) / (p + 1)
        cdf_raw = lambda th: (np.asarray(th, dtype=float) ** (p + 1) - a ** (p + 1)) / (p + 1)

    def pdf(th):
        th = np.asarray(th, dtype=float)
        return th**p / norm

    def cdf(th):
        z = np.clip(np.asarray(th, dtype=float), a, b)
        return cdf_raw(z) / norm

    return TypeDistribution(a, b, pdf, cdf, name=f"power[{a:g},{b:g};p={p:g}]")


_DIST_KINDS = {
    "uniform": lambda p: uniform(p["lower"], p["upper"]),
    "linear-density": lambda p: linear_density(p["lower"], p["upper"], p["slope"]),
    "truncated-power": lambda p: truncated_power(p["lower"], p["upper"], p["exponent"]),
}


def builtin_distribution(kind: str, **params) -> TypeDistribution:
    """Construct a distribution from its string key.

    Kinds: 'uniform' (lower, upper), 'linear-density' (lower, upper, slope),
    'truncated-power' (lower, upper, exponent).
    """
    try:
        maker = _DIST_KINDS[kind]
    except KeyError:
        raise DistributionError(
            f"unknown distribution kind {kind!r}; known: {sorted(_DIST_KINDS)}"
        ) from None
    return maker(params)


def validate_distribution(dist: TypeDistribution, samples: int = 64) -> None:
    """Raise DistributionError unless f, F behave like a proper density/CDF.

    Checks: F(lower)=0 and F(upper)=1 within 1e-9, F nondecreasing with
    numerical derivative matching f within 1e-4, positive density, and
    total mass 1 within 1e-8 by adaptive quadrature.
    """
    a, b = dist.lower, dist.upper
    if abs(float(dist.cdf(a))) > 1e-9 or abs(float(dist.cdf(b)) - 1.0) > 1e-9:
        raise DistributionError("cdf must run from 0 at the lower end to 1 at the upper end")
    thetas = np.linspace(a, b, samples)
    F = np.array([float(dist.cdf(t)) for t in thetas])
    if np.any(np.diff(F) < -1e-12):
        raise DistributionError("cdf must be nondecreasing")
    h = 1e-6 * (b - a)
    for t in thetas[1:-1]:
        fd = (float(dist.cdf(t + h)) - float(dist.cdf(t - h))) / (2 * h)
        f = float(dist.pdf(t))
        if f <= 0.0:
            raise DistributionError(f"density must be positive on the support; f({t}) = {f}")
        if abs(fd - f) > 1e-4 * max(1.0, abs(f)):
            raise DistributionError(
                f"cdf derivative {fd:.6g} does not match pdf {f:.6g} at theta={t:.6g}"
            )
    mass, _err = integrate.quad(lambda t: float(dist.pdf(t)), a, b, limit=200)
    if abs(mass - 1.0) > 1e-8:
        raise DistributionError(f"density integrates to {mass!r}, not 1")


# =============================================================================
# Problem variants and spec
# =============================================================================

@dataclass(frozen=True)
class Baseline:
    """Per-type transfer cap t(theta) <= T; resource worthless to the principal."""


@dataclass(frozen=True)
class LinearValue:
    """Principal values unspent resource linearly at rate k >= 0."""

    k: float

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"resource value k must be >= 0, got {self.k}")


@dataclass(frozen=True)
class ExAnte:
    """Only the expected transfer is capped: E[t] <= T."""


@dataclass(frozen=True)
class MultiAgent:
    """N agents compete; the principal contracts the best reported type."""

    n_agents: int

    def __post_init__(self):
        if int(self.n_agents) != self.n_agents or self.n_agents < 1:
            raise ValueError(f"n_agents must be an integer >= 1, got {self.n_agents}")


Variant = Baseline | LinearValue | ExAnte | MultiAgent


@dataclass(frozen=True)
class ProblemSpec:
    """A fully specified design problem: cost + belief + budget + variant."""

    cost: CostModel
    dist: TypeDistribution
    budget: float
    variant: Variant = field(default_factory=Baseline)

    def __post_init__(self):
        if not (self.budget > 0.0):
            raise ValueError(f"budget must be positive, got {self.budget}")

    def with_variant(self, variant: Variant) -> "ProblemSpec":
        return ProblemSpec(self.cost, self.dist, self.budget, variant)

    @property
    def variant_name(self) -> str:
        return {
            Baseline: "baseline",
            LinearValue: "linear-value",
            ExAnte: "ex-ante",
            MultiAgent: "multi-agent",
        }[type(self.variant)]


# =============================================================================
# Assumption validation
# =============================================================================

@dataclass
class ClauseResult:
    """Outcome of one structural clause on the sample grid."""

    name: str
    passed: bool
    worst_value: float
    worst_point: tuple  # (x, theta) achieving worst_value

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        x, th = self.worst_point
        return f"[{status}] {self.name}: worst {self.worst_value:.3e} at (x={x:.4g}, theta={th:.4g})"


@dataclass
class ValidationReport:
    clauses: list
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.clauses)

    def clause(self, name: str) -> ClauseResult:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self):
        lines = [str(c) for c in self.clauses]
        for k, v in self.info.items():
            lines.append(f"[info] {k}: {v:.3e}" if isinstance(v, float) else f"[info] {k}: {v}")
        return "\n".join(lines)


_FD_REL_TOL = 1e-5  # supplied partials vs central differences


def validate_cost_model(
    cost: CostModel,
    dist: TypeDistribution,
    samples: int = 24,
    x_range: tuple = (0.05, 2.0),
) -> ValidationReport:
    """Check the structural assumptions on a deterministic sample grid.

    A ``samples`` x ``samples`` grid over ``x_range`` x support is used; the
    action range must be strictly positive since several clauses are only
    required on interior points.  Raises CostModelError when the zero-action
    normalisation C(0, theta) = 0 fails; every other clause lands in the
    report with its worst offending sample point.
    """
    if samples < 16:
        raise ValueError("need at least 16 sample points per axis")
    x_lo, x_hi = x_range
    if not (0.0 < x_lo < x_hi):
        raise ValueError("action sampling range must be strictly positive")

    xs = np.linspace(x_lo, x_hi, samples)
    thetas = np.linspace(dist.lower, dist.upper, samples)
    # Interior-type grid for clauses quantified over the open support.
    if dist.lower <= 0.0:
        thetas = np.linspace(dist.lower + (dist.upper - dist.lower) / samples, dist.upper, samples)

    for th in thetas:
        v = float(cost.psi(0.0, th))
        if abs(v) > 1e-12:
            raise CostModelError(f"cost at x=0 must vanish; C(0, {th:.4g}) = {v!r}")

    clauses = []

    def sweep(name, fn, lower_bound, strict=True):
        """Record min of fn over the grid; pass iff min > or >= lower_bound."""
        worst = math.inf
        worst_pt = (xs[0], thetas[0])
        for x in xs:
            for th in thetas:
                v = float(fn(x, th))
                if v < worst:
                    worst, worst_pt = v, (x, th)
        passed = worst > lower_bound if strict else worst >= lower_bound
        clauses.append(ClauseResult(name, passed, worst, worst_pt))
        return worst

    sweep("increasing in action (C_x > 0)", cost.psi_x, 0.0)
    sweep("increasing in type (C_theta > 0)", cost.psi_theta, 0.0)
    sweep("supermodular (C_xtheta > 0)", cost.psi_x_theta, 0.0)
    min_cxx = sweep("convex in action (C_xx >= 0)", cost.psi_xx, -1e-12, strict=False)

    dth = (thetas[-1] - thetas[0]) / (4.0 * samples)
    sweep(
        "convexity nondecreasing in type",
        lambda x, th: (cost.psi_xx(x, min(th + dth, thetas[-1]))
                       - cost.psi_xx(x, max(th - dth, thetas[0]))),
        -1e-9,
        strict=False,
    )

    dx = (x_hi - x_lo) / (8.0 * samples)
    sweep(
        "type gradient convex in action",
        lambda x, th: (cost.psi_theta(x + dx, th) - 2.0 * cost.psi_theta(x, th)
                       + cost.psi_theta(x - dx, th)),
        -1e-9 * max(1.0, abs(float(cost.psi_theta(x_hi, thetas[-1])))),
        strict=False,
    )

    # Supplied partials vs central finite differences of C itself.
    def fd_clause(name, supplied, fd):
        worst = 0.0
        worst_pt = (xs[0], thetas[0])
        for x in xs:
            for th in thetas:
                s, d = float(supplied(x, th)), float(fd(x, th))
                err = abs(s - d) / max(1.0, abs(s))
                if err > worst:
                    worst, worst_pt = err, (x, th)
        clauses.append(ClauseResult(name, worst <= _FD_REL_TOL, worst, worst_pt))

    hx = 1e-5 * max(1.0, x_hi)
    ht = 1e-5 * max(1.0, thetas[-1])
    fd_clause(
        "C_x matches finite differences",
        cost.psi_x,
        lambda x, th: (cost.psi(x + hx, th) - cost.psi(x - hx, th)) / (2 * hx),
    )
    fd_clause(
        "C_theta matches finite differences",
        cost.psi_theta,
        lambda x, th: (cost.psi(x, th + ht) - cost.psi(x, th - ht)) / (2 * ht),
    )
    fd_clause(
        "C_xtheta matches finite differences",
        cost.psi_x_theta,
        lambda x, th: (cost.psi(x + hx, th + ht) - cost.psi(x - hx, th + ht)
                       - cost.psi(x + hx, th - ht) + cost.psi(x - hx, th - ht))
        / (4 * hx * ht),
    )
    fd_clause(
        "C_xx matches finite differences",
        cost.psi_xx,
        lambda x, th: (cost.psi(x + hx, th) - 2 * cost.psi(x, th) + cost.psi(x - hx, th)) / (hx * hx),
    )

    info = {}
    info["strictly convex in action"] = bool(min_cxx > 1e-12)
    if not info["strictly convex in action"]:
        info["note"] = "not strictly convex: C_xx touches zero on the sample grid"
    # Reported for information only, never enforced.
    worst_c3 = math.inf
    for x in xs:
        for th in thetas[1:-1]:
            v = (cost.psi_x_theta(x, th + dth) - cost.psi_x_theta(x, th - dth)) / (2 * dth)
            worst_c3 = min(worst_c3, float(v))
    info["min C_thetathetax (informational)"] = worst_c3

    return ValidationReport(clauses=clauses, info=info)
