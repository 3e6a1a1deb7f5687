"""Minimum distance estimation of the Pareto exponent from top shares.

The efficient estimator minimizes

    G(xi) = (r(xi) - sbar)' Omega(xi)^{-1} (r(xi) - sbar)

over xi = 1/alpha, re-evaluating the weighting matrix at every candidate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import optimize, stats

from .tail_moments import (
    XI_MAX,
    XI_MIN,
    PercentileGrid,
    _check_xi,
    _cholesky,
    _omega_and_derivative,
    _ratio_and_omega,
    omega_matrix,
    ratio_jacobian,
    ratio_vector,
)

__all__ = [
    "BOUNDARY_MARGIN",
    "BoundaryWarning",
    "TailViolationError",
    "MissingSampleSizeError",
    "TopShareTabulation",
    "EstimationResult",
    "normalize_shares",
    "cumde_objective",
    "estimate_cumde",
    "estimate_simple",
    "wald_ci",
    "lr_ci",
    "specification_test",
]

BOUNDARY_MARGIN = 1e-3
ALPHA_MIN = 1.0 / XI_MAX
ALPHA_MAX = 1.0 / XI_MIN


class BoundaryWarning(UserWarning):
    """The minimizer landed next to the edge of the admissible xi interval."""


class TailViolationError(ValueError):
    """Shares imply a non-positive or infinite-mean Pareto exponent."""


class MissingSampleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class TopShareTabulation:
    """Cumulative top shares ``S_k`` observed at the percentiles of ``grid``."""

    grid: PercentileGrid
    shares: tuple[float, ...]
    year: Optional[int] = None
    n: Optional[int] = None

    def __post_init__(self):
        s = tuple(float(v) for v in self.shares)
        object.__setattr__(self, "shares", s)
        if len(s) != len(self.grid.p):
            raise ValueError(f"{len(s)} shares for {len(self.grid.p)} percentiles")
        if not all(math.isfinite(v) for v in s) or s[0] <= 0 or s[-1] > 1:
            raise ValueError(f"shares must lie in (0, 1], got {s}")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError(f"shares must be strictly increasing, got {s}")
        if self.n is not None and self.n < 1:
            raise ValueError(f"sample size must be positive, got {self.n}")

    def sub(self, first: int, last: int) -> "TopShareTabulation":
        """Restrict to percentiles ``first..last`` (0-based, inclusive)."""
        return replace(self, grid=self.grid.sub(first, last), shares=self.shares[first:last + 1])

    def share_at(self, p: float) -> float:
        for pk, sk in zip(self.grid.p, self.shares):
            if math.isclose(pk, p, rel_tol=1e-12):
                return sk
        raise KeyError(f"percentile {p} not in grid {self.grid.p}")


@dataclass(frozen=True)
class EstimationResult:
    xi_hat: float
    objective_at_min: float
    K: int
    n: Optional[int] = None
    at_boundary: bool = False
    wald_ci: Optional[tuple[float, float]] = None
    lr_ci: Optional[tuple[float, float]] = None
    lr_ci_open: tuple[bool, bool] = (False, False)
    se_alpha: Optional[float] = None
    spec_stat: Optional[float] = None
    spec_pvalue: Optional[float] = None
    level: float = 0.95
    notes: tuple[str, ...] = field(default=())

    @property
    def alpha_hat(self) -> float:
        return 1.0 / self.xi_hat


def normalize_shares(tab: TopShareTabulation) -> np.ndarray:
    """Non-overlapping group shares divided by the last group's share."""
    s = np.asarray(tab.shares)
    d = np.diff(s)
    if np.any(d <= 0):
        raise ValueError("shares must be strictly increasing")
    return d[:-1] / d[-1]


def cumde_objective(grid: PercentileGrid, sbar, xi):
    """Continuously-updated distance ``(r - sbar)' Omega^{-1} (r - sbar)``.

    ``xi`` may be a scalar or a 1-d array; the result has the same shape.
    """
    sbar = np.asarray(sbar, dtype=float)
    if sbar.shape != (grid.K - 1,):
        raise ValueError(f"sbar has shape {sbar.shape}, expected ({grid.K - 1},)")
    xi = _check_xi(xi)
    r, om = _ratio_and_omega(grid, xi)
    e = r - sbar
    chol = _cholesky(om, "share covariance matrix")
    y = np.linalg.solve(chol, e[..., None])[..., 0]
    g = np.einsum("...i,...i->...", y, y)
    return float(g) if g.ndim == 0 else g


def _minimize(grid: PercentileGrid, sbar: np.ndarray, n_grid: int, xtol: float):
    xs = np.linspace(XI_MIN, XI_MAX, n_grid)
    gs = cumde_objective(grid, sbar, xs)
    i = int(np.argmin(gs))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, n_grid - 1)]
    res = optimize.minimize_scalar(
        lambda x: cumde_objective(grid, sbar, x),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": xtol, "maxiter": 500},
    )
    xi_hat, g_hat = float(res.x), float(res.fun)
    if gs[i] < g_hat:
        xi_hat, g_hat = float(xs[i]), float(gs[i])
    xi_hat, g_hat = _polish(grid, sbar, xi_hat, g_hat)
    return xi_hat, max(g_hat, 0.0)


def _polish(grid: PercentileGrid, sbar: np.ndarray, xi: float, g: float, steps: int = 4):
    """Gauss-Newton steps on the first-order condition, past the resolution of Brent's method.

    The objective is too flat near its minimum to locate the argmin beyond
    roughly sqrt(machine epsilon); its derivative, built from the analytic
    ratio derivative and an exact derivative of Omega, is not.
    """
    x = xi
    for _ in range(steps):
        dr, _ = ratio_jacobian(grid, x)
        om, dom = _omega_and_derivative(grid, x)
        e = ratio_vector(grid, x) - sbar
        w = np.linalg.solve(om, e)
        u = np.linalg.solve(om, dr)
        grad = 2 * dr @ w - w @ dom @ w
        step = -grad / (2 * dr @ u)
        if not abs(step) < 1e-6 or not XI_MIN <= x + step <= XI_MAX:
            return xi, g
        x = x + step
        if abs(step) < 1e-15:
            break
    gx = cumde_objective(grid, sbar, x)
    if gx > g * (1 + 1e-12) + 1e-300:
        return xi, g
    return float(x), gx


def estimate_cumde(
    tab: TopShareTabulation,
    *,
    ci: Optional[str] = "lr",
    level: float = 0.95,
    n: Optional[int] = None,
    n_grid: int = 201,
    xtol: float = 1e-9,
) -> EstimationResult:
    """Estimate the Pareto exponent by continuously-updated minimum distance.

    Parameters
    ----------
    tab : TopShareTabulation
        Observed shares; all of its percentiles are used.
    ci : {"lr", "wald", "both", None}
        Which confidence interval to attach when a sample size is known.
    level : float
        Confidence level for the interval.
    n : int, optional
        Sample size; overrides ``tab.n``.
    n_grid : int
        Points in the coarse scan preceding the bounded local refinement.

    Returns
    -------
    EstimationResult
        Point estimate and, if ``n`` is known, interval and specification test.
    """
    grid = tab.grid
    sbar = normalize_shares(tab)
    xi_hat, g_hat = _minimize(grid, sbar, n_grid, xtol)
    boundary = xi_hat - XI_MIN < BOUNDARY_MARGIN or XI_MAX - xi_hat < BOUNDARY_MARGIN
    if boundary:
        warnings.warn(
            f"xi estimate {xi_hat:.6g} is within {BOUNDARY_MARGIN} of the admissible boundary",
            BoundaryWarning,
            stacklevel=2,
        )
    n = n if n is not None else tab.n
    result = EstimationResult(xi_hat, g_hat, grid.K, n=n, at_boundary=boundary, level=level)
    if n is None:
        return result
    notes = []
    floor_np1 = math.floor(n * grid.p[0] * (1 + 1e-12))
    notes.append(f"floor(n*p1)={floor_np1}")
    if ci in ("wald", "both"):
        lo_hi, se = _wald(result, tab, level, n)
        result = replace(result, wald_ci=lo_hi, se_alpha=se)
    if ci in ("lr", "both"):
        lo_hi, open_ = _lr(tab, result, level, n, sbar)
        result = replace(result, lr_ci=lo_hi, lr_ci_open=open_)
    if grid.K >= 3:
        stat, pval = specification_test(tab, result, n=n)
        result = replace(result, spec_stat=stat, spec_pvalue=pval)
    return replace(result, notes=tuple(notes))


def estimate_simple(S_p: float, S_q: float, p: float, q: float) -> float:
    """Closed-form exponent from two cumulative shares at percentiles ``p < q``."""
    if not 0 < p < q <= 1:
        raise ValueError(f"need 0 < p < q <= 1, got p={p}, q={q}")
    if not 0 < S_p < S_q:
        raise ValueError(f"need 0 < S_p < S_q, got S_p={S_p}, S_q={S_q}")
    slope = math.log(S_q / S_p) / math.log(q / p)
    if slope >= 1:
        raise TailViolationError(
            f"share ratio {S_q / S_p:.6g} implies a non-positive exponent"
        )
    return 1.0 / (1.0 - slope)


def _sample_size(n, tab) -> int:
    n = n if n is not None else tab.n
    if n is None:
        raise MissingSampleSizeError("sample size n is required for inference")
    return int(n)


def _wald(result, tab, level, n):
    xi = result.xi_hat
    _, dr_dalpha = ratio_jacobian(tab.grid, xi)
    om = omega_matrix(tab.grid, xi)
    info = float(dr_dalpha @ np.linalg.solve(om, dr_dalpha))
    se = math.sqrt(1.0 / (info * n))
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    a = result.alpha_hat
    return (a - z * se, a + z * se), se


def wald_ci(
    result: EstimationResult,
    tab: TopShareTabulation,
    level: float = 0.95,
    n: Optional[int] = None,
) -> tuple[float, float]:
    """Normal-approximation interval ``alpha_hat +- z * sqrt((R' Omega^-1 R)^-1 / n)``."""
    n = _sample_size(n, tab)
    return _wald(result, tab, level, n)[0]


def _lr(tab, result, level, n, sbar):
    crit = stats.chi2.ppf(level, 1)
    grid = tab.grid
    g_hat = result.objective_at_min
    a_hat = result.alpha_hat

    def excess(alpha):
        xi = min(max(1.0 / alpha, XI_MIN), XI_MAX)
        return n * (cumde_objective(grid, sbar, xi) - g_hat) - crit

    def side(limit):
        # walk outward from alpha_hat until the LR statistic crosses the critical value
        direction = 1.0 if limit > a_hat else -1.0
        inside = a_hat
        step = 0.01 * a_hat
        while True:
            trial = a_hat + direction * step
            if direction * (trial - limit) >= 0:
                if excess(limit) <= 0:
                    return limit, True
                outside = limit
                break
            if excess(trial) > 0:
                outside = trial
                break
            inside = trial
            step *= 2.0
        root = optimize.brentq(excess, min(inside, outside), max(inside, outside), xtol=1e-6)
        return float(root), False

    lo, lo_open = side(ALPHA_MIN)
    hi, hi_open = side(ALPHA_MAX)
    if lo_open:
        lo = 1.0
    if hi_open:
        hi = math.inf
    return (lo, hi), (lo_open, hi_open)


def lr_ci(
    tab: TopShareTabulation,
    result: EstimationResult,
    level: float = 0.95,
    n: Optional[int] = None,
) -> tuple[float, float]:
    """Invert the chi-square(1) distance-difference test.

    Each endpoint is bracketed by walking outward from ``alpha_hat`` with
    doubling steps and then located by Brent's root finder to 1e-6.

    A side that never crosses the critical value before the admissible boundary
    is reported as open: ``1.0`` below, ``inf`` above.
    """
    n = _sample_size(n, tab)
    return _lr(tab, result, level, n, normalize_shares(tab))[0]


def specification_test(
    tab: TopShareTabulation,
    result: EstimationResult,
    n: Optional[int] = None,
) -> tuple[float, float]:
    """Overidentification statistic ``n * G(xi_hat)`` and its chi-square(K-2) p-value."""
    K = tab.grid.K
    if K < 3:
        raise ValueError(f"specification test needs K >= 3 groups, got K={K}")
    n = _sample_size(n, tab)
    stat = n * result.objective_at_min
    return stat, float(stats.chi2.sf(stat, K - 2))


def simple_from_tab(tab: TopShareTabulation, p: float, q: float) -> float:
    return estimate_simple(tab.share_at(p), tab.share_at(q), p, q)


def population_shares(grid: PercentileGrid, xi: float) -> tuple[float, ...]:
    """Exact Pareto top shares ``p ** (1 - xi)``."""
    return tuple(float(v) for v in grid.array ** (1.0 - xi))

