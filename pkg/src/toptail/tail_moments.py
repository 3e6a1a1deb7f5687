"""Pareto group moments for sums of top order statistics.

All quantities are parameterized by the inverse exponent ``xi = 1/alpha``.
Functions taking ``xi`` broadcast over a 1-d array of values so that the
estimator can evaluate the objective on a whole grid in one call.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "XI_MIN",
    "XI_MAX",
    "TAYLOR_THRESHOLD",
    "DegenerateMatrixError",
    "PercentileGrid",
    "TailShape",
    "GroupMomentModel",
    "stable_power_diff",
    "group_mean",
    "group_variance",
    "group_covariance_matrix",
    "group_moment_model",
    "ratio_vector",
    "ratio_jacobian",
    "omega_matrix",
]

XI_MIN = 1e-4
XI_MAX = 1.0 - 1e-4
TAYLOR_THRESHOLD = 1e-6
PIVOT_RATIO_MIN = 1e-10


class DegenerateMatrixError(np.linalg.LinAlgError):
    """A covariance matrix that must be positive definite failed to factorize."""


@dataclass(frozen=True)
class PercentileGrid:
    """Top percentiles ``0 < p_1 < ... < p_{K+1} <= 1`` (as fractions)."""

    p: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        object.__setattr__(self, "p", p)
        if len(p) < 3:
            raise ValueError(f"need at least 3 percentiles (K >= 2), got {len(p)}")
        if not all(np.isfinite(p)):
            raise ValueError("percentiles must be finite")
        if p[0] <= 0.0 or p[-1] > 1.0:
            raise ValueError(f"percentiles must lie in (0, 1], got {p}")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ValueError(f"percentiles must be strictly increasing, got {p}")

    @property
    def K(self) -> int:
        return len(self.p) - 1

    @cached_property
    def array(self) -> np.ndarray:
        a = np.asarray(self.p, dtype=float)
        a.flags.writeable = False
        return a

    @cached_property
    def _logs(self):
        # (lo, hi, log lo, log hi, log(hi/lo)) for the K groups
        a = self.array
        lo, hi = a[:-1], a[1:]
        return lo, hi, np.log(lo), np.log(hi), np.log(hi / lo)

    def sub(self, first: int, last: int) -> "PercentileGrid":
        """Sub-grid of points ``first..last`` (0-based, inclusive)."""
        return PercentileGrid(self.p[first:last + 1])


@dataclass(frozen=True)
class TailShape:
    xi: float
    c: float = 1.0

    def __post_init__(self):
        _check_xi(self.xi)
        if not self.c > 0:
            raise ValueError(f"scale c must be positive, got {self.c}")

    @classmethod
    def from_alpha(cls, alpha: float, c: float = 1.0) -> "TailShape":
        return cls(1.0 / alpha, c)

    @property
    def alpha(self) -> float:
        return 1.0 / self.xi


@dataclass(frozen=True)
class GroupMomentModel:
    grid: PercentileGrid
    mu: np.ndarray
    sigma: np.ndarray
    r: np.ndarray
    omega: np.ndarray

    @property
    def H(self) -> np.ndarray:
        K = self.grid.K
        return np.hstack([np.eye(K - 1), -self.r[:, None]]) / self.mu[-1]


def _check_xi(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if not np.isfinite(xi).all() or (xi < XI_MIN).any() or (xi > XI_MAX).any():
        raise ValueError(f"xi must lie in [{XI_MIN}, {XI_MAX}], got {xi}")
    return xi


def _check_pq(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p <= 0):
        raise ValueError("p must be positive")
    if np.any(q > 1):
        raise ValueError("q must not exceed 1")
    if np.any(p >= q):
        raise ValueError("need p < q")
    return p, q


def _power_diff(p, q, t):
    # unchecked (q**t - p**t) / t; p, q, t broadcast
    return _pd(np.log(p), np.log(q), np.log(q / p), t)


def _pd(lp, lq, d, t):
    small = np.abs(t) < TAYLOR_THRESHOLD
    if not small.any():
        return np.exp(t * lp) * np.expm1(t * d) / t
    taylor = d * (1.0 + t * (lq + lp) / 2.0 + t * t * (lq * lq + lq * lp + lp * lp) / 6.0)
    ts = np.where(small, 1.0, t)
    return np.where(small, taylor, np.exp(ts * lp) * np.expm1(ts * d) / ts)


def stable_power_diff(p, q, t):
    """Evaluate ``(q**t - p**t) / t`` without cancellation.

    The removable singularity at ``t = 0`` (value ``log(q/p)``) is handled by a
    second-order expansion for ``|t| < TAYLOR_THRESHOLD``; elsewhere the
    difference is formed as ``p**t * expm1(t log(q/p))``.
    """
    p, q = _check_pq(p, q)
    out = _power_diff(p, q, np.asarray(t, dtype=float))
    return float(out) if out.ndim == 0 else out


def group_mean(p: float, q: float, shape: TailShape) -> float:
    """Asymptotic mean of (1/n) x the sum of order statistics in the top (p, q] group."""
    p, q = _check_pq(p, q)
    return float(shape.c * _power_diff(p, q, 1.0 - shape.xi))


def _terms(lo, llo, lhi, d, x):
    # group means m (c = 1), variances and the off-diagonal factor dneg - m
    m = _pd(llo, lhi, d, 1.0 - x)
    dneg = _pd(llo, lhi, d, -x)
    d2 = _pd(llo, lhi, d, 1.0 - 2.0 * x)
    var = 2.0 * x * x / (1.0 - x) * (d2 - np.exp((1.0 - x) * llo) * dneg - 0.5 * (1.0 - x) * m * m)
    return m, var, dneg - m


def group_variance(p: float, q: float, shape: TailShape) -> float:
    """Asymptotic variance of sqrt(n) x the group sum over the top (p, q] group.

    The third bracketed term is rewritten as ``-(q^(1-xi) - p^(1-xi))^2 / (2 - 2 xi)``,
    which is algebraically identical and avoids subtracting nearly equal powers.
    """
    p, q = _check_pq(p, q)
    _, var, _ = _terms(p, np.log(p), np.log(q), np.log(q / p), np.asarray(shape.xi, dtype=float))
    return float(shape.c ** 2 * var)


def _moments(grid: PercentileGrid, xi: np.ndarray):
    """Group means and covariance for c = 1, shapes ``xi.shape + (K,)`` and ``+ (K, K)``."""
    lo, _, llo, lhi, d = grid._logs
    x = xi[..., None]
    m, var, tail = _terms(lo, llo, lhi, d, x)
    # Sigma_jk (j < k) = xi^2 m_j (dneg_k - m_k)
    K = grid.K
    j = np.arange(K)
    upper = j[:, None] < j[None, :]
    row = np.where(upper, m[..., :, None] * tail[..., None, :], 0.0)
    sig = x[..., None] * x[..., None] * (row + np.swapaxes(row, -1, -2))
    sig[..., j, j] = var
    return m, sig


def _cholesky(a: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise DegenerateMatrixError(f"{what} has non-finite entries")
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise DegenerateMatrixError(f"{what} is not numerically positive definite") from exc
    # factorization can succeed on a singular matrix through rounding; reject tiny pivots
    piv = np.diagonal(low, axis1=-2, axis2=-1)
    if (piv.min(axis=-1) < PIVOT_RATIO_MIN * piv.max(axis=-1)).any():
        raise DegenerateMatrixError(f"{what} is numerically singular (coincident percentiles?)")
    return low


def group_covariance_matrix(grid: PercentileGrid, shape: TailShape) -> np.ndarray:
    """K x K asymptotic covariance of sqrt(n) x (group sums)."""
    _, sig = _moments(grid, np.asarray(shape.xi, dtype=float))
    sig = sig * shape.c ** 2
    _cholesky(sig, "group covariance matrix")
    return sig


def ratio_vector(grid: PercentileGrid, xi):
    """Group-mean ratios ``mu_k / mu_K`` for k < K, as a function of xi."""
    xi = _check_xi(xi)
    _, _, llo, lhi, d = grid._logs
    a = _pd(llo, lhi, d, 1.0 - xi[..., None])
    return a[..., :-1] / a[..., -1:]


def ratio_jacobian(grid: PercentileGrid, xi):
    """Derivatives of the ratio vector with respect to xi and to alpha.

    Returns ``(d r / d xi, d r / d alpha)``; the second is ``-xi**2`` times the first.
    """
    xi = _check_xi(xi)
    lo, hi, llo, lhi, _ = grid._logs
    x = xi[..., None]
    a = hi ** (1.0 - x) - lo ** (1.0 - x)
    b = hi ** (1.0 - x) * lhi - lo ** (1.0 - x) * llo
    logderiv = b[..., -1:] / a[..., -1:] - b[..., :-1] / a[..., :-1]
    d_xi = ratio_vector(grid, xi) * logderiv
    return d_xi, -d_xi * x * x


def _omega_from(mu: np.ndarray, sig: np.ndarray) -> np.ndarray:
    r = mu[..., :-1] / mu[..., -1:]
    s = sig[..., :-1, :-1]
    sK = sig[..., :-1, -1]
    sKK = sig[..., -1, -1][..., None, None]
    om = (
        s
        - r[..., :, None] * sK[..., None, :]
        - sK[..., :, None] * r[..., None, :]
        + r[..., :, None] * r[..., None, :] * sKK
    )
    return om / (mu[..., -1] ** 2)[..., None, None]


def _ratio_and_omega(grid: PercentileGrid, xi: np.ndarray):
    m, sig = _moments(grid, xi)
    return m[..., :-1] / m[..., -1:], _omega_from(m, sig)


def _omega_and_derivative(grid: PercentileGrid, xi: float):
    """Omega and dOmega/dxi; the derivative by complex step, exact to rounding.

    Every operation in the moment formulas is holomorphic in xi, so the
    imaginary part of Omega(xi + i h) / h is the derivative with no cancellation.
    """
    h = 1e-30
    m, sig = _moments(grid, np.asarray(xi + 1j * h))
    om = _omega_from(m, sig)
    return om.real, om.imag / h


def omega_matrix(grid: PercentileGrid, xi, c: float = 1.0):
    """Asymptotic covariance ``H Sigma H^T`` of the self-normalized shares.

    ``c`` only exists to make the scale invariance checkable; the result does
    not depend on it.
    """
    xi = _check_xi(xi)
    m, sig = _moments(grid, xi)
    om = _omega_from(c * m, c * c * sig)
    _cholesky(om, "share covariance matrix")
    return om


def group_moment_model(grid: PercentileGrid, shape: TailShape) -> GroupMomentModel:
    m, sig = _moments(grid, np.asarray(shape.xi, dtype=float))
    mu, sig = shape.c * m, shape.c ** 2 * sig
    _cholesky(sig, "group covariance matrix")
    om = _omega_from(mu, sig)
    _cholesky(om, "share covariance matrix")
    return GroupMomentModel(grid, mu, sig, mu[:-1] / mu[-1], om)
