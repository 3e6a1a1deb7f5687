"""Conservative t-statistic intervals from a handful of independent estimates.

With L independent, asymptotically normal estimates (possibly with different
variances), the ordinary t interval with L - 1 degrees of freedom stays valid,
though conservative, as long as the significance level is at most 0.08.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import special

__all__ = ["MAX_SIGNIFICANCE", "GuaranteeViolationError", "PanelGroup", "panel_ci", "group_by_year_digit", "t_two_sided_quantile"]

MAX_SIGNIFICANCE = 0.08


class GuaranteeViolationError(ValueError):
    """Requested significance is above the level where the t interval is known to be conservative."""


@dataclass(frozen=True)
class PanelGroup:
    label: str
    estimates: tuple[tuple[Optional[int], float], ...]
    alpha_bar: float
    s_alpha: float
    ci: Optional[tuple[float, float]]
    level: float
    flag: Optional[str] = None

    @property
    def L(self) -> int:
        return len(self.estimates)


def _check_level(level: float, allow_liberal: bool):
    v = 1.0 - level
    if not 0 < v < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if v > MAX_SIGNIFICANCE + 1e-12 and not allow_liberal:
        raise GuaranteeViolationError(
            f"significance {v:.3g} exceeds {MAX_SIGNIFICANCE}; the interval is not guaranteed "
            "to be conservative (pass allow_liberal=True to override)"
        )


def t_two_sided_quantile(v: float, df: int) -> float:
    """``t`` with ``P(|T_df| > t) = v``, from the inverse regularized incomplete beta.

    ``P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)``; inverting that directly keeps
    full double precision even for one degree of freedom.
    """
    x = float(special.betaincinv(df / 2.0, 0.5, v))
    return math.sqrt(df * (1.0 / x - 1.0))


def panel_ci(
    estimates: Sequence[float],
    level: float = 0.95,
    label: str = "",
    years: Optional[Sequence[int]] = None,
    allow_liberal: bool = False,
) -> PanelGroup:
    """``mean +- s / sqrt(L) * t_{L-1}`` quantile at ``1 - (1 - level) / 2``."""
    est = np.asarray(estimates, dtype=float)
    L = est.size
    if L < 2:
        raise ValueError(f"need at least 2 estimates, got {L}")
    if not np.all(np.isfinite(est)):
        raise ValueError("estimates must be finite")
    _check_level(level, allow_liberal)
    abar = float(est.mean())
    s = float(est.std(ddof=1))
    half = s / math.sqrt(L) * t_two_sided_quantile(1.0 - level, L - 1)
    years = tuple(years) if years is not None else (None,) * L
    return PanelGroup(
        label=label,
        estimates=tuple(zip(years, map(float, est))),
        alpha_bar=abar,
        s_alpha=s,
        ci=(abar - half, abar + half),
        level=level,
    )


def group_by_year_digit(
    series: Iterable[tuple[int, float]],
    level: float = 0.95,
    allow_liberal: bool = False,
) -> list[PanelGroup]:
    """Pool estimates whose years share a last digit, one group per digit present.

    Groups with a single year get no interval and carry a flag.
    """
    series = list(series)
    if not series:
        raise ValueError("empty series")
    _check_level(level, allow_liberal)
    by_digit: dict[int, list[tuple[int, float]]] = {}
    for year, a in sorted(series):
        by_digit.setdefault(int(year) % 10, []).append((int(year), float(a)))
    groups = []
    for d in sorted(by_digit):
        members = by_digit[d]
        label = f"XXX{d}"
        if len(members) < 2:
            y, a = members[0]
            groups.append(PanelGroup(label, ((y, a),), a, math.nan, None, level,
                                     flag="fewer than 2 years"))
            continue
        years, alphas = zip(*members)
        groups.append(panel_ci(alphas, level, label, years, allow_liberal))
    return groups
