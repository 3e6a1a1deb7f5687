"""Monte Carlo study of the estimator under Pareto, |t| and dPlN data."""
from __future__ import annotations

import logging
import math
import os
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .estimator import (
    BoundaryWarning,
    TopShareTabulation,
    estimate_cumde,
    estimate_simple,
)
from .tail_moments import PercentileGrid

logger = logging.getLogger(__name__)

__all__ = [
    "PAPER_GRID",
    "SUBGRIDS",
    "Pareto",
    "AbsStudentT",
    "DPLN",
    "SimConfig",
    "CellMetrics",
    "SimpleMetrics",
    "SimStudyResult",
    "StudyAbortedError",
    "replication_seed",
    "sample",
    "top_shares_from_sample",
    "run_study",
    "run_simple_comparison",
    "kernel_density",
]

PAPER_GRID = PercentileGrid(tuple(v / 100 for v in (0.01, 0.1, 0.5, 1, 5, 10)))

# name -> (first, last) 0-based inclusive indices into PAPER_GRID
SUBGRIDS = {
    "10pct": (0, 5),
    "5pct": (0, 4),
    "1pct": (0, 3),
    "p2-p6": (1, 5),
    "p3-p6": (2, 5),
    "p4-p6": (3, 5),
}

MAX_FAILURE_RATE = 0.01


@dataclass(frozen=True)
class Pareto:
    alpha: float = 2.0
    c: float = 1.0
    tag = "pareto"

    def __post_init__(self):
        if not self.alpha > 1 or not self.c > 0:
            raise ValueError(f"need alpha > 1 and c > 0, got {self}")

    @property
    def tail_exponent(self) -> float:
        return self.alpha

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # 1 - U is in (0, 1], so the power never overflows
        return self.c * (1.0 - rng.random(n)) ** (-1.0 / self.alpha)


@dataclass(frozen=True)
class AbsStudentT:
    nu: float = 2.0
    tag = "abs_t"

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"need nu > 0, got {self.nu}")

    @property
    def tail_exponent(self) -> float:
        return self.nu

    def draw(self, rng, n):
        z = rng.standard_normal(n)
        chi2 = 2.0 * rng.standard_gamma(self.nu / 2.0, n)
        return np.abs(z / np.sqrt(chi2 / self.nu))


@dataclass(frozen=True)
class DPLN:
    """Double Pareto-lognormal: ``exp(mu + sigma X1 + X2/alpha - X3/beta)``."""

    mu: float = 0.0
    sigma: float = 0.5
    alpha: float = 2.0
    beta: float = 1.0
    tag = "dpln"

    def __post_init__(self):
        if not (self.alpha > 1 and self.sigma > 0 and self.beta > 0):
            raise ValueError(f"need alpha > 1, sigma > 0, beta > 0, got {self}")

    @property
    def tail_exponent(self) -> float:
        return self.alpha

    def draw(self, rng, n):
        x1 = rng.standard_normal(n)
        x2 = rng.standard_exponential(n)
        x3 = rng.standard_exponential(n)
        return np.exp(self.mu + self.sigma * x1 + x2 / self.alpha - x3 / self.beta)


Dgp = Union[Pareto, AbsStudentT, DPLN]


def replication_seed(base_seed: int, tag: str, n: int, rep: int) -> np.random.SeedSequence:
    """Seed for one replication, independent of how replications are scheduled."""
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(zlib.crc32(tag.encode()), n, rep))


def sample(dgp: Dgp, n: int, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. positive variates; ``seed`` is anything numpy accepts."""
    return dgp.draw(np.random.default_rng(seed), n)


def _count(n: int, p: float) -> int:
    # floor(n p), shielded from products like 1e6 * 1e-4 landing at 99.99999...
    return math.floor(n * p * (1.0 + 1e-12))


def top_shares_from_sample(
    x: np.ndarray, grid: PercentileGrid, year: Optional[int] = None
) -> TopShareTabulation:
    """Sample top shares ``S_k`` = (sum of the floor(n p_k) largest values) / total."""
    x = np.asarray(x, dtype=float)
    n = x.size
    counts = [_count(n, p) for p in grid.p]
    if counts[0] < 1:
        raise ValueError(f"n * p_1 = {n * grid.p[0]:.4g} < 1: the top group is empty")
    m = counts[-1]
    head = x if m >= n else np.partition(x, n - m)[n - m:]
    head = np.sort(head)[::-1]
    csum = np.cumsum(head)
    total = x.sum()
    # the whole sample holds exactly all of the total, whatever the summation order
    shares = tuple(1.0 if c >= n else csum[c - 1] / total for c in counts)
    return TopShareTabulation(grid, shares, year=year, n=n)


@dataclass(frozen=True)
class SimConfig:
    dgp: Dgp
    n: int
    grid: PercentileGrid = PAPER_GRID
    subgrids: tuple[tuple[str, tuple[int, int]], ...] = (("1pct", SUBGRIDS["1pct"]),)
    replications: int = 1000
    seed: int = 0
    ci_method: str = "lr"
    level: float = 0.95
    test_size: float = 0.05
    simple_pairs: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.ci_method not in ("lr", "wald"):
            raise ValueError(f"unknown ci_method {self.ci_method!r}")
        if _count(self.n, self.grid.p[0]) < 1:
            raise ValueError(f"n={self.n} leaves the top group empty (need n >= 1/p_1)")
        for name, (i, j) in self.subgrids:
            if not (0 <= i and j < len(self.grid.p) and j - i >= 2):
                raise ValueError(f"subgrid {name!r} = {i}..{j} needs at least 3 points of the grid")


@dataclass(frozen=True)
class CellMetrics:
    dgp: str
    n: int
    subgrid: str
    bias: float
    rmse: float
    coverage: float
    length: float
    rejection: float
    replications: int
    failures: int
    boundary_hits: int
    spec_test_applicable: bool


@dataclass(frozen=True)
class SimpleMetrics:
    dgp: str
    n: int
    p: float
    q: float
    bias: float
    rmse: float
    replications: int
    failures: int


@dataclass
class SimStudyResult:
    config: SimConfig
    cells: list[CellMetrics]
    simple: list[SimpleMetrics]
    # per-subgrid alpha draws, NaN for failed replications
    draws: dict[str, np.ndarray] = field(repr=False)
    simple_draws: dict[tuple[float, float], np.ndarray] = field(repr=False)

    def cell(self, subgrid: str) -> CellMetrics:
        for c in self.cells:
            if c.subgrid == subgrid:
                return c
        raise KeyError(subgrid)


class StudyAbortedError(RuntimeError):
    pass


_NREC = 6  # alpha, lo, hi, reject, boundary, failed


def _replicate(config: SimConfig, rep: int) -> tuple[np.ndarray, np.ndarray]:
    seed = replication_seed(config.seed, config.dgp.tag, config.n, rep)
    x = sample(config.dgp, config.n, seed)
    full = top_shares_from_sample(x, config.grid)
    out = np.full((len(config.subgrids), _NREC), np.nan)
    for s, (_, (i, j)) in enumerate(config.subgrids):
        tab = full.sub(i, j)
        try:
            res = estimate_cumde(tab, ci=config.ci_method, level=config.level)
        except (ValueError, np.linalg.LinAlgError) as exc:
            logger.debug("replication %d subgrid %d failed: %s", rep, s, exc)
            out[s] = (np.nan, np.nan, np.nan, 0.0, 0.0, 1.0)
            continue
        lo, hi = res.lr_ci if config.ci_method == "lr" else res.wald_ci
        if res.spec_pvalue is not None:
            reject = float(res.spec_pvalue < config.test_size)
        else:
            # just identified: no overidentifying restriction to test
            reject = 0.0
        out[s] = (res.alpha_hat, lo, hi, reject, float(res.at_boundary), 0.0)
    simple = np.full(len(config.simple_pairs), np.nan)
    for k, (p, q) in enumerate(config.simple_pairs):
        try:
            simple[k] = estimate_simple(full.share_at(p), full.share_at(q), p, q)
        except (ValueError, KeyError):
            pass
    return out, simple


def _replicate_chunk(args):
    config, reps = args
    with warnings.catch_warnings():
        # boundary estimates are counted in the metrics instead
        warnings.simplefilter("ignore", BoundaryWarning)
        rows = [_replicate(config, r) for r in reps]
    return np.stack([a for a, _ in rows]), np.stack([b for _, b in rows])


def _chunks(m: int, workers: int):
    size = max(1, math.ceil(m / (workers * 4)))
    return [range(a, min(a + size, m)) for a in range(0, m, size)]


def _collect(config: SimConfig, workers: int):
    M = config.replications
    if workers <= 1:
        parts = [_replicate_chunk((config, range(M)))]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_replicate_chunk, [(config, r) for r in _chunks(M, workers)]))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _error_metrics(draws: np.ndarray, truth: float):
    ok = draws[np.isfinite(draws)]
    if ok.size == 0:
        return math.nan, math.nan
    err = ok - truth
    return float(np.mean(err)), float(np.sqrt(np.mean(err * err)))


def run_study(config: SimConfig, workers: int = 1) -> SimStudyResult:
    """Replicate sampling and estimation ``config.replications`` times.

    Every replication draws from its own seed (see :func:`replication_seed`),
    so results do not depend on ``workers``.
    """
    if workers is None or workers < 1:
        workers = os.cpu_count() or 1
    recs, simple = _collect(config, workers)
    M = config.replications
    truth = config.dgp.tail_exponent
    cells, draws = [], {}
    for s, (name, (i, j)) in enumerate(config.subgrids):
        r = recs[:, s, :]
        failed = r[:, 5] == 1.0
        nfail = int(failed.sum())
        if nfail > MAX_FAILURE_RATE * M:
            raise StudyAbortedError(
                f"{config.dgp.tag} n={config.n} {name}: {nfail}/{M} replications failed"
            )
        good = r[~failed]
        bias, rmse = _error_metrics(r[:, 0], truth)
        covered = (good[:, 1] <= truth) & (truth <= good[:, 2])
        cells.append(CellMetrics(
            dgp=config.dgp.tag,
            n=config.n,
            subgrid=name,
            bias=bias,
            rmse=rmse,
            coverage=float(covered.mean()) if good.size else math.nan,
            length=float(np.mean(good[:, 2] - good[:, 1])) if good.size else math.nan,
            rejection=float(good[:, 3].mean()) if good.size else math.nan,
            replications=M,
            failures=nfail,
            boundary_hits=int(good[:, 4].sum()),
            spec_test_applicable=(j - i) >= 3,
        ))
        draws[name] = r[:, 0].copy()
    simple_metrics, simple_draws = [], {}
    for k, (p, q) in enumerate(config.simple_pairs):
        d = simple[:, k]
        bias, rmse = _error_metrics(d, truth)
        simple_metrics.append(SimpleMetrics(
            config.dgp.tag, config.n, p, q, bias, rmse, M, int(np.sum(~np.isfinite(d)))
        ))
        simple_draws[(p, q)] = d.copy()
    return SimStudyResult(config, cells, simple_metrics, draws, simple_draws)


SIMPLE_PAIRS = ((0.001, 0.01), (0.001, 0.005), (0.005, 0.01))


def run_simple_comparison(config: SimConfig, workers: int = 1) -> list[dict]:
    """Bias and RMSE of the CMD estimator on the top-1% groups next to the simple estimator.

    Returns one row per estimator: ``{"estimator", "bias", "rmse"}``.
    """
    pairs = config.simple_pairs or SIMPLE_PAIRS
    cfg = SimConfig(
        dgp=config.dgp,
        n=config.n,
        grid=config.grid,
        subgrids=(("1pct", SUBGRIDS["1pct"]),),
        replications=config.replications,
        seed=config.seed,
        ci_method=config.ci_method,
        level=config.level,
        simple_pairs=tuple(pairs),
    )
    res = run_study(cfg, workers)
    return comparison_rows(res)


def comparison_rows(res: SimStudyResult, subgrid: str = "1pct") -> list[dict]:
    cmd = res.cell(subgrid)
    rows = [{"estimator": "CMD", "bias": cmd.bias, "rmse": cmd.rmse}]
    for sm in res.simple:
        rows.append({
            "estimator": f"simple({100 * sm.p:g},{100 * sm.q:g})",
            "bias": sm.bias,
            "rmse": sm.rmse,
        })
    return rows


def kernel_density(
    estimates: Sequence[float],
    center: Optional[float] = None,
    bandwidth: Union[str, float] = "silverman",
    points: int = 512,
):
    """Gaussian kernel density of standardized estimates.

    Estimates are centered at ``center`` (their mean by default) and divided by
    their sample standard deviation. The density is evaluated on ``points``
    equally spaced values covering four standard deviations either side of the
    standardized sample mean.
    """
    est = np.asarray(estimates, dtype=float)
    est = est[np.isfinite(est)]
    if est.size < 2:
        raise ValueError("need at least two finite estimates")
    sd = est.std(ddof=1)
    if not sd > 0:
        raise ValueError("estimates have zero variance")
    z = (est - (est.mean() if center is None else center)) / sd
    kde = stats.gaussian_kde(z, bw_method=bandwidth)
    mid = z.mean()
    x = np.linspace(mid - 4.0, mid + 4.0, points)
    return x, kde(x)
