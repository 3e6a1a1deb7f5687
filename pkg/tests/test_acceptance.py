"""Acceptance criteria 1-10, each reported as one PASS/FAIL line in the terminal summary.

The Monte Carlo criteria share one session-scoped study (3 DGPs x 3 sample
sizes, M = 1000) and are marked ``slow``; deselect them with ``-m "not slow"``.
"""
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln

from toptail import PercentileGrid
from toptail.dgp_sim import DPLN, SUBGRIDS, AbsStudentT, Pareto, SimConfig, replication_seed, run_study, sample
from toptail.estimator import TopShareTabulation, estimate_cumde, estimate_simple, population_shares
from toptail.panel import panel_ci
from toptail.tail_moments import _moments, _omega_from

ROOT = Path(__file__).resolve().parents[1]
SEED = 2019
M = 1000
NS = (10**4, 10**5, 10**6)
DGPS = (Pareto(2.0, 1.0), AbsStudentT(2.0), DPLN())
STUDY_SUBGRIDS = (("1pct", SUBGRIDS["1pct"]), ("10pct", SUBGRIDS["10pct"]), ("p4-p6", SUBGRIDS["p4-p6"]))
SIMPLE = (0.001, 0.01)


def within(x, lo, hi):
    return lo <= x <= hi


def report(criterion, number, text, checks):
    """``checks`` is a list of (label, ok); record one line and fail on any miss."""
    failed = [label for label, ok in checks if not ok]
    shown = "; ".join(label for label, _ in checks)
    criterion(number, text, not failed, f"[{shown}]")
    assert not failed, f"criterion {number} failed: {failed}"


# -- 1 -------------------------------------------------------------------------

def test_c01_exact_recovery(criterion, paper_grid):
    t0 = time.perf_counter()
    errs, objs = [], []
    for xi0 in np.round(np.arange(0.1, 1.0, 0.1), 1):
        res = estimate_cumde(TopShareTabulation(paper_grid, population_shares(paper_grid, xi0)), ci=None)
        errs.append(abs(res.alpha_hat - 1 / xi0))
        objs.append(res.objective_at_min)
    elapsed = time.perf_counter() - t0
    checks = [
        (f"max err={max(errs):.1e}", max(errs) <= 1e-6),
        (f"max G={max(objs):.1e}", max(objs) <= 1e-12),
        (f"{elapsed:.2f}s", elapsed < 1.0),
    ]
    report(criterion, 1, "exact recovery on population shares", checks)


# -- 2 -------------------------------------------------------------------------

MOMENT_GRID = PercentileGrid((0.0001, 0.001, 0.005, 0.01))
MOMENT_N = 10**5
MOMENT_REPS = 10**4


@pytest.fixture(scope="session")
def group_sums():
    """sqrt(n)-free group sums (1/n) sum Y_(i) per group, one row per replication."""
    n = MOMENT_N
    counts = [math.floor(n * p * (1 + 1e-12)) for p in MOMENT_GRID.p]
    out = np.empty((MOMENT_REPS, MOMENT_GRID.K))
    for r in range(MOMENT_REPS):
        x = sample(Pareto(2.0), n, replication_seed(SEED, "moments", n, r))
        head = np.sort(np.partition(x, n - counts[-1])[n - counts[-1]:])[::-1]
        cs = np.concatenate([[0.0], np.cumsum(head)])
        out[r] = [(cs[counts[k + 1]] - cs[counts[k]]) / n for k in range(MOMENT_GRID.K)]
    return out


def _cov_with_se(z):
    zc = z - z.mean(axis=0)
    prod = zc[:, :, None] * zc[:, None, :]
    R = len(z)
    return prod.mean(axis=0) * R / (R - 1), prod.std(axis=0, ddof=1) / math.sqrt(R)


def _moment_zscores(group_sums):
    m, sig = _moments(MOMENT_GRID, np.asarray(0.5))
    om = _omega_from(m, sig)
    R = len(group_sums)
    z_mu = (group_sums.mean(axis=0) - m) / (group_sums.std(axis=0, ddof=1) / math.sqrt(R))
    emp, se = _cov_with_se(math.sqrt(MOMENT_N) * group_sums)
    z_sigma = (emp - sig) / se
    ratios = group_sums[:, :-1] / group_sums[:, -1:]
    emp, se = _cov_with_se(math.sqrt(MOMENT_N) * ratios)
    z_omega = (emp - om) / se
    return z_mu, z_sigma, z_omega


@pytest.mark.slow
def test_c02_moment_oracle_covariances(criterion, group_sums):
    z_mu, z_sigma, z_omega = _moment_zscores(group_sums)
    checks = [
        (f"mu max|z|={np.max(np.abs(z_mu)):.2f} (mu_1 z={z_mu[0]:.2f})", np.all(np.abs(z_mu) <= 5)),
        (f"Sigma max|z|={np.max(np.abs(z_sigma)):.2f}", np.all(np.abs(z_sigma) <= 5)),
        (f"Omega max|z|={np.max(np.abs(z_omega)):.2f}", np.all(np.abs(z_omega) <= 5)),
    ]
    failed = [label for label, ok in checks if not ok]
    criterion(2, "mu, Sigma, Omega within 5 MC s.e. (n=1e5, 1e4 reps)", not failed,
              "[" + "; ".join(label for label, _ in checks) + "]")
    # the covariance entries are asserted here; the mean entries in the test below
    assert np.all(np.abs(z_sigma) <= 5) and np.all(np.abs(z_omega) <= 5)


def exact_group_means(grid, n, xi):
    """Finite-n expectation of Pareto(1/xi, 1) group sums from E Y_(i) in closed form."""
    i = np.arange(1, n + 1)
    ey = np.exp(gammaln(n + 1) - gammaln(n + 1 - xi) + gammaln(i - xi) - gammaln(i))
    counts = [math.floor(n * p * (1 + 1e-12)) for p in grid.p]
    return np.array([ey[counts[k]:counts[k + 1]].sum() / n for k in range(grid.K)])


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="with floor(n p_1) = 10 the finite-n mean of the top group sum exceeds its "
           "asymptotic value by 5.5 Monte Carlo standard errors (exact order-statistic "
           "expectation), so a 5-s.e. band around the limit cannot hold at n = 1e5",
)
def test_c02_moment_oracle_means(group_sums):
    z_mu, _, _ = _moment_zscores(group_sums)
    assert np.all(np.abs(z_mu) <= 5), f"z-scores {z_mu}"


@pytest.mark.slow
def test_c02_means_match_finite_sample_expectation(group_sums):
    # the simulation itself is right: it matches the exact finite-n mean
    exact = exact_group_means(MOMENT_GRID, MOMENT_N, 0.5)
    se = group_sums.std(axis=0, ddof=1) / math.sqrt(len(group_sums))
    assert np.all(np.abs(group_sums.mean(axis=0) - exact) <= 5 * se)
    m, _ = _moments(MOMENT_GRID, np.asarray(0.5))
    bias_in_se = (exact - m) / se
    assert bias_in_se[0] > 5


# -- Monte Carlo study (3-6, 9) ------------------------------------------------

@pytest.fixture(scope="session")
def study():
    workers = os.cpu_count() or 1
    out = {}
    for dgp in DGPS:
        for n in NS:
            cfg = SimConfig(dgp=dgp, n=n, subgrids=STUDY_SUBGRIDS, replications=M, seed=SEED,
                            ci_method="lr", simple_pairs=(SIMPLE,))
            out[(dgp.tag, n)] = run_study(cfg, workers=workers)
    return out


@pytest.mark.slow
def test_c03_pareto_table(criterion, study):
    a = study[("pareto", 10**5)].cell("1pct")
    b = study[("pareto", 10**6)].cell("1pct")
    checks = [
        (f"1e5 bias={a.bias:+.4f}", abs(a.bias) <= 0.015),
        (f"1e5 rmse={a.rmse:.4f}", within(a.rmse, 0.05, 0.09)),
        (f"1e5 cov={a.coverage:.3f}", within(a.coverage, 0.93, 0.97)),
        (f"1e5 len={a.length:.3f}", within(a.length, 0.24, 0.35)),
        (f"1e6 rmse={b.rmse:.4f}", within(b.rmse, 0.015, 0.03)),
        (f"1e6 cov={b.coverage:.3f}", within(b.coverage, 0.93, 0.97)),
    ]
    report(criterion, 3, "Pareto 1% cells", checks)


NOMINAL = 0.05
SIZE_SE = math.sqrt(NOMINAL * (1 - NOMINAL) / M)


@pytest.mark.slow
def test_c04_misspecification(criterion, study):
    t = study[("abs_t", 10**6)].cell("10pct")
    d = study[("dpln", 10**6)].cell("1pct")
    checks = [
        (f"|t| 10% cov={t.coverage:.3f}", t.coverage <= 0.02),
        (f"|t| 10% rej={t.rejection:.3f}", t.rejection >= 0.95),
        (f"dPlN 1% cov={d.coverage:.3f}", within(d.coverage, 0.93, 0.98)),
        (f"dPlN 1% rej={d.rejection:.3f}", d.rejection <= 0.04),
    ]
    failed = [label for label, ok in checks if not ok]
    criterion(4, "misspecification signature at n=1e6", not failed,
              "[" + "; ".join(label for label, _ in checks) + "]")
    # everything but the dPlN rejection bound is asserted here; that bound is in the test below
    assert all(ok for _, ok in checks[:3])


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="the chi-square(K-2) test is correctly sized, so on the near-Pareto dPlN 1% cell it "
           "rejects about 5% of the time; a 0.04 ceiling sits 1.5 Monte Carlo s.e. below that "
           "and fails for this seed (0.042)",
)
def test_c04_dpln_rejection_ceiling(study):
    assert study[("dpln", 10**6)].cell("1pct").rejection <= 0.04


@pytest.mark.slow
@pytest.mark.parametrize("tag,n", [("pareto", 10**5), ("pareto", 10**6), ("dpln", 10**6)])
def test_c04_spec_test_has_nominal_size(study, tag, n):
    # well-specified 1% cells reject at the nominal 5% up to Monte Carlo noise
    rej = study[(tag, n)].cell("1pct").rejection
    assert abs(rej - NOMINAL) <= 3 * SIZE_SE


@pytest.mark.slow
def test_c05_cmd_beats_simple(criterion, study):
    checks = []
    for (tag, n), res in study.items():
        cmd = res.cell("1pct").rmse
        (simple,) = res.simple
        checks.append((f"{tag} {n:.0e}: {cmd:.3f}<={simple.rmse:.3f}", cmd <= simple.rmse))
    p = study[("pareto", 10**5)]
    cmd, simple = p.cell("1pct").rmse, p.simple[0].rmse
    checks.append((f"pareto 1e5 cmd={cmd:.3f}", within(cmd, 0.07 * 0.75, 0.07 * 1.25)))
    checks.append((f"pareto 1e5 simple={simple:.3f}", within(simple, 0.15 * 0.75, 0.15 * 1.25)))
    report(criterion, 5, "CMD RMSE <= simple(0.1,1) RMSE", checks)


@pytest.mark.slow
def test_c06_power_loss(criterion, study):
    checks = []
    for (tag, n), res in study.items():
        c = res.cell("p4-p6")
        checks.append((f"{tag} {n:.0e}: {c.rejection:.3f}", c.rejection <= 0.01))
    report(criterion, 6, "p4-p6 rejection <= 0.01", checks)


@pytest.mark.slow
def test_c09_kernel_normality(criterion, study):
    draws = study[("pareto", 10**6)].draws["1pct"]
    z = (draws - 2.0) / np.std(draws, ddof=1)
    d = stats.kstest(z, "norm").statistic
    report(criterion, 9, "standardized Pareto 1% n=1e6 draws vs N(0,1)", [(f"KS={d:.4f}", d <= 0.05)])


# -- 7, 8 ----------------------------------------------------------------------

def test_c07_empirical_spot_check(criterion, paper_grid):
    row = (0.0495, 0.1043, 0.1716, 0.2147, 0.3814, 0.5014)
    simple = estimate_simple(row[1], row[3], 0.001, 0.01)
    cmd = estimate_cumde(TopShareTabulation(paper_grid, row).sub(0, 3), ci=None).alpha_hat
    checks = [
        (f"simple={simple:.5f}", abs(simple - 1.4570) <= 5e-4),
        (f"CMD 1%={cmd:.4f}", within(cmd, 1.30, 1.70)),
    ]
    report(criterion, 7, "2017 row", checks)


def test_c08_panel_arithmetic(criterion):
    lo, hi = panel_ci([1.5, 1.7], level=0.95).ci
    checks = [(f"({lo:.4f}, {hi:.4f})", abs(lo - 0.329) <= 1e-3 and abs(hi - 2.871) <= 1e-3)]
    report(criterion, 8, "panel_ci(1.5, 1.7)", checks)


# -- 10 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c10_property_suite_standalone(criterion):
    tests = ROOT / "tests"
    cmd = [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", str(tests),
           "--ignore", str(tests / "test_acceptance.py")]
    t0 = time.perf_counter()
    proc = subprocess.run(cmd, cwd=ROOT, capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    summary = (proc.stdout.strip().splitlines() or ["no output"])[-1]
    checks = [(summary, proc.returncode == 0), (f"{elapsed:.0f}s", elapsed < 300)]
    report(criterion, 10, "module property suites standalone", checks)
