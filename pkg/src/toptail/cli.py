"""Command line interface: ``toptail estimate | panel | simulate``."""
from __future__ import annotations

import csv
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional

import click

from .dgp_sim import SimStudyResult, comparison_rows, kernel_density, run_study
from .estimator import BoundaryWarning, estimate_cumde, simple_from_tab
from .io import RunReport, load_sim_configs, parse_subgrid, parse_tabulation, percent_to_fraction
from .panel import group_by_year_digit

logger = logging.getLogger(__name__)

METRIC_BLOCKS = (
    ("bias", "Bias"),
    ("rmse", "RMSE"),
    ("coverage", "Coverage"),
    ("length", "Length"),
    ("rejection", "Rejection probability"),
)


def _simple_pair(text: Optional[str]):
    if text is None:
        return None
    try:
        p, q = (percent_to_fraction(v) for v in text.split(","))
    except Exception:
        raise click.BadParameter(f"expected P,Q in percent, got {text!r}") from None
    return p, q


def _select_years(tabs, from_year, to_year):
    return [t for t in tabs
            if (from_year is None or t.year >= from_year) and (to_year is None or t.year <= to_year)]


def cmd_estimate(path, subgrid="1pct", n=None, ci_method="lr", level=0.95, simple=None,
                 from_year=None, to_year=None) -> RunReport:
    """Per-year estimates for every row of a tabulation file."""
    tabs = _select_years(parse_tabulation(path), from_year, to_year)
    if not tabs:
        raise ValueError("no years selected")
    i, j = parse_subgrid(subgrid, tabs[0].grid)
    results, simples = [], []
    for tab in tabs:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryWarning)
            results.append(estimate_cumde(tab.sub(i, j), ci=ci_method, level=level, n=n))
        simples.append(simple_from_tab(tab, *simple) if simple else None)
    return RunReport.from_results(tabs, results, subgrid, simples, assumed_n=n is not None)


def cmd_panel(path, subgrid="1pct", level=0.95, simple=(0.001, 0.01), from_year=None,
              to_year=None, allow_liberal=False) -> list[dict]:
    """Year-digit panel intervals for the CMD and simple estimators."""
    tabs = _select_years(parse_tabulation(path), from_year, to_year)
    if not tabs:
        raise ValueError("no years selected")
    i, j = parse_subgrid(subgrid, tabs[0].grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        cmd = [(t.year, estimate_cumde(t.sub(i, j), ci=None).alpha_hat) for t in tabs]
    series = {f"CMD {subgrid}": cmd}
    if simple:
        label = f"simple {100 * simple[0]:g}/{100 * simple[1]:g}"
        series[label] = [(t.year, simple_from_tab(t, *simple)) for t in tabs]
    rows = []
    for estimator, values in series.items():
        for g in group_by_year_digit(values, level, allow_liberal):
            rows.append({
                "estimator": estimator,
                "group": g.label,
                "L": g.L,
                "alpha_bar": g.alpha_bar,
                "s_alpha": g.s_alpha,
                "ci_lo": g.ci[0] if g.ci else None,
                "ci_hi": g.ci[1] if g.ci else None,
                "level": g.level,
                "flag": g.flag or "",
            })
    return rows


def _write_csv(path: Path, rows: list[dict]):
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def write_study_tables(results: list[SimStudyResult], out: Path) -> list[Path]:
    """Long and wide CSV tables plus one density curve per cell; returns the written paths."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    cells = [c for r in results for c in r.cells]
    long_rows = [dict(vars(c)) for c in cells]
    _write_csv(out / "cells.csv", long_rows)
    written.append(out / "cells.csv")

    # wide layout: one row per (metric, n), one column per dgp/subgrid
    columns = []
    for c in cells:
        key = f"{c.dgp}/{c.subgrid}"
        if key not in columns:
            columns.append(key)
    ns = sorted({c.n for c in cells})
    index = {(f"{c.dgp}/{c.subgrid}", c.n): c for c in cells}
    wide = []
    for attr, title in METRIC_BLOCKS:
        for n in ns:
            row = {"metric": title, "n": n}
            for key in columns:
                c = index.get((key, n))
                row[key] = "" if c is None else f"{getattr(c, attr):.4f}"
            wide.append(row)
    _write_csv(out / "table.csv", wide)
    written.append(out / "table.csv")

    simple_rows = []
    for r in results:
        if not r.simple:
            continue
        for sub in (c.subgrid for c in r.cells):
            row = {"dgp": r.config.dgp.tag, "n": r.config.n, "cmd_subgrid": sub}
            comp = comparison_rows(r, sub)
            for e in comp:
                row[f"bias {e['estimator']}"] = f"{e['bias']:.4f}"
            for e in comp:
                row[f"rmse {e['estimator']}"] = f"{e['rmse']:.4f}"
            simple_rows.append(row)
    if simple_rows:
        _write_csv(out / "simple.csv", simple_rows)
        written.append(out / "simple.csv")

    dens = out / "density"
    dens.mkdir(exist_ok=True)
    for r in results:
        truth = r.config.dgp.tail_exponent
        for sub, draws in r.draws.items():
            path = dens / f"{r.config.dgp.tag}_{sub}_n{r.config.n}.csv"
            try:
                x, y = kernel_density(draws, center=truth)
            except ValueError as exc:
                logger.warning("no density for %s: %s", path.name, exc)
                continue
            _write_csv(path, [{"z": f"{a:.6f}", "density": f"{b:.6g}"} for a, b in zip(x, y)])
            written.append(path)
    return written


def cmd_simulate(config_path, out, workers=1) -> list[SimStudyResult]:
    configs = load_sim_configs(config_path)
    results = []
    for cfg in configs:
        logger.info("running %s n=%d (%d replications)", cfg.dgp.tag, cfg.n, cfg.replications)
        results.append(run_study(cfg, workers))
    write_study_tables(results, Path(out))
    return results


# -- click wrappers ----------------------------------------------------------

@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Pareto exponent estimation from top income share tabulations."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


_input = click.option("--input", "path", required=True, type=click.Path(exists=True, dir_okay=False),
                      help="Tabulation CSV (percentiles and shares in percent).")
_subgrid = click.option("--subgrid", default="1pct", show_default=True,
                        help="'1pct', '5pct', '10pct' or a 1-based range such as '2..6'.")
_years = [
    click.option("--from-year", type=int, default=None),
    click.option("--to-year", type=int, default=None),
]


def _with_years(f):
    for opt in reversed(_years):
        f = opt(f)
    return f


@main.command()
@_input
@_subgrid
@click.option("--n", "n", type=int, default=None, help="(Assumed) sample size; enables CIs and the specification test.")
@click.option("--ci", "ci_method", type=click.Choice(["lr", "wald"]), default="lr", show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--simple", default=None, help="Also report the two-share estimator at P,Q (percent), e.g. 0.1,1.")
@click.option("--format", "fmt", type=click.Choice(["table", "jsonl"]), default="table", show_default=True)
@_with_years
def estimate(path, subgrid, n, ci_method, level, simple, fmt, from_year, to_year):
    """Estimate the exponent for every year in a tabulation."""
    try:
        report = cmd_estimate(path, subgrid, n, ci_method, level, _simple_pair(simple), from_year, to_year)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    sys.stdout.write(report.to_jsonl() if fmt == "jsonl" else report.to_table())


@main.command()
@_input
@_subgrid
@click.option("--group", type=click.Choice(["year-digit"]), default="year-digit", show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--simple", default="0.1,1", show_default=True, help="Two-share estimator percentiles P,Q; 'none' to skip.")
@click.option("--allow-liberal", is_flag=True, help="Permit significance levels above 0.08.")
@click.option("--format", "fmt", type=click.Choice(["table", "csv"]), default="table", show_default=True)
@_with_years
def panel(path, subgrid, group, level, simple, allow_liberal, fmt, from_year, to_year):
    """Conservative t intervals pooling years that share a last digit."""
    pair = None if simple.lower() == "none" else _simple_pair(simple)
    try:
        rows = cmd_panel(path, subgrid, level, pair, from_year, to_year, allow_liberal)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    if fmt == "csv":
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
        return
    for r in rows:
        ci = "(n/a)" if r["ci_lo"] is None else f"({r['ci_lo']:.2f}, {r['ci_hi']:.2f})"
        click.echo(f"{r['estimator']:<16} {r['group']}  L={r['L']:<3} mean={r['alpha_bar']:.3f}  {ci}  {r['flag']}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--workers", type=int, default=1, show_default=True, help="Worker processes; 0 uses every CPU.")
def simulate(config_path, out, workers):
    """Run a Monte Carlo design and write CSV tables and density curves to OUT."""
    try:
        results = cmd_simulate(config_path, out, workers)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    for r in results:
        for c in r.cells:
            click.echo(
                f"{c.dgp:<7} n={c.n:<8} {c.subgrid:<6} bias={c.bias:+.3f} rmse={c.rmse:.3f} "
                f"cov={c.coverage:.2f} len={c.length:.3f} rej={c.rejection:.2f}"
                + (f" failures={c.failures}" if c.failures else "")
            )


if __name__ == "__main__":
    main()
