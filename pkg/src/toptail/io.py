"""Tabulation files, simulation configs and report rendering."""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import yaml

from .dgp_sim import DPLN, PAPER_GRID, AbsStudentT, Pareto, SimConfig
from .estimator import EstimationResult, TopShareTabulation
from .tail_moments import PercentileGrid

__all__ = [
    "TabulationError",
    "ConfigError",
    "parse_tabulation",
    "write_tabulation",
    "parse_subgrid",
    "percent_to_fraction",
    "fraction_to_percent",
    "load_sim_configs",
    "RunReport",
]


class TabulationError(ValueError):
    """Malformed tabulation file; ``line`` is 1-based when the problem is row-specific."""

    def __init__(self, message: str, line: Optional[int] = None, path=None):
        self.line = line
        self.path = path
        where = f"{path}:" if path else ""
        where += f"{line}: " if line is not None else (" " if path else "")
        super().__init__(f"{where}{message}")


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


def percent_to_fraction(text: str) -> float:
    """Exact-decimal conversion of a percent string such as ``"4.95"`` to 0.0495."""
    return float(Decimal(text.strip()) / 100)


def fraction_to_percent(value: float) -> str:
    d = Decimal(repr(float(value))) * 100
    s = format(d.normalize(), "f")
    return s


def parse_tabulation(path) -> list[TopShareTabulation]:
    """Read a ``year,<p1>,<p2>,...`` CSV with percentiles and shares in percent."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise TabulationError("empty file", path=path)
    hline, header = rows[0]
    if header[0].strip().lower() != "year" or len(header) < 4:
        raise TabulationError("header must be 'year' followed by at least 3 percentiles", hline, path)
    try:
        pct = [percent_to_fraction(h) for h in header[1:]]
    except InvalidOperation:
        raise TabulationError(f"non-numeric percentile in header {header[1:]}", hline, path) from None
    try:
        grid = PercentileGrid(tuple(pct))
    except ValueError as exc:
        raise TabulationError(f"bad percentile header: {exc}", hline, path) from None

    out, seen = [], set()
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise TabulationError(f"expected {len(header)} fields, got {len(row)}", lineno, path)
        try:
            year = int(row[0])
            shares = [percent_to_fraction(v) for v in row[1:]]
        except (ValueError, InvalidOperation):
            raise TabulationError(f"non-numeric value in {row}", lineno, path) from None
        if year in seen:
            raise TabulationError(f"duplicate year {year}", lineno, path)
        seen.add(year)
        for k, (a, b) in enumerate(zip(shares, shares[1:])):
            if b <= a:
                raise TabulationError(
                    f"share at {header[k + 2].strip()}% ({row[k + 2].strip()}) does not exceed "
                    f"share at {header[k + 1].strip()}% ({row[k + 1].strip()})",
                    lineno, path,
                )
        if shares[0] <= 0 or shares[-1] > 1:
            raise TabulationError("shares must lie in (0, 100]", lineno, path)
        out.append(TopShareTabulation(grid, tuple(shares), year=year))
    return out


def write_tabulation(tabs: Sequence[TopShareTabulation], path) -> None:
    if not tabs:
        raise ValueError("nothing to write")
    grid = tabs[0].grid
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["year"] + [fraction_to_percent(p) for p in grid.p])
        for t in tabs:
            if t.grid != grid:
                raise ValueError("all tabulations must share one percentile grid")
            w.writerow([t.year] + [fraction_to_percent(s) for s in t.shares])


_RANGE = re.compile(r"^\s*p?(\d+)\s*(?:\.\.|-\s*p)\s*(\d+)\s*$")
_PCT = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*pct\s*$")


def parse_subgrid(spec: str, grid: PercentileGrid) -> tuple[int, int]:
    """Resolve a subgrid name to 0-based inclusive indices into ``grid``.

    ``"Xpct"`` selects every percentile up to and including X percent;
    ``"i..j"`` and ``"pi-pj"`` are 1-based inclusive ranges.
    """
    m = _RANGE.match(spec)
    if m:
        i, j = int(m.group(1)) - 1, int(m.group(2)) - 1
    else:
        m = _PCT.match(spec)
        if not m:
            raise ValueError(f"subgrid must look like '1pct' or '2..6', got {spec!r}")
        cutoff = float(Decimal(m.group(1)) / 100)
        inside = [k for k, p in enumerate(grid.p) if p <= cutoff * (1 + 1e-12)]
        if not inside:
            raise ValueError(f"no percentile at or below {m.group(1)}%")
        i, j = 0, inside[-1]
    if not (0 <= i < j < len(grid.p)):
        raise ValueError(f"subgrid {spec!r} is out of range for {len(grid.p)} percentiles")
    if j - i < 2:
        raise ValueError(f"subgrid {spec!r} has {j - i + 1} percentiles; need at least 3")
    return i, j


# -- simulation configs ------------------------------------------------------

_DGP_FIELDS = {
    "pareto": (Pareto, {"alpha", "c"}),
    "abs_t": (AbsStudentT, {"nu"}),
    "dpln": (DPLN, {"mu", "sigma", "alpha", "beta"}),
}


def _dgp(entry, where):
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ConfigError(where, "expected a mapping with a 'kind' key")
    kind = entry["kind"]
    if kind not in _DGP_FIELDS:
        raise ConfigError(f"{where}.kind", f"unknown DGP {kind!r}; choose from {sorted(_DGP_FIELDS)}")
    cls, allowed = _DGP_FIELDS[kind]
    params = {k: v for k, v in entry.items() if k != "kind"}
    for k, v in params.items():
        if k not in allowed:
            raise ConfigError(f"{where}.{k}", f"not a parameter of {kind}")
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"{where}.{k}", f"expected a number, got {v!r}")
    try:
        return cls(**{k: float(v) for k, v in params.items()})
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def _list(doc, key, required=True):
    v = doc.get(key)
    if v is None:
        if required:
            raise ConfigError(key, "missing")
        return []
    if not isinstance(v, list) or not v:
        raise ConfigError(key, "expected a non-empty list")
    return v


def load_sim_configs(path) -> list[SimConfig]:
    """Expand a YAML study design into one :class:`SimConfig` per (dgp, n) pair.

    Keys: ``dgp`` (list of {kind, ...params}), ``n`` (list), ``subgrid`` (list of
    names or ``i..j`` ranges), ``replications``, ``seed``, and optionally
    ``level``, ``ci_method``, ``percentiles`` (in percent) and ``simple``
    (list of [p, q] pairs in percent).
    """
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<document>", f"not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "expected a mapping at top level")
    unknown = set(doc) - {"dgp", "n", "subgrid", "replications", "seed", "level",
                          "ci_method", "percentiles", "simple"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")

    dgps = [_dgp(e, f"dgp[{i}]") for i, e in enumerate(_list(doc, "dgp"))]
    ns = []
    for i, v in enumerate(_list(doc, "n")):
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"n[{i}]", f"expected a positive integer, got {v!r}")
        ns.append(v)

    grid = PAPER_GRID
    if "percentiles" in doc:
        try:
            grid = PercentileGrid(tuple(percent_to_fraction(str(v)) for v in _list(doc, "percentiles")))
        except (ValueError, InvalidOperation) as exc:
            raise ConfigError("percentiles", str(exc)) from None

    subgrids = []
    for i, s in enumerate(_list(doc, "subgrid")):
        s = str(s)
        try:
            idx = parse_subgrid(s, grid)
        except ValueError as exc:
            raise ConfigError(f"subgrid[{i}]", str(exc)) from None
        subgrids.append((s, idx))

    reps = doc.get("replications")
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        raise ConfigError("replications", f"expected a positive integer, got {reps!r}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", f"expected a non-negative integer, got {seed!r}")
    level = doc.get("level", 0.95)
    if not isinstance(level, float) or not 0 < level < 1:
        raise ConfigError("level", f"expected a number in (0, 1), got {level!r}")
    ci = doc.get("ci_method", "lr")
    if ci not in ("lr", "wald"):
        raise ConfigError("ci_method", f"expected 'lr' or 'wald', got {ci!r}")

    pairs = []
    for i, pq in enumerate(_list(doc, "simple", required=False)):
        if not (isinstance(pq, list) and len(pq) == 2):
            raise ConfigError(f"simple[{i}]", "expected [p, q] in percent")
        try:
            p, q = (percent_to_fraction(str(v)) for v in pq)
        except InvalidOperation:
            raise ConfigError(f"simple[{i}]", f"non-numeric percentile in {pq!r}") from None
        if not any(math.isclose(p, g, rel_tol=1e-12) for g in grid.p) or \
                not any(math.isclose(q, g, rel_tol=1e-12) for g in grid.p):
            raise ConfigError(f"simple[{i}]", "both percentiles must be on the grid")
        if not p < q:
            raise ConfigError(f"simple[{i}]", "need p < q")
        pairs.append((p, q))

    out = []
    for di, d in enumerate(dgps):
        for ni, n in enumerate(ns):
            try:
                out.append(SimConfig(
                    dgp=d, n=n, grid=grid, subgrids=tuple(subgrids), replications=reps,
                    seed=seed, ci_method=ci, level=level, simple_pairs=tuple(pairs),
                ))
            except ValueError as exc:
                raise ConfigError(f"n[{ni}]", str(exc)) from None
    return out


# -- reports -----------------------------------------------------------------

@dataclass
class RunReport:
    """Per-year estimation records plus diagnostics."""

    records: list[dict[str, Any]] = field(default_factory=list)
    assumed_n: bool = False

    @classmethod
    def from_results(cls, tabs, results: Iterable[EstimationResult], subgrid: str,
                     simple=None, assumed_n=False) -> "RunReport":
        report = cls(assumed_n=assumed_n)
        for tab, res, smp in zip(tabs, results, simple or [None] * len(tabs)):
            report.records.append(_record(tab, res, subgrid, smp, assumed_n))
        return report

    def to_jsonl(self) -> str:
        """One JSON object per year; open interval ends are ``null`` (see ``ci_open``)."""
        return "".join(json.dumps(_finite(r), allow_nan=False) + "\n" for r in self.records)

    def to_table(self) -> str:
        cols = ["year", "alpha", "ci_lo", "ci_hi", "spec_stat", "spec_p", "simple", "flags"]
        lines = []
        for r in self.records:
            ci = r.get("ci") or [None, None]
            lines.append([
                str(r["year"]),
                _fmt(r["alpha_hat"]),
                _fmt(ci[0]),
                _fmt(ci[1]),
                _fmt(r.get("spec_stat"), 2),
                _fmt(r.get("spec_pvalue"), 3),
                _fmt(r.get("simple_alpha")),
                ",".join(r.get("flags", [])),
            ])
        widths = [max(len(c), *(len(l[i]) for l in lines)) if lines else len(c)
                  for i, c in enumerate(cols)]
        out = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
        out += ["  ".join(v.rjust(w) for v, w in zip(l, widths)) for l in lines]
        if self.assumed_n:
            out.append("CIs are conservative, computed at an assumed sample size n.")
        return "\n".join(out) + "\n"


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _finite(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_finite(x) for x in v]
    return v


def _fmt(v, digits=4):
    if v is None:
        return "-"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.{digits}f}"


def _record(tab, res: EstimationResult, subgrid, simple_alpha, assumed_n):
    rec: dict[str, Any] = {
        "year": tab.year,
        "subgrid": subgrid,
        "K": res.K,
        "alpha_hat": res.alpha_hat,
        "xi_hat": res.xi_hat,
        "objective": res.objective_at_min,
    }
    flags = []
    if res.at_boundary:
        flags.append("boundary")
    if res.n is not None:
        rec["n"] = res.n
        rec["floor_np1"] = math.floor(res.n * tab.grid.p[0] * (1 + 1e-12))
        if assumed_n:
            flags.append("conservative, assumed n")
    if res.lr_ci is not None:
        rec["ci_method"] = "lr"
        rec["ci"] = list(res.lr_ci)
        rec["ci_open"] = list(res.lr_ci_open)
        if any(res.lr_ci_open):
            flags.append("open-ended CI")
    elif res.wald_ci is not None:
        rec["ci_method"] = "wald"
        rec["ci"] = [float(v) for v in res.wald_ci]
        rec["se_alpha"] = res.se_alpha
    if res.lr_ci is not None or res.wald_ci is not None:
        rec["level"] = res.level
    if res.spec_stat is not None:
        rec["spec_stat"] = res.spec_stat
        rec["spec_pvalue"] = res.spec_pvalue
        if res.spec_pvalue < 0.05:
            flags.append("spec-test rejects at 5%")
    if simple_alpha is not None:
        rec["simple_alpha"] = simple_alpha
    rec["flags"] = flags
    return rec
