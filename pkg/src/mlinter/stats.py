"""Aggregation, significance tests and report tables over experiment results.

Mann-Whitney U is two-sided. With ``n1 + n2 <= 12`` and no ties the p-value is
exact, from the null distribution of U counted by dynamic programming;
otherwise it uses the normal approximation with tie-corrected variance and a
0.5 continuity correction. Quartiles use the nearest-rank definition.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass
from functools import lru_cache
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

from mlinter.dataset import SIZES
from mlinter.experiment import RunResult, expected_precision

log = logging.getLogger(__name__)

EXACT_MAX_N = 12
METRICS = ("precision", "recall", "accuracy", "f1")
VALIDATIONS = ("balanced", "realistic")
GROUPINGS = ("size", "ratio", "size_ratio", "rule")
DEFAULT_THRESHOLDS = (0.8, 0.95)

SIZE_ORDER = tuple(SIZES)  # S, M, L
RATIO_ORDER = ("VE", "VFE", "VF")


class StatsError(ValueError):
    pass


# -- basic statistics ----------------------------------------------------------


def median(values: Sequence[float]) -> float:
    if not values:
        raise StatsError("median of an empty sample")
    s = sorted(values)
    mid = len(s) // 2
    return s[mid] if len(s) % 2 else (s[mid - 1] + s[mid]) / 2


def nearest_rank_quantile(values: Sequence[float], q: float) -> float:
    """Smallest value with at least ``q`` of the sample at or below it."""
    if not values:
        raise StatsError("quantile of an empty sample")
    s = sorted(values)
    return s[max(1, math.ceil(round(q * len(s), 9))) - 1]


def quartiles(values: Sequence[float]) -> dict[str, float]:
    """min, q1, median, q3, max; the middle three by nearest rank."""
    s = sorted(values)
    if not s:
        raise StatsError("quartiles of an empty sample")
    return {
        "min": s[0],
        "q1": nearest_rank_quantile(s, 0.25),
        "median": nearest_rank_quantile(s, 0.5),
        "q3": nearest_rank_quantile(s, 0.75),
        "max": s[-1],
    }


def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def u_statistic(xs: Sequence[float], ys: Sequence[float]) -> float:
    """U of the first sample: pairs with x > y, ties counted one half."""
    if not xs or not ys:
        raise StatsError("Mann-Whitney U needs two non-empty samples")
    ranks = _midranks(list(xs) + list(ys))
    n1 = len(xs)
    return sum(ranks[:n1]) - n1 * (n1 + 1) / 2


@lru_cache(maxsize=None)
def _u_counts(n1: int, n2: int) -> tuple[int, ...]:
    """Number of rank arrangements giving each U = 0..n1*n2 (no ties)."""
    if n1 == 0 or n2 == 0:
        return (1,)
    # the largest value belongs either to x (adds n2 to U) or to y
    with_x = _u_counts(n1 - 1, n2)
    with_y = _u_counts(n1, n2 - 1)
    out = [0] * (n1 * n2 + 1)
    for u, c in enumerate(with_y):
        out[u] += c
    for u, c in enumerate(with_x):
        out[u + n2] += c
    return tuple(out)


def exact_p(u: float, n1: int, n2: int) -> float:
    counts = _u_counts(n1, n2)
    k = int(round(u))
    le = sum(counts[: k + 1])
    ge = sum(counts[k:])
    return min(1.0, 2 * min(le, ge) / math.comb(n1 + n2, n1))


def normal_p(u: float, n1: int, n2: int, tie_sizes: Iterable[int] = ()) -> float:
    n = n1 + n2
    tie_term = sum(t**3 - t for t in tie_sizes)
    var = n1 * n2 / 12 * ((n + 1) - (tie_term / (n * (n - 1)) if n > 1 else 0))
    if var <= 0:
        return 1.0
    dev = max(abs(u - n1 * n2 / 2) - 0.5, 0.0)
    return min(1.0, math.erfc(dev / math.sqrt(2 * var)))


@dataclass(frozen=True)
class MannWhitney:
    u: float
    p: float
    exact: bool


def mann_whitney_u(xs: Sequence[float], ys: Sequence[float]) -> MannWhitney:
    u = u_statistic(xs, ys)
    n1, n2 = len(xs), len(ys)
    pooled = list(xs) + list(ys)
    tie_sizes = [c for c in _value_counts(pooled) if c > 1]
    if n1 + n2 <= EXACT_MAX_N and not tie_sizes:
        return MannWhitney(u, exact_p(u, n1, n2), True)
    return MannWhitney(u, normal_p(u, n1, n2, tie_sizes), False)


def _value_counts(values: Iterable[float]) -> list[int]:
    counts: dict[float, int] = defaultdict(int)
    for v in values:
        counts[v] += 1
    return list(counts.values())


def rank_biserial(xs: Sequence[float], ys: Sequence[float]) -> float:
    """+1 when every x exceeds every y, -1 in the opposite case."""
    return 2 * u_statistic(xs, ys) / (len(xs) * len(ys)) - 1


def bonferroni(pvals: Sequence[float]) -> list[float]:
    for p in pvals:
        if not 0 <= p <= 1:
            raise StatsError(f"p-value outside [0, 1]: {p}")
    m = len(pvals)
    return [min(1.0, p * m) for p in pvals]


# -- grouping over results -----------------------------------------------------


def _group_key(result: RunResult, group_by: str) -> str:
    if group_by == "size":
        return result.config.size_name
    if group_by == "ratio":
        return result.config.ratio
    if group_by == "size_ratio":
        return result.config.name
    if group_by == "rule":
        return result.rule
    raise StatsError(f"unknown grouping {group_by!r}; expected one of {GROUPINGS}")


def _group_order(group_by: str, keys: Iterable[str]) -> list[str]:
    keys = set(keys)
    if group_by == "size":
        fixed = [k for k in SIZE_ORDER if k in keys]
    elif group_by == "ratio":
        fixed = [k for k in RATIO_ORDER if k in keys]
    elif group_by == "size_ratio":
        fixed = [f"{s}/{r}" for s in SIZE_ORDER for r in RATIO_ORDER if f"{s}/{r}" in keys]
    else:
        fixed = []
    return fixed + sorted(keys - set(fixed))


def metric_value(result: RunResult, metric: str, validation: str) -> float | None:
    if metric not in METRICS:
        raise StatsError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if validation not in VALIDATIONS:
        raise StatsError(f"unknown validation {validation!r}; expected one of {VALIDATIONS}")
    return getattr(getattr(result, validation), metric)


@dataclass(frozen=True)
class GroupValues:
    values: dict[str, list[float]]
    undefined: dict[str, int]


def collect(results: Sequence[RunResult], group_by: str, metric: str, validation: str) -> GroupValues:
    """Defined metric values per group, in display order, plus null counts."""
    values: dict[str, list[float]] = defaultdict(list)
    undefined: dict[str, int] = defaultdict(int)
    for r in results:
        key = _group_key(r, group_by)
        v = metric_value(r, metric, validation)
        if v is None:
            undefined[key] += 1
        else:
            values[key].append(v)
    order = _group_order(group_by, set(values) | set(undefined))
    return GroupValues({k: values.get(k, []) for k in order}, {k: undefined.get(k, 0) for k in order})


def aggregate_medians(
    results: Sequence[RunResult], group_by: str, metric: str = "precision", validation: str = "balanced"
) -> dict[str, float | None]:
    if not results:
        raise StatsError("no results to aggregate")
    groups = collect(results, group_by, metric, validation)
    out: dict[str, float | None] = {}
    for key, vals in groups.values.items():
        if vals:
            out[key] = median(vals)
        else:
            log.warning("%s %s %s: no defined values in group %s", validation, metric, group_by, key)
            out[key] = None
    return out


@dataclass(frozen=True)
class TestResult:
    group1: str
    group2: str
    u: float
    p_value: float
    p_adjusted: float
    rbc: float
    n1: int
    n2: int
    exact: bool = False

    __test__ = False


def pairwise_analysis(
    results: Sequence[RunResult], dimension: str, metric: str = "precision", validation: str = "balanced"
) -> list[TestResult]:
    """All unordered group pairs, Bonferroni-adjusted within the family."""
    if dimension not in ("size", "ratio"):
        raise StatsError(f"pairwise analysis is over size or ratio, not {dimension!r}")
    groups = {k: v for k, v in collect(results, dimension, metric, validation).values.items() if v}
    if len(groups) < 2:
        raise StatsError(f"pairwise analysis needs at least 2 {dimension} groups with defined values")
    pairs = list(combinations(groups, 2))
    tests = [mann_whitney_u(groups[a], groups[b]) for a, b in pairs]
    adjusted = bonferroni([t.p for t in tests])
    return [
        TestResult(a, b, t.u, t.p, adj, rank_biserial(groups[a], groups[b]), len(groups[a]), len(groups[b]), t.exact)
        for (a, b), t, adj in zip(pairs, tests, adjusted)
    ]


@dataclass(frozen=True)
class ThresholdTable:
    thresholds: tuple[float, ...]
    rules: int
    counts: dict[str, dict[float, int]]  # config name -> threshold -> rules above it

    def to_json(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "rules": self.rules,
            "counts": {cfg: {str(t): n for t, n in row.items()} for cfg, row in self.counts.items()},
        }


def threshold_table(
    results: Sequence[RunResult],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    validation: str = "balanced",
) -> ThresholdTable:
    """Per configuration, how many rules have median precision strictly above each threshold."""
    rules = sorted({r.rule for r in results})
    if not rules:
        raise StatsError("threshold table needs results for at least one rule")
    per_cell: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in results:
        p = metric_value(r, "precision", validation)
        if p is not None:
            per_cell[r.config.name][r.rule].append(p)
    configs = _group_order("size_ratio", {r.config.name for r in results})
    counts = {}
    for cfg in configs:
        medians = [median(v) for v in per_cell[cfg].values() if v]
        counts[cfg] = {t: sum(m > t for m in medians) for t in thresholds}
    return ThresholdTable(tuple(thresholds), len(rules), counts)


# -- base-rate consistency -----------------------------------------------------


@dataclass(frozen=True)
class BaseRateCheck:
    rule: str
    config: str
    repetition: int
    balanced_tpr: float | None
    balanced_fpr: float | None
    realistic_base_rate: float
    predicted_precision: float | None
    realistic_precision: float | None


def base_rate_checks(results: Sequence[RunResult]) -> list[BaseRateCheck]:
    """Realistic precision next to what the balanced TPR/FPR imply at the realistic base rate."""
    rows = []
    for r in sorted(results, key=lambda r: r.sort_key):
        tpr, fpr = r.balanced.recall, r.balanced.fpr
        predicted = None
        if tpr is not None and fpr is not None:
            predicted = expected_precision(tpr, fpr, r.realistic_base_rate)
        rows.append(
            BaseRateCheck(
                r.rule, r.config.name, r.repetition, tpr, fpr, r.realistic_base_rate, predicted, r.realistic.precision
            )
        )
    return rows


# -- report --------------------------------------------------------------------


def fmt(x: float | None, digits: int = 3) -> str:
    if x is None:
        return "n/a"
    return f"{x:.{digits}f}"


def fmt_p(p: float) -> str:
    # values below 1e-300 display as 0, as in published tables
    if p < 1e-300:
        return "0.0"
    return f"{p:.3g}"


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def _md_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return lines


def summary_markdown(results: Sequence[RunResult], thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> str:
    lines = ["# Experiment summary", ""]
    rules = sorted({r.rule for r in results})
    lines += [f"Runs: {len(results)}. Rules: {len(rules)} ({', '.join(rules)}).", ""]

    lines += ["## Median scores per configuration", ""]
    header = ["config"] + [f"{v} {m}" for v in VALIDATIONS for m in ("precision", "recall")]
    cols = {(v, m): aggregate_medians(results, "size_ratio", m, v) for v in VALIDATIONS for m in ("precision", "recall")}
    configs = list(cols["balanced", "precision"])
    lines += _md_table(header, ([c] + [fmt(cols[v, m][c]) for v in VALIDATIONS for m in ("precision", "recall")] for c in configs))
    lines.append("")

    lines += ["## Median scores per rule", ""]
    rcols = {(v, m): aggregate_medians(results, "rule", m, v) for v in VALIDATIONS for m in ("precision", "recall")}
    lines += _md_table(["rule"] + header[1:], ([r] + [fmt(rcols[v, m][r]) for v in VALIDATIONS for m in ("precision", "recall")] for r in rules))
    lines.append("")

    lines += ["## Undefined values excluded from aggregation", ""]
    rows = []
    for v in VALIDATIONS:
        for m in METRICS:
            n = sum(collect(results, "size_ratio", m, v).undefined.values())
            rows.append([v, m, str(n)])
    lines += _md_table(["validation", "metric", "undefined runs"], rows)
    lines.append("")

    for dimension in ("size", "ratio"):
        for v in VALIDATIONS:
            for m in ("precision", "recall"):
                title = f"## Pairwise Mann-Whitney tests by {dimension}: {v} {m}"
                try:
                    tests = pairwise_analysis(results, dimension, m, v)
                except StatsError as exc:
                    lines += [title, "", f"Not computed: {exc}.", ""]
                    continue
                lines += [title, ""]
                lines += _md_table(
                    ["group 1", "group 2", "n1", "n2", "U", "p", "p (Bonferroni)", "RBC", "method"],
                    (
                        [t.group1, t.group2, str(t.n1), str(t.n2), f"{t.u:g}", fmt_p(t.p_value), fmt_p(t.p_adjusted), f"{t.rbc:.2f}", "exact" if t.exact else "normal"]
                        for t in tests
                    ),
                )
                lines.append("")

    for v in VALIDATIONS:
        table = threshold_table(results, thresholds, v)
        lines += [f"## Rules with median {v} precision above threshold (of {table.rules})", ""]
        lines += _md_table(
            ["config"] + [f"> {t:g}" for t in table.thresholds],
            ([cfg] + [str(row[t]) for t in table.thresholds] for cfg, row in table.counts.items()),
        )
        lines.append("")
    return "\n".join(lines)


def quartiles_csv(results: Sequence[RunResult]) -> str:
    rows = []
    for v in VALIDATIONS:
        for m in METRICS:
            for group_by in GROUPINGS:
                groups = collect(results, group_by, m, v)
                for key, vals in groups.values.items():
                    q = quartiles(vals) if vals else dict.fromkeys(("min", "q1", "median", "q3", "max"))
                    rows.append([v, m, group_by, key, len(vals), groups.undefined[key], q["min"], q["q1"], q["median"], q["q3"], q["max"]])
    header = ["validation", "metric", "group_by", "group", "n", "undefined", "min", "q1", "median", "q3", "max"]
    return _csv_text(header, rows)


def base_rate_csv(results: Sequence[RunResult]) -> str:
    header = list(BaseRateCheck.__dataclass_fields__)
    return _csv_text(header, (list(asdict(row).values()) for row in base_rate_checks(results)))


def emit_report(
    results: Sequence[RunResult], out_dir: str | os.PathLike, thresholds: Sequence[float] = DEFAULT_THRESHOLDS
) -> dict[str, Path]:
    """Write the report bundle; output is a pure function of the results."""
    if not results:
        raise StatsError("no results to report")
    results = sorted(results, key=lambda r: r.sort_key)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = {v: threshold_table(results, thresholds, v).to_json() for v in VALIDATIONS}
    thresholds_md = []
    for v in VALIDATIONS:
        t = tables[v]
        thresholds_md += [f"## {v}", ""]
        thresholds_md += _md_table(
            ["config"] + [f"> {x:g}" for x in t["thresholds"]],
            ([cfg] + [str(row[str(x)]) for x in t["thresholds"]] for cfg, row in t["counts"].items()),
        )
        thresholds_md.append("")
    files = {
        "summary": ("summary.md", summary_markdown(results, thresholds)),
        "quartiles": ("quartiles.csv", quartiles_csv(results)),
        "thresholds_json": ("thresholds.json", json.dumps(tables, indent=2, sort_keys=True) + "\n"),
        "thresholds_md": ("thresholds.md", "# Threshold tables\n\n" + "\n".join(thresholds_md)),
        "base_rate": ("base_rate.csv", base_rate_csv(results)),
    }
    written = {}
    for key, (name, text) in files.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        written[key] = path
    return written

