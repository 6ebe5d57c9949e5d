"""Comparison statistics over per-seed metric samples.

Vargha-Delaney A12, a two-sided Wilcoxon rank-sum test (exact for small
samples), Scott-Knott clustering, and the median/IQR comparison table used by
``polyfuzz report compare``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

EXACT_LIMIT = 12
ALPHA = 0.05
A12_SMALL = 0.56


class EmptySampleError(ValueError):
    pass


@dataclass(frozen=True)
class MetricSample:
    """Per-run values of one metric for one algorithm."""

    label: str
    values: tuple

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise EmptySampleError(f"sample {self.label!r} has no runs")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"sample {self.label!r} has non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


def _as_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptySampleError(f"{name} is empty")
    return arr


def a12(x, y) -> float:
    """Probability that a value from x exceeds one from y, ties counted half."""
    x, y = _as_array(x, "x"), _as_array(y, "y")
    ys = np.sort(y)
    less = np.searchsorted(ys, x, side="left")
    leq = np.searchsorted(ys, x, side="right")
    wins = float(np.sum(less)) + 0.5 * float(np.sum(leq - less))
    return wins / (x.size * y.size)


def midranks(values) -> np.ndarray:
    """1-based ranks with ties given their average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_p(ranks: np.ndarray, n1: int, w: float) -> float:
    """Two-sided exact p by counting rank subsets of size n1 (DP over doubled ranks)."""
    r2 = np.rint(2 * ranks).astype(np.int64)
    total = int(r2.sum())
    # counts[k][s]: number of k-subsets whose doubled rank sum is s
    counts = np.zeros((n1 + 1, total + 1), dtype=np.float64)
    counts[0, 0] = 1.0
    for r in r2:
        counts[1:, r:] = counts[1:, r:] + counts[:-1, :total + 1 - r]
    dist = counts[n1]
    n_sets = dist.sum()
    centre = n1 * total / len(r2)
    dev = abs(2 * w - centre)
    sums = np.arange(total + 1)
    extreme = np.abs(sums - centre) >= dev - 1e-9
    return float(min(1.0, dist[extreme].sum() / n_sets))


def wilcoxon_rank_sum(x, y, method: str = "auto") -> float:
    """Two-sided p-value of the Wilcoxon rank-sum test.

    ``method="auto"`` uses the exact null distribution when
    ``len(x) + len(y) <= 12`` and otherwise a normal approximation with
    tie-corrected variance and a 0.5 continuity correction. ``"exact"`` and
    ``"normal"`` force one path.
    """
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    x, y = _as_array(x, "x"), _as_array(y, "y")
    n1, n2 = x.size, y.size
    n = n1 + n2
    ranks = midranks(np.concatenate([x, y]))
    w = float(ranks[:n1].sum())
    if method == "exact" or (method == "auto" and n <= EXACT_LIMIT):
        return _exact_p(ranks, n1, w)
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return 1.0
    mu = n1 * (n + 1) / 2.0
    z = max(0.0, abs(w - mu) - 0.5) / math.sqrt(var)
    return float(min(1.0, math.erfc(z / math.sqrt(2.0))))


def _split_gain(groups: list, k: int) -> float:
    allv = np.concatenate(groups)
    grand = allv.mean()
    left, right = np.concatenate(groups[:k]), np.concatenate(groups[k:])
    return left.size * (left.mean() - grand) ** 2 + right.size * (right.mean() - grand) ** 2


def _sk_partition(samples: list) -> list:
    if len(samples) < 2:
        return [samples]
    groups = [np.asarray(s.values) for s in samples]
    k = max(range(1, len(samples)), key=lambda i: (_split_gain(groups, i), -i))
    low, high = np.concatenate(groups[:k]), np.concatenate(groups[k:])
    if wilcoxon_rank_sum(high, low) < ALPHA and a12(high, low) >= A12_SMALL:
        return _sk_partition(samples[:k]) + _sk_partition(samples[k:])
    return [samples]


def scott_knott(samples) -> list:
    """Cluster samples into statistically distinct groups; return (label, rank) pairs.

    A split of the mean-ordered list is accepted when the upper group beats the
    lower one with Wilcoxon p < 0.05 and A12 >= 0.56. Rank 1 is the
    lowest-mean cluster, so larger ranks are better.
    """
    samples = list(samples)
    if not samples:
        raise EmptySampleError("scott_knott needs at least one sample")
    labels = [s.label for s in samples]
    if len(set(labels)) != len(labels):
        raise ValueError("sample labels must be unique")
    ordered = sorted(samples, key=lambda s: (s.mean, s.label))
    rank_of = {}
    for r, cluster in enumerate(_sk_partition(ordered), start=1):
        for s in cluster:
            rank_of[s.label] = r
    return [(s.label, rank_of[s.label]) for s in samples]


def iqr(values) -> float:
    q75, q25 = np.percentile(np.asarray(values, dtype=np.float64), [75, 25])
    return float(q75 - q25)


COLUMNS = ("task", "algorithm", "runs", "median", "iqr", "p_value", "a12", "rank")


def compare(table: dict, reference: str | None = None) -> list:
    """Rows of the comparison table.

    ``table`` maps task -> {algorithm label -> list of per-run values}.
    p-values and A12 compare ``reference`` (default: first label) against each
    other algorithm; the reference row itself gets p = 1 and A12 = 0.5.
    """
    rows = []
    for task in sorted(table):
        samples = [MetricSample(lab, tuple(vals)) for lab, vals in table[task].items()]
        ref_label = reference if reference is not None else samples[0].label
        ref = next((s for s in samples if s.label == ref_label), None)
        if ref is None:
            raise KeyError(f"reference {ref_label!r} missing for task {task!r}")
        ranks = dict(scott_knott(samples))
        for s in samples:
            rows.append({"task": task, "algorithm": s.label, "runs": len(s.values),
                         "median": float(np.median(s.values)), "iqr": iqr(s.values),
                         "p_value": wilcoxon_rank_sum(ref.values, s.values),
                         "a12": a12(ref.values, s.values), "rank": ranks[s.label]})
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def rows_to_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _fmt(r[k]) for k in COLUMNS})
    return buf.getvalue()


def rows_to_text(rows: list) -> str:
    """Fixed-width table with "median (IQR)" cells."""
    head = ["task", "algorithm", "median (IQR)", "p", "A12", "rank"]
    body = [[r["task"], r["algorithm"], f"{r['median']:g} ({r['iqr']:g})",
             f"{r['p_value']:.4g}", f"{r['a12']:.3f}", str(r["rank"])] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in [head] + body]
    return "\n".join(lines) + "\n"


__all__ = ["MetricSample", "EmptySampleError", "a12", "midranks", "wilcoxon_rank_sum",
           "scott_knott", "iqr", "compare", "rows_to_csv", "rows_to_text", "COLUMNS"]
