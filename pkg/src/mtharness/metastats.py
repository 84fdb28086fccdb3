"""Meta-evaluation statistics over segment scores and system rankings.

MAE and run comparison work on paired segment vectors; Kendall tau-a,
tau-c and pairwise accuracy compare orderings (ties matter, see each
docstring); histograms and worse-than-empty counts describe score
distributions. Everything here is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .evalset import read_lines


@dataclass(frozen=True)
class SystemRanking:
    """Named systems with scores; order of entries carries no meaning."""

    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple((name, float(score)) for name, score in self.entries))
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("system names in a ranking must be unique")

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)


def read_ranking(path: str | Path) -> SystemRanking:
    """Load a ``system<TAB>score`` TSV; lines starting with `#` are comments."""
    entries = []
    for lineno, line in enumerate(read_lines(path), start=1):
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}: line {lineno} is not system<TAB>score: {line!r}")
        name, score_text = parts
        try:
            score = float(score_text)
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: {score_text!r} is not a number") from None
        entries.append((name, score))
    return SystemRanking(tuple(entries))


@dataclass(frozen=True)
class MetaReport:
    n: int
    mae: float
    tau_a: float | None = None
    tau_c: float | None = None
    pairwise_acc: float | None = None


def _check_paired(a: Sequence[float], b: Sequence[float], what: str) -> None:
    if len(a) != len(b):
        raise ValueError(f"{what}: length mismatch ({len(a)} vs {len(b)})")


def mae(pred: Sequence[float], gold: Sequence[float]) -> float:
    """Mean absolute error, in the units of the inputs (no implicit x100)."""
    _check_paired(pred, gold, "mae")
    if not pred:
        raise ValueError("mae: empty input")
    return math.fsum(abs(p - g) for p, g in zip(pred, gold)) / len(pred)


def _pair_counts(x: Sequence[float], y: Sequence[float]) -> tuple[int, int]:
    """Concordant/discordant counts over all unordered index pairs."""
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    sign_x = np.sign(xs[:, None] - xs[None, :])
    sign_y = np.sign(ys[:, None] - ys[None, :])
    upper = np.triu_indices(len(xs), k=1)
    product = (sign_x * sign_y)[upper]
    return int(np.count_nonzero(product > 0)), int(np.count_nonzero(product < 0))


def _check_tau_input(x: Sequence[float], y: Sequence[float]) -> None:
    _check_paired(x, y, "kendall tau")
    if len(x) < 2:
        raise ValueError("kendall tau needs at least two points")


def kendall_tau_a(x: Sequence[float], y: Sequence[float]) -> float:
    """(C - D) / (n(n-1)/2); tied pairs count toward neither C nor D."""
    _check_tau_input(x, y)
    c, d = _pair_counts(x, y)
    n = len(x)
    return (c - d) / (n * (n - 1) / 2)


def kendall_tau_c(x: Sequence[float], y: Sequence[float]) -> float:
    """(C - D) * 2m / (n^2 (m-1)) with m = min distinct values; 0 when m = 1."""
    _check_tau_input(x, y)
    m = min(np.unique(np.asarray(x, dtype=float)).size, np.unique(np.asarray(y, dtype=float)).size)
    if m == 1:
        return 0.0
    c, d = _pair_counts(x, y)
    n = len(x)
    return (c - d) * 2 * m / (n * n * (m - 1))


def pairwise_accuracy(metric: SystemRanking, human: SystemRanking) -> float:
    """Share of system pairs ordered the same way by both rankings.

    A pair agrees when both rankings order it strictly the same or both
    tie it; a tie against a strict order disagrees. Hence any ranking
    compared with itself scores 1.
    """
    metric_scores = metric.as_dict()
    human_scores = human.as_dict()
    if set(metric_scores) != set(human_scores):
        raise ValueError("rankings cover different system sets")
    names = sorted(metric_scores)
    if len(names) < 2:
        raise ValueError("pairwise accuracy needs at least two systems")
    agree = total = 0
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            sign_m = (metric_scores[a] > metric_scores[b]) - (metric_scores[a] < metric_scores[b])
            sign_h = (human_scores[a] > human_scores[b]) - (human_scores[a] < human_scores[b])
            agree += sign_m == sign_h
            total += 1
    return agree / total


def worse_than_empty(sys_scores: Sequence[float], empty_scores: Sequence[float]) -> tuple[int, int]:
    """How many segments score below the empty hypothesis on the same source."""
    _check_paired(sys_scores, empty_scores, "worse_than_empty")
    count = sum(1 for s, e in zip(sys_scores, empty_scores) if s < e)
    return count, len(sys_scores)


def format_fraction(count: int, total: int) -> str:
    return f"{count} / {total}"


def histogram(scores: Sequence[float], bin_count: int, lo: float, hi: float) -> list[tuple[float, int]]:
    """Counts over uniform bins on [lo, hi]; out-of-range values clamp
    to the end bins, so the counts always sum to len(scores)."""
    if bin_count < 1:
        raise ValueError("bin_count must be at least 1")
    if not lo < hi:
        raise ValueError(f"invalid histogram range [{lo}, {hi}]")
    width = (hi - lo) / bin_count
    counts = [0] * bin_count
    for score in scores:
        k = int((score - lo) // width)
        counts[min(max(k, 0), bin_count - 1)] += 1
    return [(lo + (k + 0.5) * width, counts[k]) for k in range(bin_count)]


def compare_runs(scores_a: Sequence[float], scores_b: Sequence[float]) -> tuple[float, float]:
    """(MAE, max absolute difference) between two runs on the same set."""
    _check_paired(scores_a, scores_b, "compare_runs")
    if not scores_a:
        raise ValueError("compare_runs: empty input")
    diffs = [abs(a - b) for a, b in zip(scores_a, scores_b)]
    return math.fsum(diffs) / len(diffs), max(diffs)


def format_meta_report(report: MetaReport) -> str:
    """Aligned key-value text; absent statistics are omitted."""
    rows = [("n", str(report.n)), ("mae", repr(report.mae))]
    for key in ("tau_a", "tau_c", "pairwise_acc"):
        value = getattr(report, key)
        if value is not None:
            rows.append((key, repr(value)))
    width = max(len(key) for key, _ in rows)
    return "".join(f"{key.ljust(width)}  {value}\n" for key, value in rows)


def meta_report_rows(report: MetaReport) -> list[str]:
    """The same report as TSV rows."""
    rows = [f"n\t{report.n}", f"mae\t{report.mae!r}"]
    for key in ("tau_a", "tau_c", "pairwise_acc"):
        value = getattr(report, key)
        if value is not None:
            rows.append(f"{key}\t{value!r}")
    return rows
