"""Segment-level correlation statistics and grouped reporting.

The headline statistic is the segment-level Kendall variant used by the
WMT-style metric evaluations: within each source segment, every unordered
pair of systems whose human scores differ by more than a threshold counts as
concordant when the metric orders it like the humans and discordant
otherwise, with metric ties counted discordant; tau = (C - D) / (C + D).
Cells with no usable pairs are reported as absent, never as zero. Aggregated
cells pool pairs; they are not averages of per-cell taus.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .records import ScoreRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairCounts:
    concordant: int = 0
    discordant: int = 0

    def __add__(self, other: "PairCounts") -> "PairCounts":
        return PairCounts(self.concordant + other.concordant, self.discordant + other.discordant)

    @property
    def total(self) -> int:
        return self.concordant + self.discordant

    @property
    def tau(self) -> float | None:
        if self.total == 0:
            return None
        return (self.concordant - self.discordant) / self.total


def count_segment_pairs(records: Sequence[ScoreRecord], threshold: float = 0.0) -> PairCounts:
    """Concordant/discordant counts over same-segment cross-system pairs.

    Pairs whose human scores are absent or differ by at most ``threshold``
    are skipped; equal metric scores count as discordant.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    by_segment: dict[str, list[ScoreRecord]] = {}
    for rec in records:
        by_segment.setdefault(rec.segment_id, []).append(rec)
    concordant = 0
    discordant = 0
    for group in by_segment.values():
        scored = [r for r in group if r.human is not None]
        for i in range(len(scored)):
            for j in range(i + 1, len(scored)):
                human_delta = scored[i].human - scored[j].human
                if abs(human_delta) <= threshold:
                    continue
                metric_delta = scored[i].metric - scored[j].metric
                if metric_delta == 0.0:
                    discordant += 1
                elif (metric_delta > 0) == (human_delta > 0):
                    concordant += 1
                else:
                    discordant += 1
    return PairCounts(concordant, discordant)


def kendall_tau_variant(
    records: Sequence[ScoreRecord],
    group_key: str | Callable[[ScoreRecord], object] | None = None,
    threshold: float = 0.0,
) -> dict[object, PairCounts]:
    """Pair counts (and taus) per group; ``None`` key groups everything together."""
    if group_key is None:
        key = lambda rec: "all"
    elif callable(group_key):
        key = group_key
    else:
        key = lambda rec, _name=group_key: getattr(rec, _name)
    groups: dict[object, list[ScoreRecord]] = {}
    for rec in records:
        groups.setdefault(key(rec), []).append(rec)
    return {k: count_segment_pairs(v, threshold) for k, v in groups.items()}


# ---------------------------------------------------------------------------
# auxiliary correlations

def pearson_corr(x: np.ndarray, y: np.ndarray) -> float | None:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length 1-d arrays with >= 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        log.warning("pearson: zero variance, correlation undefined")
        return None
    return float((xc * yc).sum() / denom)


def midpoint_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; runs of equal values share the midpoint of their rank range."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=float)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        midpoint = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = midpoint
        i = j + 1
    return ranks


def spearman_corr(x: np.ndarray, y: np.ndarray) -> float | None:
    return pearson_corr(midpoint_ranks(x), midpoint_ranks(y))


def _paired_arrays(records: Sequence[ScoreRecord]) -> tuple[np.ndarray, np.ndarray]:
    pairs = [(r.metric, r.human) for r in records if r.human is not None]
    if len(pairs) < 2:
        raise ValueError(f"need >= 2 records with human scores, got {len(pairs)}")
    arr = np.array(pairs)
    return arr[:, 0], arr[:, 1]


def pearson(records: Sequence[ScoreRecord]) -> float | None:
    metric, human = _paired_arrays(records)
    return pearson_corr(metric, human)


def spearman(records: Sequence[ScoreRecord]) -> float | None:
    metric, human = _paired_arrays(records)
    return spearman_corr(metric, human)


# ---------------------------------------------------------------------------
# grouped report

@dataclass
class EvalReport:
    """Per-(domain, direction) taus with pooled direction totals and an overall cell."""

    threshold: float
    domains: tuple[str, ...]
    directions: tuple[str, ...]
    cells: dict[tuple[str, str], PairCounts]
    direction_totals: dict[str, PairCounts]
    overall: PairCounts
    excluded: int = 0

    def to_json_dict(self) -> dict:
        def stat(counts: PairCounts) -> dict:
            return {
                "tau": counts.tau,
                "concordant": counts.concordant,
                "discordant": counts.discordant,
                "pairs": counts.total,
            }

        return {
            "threshold": self.threshold,
            "domains": list(self.domains),
            "directions": list(self.directions),
            "cells": {
                domain: {
                    direction: stat(self.cells[(domain, direction)]) for direction in self.directions
                }
                for domain in self.domains
            },
            "direction_totals": {d: stat(self.direction_totals[d]) for d in self.directions},
            "overall": stat(self.overall),
            "excluded_records": self.excluded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    def format_table(self) -> str:
        """Aligned text table; taus as percentages with one decimal, absent cells blank."""

        def fmt(counts: PairCounts) -> str:
            return "   --" if counts.tau is None else f"{100.0 * counts.tau:5.1f}"

        width = max([len("domain")] + [len(d) for d in self.domains] + [len("all")])
        header = " ".join([f"{'domain':<{width}}"] + [f"{d:>8}" for d in self.directions] + [f"{'All':>8}"])
        lines = [header, "-" * len(header)]
        for domain in self.domains:
            row_counts = sum(
                (self.cells[(domain, d)] for d in self.directions), PairCounts()
            )
            cols = [f"{fmt(self.cells[(domain, d)]):>8}" for d in self.directions]
            lines.append(" ".join([f"{domain:<{width}}"] + cols + [f"{fmt(row_counts):>8}"]))
        total_cols = [f"{fmt(self.direction_totals[d]):>8}" for d in self.directions]
        lines.append(" ".join([f"{'all':<{width}}"] + total_cols + [f"{fmt(self.overall):>8}"]))
        return "\n".join(lines) + "\n"


def build_report(
    records: Sequence[ScoreRecord],
    domains: Sequence[str] | None = None,
    directions: Sequence[str] | None = None,
    threshold: float = 0.0,
) -> EvalReport:
    """Group records into (domain, direction) cells and compute pooled taus.

    When explicit domain/direction lists are given, records with other tags
    are excluded and counted with a warning. Aggregates pool pairs across
    cells rather than averaging cell taus.
    """
    seen: set[tuple[str, str]] = set()
    for rec in records:
        key = (rec.segment_id, rec.system)
        if key in seen:
            raise ValueError(f"duplicate (segment_id, system) pair {key}")
        seen.add(key)

    domain_list = tuple(domains) if domains is not None else tuple(sorted({r.domain for r in records}))
    direction_list = (
        tuple(directions) if directions is not None else tuple(sorted({r.direction for r in records}))
    )
    usable = []
    excluded = 0
    for rec in records:
        if rec.domain in domain_list and rec.direction in direction_list:
            usable.append(rec)
        else:
            excluded += 1
    if excluded:
        log.warning("build_report: excluded %d record(s) with unknown domain/direction tags", excluded)

    cells = {}
    for domain in domain_list:
        for direction in direction_list:
            subset = [r for r in usable if r.domain == domain and r.direction == direction]
            cells[(domain, direction)] = count_segment_pairs(subset, threshold)
    direction_totals = {
        direction: sum((cells[(dom, direction)] for dom in domain_list), PairCounts())
        for direction in direction_list
    }
    overall = sum(direction_totals.values(), PairCounts())
    return EvalReport(
        threshold=threshold,
        domains=domain_list,
        directions=direction_list,
        cells=cells,
        direction_totals=direction_totals,
        overall=overall,
        excluded=excluded,
    )
