"""Segment and score records plus their TSV file formats.

Segment files (``read_segments``/``write_segments``) carry the text to be
scored; score files (``read_scores``/``write_scores``) carry one metric
prediction per segment, optionally joined with a human judgment. Both are
UTF-8 TSV with a fixed header. Empty fields denote absent optional values.
Floats are written with their shortest exact decimal form, so files
round-trip bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .fileio import atomic_write_text, float_field
from .vocab import normalize

SEGMENT_HEADER = ("segment_id", "direction", "domain", "system", "source", "hypothesis", "reference", "gold")
SCORE_HEADER = ("segment_id", "direction", "domain", "system", "metric", "human")


@dataclass(frozen=True)
class SegmentRecord:
    """One evaluation unit: a hypothesis with its source and optional reference."""

    segment_id: str
    hypothesis: str
    source: str
    reference: str | None = None
    gold: float | None = None
    direction: str = ""
    domain: str = ""
    system: str = ""

    def validate(self) -> "SegmentRecord":
        if not normalize(self.hypothesis):
            raise ValueError(f"segment {self.segment_id!r}: hypothesis is empty after normalization")
        if not normalize(self.source):
            raise ValueError(f"segment {self.segment_id!r}: source is empty after normalization")
        if self.gold is not None and not math.isfinite(self.gold):
            raise ValueError(f"segment {self.segment_id!r}: gold score {self.gold} is not finite")
        return self

    def with_gold(self, gold: float) -> "SegmentRecord":
        return replace(self, gold=gold)


@dataclass(frozen=True)
class ScoreRecord:
    """One metric prediction bound to a segment identity."""

    segment_id: str
    direction: str
    domain: str
    system: str
    metric: float
    human: float | None = None

    def key(self) -> tuple[str, str]:
        return (self.segment_id, self.system)


def _check_no_tabs(record_id: str, fields: Iterable[str]) -> None:
    for f in fields:
        if "\t" in f or "\n" in f:
            raise ValueError(f"record {record_id!r}: text fields must not contain tabs or newlines")


def write_segments(path: str | Path, records: Sequence[SegmentRecord]) -> None:
    lines = ["\t".join(SEGMENT_HEADER)]
    for r in records:
        _check_no_tabs(r.segment_id, (r.segment_id, r.direction, r.domain, r.system, r.source, r.hypothesis, r.reference or ""))
        lines.append(
            "\t".join(
                (
                    r.segment_id,
                    r.direction,
                    r.domain,
                    r.system,
                    r.source,
                    r.hypothesis,
                    r.reference if r.reference is not None else "",
                    float_field(r.gold) if r.gold is not None else "",
                )
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_segments(path: str | Path) -> list[SegmentRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or tuple(lines[0].split("\t")) != SEGMENT_HEADER:
        raise ValueError(f"{path}: expected segment TSV header {'(tab)'.join(SEGMENT_HEADER)!r}")
    out = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != len(SEGMENT_HEADER):
            raise ValueError(f"{path}:{lineno}: expected {len(SEGMENT_HEADER)} fields, got {len(parts)}")
        seg_id, direction, domain, system, source, hypothesis, reference, gold = parts
        out.append(
            SegmentRecord(
                segment_id=seg_id,
                hypothesis=hypothesis,
                source=source,
                reference=reference or None,
                gold=float(gold) if gold else None,
                direction=direction,
                domain=domain,
                system=system,
            ).validate()
        )
    return out


def write_scores(path: str | Path, records: Sequence[ScoreRecord]) -> None:
    lines = ["\t".join(SCORE_HEADER)]
    for r in records:
        _check_no_tabs(r.segment_id, (r.segment_id, r.direction, r.domain, r.system))
        lines.append(
            "\t".join(
                (
                    r.segment_id,
                    r.direction,
                    r.domain,
                    r.system,
                    float_field(r.metric),
                    float_field(r.human) if r.human is not None else "",
                )
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_scores(path: str | Path) -> list[ScoreRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or tuple(lines[0].split("\t")) != SCORE_HEADER:
        raise ValueError(f"{path}: expected score TSV header {'(tab)'.join(SCORE_HEADER)!r}")
    out = []
    seen: set[tuple[str, str]] = set()
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != len(SCORE_HEADER):
            raise ValueError(f"{path}:{lineno}: expected {len(SCORE_HEADER)} fields, got {len(parts)}")
        seg_id, direction, domain, system, metric, human = parts
        rec = ScoreRecord(
            segment_id=seg_id,
            direction=direction,
            domain=domain,
            system=system,
            metric=float(metric),
            human=float(human) if human else None,
        )
        if not math.isfinite(rec.metric):
            raise ValueError(f"{path}:{lineno}: metric score is not finite")
        if rec.key() in seen:
            raise ValueError(f"{path}:{lineno}: duplicate (segment_id, system) pair {rec.key()}")
        seen.add(rec.key())
        out.append(rec)
    return out
