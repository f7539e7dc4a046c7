"""Prediction averaging and per-direction member selection.

Ensembles are formed by averaging member predictions on the same
(segment, system) key. Averaging sums values in sorted order, so it is
bit-exactly invariant to member order, and averaging identical members is
exactly idempotent.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .evaluation import EvalReport
from .fileio import atomic_write_text
from .records import ScoreRecord

log = logging.getLogger(__name__)


def exact_mean(values: Sequence[float]) -> float:
    """Arithmetic mean, order-invariant and exact for identical inputs."""
    ordered = sorted(float(v) for v in values)
    if not ordered:
        raise ValueError("mean of no values")
    if ordered[0] == ordered[-1]:
        return ordered[0]
    return sum(ordered) / len(ordered)


def average_predictions(members: Sequence[Sequence[ScoreRecord]]) -> list[ScoreRecord]:
    """Average member predictions per (segment_id, system) key.

    All members must cover exactly the same key set; metadata is passed
    through from the first member, whose record order is preserved.
    """
    if not members:
        raise ValueError("no prediction sets to average")
    base = list(members[0])
    base_keys = {rec.key() for rec in base}
    if len(base_keys) != len(base):
        raise ValueError("duplicate (segment_id, system) keys in predictions")
    indexed: list[dict[tuple[str, str], ScoreRecord]] = []
    for i, member in enumerate(members):
        by_key = {rec.key(): rec for rec in member}
        missing = sorted(base_keys - set(by_key))
        extra = sorted(set(by_key) - base_keys)
        if missing or extra:
            raise ValueError(
                f"prediction set {i} does not match member 0: "
                f"missing keys {missing[:5]}{'...' if len(missing) > 5 else ''}, "
                f"unexpected keys {extra[:5]}{'...' if len(extra) > 5 else ''}"
            )
        indexed.append(by_key)
    out = []
    for rec in base:
        score = exact_mean([m[rec.key()].metric for m in indexed])
        out.append(
            ScoreRecord(
                segment_id=rec.segment_id,
                direction=rec.direction,
                domain=rec.domain,
                system=rec.system,
                metric=score,
                human=rec.human,
            )
        )
    return out


@dataclass
class EnsembleSpec:
    """Which checkpoints serve each translation direction at prediction time."""

    per_direction: dict[str, tuple[str, ...]] = field(default_factory=dict)
    default: tuple[str, ...] = ()

    def members_for(self, direction: str) -> tuple[str, ...]:
        members = self.per_direction.get(direction, self.default)
        if not members:
            raise ValueError(f"no ensemble members configured for direction {direction!r}")
        return members

    def referenced(self) -> set[str]:
        refs = set(self.default)
        for members in self.per_direction.values():
            refs.update(members)
        return refs

    def validate_members(self, known: set[str]) -> None:
        unknown = sorted(self.referenced() - known)
        if unknown:
            raise ValueError(f"ensemble spec references unknown checkpoints: {unknown}")
        if not self.default and not self.per_direction:
            raise ValueError("ensemble spec is empty")

    def save(self, path: str | Path) -> None:
        payload = {
            "per_direction": {d: list(m) for d, m in sorted(self.per_direction.items())},
            "default": list(self.default),
        }
        atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleSpec":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            per_direction={d: tuple(m) for d, m in payload["per_direction"].items()},
            default=tuple(payload["default"]),
        )


def _candidate_sort_key(candidate: tuple[str, ...]) -> tuple[int, tuple[str, ...]]:
    return (len(candidate), candidate)


def select_per_direction(
    candidate_reports: Mapping[tuple[str, ...], EvalReport],
) -> EnsembleSpec:
    """Pick, per direction, the candidate member set with the best dev tau.

    Candidates are tuples of checkpoint ids (singletons are plain
    checkpoints) mapped to the evaluation report of their averaged dev
    predictions. Ties prefer fewer members, then lexicographic ids. A
    direction absent from any candidate's report is excluded with a warning.
    The spec default is the candidate with the best overall tau.
    """
    if not candidate_reports:
        raise ValueError("no candidates to select from")
    candidates = {tuple(k): v for k, v in candidate_reports.items()}
    direction_sets = [
        {d for d, stat in report.direction_totals.items() if stat.tau is not None}
        for report in candidates.values()
    ]
    universe = set().union(*direction_sets)
    usable = set.intersection(*direction_sets) if direction_sets else set()
    for direction in sorted(universe - usable):
        log.warning("direction %r missing from at least one candidate report; excluded", direction)

    per_direction = {}
    for direction in sorted(usable):
        best = max(
            sorted(candidates, key=_candidate_sort_key),
            key=lambda c: candidates[c].direction_totals[direction].tau,
        )
        per_direction[direction] = best

    with_overall = [c for c in candidates if candidates[c].overall.tau is not None]
    if not with_overall:
        raise ValueError("no candidate has an overall tau on the dev set")
    default = max(sorted(with_overall, key=_candidate_sort_key), key=lambda c: candidates[c].overall.tau)
    return EnsembleSpec(per_direction=per_direction, default=default)
