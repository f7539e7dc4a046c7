"""Construction of the three unified input formats.

A scored example is rendered as one token sequence:

    source-only        [BOS] hypothesis [DEL] source [EOS]
    reference-only     [BOS] hypothesis [DEL] reference [EOS]
    source+reference   [BOS] hypothesis [DEL] source [DEL] reference [EOS]

When the rendered sequence exceeds ``max_len``, tokens are dropped one at a
time from the tail of the currently longest segment until it fits. Length
ties prefer the segment appearing later in the sequence, and the hypothesis
is always the last segment to lose tokens: it carries the quality signal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .records import SegmentRecord
from .vocab import BOS_ID, DEL_ID, EOS_ID, Vocabulary


class InputFormat(enum.Enum):
    SRC = "src"
    REF = "ref"
    SRC_REF = "src+ref"

    @classmethod
    def parse(cls, name: str) -> "InputFormat":
        for fmt in cls:
            if fmt.value == name:
                return fmt
        raise ValueError(f"unknown input format {name!r}; expected one of {[f.value for f in cls]}")

    @property
    def needs_reference(self) -> bool:
        return self in (InputFormat.REF, InputFormat.SRC_REF)


# Fixed ordering used for loss summation, gradient accumulation, and the
# mapping of dataset parts to formats during multi-format training.
TRAINING_FORMAT_ORDER = (InputFormat.REF, InputFormat.SRC, InputFormat.SRC_REF)


class MissingReferenceError(ValueError):
    """A reference-requiring format was requested for a record without one."""


@dataclass(frozen=True)
class InputSequence:
    """A rendered token-id sequence with segment-boundary bookkeeping."""

    format: InputFormat
    ids: tuple[int, ...]
    hyp_len: int
    src_len: int
    ref_len: int
    truncated: bool

    def __len__(self) -> int:
        return len(self.ids)

    def segments(self) -> list[list[int]]:
        """Split ids back into content segments (inverse of rendering, up to truncation)."""
        if not self.ids or self.ids[0] != BOS_ID or self.ids[-1] != EOS_ID:
            raise ValueError("sequence does not start with BOS and end with EOS")
        segs: list[list[int]] = [[]]
        for tok in self.ids[1:-1]:
            if tok == DEL_ID:
                segs.append([])
            else:
                segs[-1].append(tok)
        return segs


def _segment_plan(record: SegmentRecord, fmt: InputFormat, vocab: Vocabulary) -> list[tuple[str, list[int]]]:
    hyp = vocab.tokenize(record.hypothesis)
    src = vocab.tokenize(record.source)
    if fmt is InputFormat.SRC:
        return [("hyp", hyp), ("src", src)]
    if record.reference is None:
        raise MissingReferenceError(
            f"segment {record.segment_id!r}: format {fmt.value!r} requires a reference"
        )
    ref = vocab.tokenize(record.reference)
    if fmt is InputFormat.REF:
        return [("hyp", hyp), ("ref", ref)]
    return [("hyp", hyp), ("src", src), ("ref", ref)]


def build_input_sequence(
    record: SegmentRecord,
    fmt: InputFormat,
    vocab: Vocabulary,
    max_len: int,
) -> InputSequence:
    """Render one record in one format, truncating to ``max_len`` if needed."""
    plan = _segment_plan(record, fmt, vocab)
    n_specials = len(plan) + 1
    if max_len < n_specials + 1:
        raise ValueError(
            f"max_len={max_len} cannot fit {n_specials} special tokens plus one hypothesis token"
        )

    truncated = False
    total = sum(len(seg) for _, seg in plan) + n_specials
    while total > max_len:
        # Longest segment loses its tail token; ties prefer the later segment,
        # and the hypothesis (index 0) is only cut when it is strictly longest
        # or everything else is empty.
        candidates = [
            (len(seg), idx) for idx, (name, seg) in enumerate(plan) if len(seg) > (1 if idx == 0 else 0)
        ]
        best = max(candidates, key=lambda c: (c[0], c[1] if c[1] > 0 else -1))
        plan[best[1]][1].pop()
        truncated = True
        total -= 1

    ids: list[int] = [BOS_ID]
    for idx, (_, seg) in enumerate(plan):
        if idx > 0:
            ids.append(DEL_ID)
        ids.extend(seg)
    ids.append(EOS_ID)

    lens = {name: len(seg) for name, seg in plan}
    return InputSequence(
        format=fmt,
        ids=tuple(ids),
        hyp_len=lens.get("hyp", 0),
        src_len=lens.get("src", 0),
        ref_len=lens.get("ref", 0),
        truncated=truncated,
    )
