"""Batch scoring of segment records with a trained model."""

from __future__ import annotations

from typing import Sequence

from .encoder import EncoderModel, forward_batch
from .records import ScoreRecord, SegmentRecord
from .sequences import InputFormat, build_input_sequence
from .vocab import Vocabulary


def score_records(
    model: EncoderModel,
    vocab: Vocabulary,
    records: Sequence[SegmentRecord],
    fmt: InputFormat = InputFormat.SRC_REF,
    batch_size: int = 64,
) -> list[ScoreRecord]:
    """Predict one score per record under the given input format.

    The record's gold score, when present, is carried into the output's
    human column so score files are directly evaluable.
    """
    if model.config.vocab_size != vocab.size:
        raise ValueError(
            f"model vocab_size {model.config.vocab_size} does not match vocabulary size {vocab.size}"
        )
    seqs = [build_input_sequence(rec, fmt, vocab, model.config.max_len) for rec in records]
    out: list[ScoreRecord] = []
    for lo in range(0, len(seqs), batch_size):
        chunk = records[lo : lo + batch_size]
        preds = forward_batch(model, seqs[lo : lo + batch_size])
        for rec, pred in zip(chunk, preds):
            out.append(
                ScoreRecord(
                    segment_id=rec.segment_id,
                    direction=rec.direction,
                    domain=rec.domain,
                    system=rec.system,
                    metric=float(pred),
                    human=rec.gold,
                )
            )
    return out
