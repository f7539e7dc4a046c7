"""Synthetic pre-training corpus construction.

The pipeline has three steps: derive hypotheses for source/reference pairs
with a pluggable generator (no network calls: the built-ins are an identity
generator, a parameterized noise generator whose corruption count grows with
its strength, and a file-backed generator for externally produced
hypotheses); downgrade a fixed fraction of hypotheses by word/span dropping;
then pseudo-label every example with one or more trained checkpoints and
replace raw scores by per-direction rank-based normal quantiles.

The module also builds the graded demo corpus used for end-to-end
learnability checks: parallel sentences over a closed toy vocabulary where
each "system" applies a known noise strength, so true quality is known by
construction.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.special import ndtri

from .encoder import EncoderModel, forward_batch
from .ensembling import exact_mean
from .fileio import atomic_write_text
from .records import SegmentRecord
from .sequences import InputFormat, build_input_sequence
from .vocab import Vocabulary, normalize

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_NOISE_TOKENS = tuple(f"zz{i}" for i in range(16))


@dataclass(frozen=True)
class ParallelPair:
    source: str
    reference: str
    direction: str

    def __post_init__(self) -> None:
        if not self.source.strip() or not self.reference.strip():
            raise ValueError("parallel pair sides must be non-empty")


@dataclass
class Provenance:
    generator: str
    downgraded: bool = False
    ops: list[dict] = field(default_factory=list)


@dataclass
class SyntheticExample:
    """A pseudo-labelable training example with full construction provenance."""

    record: SegmentRecord
    provenance: Provenance
    raw_scores: list[float] | None = None
    score_mean: float | None = None
    final_score: float | None = None

    def to_json(self) -> str:
        r = self.record
        return json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "segment_id": r.segment_id,
                "direction": r.direction,
                "domain": r.domain,
                "system": r.system,
                "source": r.source,
                "hypothesis": r.hypothesis,
                "reference": r.reference,
                "gold": r.gold,
                "provenance": {
                    "generator": self.provenance.generator,
                    "downgraded": self.provenance.downgraded,
                    "ops": self.provenance.ops,
                },
                "raw_scores": self.raw_scores,
                "score_mean": self.score_mean,
                "final_score": self.final_score,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "SyntheticExample":
        d = json.loads(line)
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported synthetic corpus schema version {version!r}")
        record = SegmentRecord(
            segment_id=d["segment_id"],
            hypothesis=d["hypothesis"],
            source=d["source"],
            reference=d["reference"],
            gold=d["gold"],
            direction=d["direction"],
            domain=d["domain"],
            system=d["system"],
        ).validate()
        prov = d["provenance"]
        return cls(
            record=record,
            provenance=Provenance(
                generator=prov["generator"],
                downgraded=prov["downgraded"],
                ops=list(prov["ops"]),
            ),
            raw_scores=d["raw_scores"],
            score_mean=d["score_mean"],
            final_score=d["final_score"],
        )


def write_synthetic_jsonl(path: str | Path, examples: Sequence[SyntheticExample]) -> None:
    atomic_write_text(path, "".join(ex.to_json() + "\n" for ex in examples))


def read_synthetic_jsonl(path: str | Path) -> list[SyntheticExample]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(SyntheticExample.from_json(line))
    return out


def labeled_records(examples: Sequence[SyntheticExample]) -> list[SegmentRecord]:
    """Segment records carrying the normalized pseudo-labels as gold scores."""
    records = []
    for ex in examples:
        if ex.final_score is None:
            raise ValueError(
                f"example {ex.record.segment_id!r} has no final score; run rank normalization first"
            )
        records.append(ex.record.with_gold(ex.final_score))
    return records


# ---------------------------------------------------------------------------
# step 1: collect pairs and derive hypotheses

def ingest_parallel(path: str | Path, direction: str) -> list[ParallelPair]:
    """Read a two-column TSV of source/reference pairs; malformed lines are skipped.

    A summary warning with the skip count is logged when any line is dropped.
    """
    pairs = []
    skipped = 0
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        parts = raw.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            skipped += 1
            continue
        pairs.append(ParallelPair(source=parts[0], reference=parts[1], direction=direction))
    if skipped:
        log.warning("ingest_parallel: skipped %d malformed line(s) in %s", skipped, path)
    return pairs


class GeneratorFailure(RuntimeError):
    """A hypothesis generator could not produce output for one pair."""


class HypothesisGenerator(Protocol):
    generator_id: str

    def generate(self, pair: ParallelPair, rng: np.random.Generator) -> str: ...


class IdentityGenerator:
    """hypothesis = reference; the top of the known quality ordering."""

    generator_id = "identity"

    def generate(self, pair: ParallelPair, rng: np.random.Generator) -> str:
        return pair.reference


def corrupt_tokens(
    text: str,
    strength: float,
    rng: np.random.Generator,
    substitute_prob: float = 0.7,
    noise_tokens: tuple[str, ...] = DEFAULT_NOISE_TOKENS,
) -> str:
    """Corrupt ``round(strength * length)`` token positions (one token always survives).

    Each chosen position is replaced by an out-of-distribution noise token
    with probability ``substitute_prob``, otherwise dropped.
    """
    tokens = text.split()
    n = len(tokens)
    k = min(int(round(strength * n)), n - 1)
    if k <= 0:
        return text
    positions = set(int(i) for i in rng.choice(n, size=k, replace=False))
    out = []
    for idx, tok in enumerate(tokens):
        if idx not in positions:
            out.append(tok)
        elif rng.random() < substitute_prob:
            out.append(noise_tokens[int(rng.integers(len(noise_tokens)))])
    if not out:
        out = [tokens[0]]
    return " ".join(out)


class NoiseGenerator:
    """Derive the hypothesis by corrupting the reference.

    Strength 0 reproduces the identity generator, and larger strengths give
    strictly more expected corruption, so corpus quality is ordered by
    strength.
    """

    def __init__(
        self,
        strength: float,
        substitute_prob: float = 0.7,
        noise_tokens: tuple[str, ...] = DEFAULT_NOISE_TOKENS,
    ):
        if not 0.0 <= strength <= 1.0:
            raise ValueError(f"noise strength must be in [0, 1], got {strength}")
        if not 0.0 <= substitute_prob <= 1.0:
            raise ValueError(f"substitute_prob must be in [0, 1], got {substitute_prob}")
        self.strength = strength
        self.substitute_prob = substitute_prob
        self.noise_tokens = noise_tokens
        self.generator_id = f"noise:{strength:g}"

    def generate(self, pair: ParallelPair, rng: np.random.Generator) -> str:
        return corrupt_tokens(
            pair.reference, self.strength, rng, self.substitute_prob, self.noise_tokens
        )


class FileGenerator:
    """Supply pre-computed hypotheses from a file, one per line, zipped 1:1 with pairs."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        self.lines = Path(path).read_text(encoding="utf-8").splitlines()
        self.cursor = 0
        self.generator_id = f"file:{Path(path).name}"

    def generate(self, pair: ParallelPair, rng: np.random.Generator) -> str:
        if self.cursor >= len(self.lines):
            raise GeneratorFailure(f"{self.path}: ran out of hypotheses at pair {self.cursor}")
        line = self.lines[self.cursor]
        self.cursor += 1
        return line


def generate_hypotheses(
    pairs: Sequence[ParallelPair],
    generator: HypothesisGenerator,
    seed: int = 0,
    domain: str = "synthetic",
) -> list[SyntheticExample]:
    """One unlabeled example per pair; failing pairs are skipped with a warning."""
    rng = np.random.default_rng([seed, 2])
    examples = []
    skipped = 0
    for idx, pair in enumerate(pairs):
        try:
            hyp = generator.generate(pair, rng)
        except GeneratorFailure as exc:
            log.warning("generator %s failed on pair %d: %s", generator.generator_id, idx, exc)
            skipped += 1
            continue
        if hyp is None or not normalize(hyp):
            log.warning("generator %s produced empty hypothesis for pair %d", generator.generator_id, idx)
            skipped += 1
            continue
        record = SegmentRecord(
            segment_id=f"{pair.direction}:{idx:06d}",
            hypothesis=hyp,
            source=pair.source,
            reference=pair.reference,
            direction=pair.direction,
            domain=domain,
            system=generator.generator_id,
        ).validate()
        examples.append(SyntheticExample(record=record, provenance=Provenance(generator=generator.generator_id)))
    if skipped:
        log.warning("generate_hypotheses: skipped %d pair(s)", skipped)
    return examples


# ---------------------------------------------------------------------------
# step 2: quality downgrading

def _drop_op(tokens: list[str], rng: np.random.Generator) -> tuple[list[str], dict]:
    """Drop one word or one contiguous span (2..ceil(0.3*len) tokens) from the tail side.

    The span option is only available when the cap allows a span of >= 2 that
    still leaves one token; otherwise a single word is dropped. Choice and
    location are uniform.
    """
    n = len(tokens)
    span_cap = min(math.ceil(0.3 * n), n - 1)
    use_span = span_cap >= 2 and rng.random() < 0.5
    if use_span:
        span_len = int(rng.integers(2, span_cap + 1))
        start = int(rng.integers(0, n - span_len + 1))
        return tokens[:start] + tokens[start + span_len :], {
            "op": "span_drop",
            "start": start,
            "length": span_len,
        }
    pos = int(rng.integers(0, n))
    return tokens[:pos] + tokens[pos + 1 :], {"op": "word_drop", "position": pos}


def downgrade_quality(
    examples: Sequence[SyntheticExample],
    ratio: float,
    rng: np.random.Generator | int,
) -> Sequence[SyntheticExample]:
    """Corrupt exactly ``round(ratio * N)`` hypotheses in place by word/span dropping.

    Single-token hypotheses are exempt from selection (the draw moves to
    another record). Every corrupted example records the applied op and ends
    strictly shorter than before.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"downgrade ratio must be in [0, 1], got {ratio}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng([int(rng), 3])
    want = int(round(ratio * len(examples)))
    if want == 0:
        return examples
    eligible = [i for i, ex in enumerate(examples) if len(ex.record.hypothesis.split()) >= 2]
    if len(eligible) < want:
        raise ValueError(
            f"cannot downgrade {want} of {len(examples)} examples: only {len(eligible)} have >= 2 tokens"
        )
    chosen = rng.choice(np.asarray(eligible), size=want, replace=False)
    for i in chosen:
        ex = examples[int(i)]
        tokens = ex.record.hypothesis.split()
        kept, op = _drop_op(tokens, rng)
        ex.record = replace(ex.record, hypothesis=" ".join(kept)).validate()
        ex.provenance.downgraded = True
        ex.provenance.ops.append(op)
    return examples


# ---------------------------------------------------------------------------
# step 3: pseudo-labeling and ranking-based normalization

def pseudo_label(
    examples: Sequence[SyntheticExample],
    checkpoints: Sequence[EncoderModel],
    vocab: Vocabulary,
    batch_size: int = 64,
) -> Sequence[SyntheticExample]:
    """Score every example with every checkpoint using the source+reference format."""
    if not checkpoints:
        raise ValueError("pseudo-labeling needs at least one checkpoint")
    for model in checkpoints:
        if model.config.vocab_size != vocab.size:
            raise ValueError(
                f"checkpoint vocab_size {model.config.vocab_size} does not match vocabulary size {vocab.size}"
            )
    per_model_scores = []
    for model in checkpoints:
        seqs = [
            build_input_sequence(ex.record, InputFormat.SRC_REF, vocab, model.config.max_len)
            for ex in examples
        ]
        scores = np.concatenate(
            [forward_batch(model, seqs[lo : lo + batch_size]) for lo in range(0, len(seqs), batch_size)]
        ) if seqs else np.zeros(0)
        per_model_scores.append(scores)
    for idx, ex in enumerate(examples):
        ex.raw_scores = [float(scores[idx]) for scores in per_model_scores]
        ex.score_mean = exact_mean(ex.raw_scores)
    return examples


def rank_to_normal_quantiles(values: np.ndarray) -> np.ndarray:
    """Map values to standard-normal quantiles of their midpoint ranks.

    Rank ``r`` in 1..N becomes ``ndtri((r - 0.5) / N)``; ties keep input
    order (stable sort), so the result depends only on the ordering of the
    inputs, never their scale.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n == 0:
        raise ValueError("cannot rank-normalize an empty group")
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=float)
    ranks[order] = np.arange(1, n + 1)
    return ndtri((ranks - 0.5) / n)


def rank_normalize(examples: Sequence[SyntheticExample]) -> Sequence[SyntheticExample]:
    """Replace mean pseudo-scores by per-direction rank quantiles (deterministic ties)."""
    groups: dict[str, list[SyntheticExample]] = {}
    for ex in examples:
        if ex.score_mean is None:
            raise ValueError(
                f"example {ex.record.segment_id!r} has no pseudo-score; run pseudo_label first"
            )
        groups.setdefault(ex.record.direction, []).append(ex)
    for members in groups.values():
        members.sort(key=lambda ex: (ex.score_mean, ex.record.segment_id, ex.record.system))
        n = len(members)
        for rank, ex in enumerate(members, start=1):
            ex.final_score = float(ndtri((rank - 0.5) / n))
    return examples


# ---------------------------------------------------------------------------
# built-in graded corpus (known quality ordering by construction)

def _toy_sentence(rng: np.random.Generator, word_types: int, min_len: int, max_len: int) -> list[int]:
    n = int(rng.integers(min_len, max_len + 1))
    return [int(w) for w in rng.integers(0, word_types, size=n)]


def make_toy_parallel(
    n_pairs: int,
    direction: str,
    seed: int = 0,
    word_types: int = 300,
    min_len: int = 8,
    max_len: int = 16,
) -> list[ParallelPair]:
    """Word-aligned toy bitext: source word k maps 1:1 to reference word k."""
    rng = np.random.default_rng([seed, 4, hash_direction(direction)])
    pairs = []
    for _ in range(n_pairs):
        words = _toy_sentence(rng, word_types, min_len, max_len)
        src = " ".join(f"s{direction_key(direction)}w{w}" for w in words)
        ref = " ".join(f"t{direction_key(direction)}w{w}" for w in words)
        pairs.append(ParallelPair(source=src, reference=ref, direction=direction))
    return pairs


def direction_key(direction: str) -> str:
    return direction.replace("-", "").replace("_", "")


def hash_direction(direction: str) -> int:
    # stable across processes (unlike hash())
    return sum((i + 1) * b for i, b in enumerate(direction.encode("utf-8"))) % (2**31)


def make_graded_corpus(
    n_segments: int = 250,
    n_systems: int = 4,
    directions: Sequence[str] = ("en-de", "zh-en"),
    domains: Sequence[str] = ("news", "forum"),
    seed: int = 0,
    word_types: int = 300,
    min_len: int = 8,
    max_len: int = 16,
    substitute_prob: float = 0.7,
) -> list[SegmentRecord]:
    """Graded evaluation corpus with a known quality ordering.

    Every segment gets ``n_systems`` hypotheses at strictly increasing noise
    strengths; gold is ``1 - strength``, a known decreasing function of the
    injected noise. Strengths are jittered within their system's band so the
    corpus is not degenerate across segments.
    """
    records = []
    for direction in directions:
        rng = np.random.default_rng([seed, 5, hash_direction(direction)])
        for seg in range(n_segments):
            words = _toy_sentence(rng, word_types, min_len, max_len)
            src = " ".join(f"s{direction_key(direction)}w{w}" for w in words)
            ref = " ".join(f"t{direction_key(direction)}w{w}" for w in words)
            domain = domains[seg % len(domains)]
            for sys_idx in range(n_systems):
                # strictly increasing in sys_idx: (sys_idx + u)/n_systems * 0.9, u in (0.1, 0.9)
                strength = (sys_idx + float(rng.uniform(0.1, 0.9))) / n_systems * 0.9
                hyp = corrupt_tokens(ref, strength, rng, substitute_prob)
                records.append(
                    SegmentRecord(
                        segment_id=f"{direction}:seg{seg:05d}",
                        hypothesis=hyp,
                        source=src,
                        reference=ref,
                        gold=1.0 - strength,
                        direction=direction,
                        domain=domain,
                        system=f"sys{sys_idx}",
                    ).validate()
                )
    return records


def split_by_segment(
    records: Sequence[SegmentRecord],
    seed: int = 0,
    fractions: tuple[float, float] = (0.8, 0.1),
) -> tuple[list[SegmentRecord], list[SegmentRecord], list[SegmentRecord]]:
    """Train/dev/test split on whole segments so held-out segments are unseen."""
    seg_ids = sorted({r.segment_id for r in records})
    order = np.random.default_rng([seed, 6]).permutation(len(seg_ids))
    n_train = int(fractions[0] * len(seg_ids))
    n_dev = int(fractions[1] * len(seg_ids))
    train_ids = {seg_ids[i] for i in order[:n_train]}
    dev_ids = {seg_ids[i] for i in order[n_train : n_train + n_dev]}
    train = [r for r in records if r.segment_id in train_ids]
    dev = [r for r in records if r.segment_id in dev_ids]
    test = [r for r in records if r.segment_id not in train_ids and r.segment_id not in dev_ids]
    return train, dev, test


def staged_label_views(
    records: Sequence[SegmentRecord],
    seed: int = 0,
    fractions: tuple[float, float] = (0.5, 0.3),
) -> tuple[list[SegmentRecord], list[SegmentRecord], list[SegmentRecord]]:
    """Disjoint stage datasets with stage-appropriate label scales.

    Pretraining labels are per-direction rank quantiles of gold (the scale
    pseudo-labeling would produce), the first fine-tuning set gets
    per-direction standardized gold (an adequacy-rating stand-in), and the
    second fine-tuning set keeps raw gold (an expert-score stand-in).
    """
    train, middle, last = split_by_segment(records, seed=seed, fractions=fractions)

    def per_direction(recs: list[SegmentRecord], transform) -> list[SegmentRecord]:
        groups: dict[str, list[int]] = {}
        for i, r in enumerate(recs):
            if r.gold is None:
                raise ValueError(f"segment {r.segment_id!r} has no gold score")
            groups.setdefault(r.direction, []).append(i)
        out = list(recs)
        for idxs in groups.values():
            values = np.array([recs[i].gold for i in idxs])
            new = transform(values)
            for i, v in zip(idxs, new):
                out[i] = recs[i].with_gold(float(v))
        return out

    pretrain = per_direction(train, rank_to_normal_quantiles)
    da_like = per_direction(middle, lambda v: (v - v.mean()) / (v.std() if v.std() > 0 else 1.0))
    mqm_like = last
    return pretrain, da_like, mqm_like
