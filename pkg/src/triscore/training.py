"""Multi-format balanced training and the staged pipeline.

Training splits the scored dataset into three equal parts, each serving one
input format for the whole stage, and every optimizer step consumes one
equal-size batch per format. The step objective is the sum of the three
per-format mean-squared-error losses; encoder and head parameters get
independent learning rates.

The pipeline runs up to three stages in order (synthetic pretraining, then
the two fine-tuning stages), each stage starting from the previous stage's
checkpoint, repeated over several seeds.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import checkpoint_save, model_digest
from .encoder import (
    EncoderConfig,
    EncoderModel,
    Gradients,
    backward,
    init_model,
    is_head_param,
    zeros_like_params,
)
from .fileio import atomic_write_text
from .records import SegmentRecord
from .sequences import TRAINING_FORMAT_ORDER, InputSequence, build_input_sequence
from .vocab import Vocabulary

log = logging.getLogger(__name__)


class Stage(enum.Enum):
    PRETRAIN = "pretrain"
    DA_FINETUNE = "da"
    MQM_FINETUNE = "mqm"

    @classmethod
    def parse(cls, name: str) -> "Stage":
        for stage in cls:
            if stage.value == name:
                return stage
        raise ValueError(f"unknown stage {name!r}; expected one of {[s.value for s in cls]}")


@dataclass(frozen=True)
class TrainConfig:
    stage: Stage = Stage.PRETRAIN
    batch_size: int = 16  # per input format; full scale uses 1024 (pretrain) / 32 (fine-tune)
    lr_encoder: float = 1e-3
    lr_head: float = 3e-3  # head learning rate stays 3x the encoder's
    epochs: int = 4
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_encoder < 0 or self.lr_head < 0:
            raise ValueError("learning rates must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss_ref: float
    loss_src: float
    loss_src_ref: float
    loss_total: float
    batch_ref: int
    batch_src: int
    batch_src_ref: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "loss_ref": self.loss_ref,
                "loss_src": self.loss_src,
                "loss_src_ref": self.loss_src_ref,
                "loss_total": self.loss_total,
                "batch_ref": self.batch_ref,
                "batch_src": self.batch_src,
                "batch_src_ref": self.batch_src_ref,
            }
        )


@dataclass
class TrainHistory:
    stage: Stage
    steps: list[StepRecord] = field(default_factory=list)
    checkpoint_path: str | None = None

    def write_jsonl(self, path: str | Path) -> None:
        atomic_write_text(path, "".join(rec.to_json() + "\n" for rec in self.steps))


class TrainingDiverged(FloatingPointError):
    """A loss or parameter became non-finite during training."""


class AdamOptimizer:
    """Adam with independent learning rates for encoder and head parameters."""

    def __init__(self, model: EncoderModel, config: TrainConfig):
        self.config = config
        self.step_count = 0
        self.first_moment = zeros_like_params(model)
        self.second_moment = zeros_like_params(model)

    def apply(self, model: EncoderModel, grads: Gradients) -> None:
        cfg = self.config
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - cfg.adam_beta1**t
        bias2 = 1.0 - cfg.adam_beta2**t
        for name, param in model.params.items():
            grad = grads[name]
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * grad
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * grad * grad
            lr = cfg.lr_head if is_head_param(name) else cfg.lr_encoder
            if lr == 0.0:
                continue  # frozen group: parameters stay bit-identical
            param -= lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.adam_eps)


def split_three_ways(records: Sequence, seed: int) -> tuple[list, list, list]:
    """Shuffle deterministically and split into three near-equal disjoint parts."""
    n = len(records)
    if n < 3:
        raise ValueError(f"need at least 3 records to split three ways, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, 3)
    sizes = [base + (1 if i < extra else 0) for i in range(3)]
    parts = []
    start = 0
    for size in sizes:
        parts.append([records[i] for i in order[start : start + size]])
        start += size
    return tuple(parts)  # type: ignore[return-value]


def balanced_steps(
    parts: Sequence[Sequence], batch_size: int, rng: np.random.Generator
):
    """Yield per-step triples of equal-size batches, one per training format.

    One pass over this generator is one epoch: each part is shuffled once,
    then consumed in batch_size chunks; a part's leftover smaller than
    batch_size ends the epoch (records are used at most once per epoch).
    """
    orders = [rng.permutation(len(part)) for part in parts]
    n_steps = min(len(part) // batch_size for part in parts)
    for step in range(n_steps):
        lo = step * batch_size
        yield tuple(
            [part[i] for i in order[lo : lo + batch_size]]
            for part, order in zip(parts, orders)
        )


def joint_losses(
    model: EncoderModel,
    format_batches: Sequence[Sequence[tuple[InputSequence, float]]],
) -> tuple[tuple[float, float, float], float, Gradients]:
    """Per-format losses, their sum, and the gradient of the sum.

    ``format_batches`` follows TRAINING_FORMAT_ORDER (reference-only,
    source-only, source+reference); losses and gradients are reduced in that
    order so the totals are bit-reproducible.
    """
    grads = zeros_like_params(model)
    losses = []
    for batch in format_batches:
        loss, _ = backward(model, batch, grads=grads)
        losses.append(loss)
    loss_ref, loss_src, loss_src_ref = losses
    total = loss_ref + loss_src + loss_src_ref
    return (loss_ref, loss_src, loss_src_ref), total, grads


def joint_step(
    model: EncoderModel,
    optimizer: AdamOptimizer,
    format_batches: Sequence[Sequence[tuple[InputSequence, float]]],
) -> tuple[float, float, float, float]:
    """One update on the summed multi-format objective; returns the loss triple and total."""
    (loss_ref, loss_src, loss_src_ref), total, grads = joint_losses(model, format_batches)
    if not np.isfinite(total):
        raise TrainingDiverged(
            f"non-finite loss at optimizer step {optimizer.step_count + 1}: "
            f"ref={loss_ref} src={loss_src} src+ref={loss_src_ref}"
        )
    optimizer.apply(model, grads)
    model.check_finite(f"after optimizer step {optimizer.step_count}")
    return loss_ref, loss_src, loss_src_ref, total


def _render_part(
    part: Sequence[SegmentRecord], fmt, vocab: Vocabulary, max_len: int
) -> list[tuple[InputSequence, float]]:
    rendered = []
    for rec in part:
        if rec.gold is None:
            raise ValueError(f"segment {rec.segment_id!r} has no gold score; training needs labels")
        rendered.append((build_input_sequence(rec, fmt, vocab, max_len), float(rec.gold)))
    return rendered


def train_stage(
    model: EncoderModel,
    dataset: Sequence[SegmentRecord],
    config: TrainConfig,
    vocab: Vocabulary,
    checkpoint_path: str | Path | None = None,
    history_path: str | Path | None = None,
) -> tuple[EncoderModel, TrainHistory]:
    """Run one training stage in place and return the model with its history."""
    if not dataset:
        raise ValueError("empty training dataset")
    parts = split_three_ways(list(dataset), config.seed)
    rendered_parts = [
        _render_part(part, fmt, vocab, model.config.max_len)
        for part, fmt in zip(parts, TRAINING_FORMAT_ORDER)
    ]
    optimizer = AdamOptimizer(model, config)
    epoch_rng = np.random.default_rng([config.seed, 1])
    history = TrainHistory(stage=config.stage)
    step_no = 0
    for _ in range(config.epochs):
        for batches in balanced_steps(rendered_parts, config.batch_size, epoch_rng):
            loss_ref, loss_src, loss_src_ref, total = joint_step(model, optimizer, batches)
            step_no += 1
            history.steps.append(
                StepRecord(
                    step=step_no,
                    loss_ref=loss_ref,
                    loss_src=loss_src,
                    loss_src_ref=loss_src_ref,
                    loss_total=total,
                    batch_ref=len(batches[0]),
                    batch_src=len(batches[1]),
                    batch_src_ref=len(batches[2]),
                )
            )
    if checkpoint_path is not None:
        checkpoint_save(model, checkpoint_path)
        history.checkpoint_path = str(checkpoint_path)
    if history_path is not None:
        history.write_jsonl(history_path)
    return model, history


@dataclass
class StageRun:
    seed: int
    stage: Stage
    init_digest: str
    final_digest: str
    history: TrainHistory
    checkpoint_path: str | None


@dataclass
class PipelineResult:
    final_models: list[EncoderModel]
    final_checkpoints: list[str]
    stage_runs: list[StageRun]


def run_pipeline(
    encoder_config: EncoderConfig,
    vocab: Vocabulary,
    synthetic_set: Sequence[SegmentRecord] | None,
    da_set: Sequence[SegmentRecord] | None,
    mqm_set: Sequence[SegmentRecord] | None,
    stage_configs: dict[Stage, TrainConfig],
    n_seeds: int = 3,
    base_seed: int = 0,
    out_dir: str | Path | None = None,
) -> PipelineResult:
    """Train ``n_seeds`` models through the staged pipeline.

    Stages with a ``None`` dataset are skipped; each executed stage starts
    from the previous stage's final parameters. Seed ``base_seed + i`` drives
    run ``i``'s initialization, splits, and shuffles.
    """
    stage_data = [
        (Stage.PRETRAIN, synthetic_set),
        (Stage.DA_FINETUNE, da_set),
        (Stage.MQM_FINETUNE, mqm_set),
    ]
    if all(data is None for _, data in stage_data):
        raise ValueError("pipeline needs at least one stage dataset")
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    result = PipelineResult(final_models=[], final_checkpoints=[], stage_runs=[])
    for i in range(n_seeds):
        seed = base_seed + i
        model = init_model(replace(encoder_config, seed=seed))
        for stage, data in stage_data:
            if data is None:
                continue
            if stage not in stage_configs:
                raise ValueError(f"no training config supplied for stage {stage.value!r}")
            config = replace(stage_configs[stage], stage=stage, seed=seed)
            init_digest = model_digest(model)
            ckpt = str(out_path / f"seed{seed}_{stage.value}.ckpt") if out_path else None
            hist_file = str(out_path / f"seed{seed}_{stage.value}.history.jsonl") if out_path else None
            model, history = train_stage(
                model, data, config, vocab, checkpoint_path=ckpt, history_path=hist_file
            )
            result.stage_runs.append(
                StageRun(
                    seed=seed,
                    stage=stage,
                    init_digest=init_digest,
                    final_digest=model_digest(model),
                    history=history,
                    checkpoint_path=ckpt,
                )
            )
            log.info("seed %d stage %s: %d steps", seed, stage.value, len(history.steps))
        result.final_models.append(model)
        if result.stage_runs and result.stage_runs[-1].checkpoint_path:
            result.final_checkpoints.append(result.stage_runs[-1].checkpoint_path)
    return result
