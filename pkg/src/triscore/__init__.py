"""triscore: one trainable metric for source-only, reference-only, and
source+reference translation evaluation."""

__version__ = "0.1.0"

from .ensembling import EnsembleSpec, average_predictions, exact_mean, select_per_direction
from .encoder import (
    EncoderConfig,
    EncoderModel,
    backward,
    encode,
    forward,
    forward_batch,
    init_model,
    pool_cls,
    predict_head,
)
from .checkpoint import checkpoint_load, checkpoint_save, model_digest
from .estimator import MultiFormatScorer
from .evaluation import (
    EvalReport,
    PairCounts,
    build_report,
    count_segment_pairs,
    kendall_tau_variant,
    pearson,
    spearman,
)
from .records import ScoreRecord, SegmentRecord, read_scores, read_segments, write_scores, write_segments
from .scoring import score_records
from .sequences import InputFormat, InputSequence, MissingReferenceError, build_input_sequence
from .synthesis import (
    FileGenerator,
    IdentityGenerator,
    NoiseGenerator,
    ParallelPair,
    SyntheticExample,
    downgrade_quality,
    generate_hypotheses,
    ingest_parallel,
    make_graded_corpus,
    make_toy_parallel,
    pseudo_label,
    rank_normalize,
    rank_to_normal_quantiles,
)
from .training import (
    Stage,
    TrainConfig,
    TrainHistory,
    balanced_steps,
    joint_step,
    run_pipeline,
    split_three_ways,
    train_stage,
)
from .vocab import Vocabulary, build_vocab, build_vocab_from_file

__all__ = [
    "EncoderConfig",
    "EncoderModel",
    "EnsembleSpec",
    "EvalReport",
    "FileGenerator",
    "IdentityGenerator",
    "InputFormat",
    "InputSequence",
    "MissingReferenceError",
    "MultiFormatScorer",
    "NoiseGenerator",
    "PairCounts",
    "ParallelPair",
    "ScoreRecord",
    "SegmentRecord",
    "Stage",
    "SyntheticExample",
    "TrainConfig",
    "TrainHistory",
    "Vocabulary",
    "average_predictions",
    "backward",
    "balanced_steps",
    "build_input_sequence",
    "build_report",
    "build_vocab",
    "build_vocab_from_file",
    "checkpoint_load",
    "checkpoint_save",
    "count_segment_pairs",
    "downgrade_quality",
    "encode",
    "exact_mean",
    "forward",
    "forward_batch",
    "generate_hypotheses",
    "ingest_parallel",
    "init_model",
    "joint_step",
    "kendall_tau_variant",
    "make_graded_corpus",
    "make_toy_parallel",
    "model_digest",
    "pearson",
    "pool_cls",
    "predict_head",
    "pseudo_label",
    "rank_normalize",
    "rank_to_normal_quantiles",
    "read_scores",
    "read_segments",
    "run_pipeline",
    "score_records",
    "select_per_direction",
    "spearman",
    "split_three_ways",
    "train_stage",
    "write_scores",
    "write_segments",
]
