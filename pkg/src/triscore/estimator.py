"""scikit-learn compatible wrapper around the multi-format quality model.

``X`` is a sequence of (hypothesis, source, reference) text triples and ``y``
the quality scores. ``fit`` builds a vocabulary from the training texts and
trains one balanced multi-format stage; ``predict`` scores new triples under
any of the three input formats. The estimator follows the scikit-learn
parameter contract, so it composes with ``clone``, pipelines, and model
selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .encoder import EncoderConfig, forward_batch, init_model
from .records import SegmentRecord
from .sequences import InputFormat, build_input_sequence
from .training import Stage, TrainConfig, train_stage
from .vocab import build_vocab, normalize


def check_text_triples(X, require_reference: bool) -> list[tuple[str, str, str | None]]:
    """Validate a sequence of (hypothesis, source[, reference]) text tuples."""
    triples = []
    for i, row in enumerate(X):
        row = tuple(row)
        if len(row) == 2:
            hyp, src = row
            ref = None
        elif len(row) == 3:
            hyp, src, ref = row
        else:
            raise ValueError(f"X[{i}]: expected (hypothesis, source[, reference]), got {len(row)} fields")
        if not isinstance(hyp, str) or not isinstance(src, str):
            raise TypeError(f"X[{i}]: hypothesis and source must be strings")
        if not normalize(hyp) or not normalize(src):
            raise ValueError(f"X[{i}]: hypothesis and source must be non-empty")
        if ref is not None and not isinstance(ref, str):
            raise TypeError(f"X[{i}]: reference must be a string or None")
        if require_reference and (ref is None or not normalize(ref)):
            raise ValueError(f"X[{i}]: a non-empty reference is required")
        triples.append((hyp, src, ref))
    if not triples:
        raise ValueError("X is empty")
    return triples


class MultiFormatScorer(RegressorMixin, BaseEstimator):
    """Regressor scoring translation hypotheses under three input formats.

    Parameters mirror the encoder and one training stage. Training splits the
    data into three parts, one per input format, and optimizes the summed
    per-format mean-squared error with separate encoder/head learning rates.

    >>> scorer = MultiFormatScorer(epochs=2).fit(X, y)
    >>> scorer.predict(X_new)                      # source+reference format
    >>> scorer.predict(X_new, input_format="src")  # reference-free
    """

    def __init__(
        self,
        hidden_width: int = 64,
        n_layers: int = 2,
        n_heads: int = 8,
        max_len: int = 96,
        head_dims: tuple[int, int, int] = (64, 32, 1),
        max_vocab: int = 4000,
        batch_size: int = 16,
        lr_encoder: float = 1e-3,
        lr_head: float = 3e-3,
        epochs: int = 4,
        seed: int = 0,
    ):
        self.hidden_width = hidden_width
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_len = max_len
        self.head_dims = head_dims
        self.max_vocab = max_vocab
        self.batch_size = batch_size
        self.lr_encoder = lr_encoder
        self.lr_head = lr_head
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y):
        triples = check_text_triples(X, require_reference=True)
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.shape[0] != len(triples):
            raise ValueError(f"y must be 1-d with {len(triples)} entries, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")

        corpus = [text for hyp, src, ref in triples for text in (hyp, src, ref)]
        self.vocab_ = build_vocab(corpus, self.max_vocab)
        records = [
            SegmentRecord(
                segment_id=f"fit:{i:06d}",
                hypothesis=hyp,
                source=src,
                reference=ref,
                gold=float(score),
            )
            for i, ((hyp, src, ref), score) in enumerate(zip(triples, y))
        ]
        config = EncoderConfig(
            vocab_size=self.vocab_.size,
            hidden_width=self.hidden_width,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            max_len=self.max_len,
            head_dims=tuple(self.head_dims),
            seed=self.seed,
        )
        self.model_ = init_model(config)
        train_config = TrainConfig(
            stage=Stage.PRETRAIN,
            batch_size=self.batch_size,
            lr_encoder=self.lr_encoder,
            lr_head=self.lr_head,
            epochs=self.epochs,
            seed=self.seed,
        )
        _, self.history_ = train_stage(self.model_, records, train_config, self.vocab_)
        return self

    def predict(self, X, input_format: str = "src+ref") -> np.ndarray:
        check_is_fitted(self, "model_")
        fmt = InputFormat.parse(input_format)
        triples = check_text_triples(X, require_reference=False)
        seqs = []
        for i, (hyp, src, ref) in enumerate(triples):
            rec = SegmentRecord(segment_id=f"predict:{i:06d}", hypothesis=hyp, source=src, reference=ref)
            seqs.append(build_input_sequence(rec, fmt, self.vocab_, self.model_.config.max_len))
        preds = [forward_batch(self.model_, seqs[lo : lo + 64]) for lo in range(0, len(seqs), 64)]
        return np.concatenate(preds)
