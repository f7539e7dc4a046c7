"""Word-level vocabulary with four reserved control tokens.

Tokenization is deliberately simple and deterministic: lowercase, then split
into word characters and single punctuation marks. Subword segmentation is a
non-goal; out-of-vocabulary words map to the unknown token.

Reserved ids occupy lines 0-3 of the persisted vocabulary file, in order:
sequence start, segment delimiter, sequence end, unknown. Padding inside
batches reuses the sequence-end id; padded positions are identified by
sequence length and masked out of attention, so the padding id is never read
as content.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .fileio import atomic_write_text

BOS_TOKEN = "[BOS]"
DEL_TOKEN = "[DEL]"
EOS_TOKEN = "[EOS]"
UNK_TOKEN = "[UNK]"
RESERVED_TOKENS = (BOS_TOKEN, DEL_TOKEN, EOS_TOKEN, UNK_TOKEN)

BOS_ID = 0
DEL_ID = 1
EOS_ID = 2
UNK_ID = 3
PAD_ID = EOS_ID  # alias; padding is masked by length, never read as content

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text: str) -> list[str]:
    """Lowercase and split into word/punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    """Canonical whitespace-normalized form: lowercased tokens joined by single spaces."""
    return " ".join(split_words(text))


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token<->id bijection with the four reserved ids at 0..3."""

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def tokenize(self, text: str) -> list[int]:
        """Map text to token ids; unseen words map to the unknown id. No specials added."""
        unk = UNK_ID
        lookup = self.token_to_id
        return [lookup.get(tok, unk) for tok in split_words(text)]

    def detokenize(self, ids: Iterable[int]) -> str:
        """Inverse of tokenize for in-vocabulary, whitespace-normalized text."""
        toks = []
        for i in ids:
            if not 0 <= i < self.size:
                raise ValueError(f"token id {i} out of range for vocabulary of size {self.size}")
            toks.append(self.id_to_token[i])
        return " ".join(toks)

    def save(self, path: str | Path) -> None:
        """One token per line; the line number is the id."""
        atomic_write_text(path, "\n".join(self.id_to_token) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != RESERVED_TOKENS:
            raise ValueError(
                f"{path}: lines 0-3 must be the reserved tokens {RESERVED_TOKENS}, got {lines[:4]}"
            )
        return cls._from_tokens(lines)

    @classmethod
    def _from_tokens(cls, tokens: list[str]) -> "Vocabulary":
        token_to_id = {tok: i for i, tok in enumerate(tokens)}
        if len(token_to_id) != len(tokens):
            raise ValueError("duplicate token in vocabulary")
        return cls(id_to_token=tuple(tokens), token_to_id=token_to_id)


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Build a frequency-capped vocabulary from an iterable of text lines.

    Keeps the ``max_size - 4`` most frequent tokens after the four reserved
    ones; frequency ties are broken by first occurrence in the corpus.
    """
    if max_size < 5:
        raise ValueError(f"max_size must be >= 5 to fit reserved tokens plus one word, got {max_size}")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    n_lines = 0
    for line in corpus:
        n_lines += 1
        for tok in split_words(line):
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = len(first_seen)
    if n_lines == 0 or not counts:
        raise ValueError("empty corpus: no tokens to build a vocabulary from")
    ordered = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    kept = ordered[: max_size - len(RESERVED_TOKENS)]
    return Vocabulary._from_tokens(list(RESERVED_TOKENS) + kept)


def build_vocab_from_file(path: str | Path, max_size: int) -> Vocabulary:
    """Build from a UTF-8 plain-text corpus, one sentence per line."""
    with open(path, encoding="utf-8") as fh:
        return build_vocab(fh, max_size)
