import numpy as np
import pytest

from triscore import EncoderConfig, SegmentRecord, build_vocab, init_model
from triscore.sequences import InputFormat, build_input_sequence

TINY_CORPUS = [
    "the cat sat on the mat .",
    "a dog ran over the hill !",
    "the bird flew , the fish swam",
    "cats and dogs and birds",
    "one two three four five six seven eight",
]


@pytest.fixture(scope="session")
def tiny_vocab():
    return build_vocab(TINY_CORPUS, 64)


@pytest.fixture
def tiny_config(tiny_vocab):
    return EncoderConfig(
        vocab_size=tiny_vocab.size,
        hidden_width=8,
        n_layers=1,
        n_heads=2,
        max_len=24,
        head_dims=(8, 4, 1),
        seed=0,
    )


@pytest.fixture
def tiny_model(tiny_config):
    return init_model(tiny_config)


def make_record(
    hypothesis="the cat sat",
    source="a dog ran",
    reference="the bird flew",
    gold=None,
    segment_id="seg0",
    direction="xx-yy",
    domain="news",
    system="sysA",
):
    return SegmentRecord(
        segment_id=segment_id,
        hypothesis=hypothesis,
        source=source,
        reference=reference,
        gold=gold,
        direction=direction,
        domain=domain,
        system=system,
    )


def render(record, vocab, fmt=InputFormat.SRC_REF, max_len=24):
    return build_input_sequence(record, fmt, vocab, max_len)
