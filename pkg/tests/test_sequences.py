import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_record
from triscore import build_vocab
from triscore.sequences import (
    InputFormat,
    MissingReferenceError,
    TRAINING_FORMAT_ORDER,
    build_input_sequence,
)
from triscore.vocab import BOS_ID, DEL_ID, EOS_ID


@pytest.fixture(scope="module")
def abc_vocab():
    return build_vocab(["a b c d x y z p q r"], 32)


def ids_of(vocab, *tokens):
    return [vocab.token_to_id[t] for t in tokens]


def test_source_only_layout(abc_vocab):
    rec = make_record(hypothesis="a b", source="x", reference=None)
    seq = build_input_sequence(rec, InputFormat.SRC, abc_vocab, 32)
    a, b, x = ids_of(abc_vocab, "a", "b", "x")
    assert list(seq.ids) == [BOS_ID, a, b, DEL_ID, x, EOS_ID]
    assert (seq.hyp_len, seq.src_len, seq.ref_len) == (2, 1, 0)
    assert not seq.truncated


def test_reference_only_layout(abc_vocab):
    rec = make_record(hypothesis="a b", source="x", reference="y")
    seq = build_input_sequence(rec, InputFormat.REF, abc_vocab, 32)
    a, b, y = ids_of(abc_vocab, "a", "b", "y")
    assert list(seq.ids) == [BOS_ID, a, b, DEL_ID, y, EOS_ID]
    assert (seq.hyp_len, seq.src_len, seq.ref_len) == (2, 0, 1)


def test_source_reference_layout(abc_vocab):
    rec = make_record(hypothesis="a", source="x", reference="y")
    seq = build_input_sequence(rec, InputFormat.SRC_REF, abc_vocab, 32)
    a, x, y = ids_of(abc_vocab, "a", "x", "y")
    assert list(seq.ids) == [BOS_ID, a, DEL_ID, x, DEL_ID, y, EOS_ID]


def test_delimiter_counts():
    vocab = build_vocab(["a b c x y"], 32)
    rec = make_record(hypothesis="a b", source="x", reference="y")
    for fmt, expect in ((InputFormat.SRC, 1), (InputFormat.REF, 1), (InputFormat.SRC_REF, 2)):
        seq = build_input_sequence(rec, fmt, vocab, 32)
        assert sum(1 for i in seq.ids if i == DEL_ID) == expect


def test_missing_reference_is_explicit_error(abc_vocab):
    rec = make_record(hypothesis="a", source="x", reference=None)
    with pytest.raises(MissingReferenceError, match="requires a reference"):
        build_input_sequence(rec, InputFormat.REF, abc_vocab, 32)
    with pytest.raises(MissingReferenceError):
        build_input_sequence(rec, InputFormat.SRC_REF, abc_vocab, 32)
    # source-only needs no reference
    assert build_input_sequence(rec, InputFormat.SRC, abc_vocab, 32)


def test_truncation_drops_longest_tail_hypothesis_last(abc_vocab):
    # derived by applying the truncation rule by hand: 8 -> 7 -> 6 tokens,
    # both cuts from the hypothesis tail since it stays the longest segment
    rec = make_record(hypothesis="a b c d", source="x", reference=None)
    seq = build_input_sequence(rec, InputFormat.SRC, abc_vocab, 6)
    a, b, x = ids_of(abc_vocab, "a", "b", "x")
    assert list(seq.ids) == [BOS_ID, a, b, DEL_ID, x, EOS_ID]
    assert seq.truncated
    assert (seq.hyp_len, seq.src_len) == (2, 1)


def test_truncation_prefers_later_segment_on_ties(abc_vocab):
    # lens (h=1, s=3, r=3), max_len 9: cut reference first (later segment),
    # then source (now strictly longest among non-hypothesis candidates)
    rec = make_record(hypothesis="a", source="x y z", reference="p q r")
    seq = build_input_sequence(rec, InputFormat.SRC_REF, abc_vocab, 9)
    a, x, y, p, q = ids_of(abc_vocab, "a", "x", "y", "p", "q")
    assert list(seq.ids) == [BOS_ID, a, DEL_ID, x, y, DEL_ID, p, q, EOS_ID]
    assert (seq.hyp_len, seq.src_len, seq.ref_len) == (1, 2, 2)


def test_truncation_never_empties_hypothesis(abc_vocab):
    rec = make_record(hypothesis="a b c d", source="x y z", reference="p q r")
    seq = build_input_sequence(rec, InputFormat.SRC_REF, abc_vocab, 5)
    assert seq.hyp_len == 1
    assert (seq.src_len, seq.ref_len) == (0, 0)
    assert len(seq) == 5


def test_max_len_too_small_for_specials(abc_vocab):
    rec = make_record(hypothesis="a", source="x", reference="y")
    with pytest.raises(ValueError, match="max_len"):
        build_input_sequence(rec, InputFormat.SRC_REF, abc_vocab, 4)


def test_ref_and_src_differ_only_in_second_segment(abc_vocab):
    rec = make_record(hypothesis="a b", source="x y", reference="p q")
    src_seq = build_input_sequence(rec, InputFormat.SRC, abc_vocab, 32)
    ref_seq = build_input_sequence(rec, InputFormat.REF, abc_vocab, 32)
    assert src_seq.segments()[0] == ref_seq.segments()[0]
    assert src_seq.segments()[1] != ref_seq.segments()[1]
    assert len(src_seq) == len(ref_seq)


def test_training_format_order_is_ref_src_srcref():
    assert TRAINING_FORMAT_ORDER == (InputFormat.REF, InputFormat.SRC, InputFormat.SRC_REF)


def test_format_parse_roundtrip():
    for fmt in InputFormat:
        assert InputFormat.parse(fmt.value) is fmt
    with pytest.raises(ValueError, match="unknown input format"):
        InputFormat.parse("both")


words = st.lists(st.sampled_from("a b c d x y z p q r".split()), min_size=1, max_size=10)


@settings(max_examples=60)
@given(hyp=words, src=words, ref=words, max_len=st.integers(min_value=6, max_value=40),
       fmt=st.sampled_from(list(InputFormat)))
def test_length_accounting_and_parse_back(hyp, src, ref, max_len, fmt):
    vocab = build_vocab(["a b c d x y z p q r"], 32)
    rec = make_record(hypothesis=" ".join(hyp), source=" ".join(src), reference=" ".join(ref))
    seq = build_input_sequence(rec, fmt, vocab, max_len)
    n_specials = 3 if fmt is not InputFormat.SRC_REF else 4
    assert len(seq) <= max_len
    assert seq.hyp_len + seq.src_len + seq.ref_len + n_specials == len(seq)
    assert seq.ids[0] == BOS_ID and seq.ids[-1] == EOS_ID

    segs = seq.segments()
    rendered = [vocab.tokenize(rec.hypothesis), vocab.tokenize(rec.source), vocab.tokenize(rec.reference)]
    if fmt is InputFormat.SRC:
        expected = [rendered[0], rendered[1]]
    elif fmt is InputFormat.REF:
        expected = [rendered[0], rendered[2]]
    else:
        expected = rendered
    assert len(segs) == len(expected)
    for got, full in zip(segs, expected):
        assert got == full[: len(got)]  # tail truncation only
    if not seq.truncated:
        assert segs == expected
