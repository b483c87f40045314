import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ridgevlp.errors import ConfigurationError, ParseError
from ridgevlp.text import (PAD, RESERVED, START, UNK, Vocabulary, build_vocab, decode, encode,
                           normalize, tokenize)


def test_tokenize_splits_punctuation():
    assert tokenize("Is Pneumonia present?  Yes.") == ["is", "pneumonia", "present", "?", "yes", "."]


def test_build_vocab_small_corpus():
    v = build_vocab(["a a b"])
    assert v.itos == list(RESERVED) + ["a", "b"]
    assert len(v) == 6


def test_min_count_drops_rare_tokens():
    v = build_vocab(["a a b"], min_count=2)
    assert v.itos == list(RESERVED) + ["a"]
    assert encode("b", v, 4).ids[1] == UNK


def test_identical_corpora_give_identical_files(tmp_path):
    corpus = ["is effusion present? no.", "verdict: abnormal study."]
    build_vocab(corpus).save(tmp_path / "a.txt")
    build_vocab(list(corpus)).save(tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["x y z y"])
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v


@pytest.mark.parametrize("text", ["a\t0\n", "[PAD]\t0\n[START]\t2\n", "[PAD]\tzero\n"])
def test_bad_vocab_file(text):
    with pytest.raises(ParseError):
        Vocabulary.from_lines(text)


def test_empty_corpus():
    with pytest.raises(ConfigurationError):
        build_vocab([])


def test_encode_empty_text():
    seq = encode("", build_vocab(["a"]), 5)
    np.testing.assert_array_equal(seq.ids, [START, PAD, PAD, PAD, PAD])
    assert not seq.maskable.any()
    assert seq.length == 1


def test_encode_truncates_to_max_len():
    v = build_vocab(["a b c d e f g h"])
    seq = encode("a b c d e f g h", v, 4)
    assert len(seq) == 4
    assert decode(seq.ids, v) == "a b c"


def test_encode_decode_round_trip():
    text = "Is Edema present in the LEFT lung? yes."
    v = build_vocab([text])
    assert decode(encode(text, v, 32).ids, v) == normalize(text)


def test_max_len_too_small():
    with pytest.raises(ConfigurationError):
        encode("a", build_vocab(["a"]), 1)


_words = st.lists(st.sampled_from(["a", "b", "c", "zz", "?", ".", "unknown", "MASK"]), max_size=20)


@given(_words, st.integers(2, 24))
def test_encode_invariants(words, max_len):
    v = build_vocab(["a b c ? ."])
    text = " ".join(words)
    seq = encode(text, v, max_len)
    assert len(seq.ids) == max_len and seq.ids[0] == START
    n = seq.length
    assert np.all(seq.ids[:n] != PAD) and np.all(seq.ids[n:] == PAD)
    # reserved ids (including UNK and START) are never maskable
    np.testing.assert_array_equal(seq.maskable, seq.ids >= len(RESERVED))
    again = encode(text, v, max_len)
    np.testing.assert_array_equal(again.ids, seq.ids)


@given(st.lists(st.text(alphabet="abcxyz", min_size=1, max_size=4), min_size=1, max_size=15))
def test_vocab_is_bijective(tokens):
    v = build_vocab([" ".join(tokens)])
    assert sorted(v.stoi.values()) == list(range(len(v)))
    assert all(v.itos[v.id(t)] == t for t in v.itos[len(RESERVED):])
