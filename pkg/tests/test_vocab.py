import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlalt.errors import ConfigError, EmptyTargetError
from mlalt.vocab import (BLANK_ID, BOS_ID, EOS_ID, SPACE_ID, SPECIALS, UNK_ID, LanguageSet, Vocabulary,
                         build_vocab, collapse_ctc, decode, encode, normalize_text, parse_charset_config)


def toy():
    return build_vocab(LanguageSet.from_pairs([("x", "ab"), ("y", "bc")]))


def test_union_of_charsets():
    v = toy()
    assert v.characters == ("a", "b", "c")
    assert len(v) == 3 + len(SPECIALS)
    assert v.tokens[:5] == ("<blank>", "<bos>", "<eos>", "<unk>", " ")


def test_single_language():
    v = build_vocab(LanguageSet.from_pairs([("x", "qwe")]))
    assert len(v) == 3 + len(SPECIALS)


def test_duplicate_language_rejected():
    with pytest.raises(ConfigError):
        LanguageSet.from_pairs([("x", "ab"), ("x", "cd")])
    with pytest.raises(ConfigError):
        LanguageSet.from_pairs([("x", "")])


def test_order_insensitive_and_idempotent():
    pairs = [("en", "abc"), ("fr", "aàé"), ("ru", "абв")]
    ref = build_vocab(LanguageSet.from_pairs(pairs))
    for perm in itertools.permutations(pairs):
        assert build_vocab(LanguageSet.from_pairs(perm)).to_text() == ref.to_text()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sets(st.sampled_from("abcdefghij"), min_size=1), min_size=1, max_size=4))
def test_union_size_bound(sets):
    langs = LanguageSet.from_pairs([(f"l{i}", s) for i, s in enumerate(sets)])
    n = len(build_vocab(langs).characters)
    assert n <= sum(len(s) for s in sets)
    disjoint = all(not (a & b) for a, b in itertools.combinations(sets, 2))
    assert (n == sum(len(s) for s in sets)) == disjoint


def test_encode_examples():
    v = toy()
    assert encode("ab", v).ids == (v.index("a"), v.index("b"))
    assert encode("a☃b", v).ids == (v.index("a"), UNK_ID, v.index("b"))
    assert decode(encode("  Ab   BA ", v).ids, v) == "ab ba"
    with pytest.raises(EmptyTargetError):
        encode("   ", v)


def test_sequence_forms():
    y = encode("ab", toy())
    assert y.with_bos == (BOS_ID,) + y.ids and y.with_eos == y.ids + (EOS_ID,)


def test_decode_examples():
    v = toy()
    assert decode([BOS_ID, v.index("a"), EOS_ID], v) == "a"
    assert decode([], v) == ""
    assert decode([BLANK_ID, UNK_ID, SPACE_ID], v) == " "
    with pytest.raises(IndexError):
        decode([len(v)], v)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", " "]), min_size=1, max_size=20))
def test_round_trip(chars):
    text = normalize_text("".join(chars))
    v = toy()
    if text:
        ids = encode(text, v).ids
        assert max(ids) < len(v)
        assert decode(ids, v) == text


def _collapse_oracle(path):
    merged = [k for k, _ in itertools.groupby(path)]
    return [p for p in merged if p != BLANK_ID]


def test_collapse_examples():
    a = 5
    assert collapse_ctc([a, a, BLANK_ID, a]) == [a, a]
    assert collapse_ctc([BLANK_ID, BLANK_ID]) == []


def test_collapse_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        path = rng.integers(0, 4, size=rng.integers(0, 12)).tolist()
        assert collapse_ctc(path) == _collapse_oracle(path)


def test_file_round_trip(tmp_path):
    v = toy()
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v
    assert "<space>" in (tmp_path / "v.txt").read_text(encoding="utf-8").splitlines()


def test_charset_config_parsing():
    langs = parse_charset_config("# comment\n\nen: a b c\nfr: é à\n")
    assert langs.languages == ("en", "fr")
    assert langs.charsets["fr"] == frozenset("éà")
    with pytest.raises(ConfigError):
        parse_charset_config("en abc")
    with pytest.raises(ConfigError):
        langs.index("de")


def test_every_index_decodes():
    v = toy()
    assert [v.index(t) for t in v.tokens] == list(range(len(v)))
