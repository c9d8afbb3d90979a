import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from talkattack.features import (FeatureSpec, Vocabulary, build_vocab, ngrams, vectorize, vectorize_batch,
                                 vectorize_reference)

CHAR12 = FeatureSpec("char", 1, 2)


def test_build_vocab_examples():
    assert sorted(build_vocab(["ab"], CHAR12).ngrams) == ["a", "ab", "b"]
    # every gram occurs once, so the cap keeps the lexicographically first two
    assert build_vocab(["ab"], CHAR12.with_(max_features=2)).ngrams == ("a", "ab")
    word = build_vocab(["good faith edit"], FeatureSpec.default_for("word"))
    assert sorted(word.ngrams) == sorted(["good", "faith", "edit", "good faith", "faith edit"])
    with pytest.raises(ValueError):
        build_vocab([], CHAR12)


def test_vocab_ranks_by_frequency():
    v = build_vocab(["aab", "b", "c"], FeatureSpec("char", 1, 1, max_features=2))
    assert v.ngrams == ("a", "b")  # a:2, b:2, c:1


def test_vectorize_examples():
    v = build_vocab(["ab"], FeatureSpec("char", 1, 1))
    assert vectorize("", v).indices == ()
    assert vectorize("zzz", v).indices == ()
    x = vectorize("aab", v)
    assert dict(zip((v.ngrams[i] for i in x.indices), x.values)) == {"a": 2.0, "b": 1.0}


def test_word_tokens_strip_edge_punctuation():
    spec = FeatureSpec("word", 1, 1)
    assert ngrams("Hello, world! (yes)", spec) == ["hello", "world", "yes"]


def test_binary_and_normalize():
    spec = FeatureSpec("char", 1, 1, weighting="binary")
    v = build_vocab(["ab"], spec)
    assert set(vectorize("aaab", v).values) == {1.0}
    v = build_vocab(["ab"], spec.with_(weighting="count", normalize=True))
    x = vectorize("aaab", v)
    assert np.linalg.norm(x.values) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text(alphabet="abc d!é", max_size=30), min_size=1, max_size=12),
       st.lists(st.text(alphabet="abcxd é\x00", max_size=40), max_size=12),
       st.sampled_from(["char", "word"]), st.integers(1, 3), st.integers(0, 2), st.integers(1, 40),
       st.sampled_from(["count", "binary"]), st.booleans())
def test_fast_vectorizer_matches_reference(train, docs, kind, n_min, extra, cap, weighting, norm):
    spec = FeatureSpec(kind, n_min, n_min + extra, max_features=cap, weighting=weighting, normalize=norm)
    v = build_vocab(train, spec)
    fast = vectorize_batch(docs, v)
    ref = vectorize_reference(docs, v)
    assert fast.shape == ref.shape
    assert np.array_equal(fast.toarray(), ref.toarray())


@given(st.text(alphabet="ab", max_size=25))
def test_count_sum_equals_occurrences(text):
    spec = FeatureSpec("char", 1, 3)
    # exhaustive vocabulary over the alphabet
    alphabet = ["a", "b"]
    grams = [x + y + z for x in [""] + alphabet for y in [""] + alphabet for z in alphabet]
    v = Vocabulary(sorted(set(grams)), spec)
    x = vectorize(text, v)
    n = len(text)
    assert sum(x.values) == sum(max(0, n - k + 1) for k in (1, 2, 3))
    assert list(x.indices) == sorted(set(x.indices)) and all(i < len(v) for i in x.indices)


def test_vocab_serialisation_deterministic(tmp_path):
    texts = ["some text here", "more words"]
    a, b = build_vocab(texts, CHAR12), build_vocab(texts, CHAR12)
    assert a.to_json() == b.to_json()
    a.save(tmp_path / "v.json")
    loaded = Vocabulary.load(tmp_path / "v.json")
    assert loaded.ngrams == a.ngrams and loaded.fingerprint == a.fingerprint and loaded.spec == a.spec


def test_spec_validation():
    with pytest.raises(ValueError):
        FeatureSpec("char", 3, 2)
    with pytest.raises(ValueError):
        FeatureSpec("bytes")
