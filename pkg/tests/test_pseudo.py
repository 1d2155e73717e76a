from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deidrep.corpus import generate_synthetic, labeled_sentences, parse_document, toy_embeddings
from deidrep.embed import EmbeddingError, EmbeddingStore, nearest_neighbors
from deidrep.pseudo import (
    AdversaryPair, PairKind, PairLabel, PseudonymizationConfig, make_pairs, pseudonymize_corpus,
)


@pytest.fixture(scope="module")
def store():
    tokens, m = toy_embeddings(dim=16, background_size=300, seed=2)
    return EmbeddingStore.from_tokens(tokens, m)


@pytest.fixture(scope="module")
def sentences():
    return [s for d in generate_synthetic(seed=11, n_docs=6, background_size=300) for s in labeled_sentences(d)]


def _james():
    xml = (b'<r><TEXT><![CDATA[James was admitted to St. Thomas]]></TEXT><TAGS>'
           b'<N start="0" end="5" TYPE="PATIENT"/><N start="22" end="32" TYPE="HOSPITAL"/></TAGS></r>')
    return labeled_sentences(parse_document(xml, "j"))


def test_config_validation():
    with pytest.raises(ValueError):
        PseudonymizationConfig(neighbors=0)
    with pytest.raises(ValueError):
        PseudonymizationConfig(scope="all")


@pytest.mark.parametrize("n", [1, 5, 50])
def test_replacements_stay_in_neighborhood(store, sentences, n):
    res = pseudonymize_corpus(sentences, store, PseudonymizationConfig(n, seed=3))
    assert res.replaced
    for old, new in res.replaced:
        hood = nearest_neighbors(store, old, n).tokens
        assert new in hood
    if n == 1:
        assert all(a == b for a, b in res.replaced)


def test_every_phi_occurrence_checked(store, sentences):
    res = pseudonymize_corpus(sentences, store, PseudonymizationConfig(20, seed=4))
    for out, idx in zip(res.sentences, res.order):
        src = sentences[idx]
        assert out.labels == src.labels
        assert len(out) == len(src)
        for i, (a, b) in enumerate(zip(src.texts, out.texts)):
            if src.labels[i] == "O":
                assert a == b
            elif store.resolve(a) is not None:
                assert b in nearest_neighbors(store, a, 20).tokens


def test_n1_is_identity_up_to_shuffle(store, sentences):
    res = pseudonymize_corpus(sentences, store, PseudonymizationConfig(1, seed=9))
    assert sorted(res.order) == list(range(len(sentences)))
    restored = [None] * len(sentences)
    for s, i in zip(res.sentences, res.order):
        restored[i] = s
    assert [s.texts for s in restored] == [s.texts for s in sentences]
    assert res.order != list(range(len(sentences)))


def test_label_multiset_invariant(store, sentences):
    res = pseudonymize_corpus(sentences, store, PseudonymizationConfig(50, seed=1))
    before = Counter(l for s in sentences for l in s.labels)
    after = Counter(l for s in res.sentences for l in s.labels)
    assert before == after


def test_casing_recomputed():
    tokens = ["James", "henry", "was", "admitted", "to", "St", ".", "Thomas"]
    m = np.eye(8) + 0.01
    m[1] = m[0] + 0.001  # henry sits next to James
    store = EmbeddingStore.from_tokens(tokens, m)
    sent = _james()[0]
    res = pseudonymize_corpus([sent], store, PseudonymizationConfig(2, seed=0))
    out = res.sentences[0]
    for i, tok in enumerate(out.tokens):
        if tok.text == "henry":
            assert tok.casing.value == "all_lower"
            break
    else:
        pytest.skip("seed kept James")


def test_no_phi_sentence_unchanged(store, sentences):
    plain = [s for s in sentences if not s.phi_positions]
    assert plain
    res = pseudonymize_corpus(plain, store, PseudonymizationConfig(50, seed=0))
    assert sorted(s.texts for s in res.sentences) == sorted(s.texts for s in plain)


def test_oov_phi_kept_and_counted(store):
    sent = _james()[0]
    res = pseudonymize_corpus([sent], store, PseudonymizationConfig(1, seed=0))
    # every PHI token is either replaced or counted as kept
    assert res.oov_kept + len(res.replaced) == len(sent.phi_positions)
    kept = [t for t, l in zip(res.sentences[0].texts, sent.labels) if l != "O" and store.resolve(t) is None]
    assert len(kept) == res.oov_kept


def test_n_larger_than_vocab(store, sentences):
    with pytest.raises(EmbeddingError):
        pseudonymize_corpus(sentences, store, PseudonymizationConfig(len(store) + 1))


def test_determinism(store, sentences):
    a = pseudonymize_corpus(sentences, store, PseudonymizationConfig(30, seed=5))
    b = pseudonymize_corpus(sentences, store, PseudonymizationConfig(30, seed=5))
    assert [s.texts for s in a.sentences] == [s.texts for s in b.sentences]
    c = pseudonymize_corpus(sentences, store, PseudonymizationConfig(30, seed=6))
    assert [s.texts for s in a.sentences] != [s.texts for s in c.sentences]


def test_pairs_all_real(store, sentences):
    pairs = make_pairs(sentences, store, 10, seed=0, fake_fraction=0.0)
    assert pairs and all(p.label is PairLabel.SAME and p.sentence_a == p.sentence_b for p in pairs)


def test_fake_pair_differs_at_one_phi_position(store, sentences):
    pairs = make_pairs(sentences, store, 10, seed=1, fake_fraction=1.0)
    by_text = {tuple(s.texts): s for s in sentences}
    for p in pairs:
        diff = [i for i, (a, b) in enumerate(zip(p.sentence_a, p.sentence_b)) if a != b]
        assert diff == [p.position]
        src = by_text[p.sentence_a]
        assert src.labels[p.position] != "O"
        hood = nearest_neighbors(store, p.sentence_a[p.position], 10).tokens
        assert p.sentence_b[p.position] in hood[1:]


def test_fake_count_exact_and_reproducible(store):
    sents = [s for d in generate_synthetic(seed=2, n_docs=30, background_size=300) for s in labeled_sentences(d)]
    eligible = [s for s in sents if any(store.resolve(s.texts[i]) is not None for i in s.phi_positions)]
    sub = eligible[:100]
    assert len(sub) == 100
    a = make_pairs(sub, store, 50, seed=42, fake_fraction=0.5)
    assert sum(p.label is PairLabel.DIFFERENT for p in a) == 50
    assert a == make_pairs(sub, store, 50, seed=42, fake_fraction=0.5)


def test_pair_errors(store, sentences):
    plain = [s for s in sentences if not s.phi_positions]
    with pytest.raises(ValueError):
        make_pairs(plain, store, 10, seed=0)
    assert make_pairs(plain, store, 10, seed=0, fake_fraction=0.0) == []
    with pytest.raises(ValueError):
        make_pairs(sentences, store, 1, seed=0)
    with pytest.raises(ValueError):
        make_pairs(sentences, store, 10, seed=0, fake_fraction=1.5)
    with pytest.raises(ValueError):
        AdversaryPair(PairKind.T1, ("a",), ("a", "b"), PairLabel.SAME)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 80), st.integers(0, 10_000), st.floats(0, 1))
def test_pair_fraction_property(n, seed, frac):
    tokens, m = toy_embeddings(dim=8, background_size=50, seed=0)
    store = EmbeddingStore.from_tokens(tokens, m)
    sents = [s for d in generate_synthetic(seed=seed, n_docs=2, background_size=50) for s in labeled_sentences(d)]
    n = max(n, 2)
    pairs = make_pairs(sents, store, n, seed=seed, fake_fraction=frac)
    fakes = sum(p.label is PairLabel.DIFFERENT for p in pairs)
    assert abs(fakes - frac * len(pairs)) <= 1
    assert all(len(p.sentence_a) == len(p.sentence_b) for p in pairs)
