from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deidrep.corpus import (
    CASING_CATEGORIES, CasingCategory, CorpusError, Document, PhiCategory, PhiSpan, align_labels, casing_of,
    generate_synthetic, is_valid_bio, label_spans, labeled_sentences, parse_document, read_corpus,
    sentences_to_document, split_sentences, tokenize, write_document,
)

FIXTURES = Path(__file__).parent / "fixtures"


def _xml(text, tags=""):
    return f"<root><TEXT><![CDATA[{text}]]></TEXT><TAGS>{tags}</TAGS></root>".encode()


def test_fixture_document():
    doc = read_corpus(FIXTURES / "james.xml")[0]
    assert doc.id == "james"
    assert [s.text for s in doc.spans] == ["James", "St. Thomas", "2069-04-07", "25"]
    assert doc.spans[0] == PhiSpan(0, 5, PhiCategory.PATIENT, "James")


def test_single_tag():
    doc = parse_document(_xml("James was admitted", '<NAME start="0" end="5" TYPE="PATIENT"/>'))
    assert len(doc.spans) == 1 and doc.spans[0].text == "James"


def test_no_tags():
    assert parse_document(_xml("Nothing here.")).spans == []


@pytest.mark.parametrize("tags, msg", [
    ('<NAME start="0" end="99" TYPE="PATIENT"/>', "offset out of bounds"),
    ('<NAME start="0" end="5" text="Jimmy" TYPE="PATIENT"/>', "mismatch"),
    ('<NAME start="0" end="5" TYPE="PATIENT"/><NAME start="3" end="8" TYPE="DOCTOR"/>', "overlapping"),
    ('<NAME start="x" end="5" TYPE="PATIENT"/>', "non-integer"),
])
def test_bad_tags(tags, msg):
    with pytest.raises(CorpusError, match=msg):
        parse_document(_xml("James was admitted", tags), doc_id="d1")


def test_malformed_xml_names_document():
    with pytest.raises(CorpusError, match="d9: malformed"):
        parse_document(b"<root><TEXT>", doc_id="d9")


def test_unicode_offsets_are_code_points():
    doc = parse_document(_xml("Zoë Ålund left", '<NAME start="4" end="9" TYPE="PATIENT"/>'))
    assert doc.spans[0].text == "Ålund"


def test_i2b2_subtypes_fold():
    doc = parse_document(_xml("MRN 123", '<ID start="4" end="7" TYPE="MEDICALRECORD"/>'))
    assert doc.spans[0].category is PhiCategory.ID


@pytest.mark.parametrize("text, expected", [
    ("25yo", ["25", "yo"]),
    ("St. Thomas", ["St", ".", "Thomas"]),
    ("", []),
    ("a2b", ["a2", "b"]),
    ("(555)-1234", ["(", "555", ")", "-", "1234"]),
    ("snake_case", ["snake", "_", "case"]),
])
def test_tokenize(text, expected):
    assert [t.text for t in tokenize(text)] == expected


@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=60))
def test_tokens_are_offset_faithful(text):
    toks = tokenize(text)
    for t in toks:
        assert text[t.start:t.end] == t.text
        assert t.text.strip() == t.text and t.text
    assert all(a.end <= b.start for a, b in zip(toks, toks[1:]))


def _split(text):
    return [[t.text for t in s.tokens] for s in split_sentences(Document("d", text))]


def test_sentence_rules():
    assert len(_split("A was seen.\n\n- BP 120")) == 2
    assert len(_split("no terminator here")) == 1
    assert _split("He came. She left.") == [["He", "came", "."], ["She", "left", "."]]
    assert len(_split("Meds:\n1. aspirin\n2) heparin")) == 3
    # abbreviations do not end sentences
    assert len(_split("Seen by Dr. Smith today.")) == 1


def test_split_covers_all_tokens():
    doc = read_corpus(FIXTURES / "james.xml")[0]
    flat = [t for s in split_sentences(doc) for t in s.tokens]
    assert flat == tokenize(doc.text)


@pytest.mark.parametrize("text, cat", [
    ("25", CasingCategory.NUMERIC),
    ("25a", CasingCategory.MAINLY_NUMERIC),
    ("james", CasingCategory.ALL_LOWER),
    ("ICU", CasingCategory.ALL_UPPER),
    ("James", CasingCategory.INITIAL_UPPER),
    ("x2y3z", CasingCategory.CONTAINS_DIGIT),
    ("-", CasingCategory.OTHER),
])
def test_casing(text, cat):
    assert casing_of(text) is cat


def test_casing_rejects_empty():
    with pytest.raises(CorpusError):
        casing_of("")


@given(st.text(min_size=1, max_size=12))
def test_casing_total(text):
    assert casing_of(text) in CASING_CATEGORIES


def test_alignment_on_fixture():
    doc = read_corpus(FIXTURES / "james.xml")[0]
    sents = labeled_sentences(doc)
    assert len(sents) == 2
    first = dict(zip(sents[0].texts, sents[0].labels))
    assert first["James"] == "B-PATIENT" and first["was"] == "O"
    i = sents[0].texts.index("St")
    assert sents[0].labels[i:i + 3] == ["B-HOSPITAL", "I-HOSPITAL", "I-HOSPITAL"]
    # "25yo": only "25" overlaps the AGE span
    assert dict(zip(sents[1].texts, sents[1].labels)) == {"He": "O", "is": "O", "25": "B-AGE", "yo": "O",
                                                          ".": "O"}


def test_partial_overlap_labels_token():
    doc = parse_document(_xml("Jamesson left", '<NAME start="0" end="5" TYPE="PATIENT"/>'))
    assert labeled_sentences(doc)[0].labels[0] == "B-PATIENT"


def test_adjacent_spans_restart_with_b():
    doc = Document("d", "Ann Bo", [PhiSpan(0, 3, PhiCategory.PATIENT, "Ann"), PhiSpan(4, 6, PhiCategory.PATIENT, "Bo")])
    assert align_labels(doc, split_sentences(doc))[0].labels == ["B-PATIENT", "B-PATIENT"]


def test_bio_validity():
    assert is_valid_bio(["B-AGE", "I-AGE", "O"])
    assert not is_valid_bio(["O", "I-AGE"])
    assert not is_valid_bio(["B-AGE", "I-DATE"])


def test_synthetic_determinism_and_spans():
    a = generate_synthetic(seed=3, n_docs=10)
    b = generate_synthetic(seed=3, n_docs=10)
    assert [write_document(d) for d in a] == [write_document(d) for d in b]
    assert len(a) == 10
    for d in a:
        assert d.spans
        for s in d.spans:
            assert d.text[s.start:s.end] == s.text
    assert generate_synthetic(seed=4, n_docs=10)[0].text != a[0].text


def test_synthetic_density():
    docs = generate_synthetic(seed=0, n_docs=60, phi_density=0.2)
    sents = [s for d in docs for s in labeled_sentences(d)]
    n = sum(len(s) for s in sents)
    phi = sum(len(s.phi_positions) for s in sents)
    assert abs(phi / n - 0.2) <= 0.05


@pytest.mark.parametrize("density", [0.0, 1.5])
def test_synthetic_rejects_density(density):
    with pytest.raises(CorpusError):
        generate_synthetic(0, 1, phi_density=density)


def test_synthetic_covers_categories():
    docs = generate_synthetic(seed=1, n_docs=40)
    cats = {s.category for d in docs for s in d.spans}
    assert cats == set(PhiCategory)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_xml_roundtrip(seed):
    for doc in generate_synthetic(seed, 2):
        assert parse_document(write_document(doc), doc.id) == doc


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_label_projection_recovers_spans(seed):
    doc = generate_synthetic(seed, 1)[0]
    sents = labeled_sentences(doc)
    got = []
    for s in sents:
        for first, last, cat in label_spans(s):
            got.append((s.tokens[first].start, s.tokens[last - 1].end, cat))
    covers = []
    for span in doc.spans:
        toks = [t for s in sents for t in s.tokens if t.start < span.end and t.end > span.start]
        covers.append((toks[0].start, toks[-1].end, span.category.value))
    assert got == covers
    for s in sents:
        assert is_valid_bio(s.labels)


def test_sentences_to_document_roundtrip():
    doc = generate_synthetic(5, 1)[0]
    sents = labeled_sentences(doc)
    back = labeled_sentences(parse_document(write_document(sentences_to_document("x", sents)), "x"))
    assert [s.texts for s in back] == [s.texts for s in sents]
    assert [s.labels for s in back] == [s.labels for s in sents]
