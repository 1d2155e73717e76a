import pytest
from hypothesis import given
from hypothesis import strategies as st

from deidrep.corpus import LABELS
from deidrep.metrics import (
    MetricError, binary_hipaa_f1, category_report, default_hipaa_map, load_hipaa_map, parse_hipaa_map,
)


def test_perfect_prediction():
    gold = [["B-PATIENT"] * 10 + ["O"] * 3 for _ in range(5)]
    r = binary_hipaa_f1(gold, gold)
    assert (r.tp, r.fp, r.fn) == (50, 0, 0)
    assert r.precision == r.recall == r.f1 == 1.0


def test_hand_counted_confusion():
    # tp=3, fp=1, fn=2
    gold = [["B-DATE", "B-AGE", "B-ID", "B-CITY", "B-STATE", "O", "O"]]
    pred = [["B-DATE", "B-AGE", "B-ID", "O", "O", "B-PHONE", "O"]]
    r = binary_hipaa_f1(gold, pred)
    assert (r.tp, r.fp, r.fn) == (3, 1, 2)
    assert r.precision == pytest.approx(0.75)
    assert r.recall == pytest.approx(0.6)
    assert r.f1 == pytest.approx(2 / 3)


def test_all_outside_prediction_scores_zero():
    r = binary_hipaa_f1([["B-DOCTOR", "I-DOCTOR"]], [["O", "O"]])
    assert r.precision == 0.0 and r.recall == 0.0 and r.f1 == 0.0


def test_empty_inputs():
    r = binary_hipaa_f1([], [])
    assert r.f1 == 0.0
    assert category_report([], []).micro.f1 == 0.0


def test_category_confusion_counts_for_binary_only():
    gold, pred = [["B-DOCTOR"]], [["B-PATIENT"]]
    assert binary_hipaa_f1(gold, pred).tp == 1
    rep = category_report(gold, pred)
    assert rep.per_category["DOCTOR"].fn == 1
    assert rep.per_category["PATIENT"].fp == 1
    assert rep.micro.tp == 0


def test_bio_prefix_is_ignored():
    assert binary_hipaa_f1([["B-CITY", "I-CITY"]], [["I-CITY", "B-CITY"]]).f1 == 1.0
    assert category_report([["B-CITY"]], [["I-CITY"]]).micro.f1 == 1.0


def test_single_category_equals_binary():
    gold = [["B-AGE", "O", "B-AGE", "O"]]
    pred = [["B-AGE", "B-AGE", "O", "O"]]
    assert category_report(gold, pred).per_category["AGE"].f1 == pytest.approx(binary_hipaa_f1(gold, pred).f1)


def test_length_mismatch_reports_position():
    with pytest.raises(MetricError, match="sentence 1"):
        binary_hipaa_f1([["O"], ["O", "O"]], [["O"], ["O"]])
    with pytest.raises(MetricError):
        binary_hipaa_f1([["O"]], [])


def test_hipaa_map_excludes_category():
    hmap = {**default_hipaa_map(), "PROFESSION": False}
    r = binary_hipaa_f1([["B-PROFESSION", "B-AGE"]], [["O", "B-AGE"]], hmap)
    assert (r.tp, r.fn) == (1, 0)


def test_hipaa_map_parsing(tmp_path):
    assert all(default_hipaa_map().values())
    p = tmp_path / "m.cfg"
    p.write_text("[hipaa]\nprofession = no\n")
    assert load_hipaa_map(p) == {"PROFESSION": False}
    with pytest.raises(MetricError):
        parse_hipaa_map("[hipaa]\nunicorn = yes\n")
    with pytest.raises(MetricError):
        parse_hipaa_map("[other]\n")


labels = st.sampled_from(LABELS)
streams = st.lists(st.tuples(labels, labels), min_size=0, max_size=30)


@given(st.lists(streams, min_size=1, max_size=5))
def test_binary_dominates_exact_category(sents):
    gold = [[g for g, _ in s] for s in sents]
    pred = [[p for _, p in s] for s in sents]
    assert binary_hipaa_f1(gold, pred).f1 >= category_report(gold, pred).micro.f1 - 1e-12


@given(st.lists(streams, min_size=1, max_size=5), st.randoms())
def test_invariant_to_sentence_order(sents, rnd):
    gold = [[g for g, _ in s] for s in sents]
    pred = [[p for _, p in s] for s in sents]
    order = list(range(len(sents)))
    rnd.shuffle(order)
    a = binary_hipaa_f1(gold, pred)
    b = binary_hipaa_f1([gold[i] for i in order], [pred[i] for i in order])
    assert (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn)
