import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deidrep.autonn import Nadam, NadamConfig
from deidrep.corpus import generate_synthetic, labeled_sentences, toy_embeddings
from deidrep.embed import EmbeddingStore
from deidrep.models import L_RANDOM, AdversaryModel, RepresentationModel
from deidrep.train import (
    AdversaryBroken, LossRecord, TrainConfig, TrainingDiverged, TrainingError, _guard, _Rig, combined_loss,
    dann_train, derive_seed, evaluate_tagger, pair_batches, split_documents, split_validation, three_phase_train,
    train_tagger,
)
from deidrep.pseudo import make_pairs

TINY = dict(units=8, repr_units=4, adv_units=4, repr_dim=6, batch_size=8, neighbors=10, p2_min_accuracy=-1.0,
            max_epochs_tagger=2, max_epochs_p1=2, max_epochs_p2=2, max_epochs_p3=2, max_epochs_dann=2,
            pair_rounds=1, val_pair_rounds=1)


@pytest.fixture(scope="module")
def world():
    tokens, m = toy_embeddings(dim=12, background_size=100)
    store = EmbeddingStore.from_tokens(tokens, m)
    docs = generate_synthetic(0, 6, background_size=100)
    train, test = split_documents(docs, 0.2, seed=0)
    return store, train, test


def test_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.batch_size, c.layers, c.units, c.clip_norm, c.lam) == (32, 2, 128, 1.0, 1.0)
    assert (c.dropout_in, c.dropout_var, c.dropout_post) == (0.1, 0.25, 0.5)
    assert (c.patience_p1, c.patience_p2, c.patience_p3) == (5, 5, 10)
    for bad in ({"lam": -1}, {"batch_size": 0}, {"val_fraction": 1.0}, {"pair_rounds": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


@given(st.floats(0, 50), st.floats(0, 5), st.floats(0, 10))
def test_combined_loss_bookkeeping(ld, la, lam):
    rec = LossRecord(0, "P3b", ld, la, combined_loss(ld, la, lam), lam)
    assert rec.combined_residual() <= 1e-9
    assert combined_loss(ld, la, 0.0) == ld
    assert combined_loss(ld, L_RANDOM, lam) == ld


def test_derive_seed_stable():
    assert derive_seed(1, 2) == derive_seed(1, 2) != derive_seed(2, 1)


def test_document_split(world):
    docs = generate_synthetic(3, 10, background_size=100)
    tr, te = split_documents(docs, 0.2, seed=1)
    ids_tr, ids_te = {s.doc_id for s in tr}, {s.doc_id for s in te}
    assert not ids_tr & ids_te and len(ids_te) == 2
    assert [s.texts for s in split_documents(docs, 0.2, seed=1)[1]] == [s.texts for s in te]
    with pytest.raises(TrainingError):
        split_documents(docs[:1])


def test_validation_split(world):
    _, train, _ = world
    tr, va = split_validation(train, 0.1, seed=0)
    assert len(va) == max(1, round(0.1 * len(train))) and len(tr) + len(va) == len(train)
    assert not {id(s) for s in tr} & {id(s) for s in va}
    with pytest.raises(TrainingError):
        split_validation(train[:1], 0.5, seed=0)


def test_tagger_empty_split(world):
    store, _, _ = world
    with pytest.raises(TrainingError):
        train_tagger([], store, TrainConfig(**TINY))


def test_tagger_overfits_ten_sentences(world):
    store, train, _ = world
    phi = [s for s in train if s.phi_positions]
    sents, val = phi[:10], phi[10:12]
    cfg = TrainConfig(units=32, max_epochs_tagger=200, patience_tagger=200, dropout_in=0, dropout_var=0,
                      dropout_post=0, batch_size=10, lr=1e-2)
    res = train_tagger(sents, store, cfg, val=val)
    assert evaluate_tagger(res.tagger, sents, store).f1 == 1.0


def test_tagger_restores_best_epoch(world):
    store, train, _ = world
    res = train_tagger(train, store, TrainConfig(**{**TINY, "max_epochs_tagger": 4}))
    vals = [r.l_deid for r in res.records]
    assert res.records[res.best_epoch].l_deid == min(vals)


def _rig(world, seed=0):
    store, train, _ = world
    cfg = TrainConfig(**TINY, seed=seed)
    rep = RepresentationModel(store.d_emb, 6, units=4, seed=seed)
    adv = AdversaryModel(6, store.d_emb, units=4, seed=seed)
    pbs = pair_batches(make_pairs(train, store, 10, seed=1), store, 8)
    return _Rig(cfg, store, rep, None, adv), pbs[0]


def test_gradient_reversal_negates_update(world):
    deltas = []
    for scale in (1.0, -1.0):
        rig, pb = _rig(world)
        before = rig.rep.params.state()
        rig.zero()
        rig.adv_step(pb, np.random.default_rng(3), repr_scale=scale)
        rig.step("representation")
        deltas.append({k: p.value - before[k] for k, p in zip(rig.rep.params.names(), rig.rep.params)})
    for k in deltas[0]:
        assert np.any(deltas[0][k] != 0)
        assert np.allclose(deltas[0][k], -deltas[1][k], atol=1e-7)


def test_adversary_descends_without_reversal(world):
    rig, pb = _rig(world)
    rng_seed = 4
    loss0, _ = rig.adv_step(pb, np.random.default_rng(rng_seed), backward=False)
    rig.opt["adversary"] = Nadam(rig.adv.params, NadamConfig(lr=1e-2))
    for _ in range(5):
        rig.zero()
        rig.adv_step(pb, np.random.default_rng(rng_seed), repr_scale=-1.0)
        rig.step("adversary")
    loss1, _ = rig.adv_step(pb, np.random.default_rng(rng_seed), backward=False)
    assert loss1 < loss0


def test_penalty_zero_at_chance(world):
    rig, pb = _rig(world)
    for p in rig.adv.params:
        p.value[...] = 0
    rig.zero()
    loss = rig.adv_penalty(pb, np.random.default_rng(0), lam=1.0)
    assert loss == pytest.approx(L_RANDOM, abs=1e-12)
    assert rig.rep.params.grad_norm() == 0.0


def test_divergence_is_reported():
    recs = [LossRecord(0, "P1", 1.0)]

    def boom():
        raise FloatingPointError("non-finite adversary loss")

    with pytest.raises(TrainingDiverged) as ei:
        _guard(recs, boom)
    assert ei.value.records == recs


@pytest.fixture(scope="module")
def threephase(world):
    store, train, _ = world
    return three_phase_train(train, store, TrainConfig(**TINY))


def test_three_phase_records_and_audits(threephase):
    res = threephase
    phases = {r.phase for r in res.records}
    assert phases == {"P1", "P2", "P3a", "P3b"}
    for r in res.records:
        if r.phase == "P3b":
            assert r.combined_residual() <= 1e-6
    audits = res.audits
    assert audits and all(a.ok for a in audits)
    frozen = {(a.phase, a.component) for a in audits}
    assert frozen == {("P1", "adversary"), ("P2", "representation"), ("P2", "tagger"),
                      ("P3a", "representation"), ("P3b", "tagger"), ("P3b", "adversary")}


def test_three_phase_stops_on_best_p3b(threephase):
    p3b = [r for r in threephase.records if r.phase == "P3b"]
    assert p3b[threephase.best_epoch].l_repr == min(r.l_repr for r in p3b)


def test_lambda_zero_is_pure_deid(world):
    store, train, _ = world
    res = three_phase_train(train, store, TrainConfig(**{**TINY, "lam": 0.0}))
    for r in res.records:
        if r.phase == "P3b":
            assert r.l_repr == r.l_deid


def test_three_phase_deterministic(world, threephase):
    store, train, _ = world
    again = three_phase_train(train, store, TrainConfig(**TINY))
    assert [r.as_dict() for r in again.records] == [r.as_dict() for r in threephase.records]
    for a, b in ((again.representation, threephase.representation), (again.tagger, threephase.tagger),
                 (again.adversary, threephase.adversary)):
        assert a.params.checksum() == b.params.checksum()


def test_broken_adversary_aborts(world):
    store, train, _ = world
    with pytest.raises(AdversaryBroken, match="does not beat"):
        three_phase_train(train, store, TrainConfig(**{**TINY, "p2_min_accuracy": 1.0}))


def test_dann_stream(world):
    store, train, _ = world
    res = dann_train(train, store, TrainConfig(**TINY))
    assert res.records and all(r.phase == "dann" for r in res.records)
    for r in res.records:
        assert math.isfinite(r.l_deid) and math.isfinite(r.l_adv)
    assert res.records[res.best_epoch].l_deid == min(r.l_deid for r in res.records)
    again = dann_train(train, store, TrainConfig(**TINY))
    assert again.representation.params.checksum() == res.representation.params.checksum()


def test_config_roundtrip():
    c = TrainConfig(seed=3, lam=0.5)
    assert TrainConfig(**c.as_dict()) == c
    assert dataclasses.replace(c, seed=4).seed == 4
