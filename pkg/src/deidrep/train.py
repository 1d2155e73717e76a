"""Training loops: plain tagger, conjoint adversarial (gradient reversal), three-phase."""
from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from dataclasses import asdict, dataclass, field

import numpy as np

from .autonn import Nadam, NadamConfig
from .corpus import Document, Sentence, labeled_sentences
from .embed import EmbeddingStore, lookup_many
from .metrics import EvalReport, binary_hipaa_f1
from .models import (
    L_RANDOM, AdversaryModel, Batch, IdentityRepresentation, RepresentationModel, TaggerModel,
    adversary_loss, featurize, make_batch, pad,
)
from .pseudo import AdversaryPair, make_pairs

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, msg: str, records: list["LossRecord"]):
        super().__init__(msg)
        self.records = records


class AdversaryBroken(TrainingError):
    pass


class FreezeViolation(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    layers: int = 2
    units: int = 128
    dropout_in: float = 0.1
    dropout_var: float = 0.25
    dropout_post: float = 0.5
    clip_norm: float = 1.0
    lr: float = 2e-3
    lam: float = 1.0
    neighbors: int = 50
    repr_dim: int = 50
    repr_units: int = 64
    adv_units: int = 32
    init_sigma: float = 0.1
    seed: int = 0
    val_fraction: float = 0.1
    patience_tagger: int = 5
    patience_p1: int = 5
    patience_p2: int = 5
    patience_p3: int = 10
    patience_dann: int = 5
    max_epochs_tagger: int = 40
    max_epochs_p1: int = 30
    max_epochs_p2: int = 30
    max_epochs_p3: int = 40
    max_epochs_dann: int = 30
    p2_min_accuracy: float = 0.55
    # validation pairs are drawn this many times over the validation sentences
    val_pair_rounds: int = 4
    # training pairs per epoch: this many independent draws over the training sentences
    pair_rounds: int = 8
    grl_scale: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.pair_rounds < 1 or self.val_pair_rounds < 1:
            raise ValueError("pair rounds must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossRecord:
    """Validation losses at the end of one epoch of one phase."""
    epoch: int
    phase: str
    l_deid: float = math.nan
    l_adv: float = math.nan
    l_repr: float = math.nan
    lam: float = math.nan
    adv_accuracy: float = math.nan
    train_loss: float = math.nan

    def combined_residual(self) -> float:
        return abs(self.l_repr - (self.l_deid + self.lam * abs(self.l_adv - L_RANDOM)))

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class FreezeAudit:
    phase: str
    epoch: int
    component: str
    before: str
    after: str

    @property
    def ok(self) -> bool:
        return self.before == self.after


def combined_loss(l_deid: float, l_adv: float, lam: float) -> float:
    return l_deid + lam * abs(l_adv - L_RANDOM)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ---------------------------------------------------------------- data plumbing

def split_documents(documents: list[Document], test_fraction: float = 0.2,
                    seed: int = 0) -> tuple[list[Sentence], list[Sentence]]:
    """Document-level train/test split; returns labeled sentences for each side."""
    if len(documents) < 2:
        raise TrainingError("need at least two documents to split")
    order = np.random.default_rng(derive_seed(seed, 11)).permutation(len(documents))
    n_test = max(1, int(round(test_fraction * len(documents))))
    test_ids = set(int(i) for i in order[:n_test])
    train, test = [], []
    for i, doc in enumerate(documents):
        (test if i in test_ids else train).extend(labeled_sentences(doc))
    return train, test


def split_validation(sentences: list[Sentence], fraction: float,
                     seed: int) -> tuple[list[Sentence], list[Sentence]]:
    order = np.random.default_rng(derive_seed(seed, 12)).permutation(len(sentences))
    n_val = max(1, int(round(fraction * len(sentences))))
    if n_val >= len(sentences):
        raise TrainingError("too few sentences for a validation split")
    val = [sentences[int(i)] for i in sorted(order[:n_val])]
    train = [sentences[int(i)] for i in sorted(order[n_val:])]
    return train, val


class SentenceData:
    def __init__(self, sentences: list[Sentence], store: EmbeddingStore, dtype=np.float32):
        if not sentences:
            raise TrainingError("empty sentence split")
        self.sentences = sentences
        self.feats = featurize(sentences, store, dtype)

    def __len__(self) -> int:
        return len(self.feats)

    def batches(self, size: int, rng: np.random.Generator | None = None) -> Iterator[Batch]:
        idx = rng.permutation(len(self.feats)) if rng is not None else np.arange(len(self.feats))
        for i in range(0, len(idx), size):
            yield make_batch([self.feats[j] for j in idx[i:i + size]])


@dataclass
class PairBatch:
    emb_a: np.ndarray
    emb_b: np.ndarray
    lengths: np.ndarray
    target: np.ndarray


def pair_batches(pairs: list[AdversaryPair], store: EmbeddingStore, size: int,
                 rng: np.random.Generator | None = None, dtype=np.float32) -> list[PairBatch]:
    idx = rng.permutation(len(pairs)) if rng is not None else np.arange(len(pairs))
    out = []
    for i in range(0, len(idx), size):
        chunk = [pairs[j] for j in idx[i:i + size]]
        ea, lengths = pad([lookup_many(store, list(p.sentence_a)).astype(dtype) for p in chunk])
        eb, _ = pad([lookup_many(store, list(p.sentence_b)).astype(dtype) for p in chunk])
        out.append(PairBatch(ea, eb, lengths, np.array([p.target for p in chunk])))
    return out


# ---------------------------------------------------------------- shared machinery

class _Rig:
    """Representation, tagger and adversary plus one optimizer per component."""

    def __init__(self, config: TrainConfig, store: EmbeddingStore, representation,
                 tagger: TaggerModel | None, adversary: AdversaryModel | None):
        self.cfg = config
        self.store = store
        self.rep = representation
        self.tagger = tagger
        self.adv = adversary
        opt = NadamConfig(lr=config.lr, clip_norm=config.clip_norm)
        self.opt = {name: Nadam(m.params, opt) for name, m in self.models.items() if len(m.params)}

    @property
    def models(self) -> dict:
        out = {"representation": self.rep}
        if self.tagger is not None:
            out["tagger"] = self.tagger
        if self.adv is not None:
            out["adversary"] = self.adv
        return out

    def zero(self):
        for m in self.models.values():
            m.params.zero_grad()

    def step(self, *names: str):
        for n in names:
            if n in self.opt:
                self.opt[n].step()

    def checksum(self, *names: str) -> str:
        return "|".join(self.models[n].params.checksum() for n in names)

    def snapshot(self) -> dict:
        return {n: m.params.state() for n, m in self.models.items()}

    def restore(self, snap: dict):
        for n, m in self.models.items():
            m.params.load_state(snap[n])

    # -- losses
    def deid(self, b: Batch, rng, train_repr: bool, training: bool = True, backward: bool = True):
        r, rc = self.rep.forward(b.emb, b.lengths, rng)
        feats = self.tagger.inputs(r, b.casing)
        loss, cache = self.tagger.loss(feats, b.labels, b.lengths, training, rng)
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite de-identification loss")
        if backward:
            dx = self.tagger.loss_backward(cache)
            if train_repr:
                self.rep.backward(dx[..., :self.rep.d], rc)
        return loss

    def adv_forward(self, pb: PairBatch, rng):
        ra, ca = self.rep.forward(pb.emb_a, pb.lengths, rng)
        rb, cb = self.rep.forward(pb.emb_b, pb.lengths, rng)
        score, ac = self.adv.forward(ra, pb.emb_b, rb, pb.lengths)
        return score, (ca, cb, ac)

    def adv_step(self, pb: PairBatch, rng, repr_scale: float = 0.0, backward: bool = True):
        score, (ca, cb, ac) = self.adv_forward(pb, rng)
        loss, ds = adversary_loss(score, pb.target)
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite adversary loss")
        if backward:
            dra, drb = self.adv.backward(ds, ac)
            if repr_scale:
                self.rep.backward(repr_scale * dra, ca)
                if drb is not None:
                    self.rep.backward(repr_scale * drb, cb)
        acc = float(np.mean((score > 0.5) == (pb.target > 0.5)))
        return loss, acc

    def adv_penalty(self, pb: PairBatch, rng, lam: float) -> float:
        """Backpropagate ``lam * |l_adv - l_random|`` into the representation only."""
        score, (ca, cb, ac) = self.adv_forward(pb, rng)
        loss, ds = adversary_loss(score, pb.target)
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite adversary loss")
        scale = lam * float(np.sign(loss - L_RANDOM))
        if scale:
            dra, drb = self.adv.backward(ds, ac)
            self.rep.backward(scale * dra, ca)
            if drb is not None:
                self.rep.backward(scale * drb, cb)
        return loss

    def eval_deid(self, data: SentenceData, seed: int) -> float:
        rng = np.random.default_rng(seed)
        tot = 0.0
        for b in data.batches(self.cfg.batch_size):
            tot += self.deid(b, rng, False, training=False, backward=False) * len(b.lengths)
        return tot / len(data)

    def eval_adv(self, batches: list[PairBatch], seed: int) -> tuple[float, float]:
        rng = np.random.default_rng(seed)
        scores, targets = [], []
        for pb in batches:
            s, _ = self.adv_forward(pb, rng)
            scores.append(s)
            targets.append(pb.target)
        s, t = np.concatenate(scores), np.concatenate(targets)
        loss, _ = adversary_loss(s, t)
        return loss, float(np.mean((s > 0.5) == (t > 0.5)))

    def pairs_for(self, sentences: list[Sentence], *seed_parts: int, shuffle: bool = True,
                  rounds: int = 1) -> list[PairBatch]:
        """Pairs from ``rounds`` independent draws over ``sentences``."""
        seed = derive_seed(self.cfg.seed, *seed_parts)
        pairs = []
        for r in range(rounds):
            pairs.extend(make_pairs(sentences, self.store, self.cfg.neighbors, derive_seed(seed, r)))
        rng = np.random.default_rng(seed) if shuffle else None
        return pair_batches(pairs, self.store, self.cfg.batch_size, rng)


class _Stopper:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.snapshot = None
        self.bad = 0

    def update(self, value: float, epoch: int, snapshot) -> bool:
        """Record ``value``; returns True when patience is exhausted."""
        if value < self.best:
            self.best, self.best_epoch, self.bad = value, epoch, 0
            self.snapshot = snapshot()
        else:
            self.bad += 1
        return self.bad >= self.patience


def _mean(xs: list[float]) -> float:
    return float(np.mean(xs)) if xs else math.nan


def _joint_epoch(batches: list[Batch], pairs: list[PairBatch]) -> Iterator[tuple[Batch, PairBatch]]:
    """One epoch over both streams: every sentence batch and every pair batch
    is visited at least once, the shorter stream cycling."""
    for i in range(max(len(batches), len(pairs))):
        yield batches[i % len(batches)], pairs[i % len(pairs)]


def _new_tagger(cfg: TrainConfig, d_in: int) -> TaggerModel:
    return TaggerModel(d_in, cfg.layers, cfg.units, cfg.dropout_in, cfg.dropout_var,
                       cfg.dropout_post, seed=derive_seed(cfg.seed, 1))


def _new_representation(cfg: TrainConfig, d_emb: int) -> RepresentationModel:
    return RepresentationModel(d_emb, cfg.repr_dim, cfg.repr_units, cfg.init_sigma,
                               seed=derive_seed(cfg.seed, 2))


def _new_adversary(cfg: TrainConfig, d: int, d_emb: int, seed_part: int = 3) -> AdversaryModel:
    return AdversaryModel(d, d_emb, cfg.adv_units, seed=derive_seed(cfg.seed, seed_part))


def _splits(train: list[Sentence], val: list[Sentence] | None, cfg: TrainConfig):
    if val is None:
        train, val = split_validation(train, cfg.val_fraction, cfg.seed)
    if set(map(id, train)) & set(map(id, val)):
        raise TrainingError("train and validation splits overlap")
    return train, val


# ---------------------------------------------------------------- tagger

@dataclass
class TaggerResult:
    tagger: TaggerModel
    representation: object
    records: list[LossRecord]
    best_epoch: int


def train_tagger(train: list[Sentence], store: EmbeddingStore, config: TrainConfig,
                 val: list[Sentence] | None = None, representation=None) -> TaggerResult:
    """Mini-batch training on ``l_deid`` with early stopping on validation loss.

    ``representation`` (frozen) feeds the tagger instead of raw embeddings.
    """
    cfg = config
    train, val = _splits(train, val, cfg)
    rep = representation if representation is not None else IdentityRepresentation(store.d_emb)
    rig = _Rig(cfg, store, rep, _new_tagger(cfg, rep.d), None)
    rig.opt.pop("representation", None)
    tr, va = SentenceData(train, store), SentenceData(val, store)
    frozen = rep.params.checksum()
    stop = _Stopper(cfg.patience_tagger)
    records = []
    for epoch in range(cfg.max_epochs_tagger):
        rng = np.random.default_rng(derive_seed(cfg.seed, 20, epoch))
        losses = []
        for b in tr.batches(cfg.batch_size, rng):
            rig.zero()
            losses.append(rig.deid(b, rng, train_repr=False))
            rig.step("tagger")
        v = rig.eval_deid(va, derive_seed(cfg.seed, 21))
        records.append(LossRecord(epoch, "tagger", l_deid=v, train_loss=_mean(losses)))
        log.info("tagger epoch %d train %.4f val %.4f", epoch, records[-1].train_loss, v)
        if stop.update(v, epoch, lambda: rig.tagger.params.state()):
            break
    rig.tagger.params.load_state(stop.snapshot)
    if rep.params.checksum() != frozen:
        raise FreezeViolation("representation changed during tagger training")
    return TaggerResult(rig.tagger, rep, records, stop.best_epoch)


def predict_labels(tagger: TaggerModel, sentences: list[Sentence], store: EmbeddingStore,
                   representation=None, seed: int = 0, batch_size: int = 64) -> list[list[str]]:
    rep = representation if representation is not None else IdentityRepresentation(store.d_emb)
    if not sentences:
        return []
    rng = np.random.default_rng(seed)
    data = SentenceData(sentences, store)
    out = []
    for b in data.batches(batch_size):
        r, _ = rep.forward(b.emb, b.lengths, rng)
        paths = tagger.predict(tagger.inputs(r, b.casing), b.lengths)
        out.extend([tagger.labels[i] for i in p] for p in paths)
    return out


def evaluate_tagger(tagger: TaggerModel, sentences: list[Sentence], store: EmbeddingStore,
                    representation=None, seed: int = 0, hipaa_map=None) -> EvalReport:
    pred = predict_labels(tagger, sentences, store, representation, seed)
    return binary_hipaa_f1([s.labels for s in sentences], pred, hipaa_map)


# ---------------------------------------------------------------- adversarial procedures

@dataclass
class PrivateResult:
    representation: RepresentationModel
    tagger: TaggerModel
    adversary: AdversaryModel
    records: list[LossRecord]
    audits: list[FreezeAudit] = field(default_factory=list)
    p2_accuracy: float = math.nan
    best_epoch: int = -1


def _guard(records, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except FloatingPointError as exc:
        raise TrainingDiverged(str(exc), records) from exc


def dann_train(train: list[Sentence], store: EmbeddingStore, config: TrainConfig,
               val: list[Sentence] | None = None) -> PrivateResult:
    """Conjoint training on ``l_deid + l_adv``.

    The adversary's gradient reaches the representation through a reversal of
    scale ``grl_scale``; the adversary itself descends ``l_adv`` normally.
    Early stopping on validation ``l_deid``.
    """
    cfg = config
    train, val = _splits(train, val, cfg)
    rep = _new_representation(cfg, store.d_emb)
    rig = _Rig(cfg, store, rep, _new_tagger(cfg, rep.d), _new_adversary(cfg, rep.d, store.d_emb))
    tr, va = SentenceData(train, store), SentenceData(val, store)
    val_pairs = rig.pairs_for(val, 39, shuffle=False, rounds=cfg.val_pair_rounds)
    stop = _Stopper(cfg.patience_dann)
    records: list[LossRecord] = []
    for epoch in range(cfg.max_epochs_dann):
        rng = np.random.default_rng(derive_seed(cfg.seed, 30, epoch))
        pbs = rig.pairs_for(train, 31, epoch, rounds=cfg.pair_rounds)
        losses = []
        for b, pb in _joint_epoch(list(tr.batches(cfg.batch_size, rng)), pbs):
            rig.zero()
            ld = _guard(records, rig.deid, b, rng, train_repr=True)
            la, _ = _guard(records, rig.adv_step, pb, rng, repr_scale=-cfg.grl_scale)
            losses.append(ld + la)
            rig.step("representation", "tagger", "adversary")
        vd = rig.eval_deid(va, derive_seed(cfg.seed, 32))
        vl, vacc = rig.eval_adv(val_pairs, derive_seed(cfg.seed, 33))
        records.append(LossRecord(epoch, "dann", vd, vl, vd + vl, adv_accuracy=vacc,
                                  train_loss=_mean(losses)))
        log.info("dann epoch %d deid %.4f adv %.4f acc %.3f", epoch, vd, vl, vacc)
        if stop.update(vd, epoch, rig.snapshot):
            break
    rig.restore(stop.snapshot)
    return PrivateResult(rep, rig.tagger, rig.adv, records, best_epoch=stop.best_epoch)


def three_phase_train(train: list[Sentence], store: EmbeddingStore, config: TrainConfig,
                      val: list[Sentence] | None = None) -> PrivateResult:
    """P1 representation+tagger on ``l_deid``; P2 adversary on a frozen representation;
    P3 alternates (a) tagger+adversary on the frozen representation and
    (b) representation on ``l_deid + lam * |l_adv - l_random|`` with the
    others frozen. P3 stops on the validation loss from (b)."""
    cfg = config
    train, val = _splits(train, val, cfg)
    rep = _new_representation(cfg, store.d_emb)
    rig = _Rig(cfg, store, rep, _new_tagger(cfg, rep.d), _new_adversary(cfg, rep.d, store.d_emb))
    tr, va = SentenceData(train, store), SentenceData(val, store)
    val_pairs = rig.pairs_for(val, 49, shuffle=False, rounds=cfg.val_pair_rounds)
    vseed_d, vseed_a = derive_seed(cfg.seed, 47), derive_seed(cfg.seed, 48)
    records: list[LossRecord] = []
    audits: list[FreezeAudit] = []

    def audited(phase, epoch, frozen, fn):
        before = {n: rig.models[n].params.checksum() for n in frozen}
        out = fn()
        for n in frozen:
            a = FreezeAudit(phase, epoch, n, before[n], rig.models[n].params.checksum())
            audits.append(a)
            if not a.ok:
                raise FreezeViolation(f"{n} changed during {phase} epoch {epoch}")
        return out

    # P1
    stop = _Stopper(cfg.patience_p1)
    for epoch in range(cfg.max_epochs_p1):
        rng = np.random.default_rng(derive_seed(cfg.seed, 40, epoch))

        def p1():
            losses = []
            for b in tr.batches(cfg.batch_size, rng):
                rig.zero()
                losses.append(_guard(records, rig.deid, b, rng, train_repr=True))
                rig.step("representation", "tagger")
            return losses

        losses = audited("P1", epoch, ["adversary"], p1)
        vd = rig.eval_deid(va, vseed_d)
        records.append(LossRecord(epoch, "P1", l_deid=vd, train_loss=_mean(losses)))
        log.info("P1 epoch %d val deid %.4f", epoch, vd)
        if stop.update(vd, epoch, rig.snapshot):
            break
    rig.restore(stop.snapshot)

    # P2
    stop = _Stopper(cfg.patience_p2)
    p2_acc: dict[int, float] = {}
    for epoch in range(cfg.max_epochs_p2):
        rng = np.random.default_rng(derive_seed(cfg.seed, 41, epoch))
        pbs = rig.pairs_for(train, 42, epoch, rounds=cfg.pair_rounds)

        def p2():
            losses = []
            for pb in pbs:
                rig.zero()
                losses.append(_guard(records, rig.adv_step, pb, rng)[0])
                rig.step("adversary")
            return losses

        losses = audited("P2", epoch, ["representation", "tagger"], p2)
        vl, vacc = rig.eval_adv(val_pairs, vseed_a)
        p2_acc[epoch] = vacc
        records.append(LossRecord(epoch, "P2", l_adv=vl, adv_accuracy=vacc, train_loss=_mean(losses)))
        log.info("P2 epoch %d val adv %.4f acc %.3f", epoch, vl, vacc)
        if stop.update(vl, epoch, rig.snapshot):
            break
    rig.restore(stop.snapshot)
    best_acc = p2_acc[stop.best_epoch]
    if not best_acc > cfg.p2_min_accuracy:
        raise AdversaryBroken(f"adversary validation accuracy {best_acc:.3f} after P2 does not beat"
                              f" {cfg.p2_min_accuracy}; check pair generation and representation")

    # P3
    stop = _Stopper(cfg.patience_p3)
    for epoch in range(cfg.max_epochs_p3):
        rng = np.random.default_rng(derive_seed(cfg.seed, 43, epoch))
        pbs = rig.pairs_for(train, 44, epoch, rounds=cfg.pair_rounds)

        def p3a():
            losses = []
            for b, pb in _joint_epoch(list(tr.batches(cfg.batch_size, rng)), pbs):
                rig.zero()
                ld = _guard(records, rig.deid, b, rng, train_repr=False)
                la, _ = _guard(records, rig.adv_step, pb, rng)
                rig.step("tagger", "adversary")
                losses.append(ld + la)
            return losses

        losses = audited("P3a", epoch, ["representation"], p3a)
        vd = rig.eval_deid(va, vseed_d)
        vl, vacc = rig.eval_adv(val_pairs, vseed_a)
        records.append(LossRecord(epoch, "P3a", vd, vl, combined_loss(vd, vl, cfg.lam), cfg.lam,
                                  vacc, _mean(losses)))

        pbs = rig.pairs_for(train, 45, epoch, rounds=cfg.pair_rounds)

        def p3b():
            losses = []
            for b, pb in _joint_epoch(list(tr.batches(cfg.batch_size, rng)), pbs):
                rig.zero()
                ld = _guard(records, rig.deid, b, rng, train_repr=True)
                la = _guard(records, rig.adv_penalty, pb, rng, cfg.lam)
                rig.step("representation")
                losses.append(combined_loss(ld, la, cfg.lam))
            return losses

        losses = audited("P3b", epoch, ["tagger", "adversary"], p3b)
        vd = rig.eval_deid(va, vseed_d)
        vl, vacc = rig.eval_adv(val_pairs, vseed_a)
        vr = combined_loss(vd, vl, cfg.lam)
        records.append(LossRecord(epoch, "P3b", vd, vl, vr, cfg.lam, vacc, _mean(losses)))
        log.info("P3 epoch %d val deid %.4f adv %.4f repr %.4f acc %.3f sigma %.3f/%.3f", epoch, vd, vl,
                 vr, vacc, float(rep.noise_in.sigma.mean()), float(rep.noise_out.sigma.mean()))
        if stop.update(vr, epoch, rig.snapshot):
            break
    rig.restore(stop.snapshot)
    return PrivateResult(rep, rig.tagger, rig.adv, records, audits, best_acc, stop.best_epoch)
