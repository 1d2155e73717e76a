"""Attacks against frozen representations.

``continued_adversary_attack`` trains a fresh adversary on a frozen
representation. ``lookup_probe`` and ``neighborhood_invariance_report``
measure how well repeated transforms hide which neighbor was used.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autonn import Nadam, NadamConfig
from .corpus import Sentence
from .embed import EmbeddingStore, lookup_many, neighbor_indices
from .models import AdversaryModel, adversary_loss
from .pseudo import PairLabel, make_pairs
from .train import PairBatch, derive_seed, pair_batches

log = logging.getLogger(__name__)

CHANCE = 0.5
_HEADS = {"a1": ("a1",), "a2": ("a2",), "both": ("a1", "a2")}


class AttackError(RuntimeError):
    pass


@dataclass
class AttackReport:
    kind: str
    epochs: int
    train_accuracy: float
    test_accuracy: float
    chance: float = CHANCE
    history: list[tuple[float, float]] = field(default_factory=list)

    @property
    def margin(self) -> float:
        return self.test_accuracy - self.chance

    def as_dict(self) -> dict:
        d = asdict(self)
        d["margin"] = self.margin
        return d

    def to_text(self) -> str:
        keys = ["kind", "epochs", "train_accuracy", "test_accuracy", "chance", "margin"]
        d = self.as_dict()
        return "\n".join(f"{k}={d[k]}" for k in keys) + "\n"


def _scores(rep, adv, pb: PairBatch, rng):
    ra, ca = rep.forward(pb.emb_a, pb.lengths, rng)
    rb, cb = rep.forward(pb.emb_b, pb.lengths, rng)
    s, ac = adv.forward(ra, pb.emb_b, rb, pb.lengths)
    return s, ac


def _accuracy(rep, adv, batches: list[PairBatch], rng) -> float:
    hits = n = 0
    for pb in batches:
        s, _ = _scores(rep, adv, pb, rng)
        hits += int(np.sum((s > 0.5) == (pb.target > 0.5)))
        n += len(s)
    return hits / n


def _shuffled(pairs, rng):
    labels = [p.label for p in pairs]
    perm = rng.permutation(len(labels))
    return [type(p)(p.kind, p.sentence_a, p.sentence_b, labels[int(j)], p.position)
            for p, j in zip(pairs, perm)]


def continued_adversary_attack(representation, train: list[Sentence], test: list[Sentence],
                               store: EmbeddingStore, neighbors: int = 50, extra_epochs: int = 50,
                               seed: int = 0, kind: str = "both", units: int = 32,
                               batch_size: int = 32, lr: float = 2e-3, clip_norm: float = 1.0,
                               shuffle_labels: bool = False, pool: str = "max",
                               rounds: int = 4) -> AttackReport:
    """Train a freshly initialized adversary for ``extra_epochs`` on new pairs each epoch.

    Each epoch draws ``rounds`` independent pair sets over ``train``.

    Accuracy is measured on ``rounds`` pair draws over ``test``. The representation is
    checksummed before and after; any change aborts.
    """
    if kind not in _HEADS:
        raise AttackError(f"unknown attack kind {kind!r}")
    before = representation.params.checksum()
    adv = AdversaryModel(representation.d, store.d_emb, units, _HEADS[kind], seed=derive_seed(seed, 60),
                         pool=pool)
    opt = Nadam(adv.params, NadamConfig(lr=lr, clip_norm=clip_norm))
    test_pairs = [p for r in range(rounds) for p in make_pairs(test, store, neighbors, derive_seed(seed, 61, r))]
    if shuffle_labels:
        test_pairs = _shuffled(test_pairs, np.random.default_rng(derive_seed(seed, 62)))
    test_batches = pair_batches(test_pairs, store, batch_size)
    history = []
    train_acc = math.nan
    for epoch in range(extra_epochs):
        rng = np.random.default_rng(derive_seed(seed, 63, epoch))
        pairs = [p for r in range(rounds)
                 for p in make_pairs(train, store, neighbors, derive_seed(seed, 64, epoch, r))]
        if shuffle_labels:
            pairs = _shuffled(pairs, rng)
        hits = n = 0
        for pb in pair_batches(pairs, store, batch_size, rng):
            adv.params.zero_grad()
            s, ac = _scores(representation, adv, pb, rng)
            loss, ds = adversary_loss(s, pb.target)
            if not math.isfinite(loss):
                raise AttackError(f"non-finite adversary loss at epoch {epoch}")
            adv.backward(ds, ac)
            opt.step()
            hits += int(np.sum((s > 0.5) == (pb.target > 0.5)))
            n += len(s)
        train_acc = hits / n
        test_acc = _accuracy(representation, adv, test_batches, np.random.default_rng(derive_seed(seed, 65)))
        history.append((train_acc, test_acc))
        log.info("attack %s epoch %d train %.3f test %.3f", kind, epoch, train_acc, test_acc)
    if representation.params.checksum() != before:
        raise AttackError("representation parameters changed during the attack")
    test_acc = history[-1][1] if history else math.nan
    return AttackReport(kind, extra_epochs, train_acc, test_acc, history=history)


# ---------------------------------------------------------------- probes

def _pooled(rep, emb: np.ndarray, rng) -> np.ndarray:
    r, _ = rep.forward(emb[None], np.array([len(emb)]), rng)
    return r[0].mean(axis=0)


def _cos_dist(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return 1.0 - float(a @ b) / (na * nb)


def _variant(sentence: Sentence, store: EmbeddingStore, n: int, rng) -> list[str] | None:
    texts = sentence.texts
    pos = [p for p in sentence.phi_positions if store.resolve(texts[p]) is not None]
    if not pos:
        return None
    p = pos[int(rng.integers(len(pos)))]
    order, _ = neighbor_indices(store, texts[p], min(n, len(store)))
    texts[p] = store.tokens[int(order[1 + rng.integers(len(order) - 1)])]
    return texts


def lookup_probe(representation, sentences: list[Sentence], store: EmbeddingStore,
                 repeats: int = 5, seed: int = 0, neighbors: int = 50) -> float:
    """Mean ratio of self-distance to variant-distance over PHI-bearing sentences.

    Self-distance averages pairwise cosine distances among ``repeats``
    transforms of one sentence; variant-distance averages distances between
    those and transforms of one-PHI-token-replaced variants. Sequences are
    mean-pooled over time. About 1 means the variants are indistinguishable
    from repeats; 0 means repeats are identical.
    """
    if repeats < 2:
        raise ValueError("repeats must be >= 2")
    rng = np.random.default_rng(derive_seed(seed, 70))
    ratios = []
    for s in sentences:
        variants = [_variant(s, store, neighbors, rng) for _ in range(repeats)]
        if variants[0] is None:
            continue
        emb = lookup_many(store, s.texts).astype(np.float32)
        own = [_pooled(representation, emb, rng) for _ in range(repeats)]
        other = [_pooled(representation, lookup_many(store, v).astype(np.float32), rng) for v in variants]
        self_d = np.mean([_cos_dist(own[i], own[j]) for i in range(repeats) for j in range(i + 1, repeats)])
        cross_d = np.mean([_cos_dist(a, b) for a in own for b in other])
        ratios.append(self_d / cross_d if cross_d > 0 else 1.0)
    if not ratios:
        raise ValueError("no PHI-bearing sentences to probe")
    return float(np.mean(ratios))


@dataclass
class InvarianceReport:
    neighbor_mean: float
    neighbor_min: float
    self_mean: float
    baseline_mean: float
    samples: int

    def as_dict(self) -> dict:
        return asdict(self)


def _step_cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.maximum(np.linalg.norm(a, axis=1), 1e-12)
    nb = np.maximum(np.linalg.norm(b, axis=1), 1e-12)
    return float(np.mean(np.sum(a * b, axis=1) / (na * nb)))


def neighborhood_invariance_report(representation, sentences: list[Sentence], store: EmbeddingStore,
                                   neighbors: int = 50, samples: int = 200,
                                   seed: int = 0) -> InvarianceReport:
    """Timestep-mean cosine between a sentence's representation and that of a
    neighbor-replaced copy, with a fresh-noise self comparison and an
    unrelated-sentence baseline (truncated to the shorter length)."""
    if neighbors < 2:
        raise ValueError("neighbors must be >= 2")
    rng = np.random.default_rng(derive_seed(seed, 71))
    pairs = make_pairs(sentences, store, neighbors, derive_seed(seed, 72), fake_fraction=1.0)
    pairs = [pairs[int(i)] for i in rng.permutation(len(pairs))[:samples]]
    if not pairs:
        raise ValueError("no PHI-bearing sentences")
    neigh, own, base = [], [], []
    for k, p in enumerate(pairs):
        assert p.label is PairLabel.DIFFERENT
        ea = lookup_many(store, list(p.sentence_a)).astype(np.float32)
        eb = lookup_many(store, list(p.sentence_b)).astype(np.float32)
        T = np.array([len(ea)])
        r1 = representation.forward(ea[None], T, rng)[0][0]
        r2 = representation.forward(ea[None], T, rng)[0][0]
        rn = representation.forward(eb[None], T, rng)[0][0]
        other = pairs[(k + 1 + int(rng.integers(len(pairs) - 1))) % len(pairs)] if len(pairs) > 1 else p
        eo = lookup_many(store, list(other.sentence_a)).astype(np.float32)
        ro = representation.forward(eo[None], np.array([len(eo)]), rng)[0][0]
        m = min(len(r1), len(ro))
        neigh.append(_step_cosine(r1, rn))
        own.append(_step_cosine(r1, r2))
        base.append(_step_cosine(r1[:m], ro[:m]))
    return InvarianceReport(float(np.mean(neigh)), float(np.min(neigh)), float(np.mean(own)),
                            float(np.mean(base)), len(pairs))
