"""Word-level automatic pseudonymization and real/fake pair generation."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import Sentence, retokenized
from .embed import EmbeddingError, EmbeddingStore, neighbor_indices

log = logging.getLogger(__name__)


class PairKind(str, enum.Enum):
    T1 = "T1"  # representation vs. embedding sequence
    T2 = "T2"  # representation vs. representation sequence


class PairLabel(str, enum.Enum):
    SAME = "same_sentence"
    DIFFERENT = "different_sentence"


@dataclass(frozen=True)
class PseudonymizationConfig:
    neighbors: int = 100
    seed: int = 0
    scope: str = "phi_only"

    def __post_init__(self) -> None:
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")
        if self.scope != "phi_only":
            raise ValueError(f"unsupported scope {self.scope!r}")


@dataclass
class PseudonymizedCorpus:
    sentences: list[Sentence]
    # order[i] is the input index of sentences[i]
    order: list[int]
    oov_kept: int = 0
    replaced: list[tuple[str, str]] = field(default_factory=list)


@dataclass(frozen=True)
class AdversaryPair:
    kind: PairKind
    sentence_a: tuple[str, ...]
    sentence_b: tuple[str, ...]
    label: PairLabel
    # changed position in fake pairs, -1 for real ones
    position: int = -1

    def __post_init__(self) -> None:
        if len(self.sentence_a) != len(self.sentence_b):
            raise ValueError("pair members must have equal length")

    @property
    def target(self) -> float:
        return 1.0 if self.label is PairLabel.SAME else 0.0


def sentence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _draw_neighbor(store: EmbeddingStore, token: str, n: int, rng: np.random.Generator,
                   include_self: bool) -> str:
    order, _ = neighbor_indices(store, token, n)
    pool = order if include_self else order[1:]
    return store.tokens[int(pool[rng.integers(len(pool))])]


def pseudonymize_sentence(sentence: Sentence, store: EmbeddingStore, n: int,
                          rng: np.random.Generator) -> tuple[Sentence, int, list[tuple[str, str]]]:
    texts = sentence.texts
    oov = 0
    replaced = []
    for i in sentence.phi_positions:
        if store.resolve(texts[i]) is None:
            oov += 1
            continue
        new = _draw_neighbor(store, texts[i], min(n, len(store)), rng, include_self=True)
        replaced.append((texts[i], new))
        texts[i] = new
    return retokenized(sentence, texts), oov, replaced


def pseudonymize_corpus(sentences: list[Sentence], store: EmbeddingStore,
                        config: PseudonymizationConfig) -> PseudonymizedCorpus:
    """Shuffle sentences and move every PHI token to a uniform top-N neighbor.

    Each occurrence is resampled independently from a stream derived from
    ``(seed, input index)``. Casing is recomputed on replaced tokens; labels
    never change. PHI tokens without a vocabulary entry are kept and counted.
    """
    n = config.neighbors
    if n > len(store):
        raise EmbeddingError(f"N={n} exceeds vocabulary size {len(store)}")
    order = [int(i) for i in np.random.default_rng(config.seed).permutation(len(sentences))]
    out = []
    oov = 0
    replaced: list[tuple[str, str]] = []
    for idx in order:
        sent, k, rep = pseudonymize_sentence(sentences[idx], store, n, sentence_rng(config.seed, idx))
        out.append(sent)
        oov += k
        replaced.extend(rep)
    if oov:
        log.warning("%d PHI tokens out of vocabulary were kept verbatim", oov)
    return PseudonymizedCorpus(out, order, oov, replaced)


def make_pairs(sentences: list[Sentence], store: EmbeddingStore, n: int, seed: int,
               fake_fraction: float = 0.5, kind: PairKind = PairKind.T1) -> list[AdversaryPair]:
    """One pair per PHI-bearing sentence; ``round(fake_fraction * pairs)`` of them fake.

    A fake replaces one uniformly chosen (in-vocabulary) PHI token by a
    uniformly chosen top-N neighbor other than itself. Sentences without PHI are
    skipped for real pairs too, so PHI presence can not separate the classes.
    """
    if not 0 <= fake_fraction <= 1:
        raise ValueError("fake_fraction must be in [0, 1]")
    eligible = []
    for i, sent in enumerate(sentences):
        pos = [p for p in sent.phi_positions if store.resolve(sent.tokens[p].text) is not None]
        if pos:
            eligible.append((i, pos))
    if not eligible:
        if fake_fraction > 0:
            raise ValueError("no PHI-bearing sentences available for fake pairs")
        return []
    if fake_fraction > 0 and n < 2:
        raise ValueError("fake pairs need N >= 2")
    rng = np.random.default_rng(seed)
    n_fake = int(round(fake_fraction * len(eligible)))
    fake = set(int(j) for j in rng.choice(len(eligible), size=n_fake, replace=False))
    pairs = []
    for j, (i, positions) in enumerate(eligible):
        texts = tuple(sentences[i].texts)
        if j not in fake:
            pairs.append(AdversaryPair(kind, texts, texts, PairLabel.SAME))
            continue
        prng = sentence_rng(seed, i)
        p = positions[int(prng.integers(len(positions)))]
        swapped = list(texts)
        swapped[p] = _draw_neighbor(store, texts[p], min(n, len(store)), prng, include_self=False)
        pairs.append(AdversaryPair(kind, texts, tuple(swapped), PairLabel.DIFFERENT, p))
    return pairs
