"""Tagger, private representation and paired adversaries.

All models operate on padded batches ``(B, T, D)`` with a ``lengths`` vector
and expose ``forward`` / ``backward`` pairs in the style of ``autonn``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autonn import CRF, BiLSTM, GaussianNoise, Linear, ParamSet, length_mask, sigmoid
from .autonn.checkpoint import load_checkpoint, save_checkpoint
from .autonn.stochastic import dropout_apply, dropout_backward
from .corpus import CASING_CATEGORIES, LABEL_INDEX, LABELS, Sentence
from .embed import EmbeddingStore, lookup_many

N_CASING = len(CASING_CATEGORIES)
L_RANDOM = math.log(2.0)  # loss of a guesser that always answers 1/2
_CASING_INDEX = {c: i for i, c in enumerate(CASING_CATEGORIES)}


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------- features

def casing_onehot(sentence: Sentence, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(sentence), N_CASING), dtype=dtype)
    for t, tok in enumerate(sentence.tokens):
        out[t, _CASING_INDEX[tok.casing]] = 1.0
    return out


@dataclass
class SentenceFeatures:
    emb: np.ndarray  # (T, d_emb)
    casing: np.ndarray  # (T, 7)
    labels: np.ndarray  # (T,) label indices


def featurize(sentences: list[Sentence], store: EmbeddingStore, dtype=np.float32) -> list[SentenceFeatures]:
    out = []
    for s in sentences:
        if len(s) == 0:
            raise ModelError(f"empty sentence in {s.doc_id!r}")
        out.append(SentenceFeatures(
            lookup_many(store, s.texts).astype(dtype),
            casing_onehot(s, dtype),
            np.array([LABEL_INDEX[lab] for lab in s.labels], dtype=np.int64),
        ))
    return out


def pad(arrays: list[np.ndarray], dtype=None) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    T = int(lengths.max())
    first = arrays[0]
    out = np.zeros((len(arrays), T, *first.shape[1:]), dtype=dtype or first.dtype)
    for i, a in enumerate(arrays):
        out[i, :len(a)] = a
    return out, lengths


@dataclass
class Batch:
    emb: np.ndarray
    casing: np.ndarray
    labels: np.ndarray
    lengths: np.ndarray


def make_batch(feats: list[SentenceFeatures]) -> Batch:
    emb, lengths = pad([f.emb for f in feats])
    casing, _ = pad([f.casing for f in feats])
    labels, _ = pad([f.labels for f in feats])
    return Batch(emb, casing, labels, lengths)


# ---------------------------------------------------------------- tagger

class TaggerModel:
    """Stacked BiLSTM over ``[input, casing one-hot]`` with a CRF output layer.

    Dropout: elementwise on the input features, variational (one mask per
    sequence) on each recurrent layer's input, elementwise after the stack.
    """

    component = "tagger"

    def __init__(self, d_in: int, layers: int = 2, units: int = 128, dropout_in: float = 0.1,
                 dropout_var: float = 0.25, dropout_post: float = 0.5, seed: int = 0,
                 labels: tuple[str, ...] = tuple(LABELS), dtype=np.float32):
        self.spec = dict(d_in=d_in, layers=layers, units=units, dropout_in=dropout_in,
                         dropout_var=dropout_var, dropout_post=dropout_post, seed=seed,
                         labels=list(labels))
        self.params = ParamSet()
        rng = np.random.default_rng([seed, 1])
        self.d_in = d_in
        self.labels = list(labels)
        self.dropout = (dropout_in, dropout_var, dropout_post)
        width = d_in + N_CASING
        self.lstms = []
        for i in range(layers):
            self.lstms.append(BiLSTM(self.params, f"tagger.lstm{i}", width, units, rng, dtype))
            width = 2 * units
        self.out = Linear(self.params, "tagger.out", width, len(labels), rng, dtype)
        self.crf = CRF(self.params, "tagger.crf", len(labels), dtype)
        self.crf.mask_invalid_bio(self.labels)

    def inputs(self, x: np.ndarray, casing: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.d_in:
            raise ModelError(f"tagger expects input width {self.d_in}, got {x.shape[-1]}")
        return np.concatenate([x, casing.astype(x.dtype)], axis=-1)

    def forward(self, feats: np.ndarray, lengths: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None):
        p_in, p_var, p_post = self.dropout
        h, m_in = dropout_apply(feats, p_in, "element", training, rng)
        caches = []
        for lstm in self.lstms:
            h, m_var = dropout_apply(h, p_var, "variational", training, rng)
            h, c = lstm.forward(h, lengths)
            caches.append((m_var, c))
        h, m_post = dropout_apply(h, p_post, "element", training, rng)
        emis, x_out = self.out.forward(h)
        return emis, (m_in, caches, m_post, x_out)

    def backward(self, d_emis: np.ndarray, cache) -> np.ndarray:
        m_in, caches, m_post, x_out = cache
        dh = dropout_backward(self.out.backward(d_emis, x_out), m_post)
        for lstm, (m_var, c) in zip(reversed(self.lstms), reversed(caches)):
            dh = dropout_backward(lstm.backward(dh, c), m_var)
        return dropout_backward(dh, m_in)

    def loss(self, feats, labels, lengths, training=False, rng=None):
        """CRF negative log-likelihood (batch mean); returns ``(loss, cache)``."""
        if labels.shape != feats.shape[:2]:
            raise ModelError("labels and features disagree in shape")
        emis, fcache = self.forward(feats, lengths, training, rng)
        loss, ccache = self.crf.nll(emis, labels, lengths)
        return loss, (fcache, ccache)

    def loss_backward(self, cache, scale: float = 1.0) -> np.ndarray:
        fcache, ccache = cache
        return self.backward(self.crf.nll_backward(ccache, scale), fcache)

    def predict(self, feats: np.ndarray, lengths: np.ndarray) -> list[list[int]]:
        if len(lengths) == 0:
            return []
        emis, _ = self.forward(feats, lengths, training=False)
        return [self.crf.viterbi(emis[i, :n])[0] for i, n in enumerate(lengths)]


def tagger_loss(model: TaggerModel, feats: np.ndarray, labels: np.ndarray) -> float:
    """Loss for a single ``(T, d_in + 7)`` sentence; gradients accumulate in ``model.params``."""
    if feats.shape[0] != len(labels):
        raise ModelError(f"{feats.shape[0]} feature rows for {len(labels)} labels")
    lengths = np.array([len(labels)])
    loss, cache = model.loss(feats[None], np.asarray(labels)[None], lengths)
    model.loss_backward(cache)
    return loss


def tagger_predict(model: TaggerModel, sentence_feats: list[np.ndarray]) -> list[list[str]]:
    if not sentence_feats:
        return []
    x, lengths = pad(sentence_feats)
    return [[model.labels[i] for i in path] for path in model.predict(x, lengths)]


# ---------------------------------------------------------------- representations

class RepresentationModel:
    """``R = N_out + proj(BiLSTM(E + N_in))`` with trainable per-dimension noise scales."""

    component = "representation"

    def __init__(self, d_emb: int, d: int = 50, units: int = 64, init_sigma: float = 0.1,
                 seed: int = 0, debug_no_noise: bool = False, dtype=np.float32):
        self.spec = dict(d_emb=d_emb, d=d, units=units, init_sigma=init_sigma, seed=seed,
                         debug_no_noise=debug_no_noise)
        self.params = ParamSet()
        rng = np.random.default_rng([seed, 2])
        self.d_emb, self.d = d_emb, d
        self.noise_in = GaussianNoise(self.params, "repr.noise_in", d_emb, init_sigma, dtype)
        self.lstm = BiLSTM(self.params, "repr.lstm", d_emb, units, rng, dtype)
        self.proj = Linear(self.params, "repr.proj", 2 * units, d, rng, dtype)
        self.noise_out = GaussianNoise(self.params, "repr.noise_out", d, init_sigma, dtype)
        self.debug_no_noise = debug_no_noise

    def forward(self, emb: np.ndarray, lengths: np.ndarray, rng: np.random.Generator | None):
        if emb.shape[-1] != self.d_emb:
            raise ModelError(f"representation expects width {self.d_emb}, got {emb.shape[-1]}")
        active = not self.debug_no_noise
        mask = length_mask(lengths, emb.shape[1])[:, :, None].astype(emb.dtype)
        x, eps_in = self.noise_in.forward(emb, rng, active)
        h, lc = self.lstm.forward(x, lengths)
        y, pc = self.proj.forward(h)
        r, eps_out = self.noise_out.forward(y, rng, active)
        return r * mask, (mask, eps_in, lc, pc, eps_out)

    def backward(self, dr: np.ndarray, cache) -> np.ndarray:
        mask, eps_in, lc, pc, eps_out = cache
        dy = self.noise_out.backward(dr * mask, eps_out)
        dx = self.lstm.backward(self.proj.backward(dy, pc), lc)
        return self.noise_in.backward(dx, eps_in)


class IdentityRepresentation:
    """Raw embeddings passed through unchanged (no privacy, attack upper bound)."""

    component = "representation"

    def __init__(self, d_emb: int):
        self.spec = dict(kind="identity", d_emb=d_emb)
        self.params = ParamSet()
        self.d_emb = self.d = d_emb

    def forward(self, emb, lengths, rng=None):
        mask = length_mask(lengths, emb.shape[1])[:, :, None].astype(emb.dtype)
        return emb * mask, mask

    def backward(self, dr, cache):
        return dr * cache


class NoiseRepresentation:
    """Ignores its input and emits standard normal noise of width ``d``."""

    component = "representation"

    def __init__(self, d_emb: int, d: int = 50):
        self.spec = dict(kind="noise", d_emb=d_emb, d=d)
        self.params = ParamSet()
        self.d_emb, self.d = d_emb, d

    def forward(self, emb, lengths, rng):
        mask = length_mask(lengths, emb.shape[1])[:, :, None].astype(emb.dtype)
        return rng.standard_normal((*emb.shape[:2], self.d)).astype(emb.dtype) * mask, None

    def backward(self, dr, cache):
        return None


def repr_transform(model, emb: np.ndarray, seed: int) -> np.ndarray:
    """Transform one ``(T, d_emb)`` sentence; fresh noise per call unless ``seed`` repeats."""
    if not np.all(np.isfinite(emb)):
        raise ModelError("non-finite embeddings")
    r, _ = model.forward(emb[None], np.array([emb.shape[0]]), np.random.default_rng(seed))
    return r[0]


# ---------------------------------------------------------------- adversary

def cosine_rows(a: np.ndarray, b: np.ndarray, eps: float = 1e-8):
    na = np.maximum(np.linalg.norm(a, axis=-1), eps)
    nb = np.maximum(np.linalg.norm(b, axis=-1), eps)
    c = np.sum(a * b, axis=-1) / (na * nb)
    return c, (a, b, na, nb, c)


def cosine_rows_backward(dc: np.ndarray, cache):
    a, b, na, nb, c = cache
    dc = dc[..., None]
    da = dc * (b / (na * nb)[..., None] - c[..., None] * a / (na ** 2)[..., None])
    db = dc * (a / (na * nb)[..., None] - c[..., None] * b / (nb ** 2)[..., None])
    return da, db


class _Discriminator:
    """BiLSTM, pooled over valid steps (max or mean), one logit."""

    def __init__(self, params: ParamSet, name: str, d_in: int, units: int, rng, dtype,
                 pool: str = "max"):
        if pool not in ("max", "mean"):
            raise ModelError(f"unknown pooling {pool!r}")
        self.lstm = BiLSTM(params, f"{name}.lstm", d_in, units, rng, dtype)
        self.out = Linear(params, f"{name}.out", 2 * units, 1, rng, dtype)
        self.pool = pool

    def forward(self, x, lengths):
        h, lc = self.lstm.forward(x, lengths)
        mask = length_mask(lengths, x.shape[1])
        if self.pool == "max":
            arg = np.argmax(np.where(mask[:, :, None], h, -np.inf), axis=1)  # (B, 2H)
            pooled = np.take_along_axis(h, arg[:, None, :], axis=1)[:, 0]
        else:
            arg = None
            pooled = h.sum(axis=1) / np.asarray(lengths, dtype=h.dtype)[:, None]
        z, oc = self.out.forward(pooled)
        return sigmoid(z[:, 0]), (h.shape, lc, arg, oc, lengths, mask)

    def backward(self, dz, cache):
        shape, lc, arg, oc, lengths, mask = cache
        dpooled = self.out.backward(dz[:, None], oc)
        if self.pool == "max":
            dh = np.zeros(shape, dtype=dpooled.dtype)
            np.put_along_axis(dh, arg[:, None, :], dpooled[:, None, :], axis=1)
        else:
            dh = (dpooled / np.asarray(lengths, dtype=dpooled.dtype)[:, None])[:, None, :] * mask[:, :, None]
        return self.lstm.backward(dh, lc)


class AdversaryModel:
    """Two discriminators whose sigmoid outputs are averaged.

    ``a1`` reads ``[R_a, E_b]`` per step; ``a2`` reads ``[R_a, R_b, cos(R_a, R_b)]``.
    ``heads`` selects which of them take part.
    """

    component = "adversary"

    def __init__(self, d: int, d_emb: int, units: int = 32, heads: tuple[str, ...] = ("a1", "a2"),
                 seed: int = 0, pool: str = "max", dtype=np.float32):
        if not heads or set(heads) - {"a1", "a2"}:
            raise ModelError(f"heads must be a non-empty subset of a1, a2; got {heads}")
        self.spec = dict(d=d, d_emb=d_emb, units=units, heads=list(heads), seed=seed, pool=pool)
        self.params = ParamSet()
        rng = np.random.default_rng([seed, 3])
        self.d, self.d_emb = d, d_emb
        self.heads = tuple(h for h in ("a1", "a2") if h in heads)
        self.disc = {}
        if "a1" in self.heads:
            self.disc["a1"] = _Discriminator(self.params, "adv.a1", d + d_emb, units, rng, dtype, pool)
        if "a2" in self.heads:
            self.disc["a2"] = _Discriminator(self.params, "adv.a2", 2 * d + 1, units, rng, dtype, pool)

    def forward(self, ra, eb, rb, lengths):
        if ra.shape[:2] != eb.shape[:2] or (rb is not None and ra.shape != rb.shape):
            raise ModelError("pair members must have equal lengths")
        caches = {}
        probs = []
        if "a1" in self.disc:
            p, c = self.disc["a1"].forward(np.concatenate([ra, eb.astype(ra.dtype)], axis=-1), lengths)
            probs.append(p)
            caches["a1"] = c
        if "a2" in self.disc:
            cos, cc = cosine_rows(ra, rb)
            cos = cos * length_mask(lengths, ra.shape[1])
            p, c = self.disc["a2"].forward(np.concatenate([ra, rb, cos[..., None]], axis=-1), lengths)
            probs.append(p)
            caches["a2"] = (c, cc)
        return np.mean(probs, axis=0), (caches, probs, lengths)

    def backward(self, dscore, cache):
        """Returns gradients for ``(R_a, R_b)``; ``R_b``'s is None without head a2."""
        caches, probs, lengths = cache
        k = len(probs)
        d = self.d
        dra = drb = None
        for head, p in zip(self.heads, probs):
            dz = dscore / k * p * (1.0 - p)
            if head == "a1":
                dx = self.disc["a1"].backward(dz, caches["a1"])
                dra = dx[..., :d] if dra is None else dra + dx[..., :d]
            else:
                c, cc = caches["a2"]
                dx = self.disc["a2"].backward(dz, c)
                dcos = dx[..., 2 * d] * length_mask(lengths, dx.shape[1])
                da, db = cosine_rows_backward(dcos, cc)
                ga = dx[..., :d] + da
                dra = ga if dra is None else dra + ga
                drb = dx[..., d:2 * d] + db
        return dra, drb


def adversary_score(model: AdversaryModel, repr_a: np.ndarray, emb_b: np.ndarray,
                    repr_b: np.ndarray) -> float:
    """Probability that a single ``(T, .)`` pair comes from the same sentence."""
    if not (len(repr_a) == len(emb_b) == len(repr_b)):
        raise ModelError("pair members must have equal lengths")
    s, _ = model.forward(repr_a[None], emb_b[None], repr_b[None], np.array([len(repr_a)]))
    return float(s[0])


CLAMP = 1e-7


def adversary_loss(score: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. ``score``.

    Scores are clamped to ``[1e-7, 1 - 1e-7]``; the gradient is zero where the
    clamp is active.
    """
    score = np.asarray(score, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    s = np.clip(score, CLAMP, 1.0 - CLAMP)
    loss = -np.mean(y * np.log(s) + (1.0 - y) * np.log1p(-s))
    ds = (-(y / s) + (1.0 - y) / (1.0 - s)) / len(s)
    ds = np.where((score >= CLAMP) & (score <= 1.0 - CLAMP), ds, 0.0)
    return float(loss), ds


# ---------------------------------------------------------------- persistence

_BUILDERS = {
    "tagger": lambda spec: TaggerModel(**{**spec, "labels": tuple(spec["labels"])}),
    "adversary": lambda spec: AdversaryModel(**{**spec, "heads": tuple(spec["heads"])}),
}


def _build(component: str, spec: dict):
    if component == "representation":
        kind = spec.get("kind")
        if kind == "identity":
            return IdentityRepresentation(spec["d_emb"])
        if kind == "noise":
            return NoiseRepresentation(spec["d_emb"], spec["d"])
        return RepresentationModel(**spec)
    return _BUILDERS[component](spec)


def save_model(path: str | Path, model, extra: dict | None = None) -> str:
    manifest = {"component": model.component, "spec": model.spec, **(extra or {})}
    return save_checkpoint(path, model.params, manifest)


def load_model(path: str | Path):
    blocks, manifest = load_checkpoint(path)
    model = _build(manifest["component"], manifest["spec"])
    model.params.load_state(blocks)
    return model, manifest
