"""Text-format word vectors with exact cosine nearest-neighbor search."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class EmbeddingError(ValueError):
    pass


@dataclass
class NeighborList:
    query: str
    neighbors: list[tuple[str, float]]

    @property
    def tokens(self) -> list[str]:
        return [t for t, _ in self.neighbors]


@dataclass
class EmbeddingStore:
    vocab: dict[str, int]
    matrix: np.ndarray
    unknown_vector: np.ndarray = field(init=False)
    duplicates: int = 0
    fingerprint: str = ""

    def __post_init__(self) -> None:
        self._tokens = None
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.vocab):
            raise EmbeddingError("matrix rows must match vocabulary size")
        if not np.all(np.isfinite(self.matrix)):
            raise EmbeddingError("non-finite embedding values")
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(norms == 0):
            bad = self.tokens[int(np.argmin(norms))]
            raise EmbeddingError(f"zero-norm vector for token {bad!r}")
        self.unknown_vector = self.matrix.mean(axis=0)
        self._unit = self.matrix / norms[:, None]
        self._cache: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]] = {}

    @property
    def d_emb(self) -> int:
        return self.matrix.shape[1]

    @property
    def tokens(self) -> list[str]:
        if self._tokens is None:
            self._tokens = [None] * len(self.vocab)
            for tok, i in self.vocab.items():
                self._tokens[i] = tok
        return self._tokens

    def __len__(self) -> int:
        return len(self.vocab)

    @classmethod
    def from_tokens(cls, tokens: list[str], matrix: np.ndarray) -> "EmbeddingStore":
        vocab: dict[str, int] = {}
        rows = []
        dup = 0
        for tok, row in zip(tokens, np.asarray(matrix, dtype=np.float64)):
            if tok in vocab:
                dup += 1
                continue
            vocab[tok] = len(rows)
            rows.append(row)
        store = cls(vocab, np.array(rows), duplicates=dup)
        store.fingerprint = _fingerprint(store)
        return store

    def resolve(self, token: str) -> str | None:
        """Vocabulary entry used for ``token``: exact, then lowercase, else None."""
        if token in self.vocab:
            return token
        low = token.lower()
        if low in self.vocab:
            return low
        return None


def _fingerprint(store: EmbeddingStore) -> str:
    h = hashlib.sha256()
    h.update("\n".join(store.tokens).encode("utf-8"))
    h.update(np.ascontiguousarray(store.matrix, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def load_vectors(path: str | Path) -> EmbeddingStore:
    """Load ``token v1 ... vd`` lines; an optional ``count dim`` header is skipped."""
    path = Path(path)
    tokens: list[str] = []
    rows: list[list[float]] = []
    dim = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            tok, fields = parts[0], parts[1:]
            if dim is None:
                dim = len(fields)
                if dim == 0:
                    raise EmbeddingError(f"{path}:{lineno}: no vector values")
            if len(fields) != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected {dim} values, found {len(fields)} (inconsistent dimension)"
                )
            try:
                rows.append([float(x) for x in fields])
            except ValueError as exc:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric field") from exc
            tokens.append(tok)
    if not rows:
        raise EmbeddingError(f"{path}: empty vector file")
    store = EmbeddingStore.from_tokens(tokens, np.array(rows))
    if store.duplicates:
        log.warning("%s: %d duplicate tokens ignored (first occurrence kept)", path, store.duplicates)
    return store


def write_vectors(path: str | Path, tokens: list[str], matrix: np.ndarray, header: bool = True) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{len(tokens)} {matrix.shape[1]}\n")
        for tok, row in zip(tokens, matrix):
            fh.write(tok + " " + " ".join(f"{x:.6f}" for x in row) + "\n")


def lookup(store: EmbeddingStore, token: str) -> np.ndarray:
    key = store.resolve(token)
    if key is None:
        return store.unknown_vector
    return store.matrix[store.vocab[key]]


def lookup_many(store: EmbeddingStore, tokens: list[str]) -> np.ndarray:
    return np.stack([lookup(store, t) for t in tokens]) if tokens else np.zeros((0, store.d_emb))


def neighbor_indices(store: EmbeddingStore, token: str, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices and cosine similarities of the exact top-``n`` neighbors.

    Full scan plus partial sort; ties broken by ascending row index; the query
    row always comes first.
    """
    key = store.resolve(token)
    if key is None:
        raise EmbeddingError(f"{token!r} is out of vocabulary")
    if not 1 <= n <= len(store):
        raise EmbeddingError(f"N={n} out of range 1..{len(store)}")
    cached = store._cache.get((key, n))
    if cached is not None:
        return cached
    qi = store.vocab[key]
    sims = store._unit @ store._unit[qi]
    # ranking key: round away float noise so equal directions tie exactly
    rank = np.round(sims, 12)
    rank[qi] = np.inf
    if n < len(store):
        cand = np.argpartition(-rank, n - 1)[:n]
        # rows tied with the n-th value compete on row index
        cand = np.flatnonzero(rank >= rank[cand].min())
    else:
        cand = np.arange(len(store))
    order = cand[np.lexsort((cand, -rank[cand]))][:n]
    sims[qi] = 1.0
    result = (order, sims[order])
    if n <= _CACHE_MAX_N:
        store._cache[(key, n)] = result
    return result


_CACHE_MAX_N = 1000


def nearest_neighbors(store: EmbeddingStore, token: str, n: int) -> NeighborList:
    order, sims = neighbor_indices(store, token, n)
    tokens = store.tokens
    return NeighborList(tokens[order[0]], [(tokens[i], float(s)) for i, s in zip(order, sims)])


def subword_neighbor_stats(store: EmbeddingStore, tokens: list[str], n: int) -> float:
    """Mean number of a token's top-``n`` neighbors containing it as a substring (self excluded)."""
    if not tokens:
        raise EmbeddingError("empty token list")
    counts = []
    for tok in tokens:
        nl = nearest_neighbors(store, tok, n)
        needle = nl.query.lower()
        counts.append(sum(needle in other.lower() for other, _ in nl.neighbors[1:]))
    return float(np.mean(counts))
