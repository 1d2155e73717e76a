import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deidrep.embed import (
    EmbeddingError, EmbeddingStore, load_vectors, lookup, nearest_neighbors, subword_neighbor_stats, write_vectors,
)


def _write(tmp_path, text, name="v.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


TOY = "a 1 0 0 0\nb 0 1 0 0\nc 1 1 0 0\n"


def test_load_toy(tmp_path):
    s = load_vectors(_write(tmp_path, TOY))
    assert len(s) == 3 and s.d_emb == 4
    h = load_vectors(_write(tmp_path, "3 4\n" + TOY, "h.txt"))
    assert h.vocab == s.vocab and np.array_equal(h.matrix, s.matrix)
    assert h.fingerprint == s.fingerprint


def test_dimension_error_names_line(tmp_path):
    with pytest.raises(EmbeddingError, match=r":3: expected 4 values, found 3"):
        load_vectors(_write(tmp_path, "a 1 0 0 0\nb 0 1 0 0\nc 1 1 0\n"))


@pytest.mark.parametrize("text", ["", "a 1 x 0\n", "a 0 0\n", "a 1 nan\n"])
def test_bad_files(tmp_path, text):
    with pytest.raises(EmbeddingError):
        load_vectors(_write(tmp_path, text))


def test_duplicates_keep_first(tmp_path):
    s = load_vectors(_write(tmp_path, "a 1 0\na 0 1\nb 1 1\n"))
    assert s.duplicates == 1
    assert np.array_equal(lookup(s, "a"), [1.0, 0.0])


def test_unknown_vector_is_mean(tmp_path):
    s = load_vectors(_write(tmp_path, TOY))
    assert np.allclose(s.unknown_vector, [2 / 3, 2 / 3, 0, 0])


def test_lookup_fallbacks():
    s = EmbeddingStore.from_tokens(["james", "Rome"], np.array([[1.0, 0], [0, 1.0]]))
    assert np.array_equal(lookup(s, "james"), [1, 0])
    assert np.array_equal(lookup(s, "James"), [1, 0])
    assert np.array_equal(lookup(s, "zzz"), s.unknown_vector)
    # lowercase fallback only goes one way
    assert np.array_equal(lookup(s, "rome"), s.unknown_vector)


def test_write_read_roundtrip(tmp_path):
    tokens = ["x", "y"]
    m = np.array([[0.5, -1.25], [2.0, 3.0]])
    p = tmp_path / "w.txt"
    write_vectors(p, tokens, m)
    assert np.allclose(load_vectors(p).matrix, m)


def _oracle(tokens, matrix, q, n):
    qi = tokens.index(q)

    def cos(i):
        a, b = matrix[qi], matrix[i]
        return sum(x * y for x, y in zip(a, b)) / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))

    rest = sorted((i for i in range(len(tokens)) if i != qi), key=lambda i: (-round(cos(i), 12), i))
    return [tokens[qi]] + [tokens[i] for i in rest[:n - 1]]


def test_hand_geometry_top3():
    tokens = ["q", "near", "mid", "far", "opp"]
    m = np.array([[1.0, 0.0], [1.0, 0.1], [1.0, 1.0], [0.0, 1.0], [-1.0, 0.0]])
    nl = nearest_neighbors(EmbeddingStore.from_tokens(tokens, m), "q", 3)
    assert nl.tokens == ["q", "near", "mid"] == _oracle(tokens, m.tolist(), "q", 3)
    assert nl.neighbors[0][1] == pytest.approx(1.0)
    assert nl.neighbors[2][1] == pytest.approx(1 / math.sqrt(2))


def test_n_limits():
    s = EmbeddingStore.from_tokens(["a", "b", "c"], np.eye(3))
    assert nearest_neighbors(s, "a", 1).tokens == ["a"]
    full = nearest_neighbors(s, "a", 3)
    assert sorted(full.tokens) == ["a", "b", "c"]
    for n in (0, 4):
        with pytest.raises(EmbeddingError):
            nearest_neighbors(s, "a", n)
    with pytest.raises(EmbeddingError, match="out of vocabulary"):
        nearest_neighbors(s, "zz", 1)


def test_ties_by_row_index():
    m = np.array([[1.0, 0], [0, 1.0], [0, 2.0], [0, 3.0]])
    s = EmbeddingStore.from_tokens(["q", "t1", "t2", "t3"], m)
    assert nearest_neighbors(s, "q", 3).tokens == ["q", "t1", "t2"]


def test_zero_rows_rejected():
    with pytest.raises(EmbeddingError, match="zero-norm"):
        EmbeddingStore.from_tokens(["a", "b"], np.array([[1.0, 0], [0, 0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(1, 4), st.integers(0, 2**31), st.data())
def test_neighbors_match_bruteforce(v, dim, seed, data):
    rng = np.random.default_rng(seed)
    # rounding creates many exact ties
    m = np.round(rng.standard_normal((v, dim)), 1)
    m[np.linalg.norm(m, axis=1) == 0, 0] = 1.0
    tokens = [f"w{i}" for i in range(v)]
    s = EmbeddingStore.from_tokens(tokens, m)
    q = tokens[data.draw(st.integers(0, v - 1))]
    n = data.draw(st.integers(1, v))
    nl = nearest_neighbors(s, q, n)
    assert nl.tokens == _oracle(tokens, m.tolist(), q, n)
    sims = [x for _, x in nl.neighbors]
    assert sims[0] == pytest.approx(1.0, abs=1e-6)
    assert all(a >= b - 1e-12 for a, b in zip(sims[1:], sims[2:]))


def test_subword_stats():
    s = EmbeddingStore.from_tokens(["york", "newyork", "rome"],
                                   np.array([[1.0, 0.0], [0.9, 0.1], [0.5, 0.5]]))
    assert subword_neighbor_stats(s, ["york"], 3) == 1.0
    assert subword_neighbor_stats(s, ["rome"], 3) == 0.0
    with pytest.raises(EmbeddingError):
        subword_neighbor_stats(s, [], 3)
