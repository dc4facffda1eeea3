import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kgvqa.errors import DimensionError, MalformedLine
from kgvqa.text import (WordVectorTable, avg_vector, cosine, cosine_matrix, jaccard, load_vectors, save_vectors,
                        tokenize)


def test_tokenize_question():
    assert tokenize("Which object is rich in potassium?") == ["which", "object", "is", "rich", "in", "potassium"]


def test_tokenize_empty_and_surface():
    assert tokenize("") == []
    assert tokenize("rich in potassium") == ["rich", "in", "potassium"]


def test_tokenize_strips_edge_punctuation_only():
    assert tokenize("  (Hello), world's -- end. ") == ["hello", "world's", "end"]


@given(st.text(max_size=40))
def test_tokenize_is_idempotent(text):
    toks = tokenize(text)
    assert tokenize(" ".join(toks)) == toks


def test_load_two_lines(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("a 1 2 3\nb 4 5 6\n")
    t = load_vectors(p)
    assert len(t) == 2 and t.dim == 3
    assert t.get("b").tolist() == [4, 5, 6]
    assert t.get("zzz") is None


def test_dimension_error_names_the_line(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("a 1 2 3\nb 4 5\n")
    with pytest.raises(DimensionError, match=":2:"):
        load_vectors(p)


def test_hundred_dims(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("tok " + " ".join(["0.5"] * 100) + "\n")
    assert load_vectors(p).dim == 100


def test_bad_number_and_empty_file(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("a 1 x\n")
    with pytest.raises(MalformedLine):
        load_vectors(p)
    p.write_text("")
    with pytest.raises(MalformedLine):
        load_vectors(p)


def test_duplicate_token_keeps_first(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("a 1 0\na 0 1\n")
    t = load_vectors(p)
    assert len(t) == 1 and t.get("a").tolist() == [1, 0]


def test_vector_file_round_trip(tmp_path):
    t = WordVectorTable(("x", "y"), np.random.default_rng(0).normal(size=(2, 5)))
    save_vectors(t, tmp_path / "v.txt")
    back = load_vectors(tmp_path / "v.txt")
    assert back.tokens == t.tokens and np.array_equal(back.vectors, t.vectors)


def test_lookup_zero_rows_for_oov():
    t = WordVectorTable(("a",), np.array([[1.0, 2.0]]))
    assert t.lookup(["a", "b"]).tolist() == [[1, 2], [0, 0]]


def test_cosine_examples():
    assert cosine([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 0], [-1, 0]) == -1.0
    assert cosine([0, 0], [1, 0]) == 0.0


def test_cosine_shape_mismatch():
    with pytest.raises(DimensionError):
        cosine([1, 2], [1, 2, 3])


vec = arrays(float, 4, elements=st.floats(-100, 100))


@given(vec, vec, st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(u, v, c):
    assert cosine(c * u, v) == pytest.approx(cosine(u, v), abs=1e-9)


@given(arrays(float, (3, 4), elements=st.floats(-10, 10)), arrays(float, (2, 4), elements=st.floats(-10, 10)))
def test_cosine_matrix_matches_scalar(a, b):
    m = cosine_matrix(a, b)
    for i in range(3):
        for j in range(2):
            assert m[i, j] == pytest.approx(cosine(a[i], b[j]), abs=1e-12)


def test_jaccard_examples():
    assert jaccard(["a", "b"], ["b", "a"]) == 1.0
    assert jaccard(["a"], ["b"]) == 0.0
    assert jaccard(["a", "b"], ["b", "c"]) == pytest.approx(1 / 3)
    assert jaccard([], []) == 0.0


sets = st.sets(st.sampled_from("abcdefgh"), max_size=6)


@given(sets, sets)
def test_jaccard_properties(a, b):
    j = jaccard(a, b)
    assert j == jaccard(b, a)
    assert 0.0 <= j <= 1.0
    if a or b:
        assert (j == 1.0) == (a == b)


def test_avg_vector_examples():
    t = WordVectorTable(("a", "b", "c"), np.array([[1.0, 2.0], [3.0, -1.0], [-3.0, 1.0]]))
    assert avg_vector(["a"], t).tolist() == [1, 2]
    assert avg_vector(["b", "c"], t).tolist() == [0, 0]
    assert avg_vector(["x", "y"], t).tolist() == [0, 0]
    assert avg_vector(["a", "zzz"], t).tolist() == [1, 2]
