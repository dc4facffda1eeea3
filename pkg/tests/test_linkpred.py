import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import brute_force_metrics, brute_force_ranks, random_kg_model
from kgvqa import kge, linkpred
from kgvqa.errors import DataError
from kgvqa.linkpred import LinkPredMetrics, edge_ranks, evaluate, metrics_from_ranks, rank_entity
from kgvqa.results import RESULT_COLUMNS, read_rows


def _line_model(positions):
    """TransE on a line: tail scores fall with distance from h + r = 0."""
    ent = np.array([[float(p)] for p in positions])
    return kge.ScoringModel("transe", {"entity": ent, "relation": np.zeros((1, 1))})


def test_strictly_best_is_rank_one():
    m = _line_model([0, 0.1, 1, 2, 3])
    assert rank_entity(m, (0, 0, None), 0).rank == 1


def test_all_ties_take_middle_rank():
    m = _line_model([0, 0, 0, 0, 0])
    assert rank_entity(m, (0, 0, None), 3).rank == 3
    assert rank_entity(m, (None, 0, 2), 4).rank == 3


def test_strictly_worst_is_last():
    m = _line_model([0, 1, 2, 3, 4])
    assert rank_entity(m, (0, 0, None), 4).rank == 5


def test_query_must_leave_one_side_open():
    m = _line_model([0, 1])
    with pytest.raises(DataError):
        rank_entity(m, (0, 0, 1), 1)
    with pytest.raises(DataError):
        rank_entity(m, (None, 0, None), 1)


def test_metrics_example():
    m = metrics_from_ranks([1, 2, 4])
    assert m.mrr == pytest.approx(7 / 12)
    assert m.hits1 == pytest.approx(1 / 3)
    assert m.hits3 == pytest.approx(2 / 3)
    assert m.mr == pytest.approx(7 / 3)
    assert m.n_queries == 3


def test_perfect_ranks():
    m = metrics_from_ranks([1] * 7)
    assert (m.mr, m.mrr, m.hits1, m.hits3, m.hits10) == (1, 1, 1, 1, 1)


def test_metrics_json_is_one_line():
    text = metrics_from_ranks([1, 3]).as_json()
    assert "\n" not in text and '"mrr"' in text


def test_empty_inputs():
    with pytest.raises(DataError):
        metrics_from_ranks([])
    with pytest.raises(DataError):
        evaluate(_line_model([0, 1]), np.zeros((0, 3), dtype=int))


@pytest.mark.parametrize("seed", range(12))
def test_matches_brute_force(seed):
    m, edges = random_kg_model(seed)
    assert edge_ranks(m, edges).tolist() == brute_force_ranks(m, edges)


@pytest.mark.parametrize("seed", range(6))
def test_filtered_matches_brute_force(seed):
    m, edges = random_kg_model(seed)
    got = edge_ranks(m, edges, filtered=True, known_edges=edges).tolist()
    assert got == brute_force_ranks(m, edges, known=edges)


def test_filtering_never_worsens_ranks():
    m, edges = random_kg_model(3)
    raw = edge_ranks(m, edges)
    assert np.all(edge_ranks(m, edges, filtered=True) <= raw)


@given(st.lists(st.integers(-5, 5), min_size=2, max_size=20), st.data())
def test_monotone_transform_keeps_ranks(vals, data):
    scores = np.array([vals], dtype=float)
    true = np.array([data.draw(st.integers(0, len(vals) - 1))])
    base = linkpred._mid_rank(scores, true)
    for f in (lambda x: 3 * x + 7, np.exp, lambda x: x ** 3, np.arctan):
        assert np.array_equal(linkpred._mid_rank(f(scores), true), base)


@given(st.lists(st.integers(1, 50), min_size=1, max_size=40))
def test_metric_orderings(ranks):
    m = metrics_from_ranks(ranks)
    assert m.hits1 <= m.hits3 <= m.hits10
    assert 1 / m.mr <= m.mrr + 1e-12 <= 1 + 1e-12


def test_evaluate_pools_head_and_tail_queries():
    m, edges = random_kg_model(5)
    res = evaluate(m, edges)
    ref = brute_force_metrics(brute_force_ranks(m, edges))
    assert res.n_queries == 2 * len(edges)
    for k, v in ref.items():
        assert getattr(res, k) == v


def test_append_results(tmp_path):
    p = tmp_path / "r.csv"
    linkpred.append_results(p, LinkPredMetrics(2.0, 0.5, 0.25, 0.5, 1.0, 8), seed=3, kind="transe")
    linkpred.append_results(p, LinkPredMetrics(1.0, 1.0, 1.0, 1.0, 1.0, 2), seed=4, kind="rotate")
    rows = read_rows(p)
    assert list(rows[0]) == list(RESULT_COLUMNS)
    assert [r["seed"] for r in rows] == ["3", "4"]
    assert rows[0]["n"] == "8" and rows[0]["stage"] == "linkpred"
