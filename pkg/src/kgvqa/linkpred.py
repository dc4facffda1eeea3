"""Link-prediction ranking and MR / MRR / Hits@k."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import DataError
from .kge import ScoringModel, score_candidates
from .results import append_row


class RankResult(NamedTuple):
    query: tuple  # (h, r, None) or (None, r, t)
    true_entity: int
    rank: int


@dataclass(frozen=True)
class LinkPredMetrics:
    mr: float
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    n_queries: int = 0

    def as_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _mid_rank(scores: np.ndarray, true_idx: np.ndarray) -> np.ndarray:
    """1 + #strictly better + ceil(#other exact ties / 2), row-wise."""
    true_s = scores[np.arange(len(scores)), true_idx][:, None]
    greater = np.sum(scores > true_s, axis=1)
    ties = np.sum(scores == true_s, axis=1) - 1
    return 1 + greater + (ties + 1) // 2


def rank_entity(model: ScoringModel, query, true_entity: int) -> RankResult:
    h, r, t = query
    if (h is None) == (t is None):
        raise DataError("query must leave exactly one of head/tail open")
    if h is None:
        scores = score_candidates(model, [0], [r], [t], side="head")
    else:
        scores = score_candidates(model, [h], [r], [0], side="tail")
    return RankResult(tuple(query), int(true_entity), int(_mid_rank(scores, np.array([true_entity]))[0]))


def edge_ranks(model: ScoringModel, edges, filtered=False, known_edges=None) -> np.ndarray:
    """Ranks for every (h, r, ?) query followed by every (?, r, t) query.

    With ``filtered`` the other true completions listed in ``known_edges``
    are removed from the candidate list before ranking.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
    h, r, t = edges.T
    tail_scores = score_candidates(model, h, r, t, side="tail")
    head_scores = score_candidates(model, h, r, t, side="head")
    if filtered:
        known = edges if known_edges is None else np.asarray(known_edges).reshape(-1, 3)
        by_hr, by_rt = {}, {}
        for kh, kr, kt in known:
            by_hr.setdefault((kh, kr), []).append(kt)
            by_rt.setdefault((kr, kt), []).append(kh)
        for i, (eh, er, et) in enumerate(edges):
            others = [x for x in by_hr.get((eh, er), ()) if x != et]
            tail_scores[i, others] = -np.inf
            others = [x for x in by_rt.get((er, et), ()) if x != eh]
            head_scores[i, others] = -np.inf
    return np.concatenate([_mid_rank(tail_scores, t), _mid_rank(head_scores, h)])


def metrics_from_ranks(ranks) -> LinkPredMetrics:
    ranks = np.asarray(ranks, dtype=float)
    if ranks.size == 0:
        raise DataError("no ranks to summarize")
    return LinkPredMetrics(
        mr=float(ranks.mean()),
        mrr=math.fsum(1.0 / ranks) / ranks.size,  # correctly rounded, independent of summation order
        hits1=float(np.mean(ranks <= 1)),
        hits3=float(np.mean(ranks <= 3)),
        hits10=float(np.mean(ranks <= 10)),
        n_queries=int(ranks.size),
    )


def evaluate(model: ScoringModel, test_edges, filtered=False, known_edges=None) -> LinkPredMetrics:
    """Raw (unfiltered by default) head+tail ranking over all entities."""
    if len(test_edges) == 0:
        raise DataError("empty test set")
    return metrics_from_ranks(edge_ranks(model, test_edges, filtered, known_edges))


def append_results(path, metrics: LinkPredMetrics, **extra) -> None:
    m = asdict(metrics)
    m["n"] = m.pop("n_queries")
    append_row(path, {"stage": "linkpred", **extra, **m})


def hits_at(ranks, k) -> float:
    return float(np.mean(np.asarray(ranks) <= k))
