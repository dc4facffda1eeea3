"""Lexical fact pruning and the text-augmented composite answer score.

Fact pruning: every word ``w`` of a fact scores ``S(w) = max_c cos(g(w), g(c))``
over the token set built from the question and the image's concept names.
The ``ceil(0.8 * |words|)`` best words are summed into ``eta`` and the
``top_k`` facts by ``eta`` are kept (ties by KG edge order).

Composite score of a candidate entity ``e``::

    lambda1 * K(e) + lambda2 * J(e) + lambda3 * G(e)

with K the gated query cosine, J the best question/fact Jaccard and G the best
averaged-word-vector cosine over the facts that mention ``e``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import fusion
from .errors import DataError
from .kg import KnowledgeGraph, Triple
from .qadata import ImageAsKnowledge
from .text import WordVectorTable, avg_vector, cosine_matrix, jaccard, tokenize

KEEP_FRACTION = 0.8
ETA_DECIMALS = 9  # eta is ranked at this resolution so float noise cannot reorder ties


@dataclass(frozen=True)
class FactScore:
    fact: Triple
    eta: float


@dataclass(frozen=True)
class CompositeWeights:
    l1: float
    l2: float
    l3: float

    def __post_init__(self):
        w = (self.l1, self.l2, self.l3)
        if any(not math.isfinite(x) or x < 0 for x in w):
            raise DataError(f"composite weights must be non-negative, got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise DataError(f"composite weights must sum to 1, got {sum(w)!r}")

    def as_tuple(self):
        return (self.l1, self.l2, self.l3)


def fact_tokens(kg: KnowledgeGraph, fact) -> list[str]:
    """Distinct tokens of head surface, relation name and tail surface, in order."""
    h, r, t = kg.surface(fact)
    return list(dict.fromkeys(tokenize(h) + tokenize(r) + tokenize(t)))


def context_tokens(question, image: ImageAsKnowledge | None, kg: KnowledgeGraph) -> list[str]:
    """The token set T: question tokens plus the image concepts' surface tokens."""
    toks = list(question)
    if image is not None:
        for c in image.concepts:
            toks.extend(tokenize(kg.entities[c]))
    return list(dict.fromkeys(toks))


class FactIndex:
    """Per-(KG, word table) cache of fact words for vectorised pruning."""

    def __init__(self, kg: KnowledgeGraph, word_table: WordVectorTable):
        self.kg = kg
        self.word_table = word_table
        self.fact_words = [fact_tokens(kg, e) for e in kg.edges]
        vocab = list(dict.fromkeys(w for ws in self.fact_words for w in ws))
        pos = {w: i for i, w in enumerate(vocab)}
        self.vocab = vocab
        width = max((len(ws) for ws in self.fact_words), default=0)
        self.slots = np.full((len(self.fact_words), max(width, 1)), -1, dtype=np.int64)
        for i, ws in enumerate(self.fact_words):
            self.slots[i, :len(ws)] = [pos[w] for w in ws]
        self.n_words = np.array([len(ws) for ws in self.fact_words])
        self.n_keep = np.ceil(KEEP_FRACTION * self.n_words).astype(np.int64)
        self.vectors = word_table.lookup(vocab)

    @cached_property
    def fact_avg(self) -> np.ndarray:
        return np.array([avg_vector(ws, self.word_table) for ws in self.fact_words]).reshape(-1, self.word_table.dim)

    def word_scores(self, context) -> np.ndarray:
        """S(w) for each fact-vocabulary word; OOV words (either side) score 0."""
        ctx = self.word_table.lookup(list(context))
        if ctx.shape[0] == 0:
            return np.zeros(len(self.vocab))
        return np.max(cosine_matrix(self.vectors, ctx), axis=1)

    def eta(self, context) -> np.ndarray:
        S = self.word_scores(context)
        vals = np.where(self.slots >= 0, S[self.slots.clip(min=0)], -np.inf)
        vals = -np.sort(-vals, axis=1)
        keep = np.arange(vals.shape[1])[None, :] < self.n_keep[:, None]
        return np.where(keep, vals, 0.0).sum(axis=1)


def _index_for(kg, word_table, index):
    if index is None:
        return FactIndex(kg, word_table)
    if index.kg is not kg or index.word_table is not word_table:
        raise DataError("fact index was built for a different KG or word table")
    return index


def prune_facts(question, image, kg: KnowledgeGraph, word_table: WordVectorTable,
                top_k: int = 100, index: FactIndex | None = None) -> list[FactScore]:
    """Top ``top_k`` facts by eta, ties broken by KG edge order."""
    if kg.edges.shape[0] == 0:
        raise DataError("empty knowledge graph")
    if top_k < 1:
        raise DataError("top_k must be positive")
    context = context_tokens(question, image, kg)
    if not context:
        raise DataError("empty question and image: nothing to match facts against")
    idx = _index_for(kg, word_table, index)
    eta = idx.eta(context)
    order = np.argsort(-np.round(eta, ETA_DECIMALS), kind="stable")[:top_k]
    return [FactScore(Triple(*map(int, kg.edges[i])), float(eta[i])) for i in order]


def candidate_entities(facts) -> list[int]:
    out = {}
    for f in facts:
        fact = f.fact if isinstance(f, FactScore) else f
        out.setdefault(int(fact[0]), None)
        out.setdefault(int(fact[2]), None)
    return list(out)


def _minmax(x):
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def composite_scores(instance, sik_model, facts, weights: CompositeWeights, word_table: WordVectorTable,
                     kg: KnowledgeGraph, normalize=True):
    """(candidates, K, J, G, total) for one question; K is skipped when l1 = 0."""
    if not facts:
        raise DataError("empty fact set")
    facts = [f.fact if isinstance(f, FactScore) else Triple(*map(int, f)) for f in facts]
    cands = candidate_entities(facts)
    pos = {e: i for i, e in enumerate(cands)}
    n = len(cands)
    if weights.l1 > 0:
        K = fusion.candidate_scores(sik_model.query(instance), sik_model.entity_table, cands)
    else:
        K = np.zeros(n)
    q_tokens = list(instance.question)
    q_avg = avg_vector(q_tokens, word_table)[None]
    J = np.full(n, -np.inf)
    G = np.full(n, -np.inf)
    for f in facts:
        ft = fact_tokens(kg, f)
        j = jaccard(q_tokens, ft)
        g = float(cosine_matrix(q_avg, avg_vector(ft, word_table)[None])[0, 0])
        for e in (f.head, f.tail):
            p = pos[e]
            J[p] = max(J[p], j)
            G[p] = max(G[p], g)
    if normalize:
        K, G = _minmax(K), _minmax(G)
    total = weights.l1 * K + weights.l2 * J + weights.l3 * G
    return cands, K, J, G, total


def composite_answer(instance, sik_model, facts, weights: CompositeWeights, word_table, kg, normalize=True) -> int:
    cands, *_, total = composite_scores(instance, sik_model, facts, weights, word_table, kg, normalize)
    return cands[int(np.argmax(total))]
