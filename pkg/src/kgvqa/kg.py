"""Knowledge graph store: vocabularies, triples, splits and occlusion."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DataError, EmptyGraph, MalformedLine

log = logging.getLogger(__name__)


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Immutable KG.

    ``edges`` is an ``(E, 3)`` int64 array of (head, relation, tail) ids in
    file order. Entity and relation ids are indices into the vocabularies.
    """

    entities: tuple[str, ...]
    relations: tuple[str, ...]
    edges: np.ndarray
    provenance: str = "original"
    n_duplicates: int = field(default=0, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 3)
        if edges.size:
            if edges[:, [0, 2]].min() < 0 or edges[:, [0, 2]].max() >= len(self.entities):
                raise DataError("edge endpoint outside entity vocabulary")
            if edges[:, 1].min() < 0 or edges[:, 1].max() >= len(self.relations):
                raise DataError("edge relation outside relation vocabulary")
        edges = edges.copy()
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_string_triples(cls, triples: Iterable[tuple[str, str, str]], provenance="original"):
        ent: dict[str, int] = {}
        rel: dict[str, int] = {}
        rows = []
        seen = set()
        dups = 0
        for h, r, t in triples:
            h, r, t = h.strip().lower(), r.strip().lower(), t.strip().lower()
            hi = ent.setdefault(h, len(ent))
            ri = rel.setdefault(r, len(rel))
            ti = ent.setdefault(t, len(ent))
            key = (hi, ri, ti)
            if key in seen:
                dups += 1
                continue
            seen.add(key)
            rows.append(key)
        return cls(tuple(ent), tuple(rel), np.array(rows, dtype=np.int64).reshape(-1, 3),
                   provenance=provenance, n_duplicates=dups)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def __len__(self):
        return len(self.edges)

    def __eq__(self, other):
        # same vocabularies and edge list; provenance is a label, not content
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (self.entities == other.entities and self.relations == other.relations
                and np.array_equal(self.edges, other.edges))

    __hash__ = object.__hash__

    @cached_property
    def entity_index(self) -> dict[str, int]:
        return {e: i for i, e in enumerate(self.entities)}

    @cached_property
    def relation_index(self) -> dict[str, int]:
        return {r: i for i, r in enumerate(self.relations)}

    @cached_property
    def edge_set(self) -> frozenset[Triple]:
        return frozenset(Triple(*map(int, e)) for e in self.edges)

    def triples(self) -> list[Triple]:
        return [Triple(*map(int, e)) for e in self.edges]

    def __contains__(self, triple) -> bool:
        return Triple(*map(int, triple)) in self.edge_set

    def with_edges(self, edges: np.ndarray, provenance: str) -> "KnowledgeGraph":
        return KnowledgeGraph(self.entities, self.relations, edges, provenance=provenance)

    def lookup(self, head: str, relation: str, tail: str) -> Triple:
        try:
            return Triple(self.entity_index[head.lower()], self.relation_index[relation.lower()],
                          self.entity_index[tail.lower()])
        except KeyError as exc:
            raise DataError(f"unknown surface string {exc.args[0]!r}") from None

    def surface(self, triple) -> tuple[str, str, str]:
        h, r, t = triple
        return self.entities[h], self.relations[r], self.entities[t]


def _read_tsv_triples(path):
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise MalformedLine(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            out.append(tuple(parts))
    return out


def load_kg(path) -> KnowledgeGraph:
    """Read a 3-column UTF-8 TSV (head, relation, tail), lowercasing surfaces.

    Duplicate edges are dropped; the count is kept in ``kg.n_duplicates``.
    """
    rows = _read_tsv_triples(path)
    if not rows:
        raise EmptyGraph(f"{path}: no edges")
    kg = KnowledgeGraph.from_string_triples(rows)
    if kg.n_duplicates:
        log.info("%s: dropped %d duplicate edges", path, kg.n_duplicates)
    return kg


def save_kg(kg: KnowledgeGraph, path, edges=None) -> None:
    edges = kg.edges if edges is None else edges
    with Path(path).open("w", encoding="utf-8") as fh:
        for h, r, t in edges:
            fh.write(f"{kg.entities[h]}\t{kg.relations[r]}\t{kg.entities[t]}\n")


def load_qa_facts(path, kg: KnowledgeGraph) -> list[Triple]:
    """Facts file for occlusion; every line must name an existing edge."""
    facts = []
    for lineno, row in enumerate(_read_tsv_triples(path), 1):
        triple = kg.lookup(*row)
        if triple not in kg:
            raise MalformedLine(path, lineno, f"fact {row} is not an edge of the graph")
        facts.append(triple)
    return facts


def split_edges(kg: KnowledgeGraph, train_fraction: float, seed: int):
    """Uniform random partition of the edges into (train, test) arrays.

    The test count is ``floor((1 - train_fraction) * E)``; the remainder goes
    to train. Both halves keep the graph's edge order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(kg.edges)
    # round() guards against 0.2 * 5 == 0.9999999999999998
    n_test = math.floor(round((1.0 - train_fraction) * n, 9))
    perm = np.random.default_rng(seed).permutation(n)
    test_mask = np.zeros(n, dtype=bool)
    test_mask[perm[:n_test]] = True
    return kg.edges[~test_mask].copy(), kg.edges[test_mask].copy()


@dataclass(frozen=True)
class OcclusionSpec:
    mode: str  # "qa-facts" | "fraction"
    fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("qa-facts", "fraction"):
            raise DataError(f"unknown occlusion mode {self.mode!r}")
        if self.mode == "fraction" and not 0.0 <= self.fraction <= 1.0:
            raise DataError(f"occlusion fraction must lie in [0, 1], got {self.fraction}")


def occlude(kg: KnowledgeGraph, spec: OcclusionSpec, qa_facts=None) -> KnowledgeGraph:
    """Remove edges (never entities) for incomplete-KG experiments."""
    n = len(kg.edges)
    if spec.mode == "qa-facts":
        if qa_facts is None:
            raise DataError("qa-facts occlusion needs the facts to remove")
        remove = {Triple(*map(int, f)) for f in qa_facts}
        missing = [f for f in remove if f not in kg]
        if missing:
            raise DataError(f"{len(missing)} QA fact(s) not present in graph, e.g. {kg.surface(missing[0])}")
        keep = np.array([Triple(*map(int, e)) not in remove for e in kg.edges], dtype=bool)
        note = f"occluded:qa-facts:{len(remove)}"
    else:
        if spec.fraction >= 1.0:
            raise DataError("fraction=1 would remove every edge")
        n_remove = math.floor(round(spec.fraction * n, 9))
        perm = np.random.default_rng(spec.seed).permutation(n)
        keep = np.ones(n, dtype=bool)
        keep[perm[:n_remove]] = False
        note = f"occluded:fraction:{spec.fraction:g}:seed{spec.seed}"
    return kg.with_edges(kg.edges[keep], provenance=note)


def removed_edges(original: KnowledgeGraph, occluded: KnowledgeGraph) -> frozenset[Triple]:
    return original.edge_set - occluded.edge_set
