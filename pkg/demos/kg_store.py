"""Load, split and occlude a knowledge graph."""

import tempfile
from pathlib import Path

from kgvqa import KnowledgeGraph, OcclusionSpec, load_kg, occlude, save_kg, split_edges
from kgvqa.kg import removed_edges

kg = KnowledgeGraph.from_string_triples([
    ("dog", "isa", "animal"), ("cat", "isa", "animal"), ("dog", "capableof", "bark"),
    ("Dog", "IsA", "animal"),  # duplicate after case folding
    ("milk", "atlocation", "fridge"), ("fridge", "usedfor", "cooling"),
])
print(f"{kg.n_entities} entities, {kg.n_relations} relations, {len(kg.edges)} edges, "
      f"{kg.n_duplicates} duplicate dropped")

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "kg.tsv"
    save_kg(kg, path)
    assert load_kg(path) == kg

train, test = split_edges(kg, 0.6, seed=0)
print("train", len(train), "test", len(test))

spec = OcclusionSpec("fraction", 0.4, seed=1)
small = occlude(kg, spec)
print(small.provenance, "removed:", [kg.surface(t) for t in sorted(removed_edges(kg, small))])
