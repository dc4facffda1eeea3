"""Seeded synthetic FVQA-shaped corpora with planted, learnable structure.

Entities live in a ``planted_dim`` space as lattice clusters: each entity is
a cluster root plus an integer combination of per-relation offset vectors.
An edge ``(a, r, b)`` is exact when ``b = a + offset_r``; when more edges are
requested than exact ones exist, the closest non-exact candidates (by
distance from ``a + offset_r``) fill the rest. Entity-name word vectors are a
fixed linear image of the planted coordinates plus noise, scaled by
``word_scale`` (large inputs make the question encoder train quickly).
Question templates state the answer source lexically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .kg import KnowledgeGraph, Triple, save_kg
from .qadata import MAX_CONCEPTS, ImageAsKnowledge, QAInstance, save_images, save_qa
from .text import WordVectorTable, save_vectors, tokenize

RELATION_NAMES = ("category", "hasproperty", "relatedto", "atlocation", "isa", "hasa", "capableof",
                  "usedfor", "desires", "partof", "receivesaction", "createdby", "comparative")

IMAGE_TEMPLATES = ("which object in this image {rel} {ent}",
                   "which thing shown in the picture {rel} {ent}",
                   "what in this image {rel} {ent}")
KB_TEMPLATES = ("what does the {ent} {rel}",
                "tell me what the {ent} {rel}",
                "what is the {ent} {rel}")

_CONS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SynthConfig:
    n_entities: int = 200
    n_relations: int = 3
    n_edges: int = 1500
    n_images: int = 50
    max_concepts_per_image: int = MAX_CONCEPTS
    n_questions: int = 300
    image_answer_fraction: float = 0.82
    planted_dim: int = 8
    seed: int = 0
    word_dim: int = 16
    cluster_size: int = 40
    word_noise: float = 0.05
    cluster_spread: float = 3.0
    word_scale: float = 4.0

    def __post_init__(self):
        counts = (self.n_entities, self.n_relations, self.n_edges, self.n_images,
                  self.n_questions, self.planted_dim, self.word_dim, self.cluster_size)
        if min(counts) < 1:
            raise DataError("synthetic counts must be positive")
        if self.n_entities < 2:
            raise DataError("need at least two entities")
        if not 1 <= self.max_concepts_per_image <= MAX_CONCEPTS:
            raise DataError(f"max_concepts_per_image must lie in [1, {MAX_CONCEPTS}]")
        if not 0.0 <= self.image_answer_fraction <= 1.0:
            raise DataError("image_answer_fraction must lie in [0, 1]")
        if self.n_edges > self.n_entities * (self.n_entities - 1) * self.n_relations:
            raise DataError("more edges requested than distinct (head, relation, tail) pairs")


@dataclass
class Corpus:
    kg: KnowledgeGraph
    vectors: WordVectorTable
    images: dict
    qa: list
    planted: np.ndarray = field(repr=False)
    exact: np.ndarray = field(repr=False)  # bool per edge: tail is an exact offset


def _names(n, rng, taken):
    names, seen = [], set(taken)
    syll = [c + v for c in _CONS for v in _VOWELS]
    while len(names) < n:
        w = "".join(rng.choice(syll, size=3))
        if w not in seen:
            seen.add(w)
            names.append(w)
    return names


def _grow_clusters(cfg, rng):
    n_clusters = max(1, math.ceil(cfg.n_entities / cfg.cluster_size))
    coeffs = [(c, (0,) * cfg.n_relations) for c in range(n_clusters)][:cfg.n_entities]
    present = set(coeffs)
    while len(coeffs) < cfg.n_entities:
        c, k = coeffs[rng.integers(len(coeffs))]
        r = rng.integers(cfg.n_relations)
        step = 1 if rng.random() < 0.5 else -1
        new = (c, tuple(v + step if j == r else v for j, v in enumerate(k)))
        if new not in present:
            present.add(new)
            coeffs.append(new)
    return coeffs


def _planted_kg(cfg, rng):
    d, n, R = cfg.planted_dim, cfg.n_entities, cfg.n_relations
    offsets = rng.normal(size=(R, d))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    coeffs = _grow_clusters(cfg, rng)
    n_clusters = max(c for c, _ in coeffs) + 1
    roots = rng.normal(scale=cfg.cluster_spread, size=(n_clusters, d))
    K = np.array([k for _, k in coeffs], dtype=float)
    cluster = np.array([c for c, _ in coeffs])
    planted = roots[cluster] + K @ offsets
    order = rng.permutation(n)  # decouple entity ids from growth order
    planted, coeffs = planted[order], [coeffs[i] for i in order]
    where = {ck: i for i, ck in enumerate(coeffs)}

    cand = []
    for r in range(R):
        target = planted + offsets[r]
        dist = np.linalg.norm(target[:, None, :] - planted[None, :, :], axis=2)
        for a in range(n):
            c, k = coeffs[a]
            b_exact = where.get((c, tuple(v + 1 if j == r else v for j, v in enumerate(k))))
            if b_exact is not None:
                dist[a, b_exact] = 0.0
        np.fill_diagonal(dist, np.inf)
        h_idx, t_idx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        cand.append(np.stack([dist.ravel(), h_idx.ravel(), np.full(n * n, r), t_idx.ravel()], 1))
    cand = np.concatenate(cand)
    cand = cand[np.isfinite(cand[:, 0])]
    tiebreak = rng.random(len(cand))
    pick = np.lexsort((tiebreak, cand[:, 0]))[:cfg.n_edges]
    chosen = cand[pick]
    chosen = chosen[rng.permutation(len(chosen))]
    edges = chosen[:, 1:].astype(np.int64)
    return planted, offsets, edges, chosen[:, 0] == 0.0


def _make_qa(cfg, rng, kg, exact, images_concepts):
    by_head: dict[int, list[int]] = {}
    for i, (h, _, _) in enumerate(kg.edges):
        by_head.setdefault(int(h), []).append(i)
    edge_set = kg.edge_set
    n_img = round(cfg.image_answer_fraction * cfg.n_questions)
    sources = np.array(["image"] * n_img + ["kg"] * (cfg.n_questions - n_img))
    sources = sources[rng.permutation(len(sources))]
    out = []
    for q, source in enumerate(sources):
        for _ in range(2000):
            img_id = f"img{rng.integers(cfg.n_images):04d}"
            concepts = images_concepts[img_id]
            h = concepts[rng.integers(len(concepts))]
            cands = by_head.get(h, [])
            if not cands:
                continue
            preferred = [i for i in cands if exact[i]] or cands
            e = preferred[rng.integers(len(preferred))]
            _, r, t = map(int, kg.edges[e])
            if t in concepts:
                continue
            rel = kg.relations[r]
            if source == "image":
                if any(Triple(c, r, t) in edge_set for c in concepts if c != h):
                    continue
                tmpl = IMAGE_TEMPLATES[rng.integers(len(IMAGE_TEMPLATES))]
                text, answer = tmpl.format(rel=rel, ent=kg.entities[t]), h
            else:
                tmpl = KB_TEMPLATES[rng.integers(len(KB_TEMPLATES))]
                text, answer = tmpl.format(rel=rel, ent=kg.entities[h]), t
            image = ImageAsKnowledge(img_id, tuple(concepts))
            out.append(QAInstance(tuple(tokenize(text)), image, answer, str(source), Triple(h, r, t), text))
            break
        else:
            raise DataError(f"could not place question {q}; increase n_images or n_edges")
    return out


def generate_synthetic(cfg: SynthConfig) -> Corpus:
    rng = np.random.default_rng(cfg.seed)
    planted, offsets, edges, exact = _planted_kg(cfg, rng)
    rel_names = [RELATION_NAMES[r] if r < len(RELATION_NAMES) else f"relation{r}" for r in range(cfg.n_relations)]
    template_words = sorted({w for t in IMAGE_TEMPLATES + KB_TEMPLATES for w in tokenize(t.format(rel="", ent=""))})
    ent_names = _names(cfg.n_entities, rng, set(rel_names) | set(template_words))
    # renumber in first-appearance order so a reloaded kg.tsv has identical ids;
    # entities without edges are dropped
    ent_order = list(dict.fromkeys(edges[:, [0, 2]].ravel().tolist()))
    rel_order = list(dict.fromkeys(edges[:, 1].tolist()))
    ent_map = np.full(cfg.n_entities, -1)
    ent_map[ent_order] = np.arange(len(ent_order))
    rel_map = np.full(cfg.n_relations, -1)
    rel_map[rel_order] = np.arange(len(rel_order))
    edges = np.stack([ent_map[edges[:, 0]], rel_map[edges[:, 1]], ent_map[edges[:, 2]]], 1)
    planted = planted[ent_order]
    ent_names = [ent_names[i] for i in ent_order]
    rel_names = [rel_names[i] for i in rel_order]
    n_ent = len(ent_names)
    kg = KnowledgeGraph(tuple(ent_names), tuple(rel_names), edges, provenance="synthetic")

    # word vectors: entity names are a noisy linear image of planted coordinates
    proj = rng.normal(size=(cfg.planted_dim, cfg.word_dim)) / np.sqrt(cfg.planted_dim)
    ent_vecs = cfg.word_scale * (planted @ proj + cfg.word_noise * rng.normal(size=(n_ent, cfg.word_dim)))
    scale = np.mean(np.linalg.norm(ent_vecs, axis=1))
    other = rel_names + template_words
    other_vecs = rng.normal(size=(len(other), cfg.word_dim)) * scale / np.sqrt(cfg.word_dim)
    vectors = WordVectorTable(tuple(ent_names) + tuple(other), np.vstack([ent_vecs, other_vecs]))

    m = cfg.max_concepts_per_image
    lo = max(1, min(3, m), m // 2)
    images_concepts = {}
    for i in range(cfg.n_images):
        k = int(rng.integers(lo, m + 1))
        images_concepts[f"img{i:04d}"] = [int(c) for c in rng.choice(n_ent, size=min(k, n_ent), replace=False)]
    qa = _make_qa(cfg, rng, kg, exact, images_concepts)
    images = {k: ImageAsKnowledge(k, tuple(v)) for k, v in images_concepts.items()}
    return Corpus(kg, vectors, images, qa, planted, exact)


def check_corpus(corpus: Corpus) -> list[str]:
    """Consistency problems (empty list when the corpus is sound)."""
    problems = []
    kg = corpus.kg
    for i, q in enumerate(corpus.qa):
        if q.supporting_fact not in kg:
            problems.append(f"qa {i}: supporting fact {kg.surface(q.supporting_fact)} not in KG")
        if q.answer not in (q.supporting_fact.head, q.supporting_fact.tail):
            problems.append(f"qa {i}: answer is not an endpoint of its supporting fact")
        if q.from_image and q.answer not in q.image.concepts:
            problems.append(f"qa {i}: image-source answer not in image concepts")
        if q.image.image_id not in corpus.images:
            problems.append(f"qa {i}: unknown image {q.image.image_id}")
    vocab = set(corpus.vectors.tokens)
    words = set()
    for q in corpus.qa:
        words.update(q.question)
    for name in kg.entities + kg.relations:
        words.update(tokenize(name))
    missing = sorted(words - vocab)
    if missing:
        problems.append(f"{len(missing)} tokens missing from the vector file, e.g. {missing[:5]}")
    return problems


FILES = {"kg": "kg.tsv", "vectors": "vectors.txt", "images": "images.tsv", "qa": "qa.tsv"}


def write_corpus(corpus: Corpus, directory) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / v for k, v in FILES.items()}
    save_kg(corpus.kg, paths["kg"])
    save_vectors(corpus.vectors, paths["vectors"])
    save_images(corpus.images, corpus.kg, paths["images"])
    save_qa(corpus.qa, corpus.kg, paths["qa"])
    return paths
