"""Experiment configuration and the staged train / evaluate pipeline."""

from __future__ import annotations

import hashlib
import logging
import time
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import fusion, kge, linkpred
from .composite import CompositeWeights, FactIndex, composite_scores, prune_facts
from .errors import DataError, DependencyError
from .kg import KnowledgeGraph, OcclusionSpec, load_kg, load_qa_facts, occlude, removed_edges, split_edges
from .qadata import load_images, load_qa
from .results import append_row
from .text import cosine_matrix, load_vectors

log = logging.getLogger(__name__)

STAGES = ("kge", "linkpred", "qa", "eval", "composite")

LAMBDA_GRID = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0),
               (0.34, 0.33, 0.33), (0.4, 0.3, 0.3),
               (0.5, 0.5, 0.0), (0.5, 0.25, 0.25), (0.5, 0.0, 0.5), (0.0, 0.5, 0.5),
               (0.6, 0.2, 0.2), (0.7, 0.15, 0.15), (0.8, 0.1, 0.1))


@dataclass
class ExperimentConfig:
    # inputs and outputs
    kg: str = "kg.tsv"
    vectors: str = "vectors.txt"
    images: str = "images.tsv"
    qa: str = "qa.tsv"
    qa_facts: str = ""          # optional fact file for qa-facts occlusion
    workdir: str = "run"
    results: str = "results.csv"
    seed: int = 0
    # embedding training
    kind: str = "transe"
    dim: int = 300
    gamma: float = 12.0
    kge_steps: int = 25000
    kge_batch_size: int = 1000
    kge_lr: float = 0.01
    kge_decay_every: int = 10000
    kge_decay_factor: float = 0.1
    alpha: float = 1.0
    n_negatives: int = 16
    sampling: str = "adversarial"
    grad_through_weights: bool = False
    kge_train_fraction: float = 0.8   # 1.0 trains on every edge (no link-prediction split)
    filtered: bool = False
    # question answering
    qa_state_dim: int = 32
    qa_hidden: int = 0
    qa_epochs: int = 250
    qa_batch_size: int = 64
    qa_lr: float = 0.01
    qa_decay_every: int = 100
    qa_decay_factor: float = 0.1
    qa_momentum: float = 0.9
    qa_weight_decay: float = 1e-3
    qa_dropout: float = 0.3
    gate_state_dim: int = 16
    gate_epochs: int = 20
    gate_lr: float = 0.1
    direct_image: bool = False
    n_splits: int = 5
    qa_train_fraction: float = 0.5
    # occlusion
    occlusion: str = "none"     # none | qa-facts | fraction
    occlusion_fraction: float = 0.0
    occlusion_seed: int = 0
    # composite score
    lambda1: float = 0.4
    lambda2: float = 0.3
    lambda3: float = 0.3
    top_k: int = 100
    normalize: bool = True

    def __post_init__(self):
        if self.occlusion not in ("none", "qa-facts", "fraction"):
            raise DataError(f"unknown occlusion mode {self.occlusion!r}")
        if self.kind not in kge.KINDS:
            raise DataError(f"unknown model kind {self.kind!r}")
        if self.sampling not in ("adversarial", "uniform"):
            raise DataError(f"unknown sampling {self.sampling!r}")
        if not 0.0 < self.kge_train_fraction <= 1.0 or not 0.0 < self.qa_train_fraction < 1.0:
            raise DataError("train fractions must lie in (0, 1)")
        if self.n_splits < 1:
            raise DataError("n_splits must be positive")

    @property
    def weights(self) -> CompositeWeights:
        return CompositeWeights(self.lambda1, self.lambda2, self.lambda3)

    def kge_config(self) -> kge.KgeTrainConfig:
        return kge.KgeTrainConfig(steps=self.kge_steps, batch_size=self.kge_batch_size, learning_rate=self.kge_lr,
                                  decay_every=self.kge_decay_every, decay_factor=self.kge_decay_factor,
                                  alpha=self.alpha, n_negatives=self.n_negatives, sampling=self.sampling,
                                  dim=self.dim, gamma=self.gamma, seed=self.seed,
                                  grad_through_weights=self.grad_through_weights)

    def qa_config(self, split: int = 0) -> fusion.QAConfig:
        return fusion.QAConfig(state_dim=self.qa_state_dim, hidden=self.qa_hidden, epochs=self.qa_epochs,
                               batch_size=self.qa_batch_size, learning_rate=self.qa_lr,
                               decay_every=self.qa_decay_every, decay_factor=self.qa_decay_factor,
                               momentum=self.qa_momentum, weight_decay=self.qa_weight_decay,
                               dropout=self.qa_dropout, gate_state_dim=self.gate_state_dim,
                               gate_epochs=self.gate_epochs, gate_lr=self.gate_lr, seed=self.seed * 1000 + split)

    def path(self, name) -> Path:
        return Path(self.workdir) / name


# ---------------------------------------------------------------------------
# config files: flat ``key = value`` text, ``#`` starts a comment

_PATH_KEYS = ("kg", "vectors", "images", "qa", "qa_facts", "workdir", "results")
_KGE_KEYS = ("kg", "qa", "qa_facts", "seed", "kind", "dim", "gamma", "kge_steps", "kge_batch_size", "kge_lr",
             "kge_decay_every", "kge_decay_factor", "alpha", "n_negatives", "sampling", "grad_through_weights",
             "kge_train_fraction", "occlusion", "occlusion_fraction", "occlusion_seed")


def _coerce(name, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise DataError(f"bad value for {name}: {raw!r}") from None
    return raw


def config_defaults() -> dict:
    return asdict(ExperimentConfig())


def parse_overrides(pairs, base: dict | None = None) -> dict:
    """Apply ``key=value`` strings on top of ``base`` (defaults when omitted)."""
    out = dict(config_defaults() if base is None else base)
    defaults = config_defaults()
    for pair in pairs:
        if "=" not in pair:
            raise DataError(f"expected key=value, got {pair!r}")
        key, val = (s.strip() for s in pair.split("=", 1))
        key = key.replace("-", "_")
        if key not in defaults:
            raise DataError(f"unknown config key {key!r}")
        out[key] = _coerce(key, val, defaults[key])
    return out


def load_config(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        pairs.append(line)
    values = parse_overrides(pairs)
    # relative paths in the file are taken relative to the file itself
    for key in _PATH_KEYS:
        v = values[key]
        if v and not Path(v).is_absolute():
            values[key] = str(path.parent / v)
    return ExperimentConfig(**parse_overrides(overrides, values))


def save_config(cfg: ExperimentConfig, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, v in asdict(cfg).items():
            fh.write(f"{k} = {v}\n")


_OUTPUT_KEYS = ("workdir", "results")


def config_hash(cfg: ExperimentConfig, keys=None) -> str:
    """Short digest of the experiment settings; output locations are left out."""
    d = asdict(cfg)
    keys = sorted(k for k in d if k not in _OUTPUT_KEYS) if keys is None else sorted(keys)
    text = "\n".join(f"{k}={d[k]!r}" for k in keys)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# occlusion audit


class EdgeAudit:
    """Counts how often a stage touches an edge removed by occlusion."""

    def __init__(self, removed=frozenset()):
        self.removed = frozenset(tuple(map(int, t)) for t in removed)
        self.hits = 0
        self.checked = 0

    def check(self, edges) -> int:
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
        self.checked += len(edges)
        found = sum(tuple(e) in self.removed for e in edges.tolist()) if self.removed else 0
        self.hits += found
        return found


# ---------------------------------------------------------------------------
# data


@dataclass
class Inputs:
    kg: KnowledgeGraph          # after occlusion
    original: KnowledgeGraph
    vectors: object
    images: dict
    qa: list
    audit: EdgeAudit


def load_inputs(cfg: ExperimentConfig, need_text=True) -> Inputs:
    original = load_kg(cfg.kg)
    vectors = images = None
    qa = []
    if need_text or cfg.occlusion == "qa-facts":
        vectors = load_vectors(cfg.vectors) if need_text else None
        images = load_images(cfg.images, original)
        qa = load_qa(cfg.qa, original, images)
    kg = original
    if cfg.occlusion != "none":
        spec = OcclusionSpec(cfg.occlusion, cfg.occlusion_fraction, cfg.occlusion_seed)
        facts = None
        if cfg.occlusion == "qa-facts":
            facts = load_qa_facts(cfg.qa_facts, original) if cfg.qa_facts else sorted({q.supporting_fact for q in qa})
        kg = occlude(original, spec, facts)
    return Inputs(kg, original, vectors, images, qa, EdgeAudit(removed_edges(original, kg)))


def kge_split(cfg: ExperimentConfig, kg: KnowledgeGraph):
    if cfg.kge_train_fraction >= 1.0:
        return kg.edges, kg.edges[:0]
    return split_edges(kg, cfg.kge_train_fraction, cfg.seed)


def qa_splits(n: int, n_splits: int, train_fraction: float, seed: int):
    """Seeded (train, test) index arrays; split ``i`` uses stream ``(seed, i)``."""
    if n < 2:
        raise DataError("need at least two QA instances to split")
    n_train = min(n - 1, max(1, int(round(n * train_fraction))))
    out = []
    for i in range(n_splits):
        perm = np.random.default_rng([seed, i]).permutation(n)
        out.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    return out


# ---------------------------------------------------------------------------
# evaluation


def _hits(ranks, k):
    return float(np.mean(np.asarray(ranks, dtype=float) <= k))


def evaluate_qa(instances, model: fusion.QAModel, mode="standalone", kg=None, word_table=None,
                weights: CompositeWeights | None = None, top_k=100, index=None, normalize=True,
                audit: EdgeAudit | None = None) -> dict:
    """Hits@1 / Hits@3 (and gate accuracy) over ``instances``."""
    if not instances:
        raise DataError("empty evaluation split")
    gate_acc = float(np.mean((model.gate_probs(instances) >= 0.5) == np.array([q.from_image for q in instances])))
    if mode == "standalone":
        queries, _ = model.queries(instances)
        S = cosine_matrix(queries, model.entity_table)
        ranks = [fusion.rank_of(S[i], q.answer) for i, q in enumerate(instances)]
    elif mode == "composite":
        if kg is None or word_table is None or weights is None:
            raise DataError("composite evaluation needs kg, word_table and weights")
        index = index or FactIndex(kg, word_table)
        ranks = []
        for q in instances:
            facts = prune_facts(q.question, q.image, kg, word_table, top_k, index)
            if audit is not None:
                audit.check([f.fact for f in facts])
            cands, *_, total = composite_scores(q, model, facts, weights, word_table, kg, normalize)
            if q.answer in cands:
                ranks.append(fusion.rank_of(total, cands.index(q.answer)))
            else:
                ranks.append(np.inf)
    else:
        raise DataError(f"unknown evaluation mode {mode!r}")
    return {"hits1": _hits(ranks, 1), "hits3": _hits(ranks, 3), "gate_accuracy": gate_acc, "n": len(instances)}


# ---------------------------------------------------------------------------
# pipeline


def _kge_paths(cfg):
    return cfg.path("kge_model.txt"), cfg.path("kge_model.hash"), cfg.path("kge_trajectory.csv")


def _load_kge(cfg) -> kge.ScoringModel:
    ckpt, hfile, _ = _kge_paths(cfg)
    if not ckpt.exists():
        raise DependencyError(f"no embedding checkpoint at {ckpt}; run the kge stage first")
    want = config_hash(cfg, _KGE_KEYS)
    if hfile.exists() and hfile.read_text().strip() != want:
        warnings.warn(f"{ckpt} was trained under a different configuration", stacklevel=2)
    return kge.load_model(ckpt)


def _qa_ckpt(cfg, split):
    return cfg.path(f"qa_split{split}.txt")


def _load_qa(cfg, split, vectors, entity_table) -> fusion.QAModel:
    p = _qa_ckpt(cfg, split)
    if not p.exists():
        raise DependencyError(f"no QA checkpoint at {p}; run the qa stage first")
    m = fusion.load_qa_model(p, vectors, entity_table)
    m.direct_image = cfg.direct_image
    return m


def _base_row(cfg, stage, h):
    return {"stage": stage, "config_hash": h, "seed": cfg.seed, "kind": cfg.kind, "sampling": cfg.sampling,
            "occlusion": cfg.occlusion if cfg.occlusion != "fraction" else f"fraction={cfg.occlusion_fraction}"}


def run_pipeline(cfg: ExperimentConfig, stages, record=True) -> list[dict]:
    """Run ``stages`` in canonical order; returns (and appends) result rows."""
    stages = list(dict.fromkeys(stages))
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise DataError(f"unknown stages {bad}; choose from {STAGES}")
    if not stages:
        return []
    rows = []
    h = config_hash(cfg)
    need_text = any(s in stages for s in ("qa", "eval", "composite"))
    inp = load_inputs(cfg, need_text)
    train_edges, test_edges = kge_split(cfg, inp.kg)
    Path(cfg.workdir).mkdir(parents=True, exist_ok=True)  # only once the inputs have loaded

    def emit(row):
        rows.append(row)
        if record:
            append_row(cfg.results, row)

    if "kge" in stages:
        inp.audit.check(train_edges)
        model = kge.train_kge(train_edges, cfg.kge_config(), cfg.kind, inp.kg.n_entities, inp.kg.n_relations)
        ckpt, hfile, traj = _kge_paths(cfg)
        kge.save_model(model, ckpt)
        kge.write_trajectory(model, traj)
        hfile.write_text(config_hash(cfg, _KGE_KEYS) + "\n")
    if "linkpred" in stages:
        model = _load_kge(cfg)
        if len(test_edges) == 0:
            raise DataError("link prediction needs kge_train_fraction < 1")
        m = linkpred.evaluate(model, test_edges, cfg.filtered, inp.kg.edges if cfg.filtered else None)
        log.info("linkpred %s", m.as_json())
        emit({**_base_row(cfg, "linkpred", h), "mode": "filtered" if cfg.filtered else "raw",
              "mr": m.mr, "mrr": m.mrr, "hits1": m.hits1, "hits3": m.hits3, "hits10": m.hits10, "n": m.n_queries})
    splits = qa_splits(len(inp.qa), cfg.n_splits, cfg.qa_train_fraction, cfg.seed) if need_text else []
    if "qa" in stages:
        entity = _load_kge(cfg).entity
        for i, (tr, _) in enumerate(splits):
            qm = fusion.train_qa([inp.qa[j] for j in tr], entity, inp.vectors, cfg.qa_config(i))
            fusion.save_qa_model(qm, _qa_ckpt(cfg, i))
    for stage, mode in (("eval", "standalone"), ("composite", "composite")):
        if stage not in stages:
            continue
        entity = _load_kge(cfg).entity
        index = FactIndex(inp.kg, inp.vectors) if mode == "composite" else None
        per = []
        for i, (_, te) in enumerate(splits):
            qm = _load_qa(cfg, i, inp.vectors, entity)
            r = evaluate_qa([inp.qa[j] for j in te], qm, mode, inp.kg, inp.vectors, cfg.weights, cfg.top_k,
                            index, cfg.normalize, inp.audit)
            per.append(r)
            extra = {"lambda1": cfg.lambda1, "lambda2": cfg.lambda2, "lambda3": cfg.lambda3,
                     "top_k": cfg.top_k} if mode == "composite" else {}
            emit({**_base_row(cfg, stage, h), "mode": mode, "split": i, **extra, **r})
        mean = {k: float(np.mean([r[k] for r in per])) for k in ("hits1", "hits3", "gate_accuracy")}
        extra = {"lambda1": cfg.lambda1, "lambda2": cfg.lambda2, "lambda3": cfg.lambda3,
                 "top_k": cfg.top_k} if mode == "composite" else {}
        emit({**_base_row(cfg, stage, h), "mode": mode, "split": "mean", **extra, **mean,
              "n": sum(r["n"] for r in per)})
    if inp.audit.hits:
        raise DataError(f"occluded edges were read {inp.audit.hits} times")
    return rows


# ---------------------------------------------------------------------------
# harness modes


def bench_inference(model: fusion.QAModel, instance, entity_counts, repeats: int, seed=0) -> list[dict]:
    """Median answer() latency against entity tables of each size.

    Tables are built by replicating (or truncating) the model's entity table,
    with a tiny seeded jitter so that rows stay distinct."""
    counts = list(entity_counts)
    if counts != sorted(counts):
        raise DataError("entity counts must be ascending")
    if repeats <= 0:
        return []
    base = model.entity_table
    rng = np.random.default_rng(seed)
    rows = []
    for n in counts:
        reps = -(-n // len(base))
        table = np.tile(base, (reps, 1))[:n]
        table = table + 1e-9 * rng.standard_normal(table.shape)
        times = []
        stats = {}
        for _ in range(repeats):
            t0 = time.perf_counter()
            fusion.answer(instance, model, table, stats=stats)
            times.append(time.perf_counter() - t0)
        rows.append({"n_entities": n, "median_seconds": float(np.median(times)),
                     "evaluations_per_query": stats["score_evaluations"] / repeats})
    return rows


def doubling_ratios(rows) -> list[float]:
    return [b["median_seconds"] / a["median_seconds"] for a, b in zip(rows, rows[1:])]


def sweep_lambda(cfg: ExperimentConfig, grid=LAMBDA_GRID, top_ks=(100, 500), record=True) -> list[dict]:
    """Composite evaluation for every (lambda, top_k) over the trained splits."""
    out = []
    for top_k in top_ks:
        for lam in grid:
            c = replace(cfg, lambda1=lam[0], lambda2=lam[1], lambda3=lam[2], top_k=top_k)
            rows = run_pipeline(c, ["composite"], record=record)
            out.append(rows[-1])
    return out


def compare_sampling(cfg: ExperimentConfig, kinds=kge.KINDS, seeds=range(5), record=True) -> list[dict]:
    """Adversarial vs uniform link prediction per model kind, averaged over seeds."""
    kg = load_inputs(cfg, need_text=False).kg
    train, test = split_edges(kg, cfg.kge_train_fraction if cfg.kge_train_fraction < 1 else 0.8, cfg.seed)
    h = config_hash(cfg)
    rows = []
    for kind in kinds:
        for sampling in ("adversarial", "uniform"):
            ms = []
            for s in seeds:
                c = replace(cfg, kind=kind, sampling=sampling, seed=s)
                model = kge.train_kge(train, c.kge_config(), kind, kg.n_entities, kg.n_relations)
                ms.append(linkpred.evaluate(model, test, cfg.filtered, kg.edges if cfg.filtered else None))
            row = {"stage": "compare-sampling", "config_hash": h, "seed": "|".join(map(str, seeds)), "kind": kind,
                   "sampling": sampling, "mode": "filtered" if cfg.filtered else "raw",
                   "n": sum(m.n_queries for m in ms)}
            for k in ("mr", "mrr", "hits1", "hits3", "hits10"):
                row[k] = float(np.mean([getattr(m, k) for m in ms]))
            rows.append(row)
            if record:
                append_row(cfg.results, row)
    return rows
