"""Shared builders for gradient-check instances and small fixtures."""

import math

import numpy as np

from kgvqa import fusion, kge
from kgvqa.gradcheck import max_relative_error, numerical_grad
from kgvqa.kg import Triple
from kgvqa.qadata import ImageAsKnowledge, QAInstance
from kgvqa.text import WordVectorTable

EPS = 1e-3
KINK_MARGIN = 20 * EPS


def kge_instance(kind, seed, dim=8, n_ent=6, n_rel=3, batch=3, n_neg=4):
    """Small scoring model plus positives/negatives for finite differences.

    Vectors are shrunk so truncation error stays well below the tolerance;
    ERMLP draws with a pre-activation near a ReLU kink are redrawn."""
    rng = np.random.default_rng(seed)
    while True:
        m = kge.init_model(kind, n_ent, n_rel, dim, seed=int(rng.integers(2**31)))
        m.params["entity"] *= 0.5
        if kind != "rotate":
            m.params["relation"] *= 0.5
        if kind == "ermlp":
            for k in ("b1", "b2", "b3"):
                m.params[k] = rng.uniform(-0.1, 0.1, m.params[k].shape)
        pos = np.stack([rng.integers(n_ent, size=batch), rng.integers(n_rel, size=batch),
                        rng.integers(n_ent, size=batch)], 1)
        neg = kge.corrupt(pos, n_ent, n_neg, rng)
        if kind == "ermlp":
            allt = np.concatenate([pos, neg.reshape(-1, 3)])
            _, (_, z1, _, z2, _) = kge._forward(m, allt[:, 0], allt[:, 1], allt[:, 2])
            if min(np.abs(z1).min(), np.abs(z2).min()) < KINK_MARGIN:
                continue
        return m, pos, neg


def kge_gradcheck(kind, seed, sampling="adversarial", grad_through_weights=False, eps=EPS):
    m, pos, neg = kge_instance(kind, seed)
    _, grads = kge.kge_loss_and_grad(m, pos, neg, 1.0, sampling, grad_through_weights=grad_through_weights)
    frozen = None
    if sampling == "adversarial" and not grad_through_weights:
        # detached weights are constants: difference the loss with them held fixed
        frozen = kge.adversarial_weights(kge.score(m, neg[..., 0], neg[..., 1], neg[..., 2]), 1.0)

    def f():
        return kge.kge_loss_and_grad(m, pos, neg, 1.0, sampling, weights=frozen,
                                     grad_through_weights=grad_through_weights, need_grad=False)[0]

    return max_relative_error(grads, numerical_grad(f, m.params, eps))[0]


def toy_tables(rng, n_words=10, word_dim=4, n_ent=8, n_e=4):
    words = tuple(f"w{i}" for i in range(n_words))
    table = WordVectorTable(words, rng.normal(size=(n_words, word_dim)))
    return table, rng.normal(size=(n_ent, n_e))


def toy_instances(rng, words, n_ent, n=5, max_len=5, max_concepts=4):
    out = []
    for k in range(n):
        q = tuple(words[i] for i in rng.integers(len(words), size=int(rng.integers(1, max_len + 1))))
        concepts = tuple(int(c) for c in rng.choice(n_ent, size=int(rng.integers(1, max_concepts + 1)),
                                                    replace=False))
        img = ImageAsKnowledge(f"img{k}", concepts)
        if k % 2 == 0:
            out.append(QAInstance(q, img, concepts[0], "image", Triple(concepts[0], 0, 0)))
        else:
            a = int(rng.integers(n_ent))
            out.append(QAInstance(q, img, a, "kg", Triple(a, 0, 0)))
    return out


def qa_instance(seed, state_dim=4, n_e=4, word_dim=4):
    """(params, batch, gate_params) for the QA path with no ReLU pre-activation
    near zero."""
    rng = np.random.default_rng(seed)
    while True:
        table, ent = toy_tables(rng, word_dim=word_dim, n_e=n_e)
        inst = toy_instances(rng, table.tokens, len(ent))
        model = fusion.init_qa_model(table, ent, fusion.QAConfig(state_dim=state_dim, gate_state_dim=state_dim),
                                     seed=int(rng.integers(2**31)))
        batch = model.batch(inst)
        _, cache = fusion.forward(model.params, batch)
        z = np.concatenate([cache["heads"][h][0].ravel() for h in fusion.HEADS])
        if np.abs(z).min() >= KINK_MARGIN:
            return model.params, batch, model.gate_params


def qa_gradcheck(seed, drop=False, eps=EPS):
    params, batch, _ = qa_instance(seed)
    masks = None
    if drop:
        masks = fusion._drop_masks(np.random.default_rng(seed), len(batch), params["kvc_W1"].shape[1], 0.3)
    _, grads = fusion.loss_and_grad(params, batch, masks)

    def f():
        return fusion.loss_and_grad(params, batch, masks, need_grad=False)[0]

    return max_relative_error(grads, numerical_grad(f, params, eps))[0]


def gate_gradcheck(seed, eps=EPS):
    _, batch, gp = qa_instance(seed)
    _, grads = fusion.gate_loss_and_grad(gp, batch.X, batch.qmask, batch.is_kvc)

    def f():
        return fusion.gate_loss_and_grad(gp, batch.X, batch.qmask, batch.is_kvc, need_grad=False)[0]

    return max_relative_error(grads, numerical_grad(f, gp, eps))[0]


def brute_force_ranks(model, edges, known=None):
    """Rank each (h, r, ?) then each (?, r, t) by scoring triples one at a time
    and sorting; ties take the upper middle of their block."""
    known = None if known is None else {tuple(map(int, e)) for e in known}

    def rank(cands, true):
        scored = sorted(((kge.score(model, *trip), e) for e, trip in cands), key=lambda x: -x[0])
        s_true = next(s for s, e in scored if e == true)
        start = next(i for i, (s, _) in enumerate(scored) if s == s_true)
        block = sum(1 for s, _ in scored if s == s_true)
        return start + 1 + block // 2

    n = model.n_entities
    tails, heads = [], []
    for h, r, t in np.asarray(edges).tolist():
        tc = [(e, (h, r, e)) for e in range(n) if known is None or e == t or (h, r, e) not in known]
        hc = [(e, (e, r, t)) for e in range(n) if known is None or e == h or (e, r, t) not in known]
        tails.append(rank(tc, t))
        heads.append(rank(hc, h))
    return tails + heads


def brute_force_metrics(ranks):
    n = len(ranks)
    return {"mr": sum(ranks) / n, "mrr": math.fsum(1 / r for r in ranks) / n,
            "hits1": sum(r <= 1 for r in ranks) / n, "hits3": sum(r <= 3 for r in ranks) / n,
            "hits10": sum(r <= 10 for r in ranks) / n}


def random_kg_model(seed):
    """Random small graph and model; half the draws use integer embeddings so
    exact score ties are common."""
    rng = np.random.default_rng(seed)
    n_ent, n_rel = int(rng.integers(2, 26)), int(rng.integers(1, 4))
    kind = kge.KINDS[seed % 3]
    m = kge.init_model(kind, n_ent, n_rel, 4, seed=seed)
    if seed % 2 == 0:
        m.params["entity"] = rng.integers(-1, 2, m.entity.shape).astype(float)
        if kind == "rotate":
            m.params["relation"] = rng.choice([0.0, np.pi / 2, np.pi], m.relation.shape)
        else:
            m.params["relation"] = rng.integers(-1, 2, m.relation.shape).astype(float)
    n_edges = int(rng.integers(1, 30))
    edges = np.stack([rng.integers(n_ent, size=n_edges), rng.integers(n_rel, size=n_edges),
                      rng.integers(n_ent, size=n_edges)], 1)
    return m, edges


def naive_prune(question, image, kg, word_table, top_k):
    """Score every fact word by word with scalar cosines, then fully sort."""
    from kgvqa.text import cosine, tokenize

    context = list(question)
    if image is not None:
        for c in image.concepts:
            context += tokenize(kg.entities[c])
    context = list(dict.fromkeys(context))
    scored = []
    for i, (h, r, t) in enumerate(kg.edges.tolist()):
        words = list(dict.fromkeys(tokenize(kg.entities[h]) + tokenize(kg.relations[r]) + tokenize(kg.entities[t])))
        s = []
        for w in words:
            # an out-of-vocabulary word on either side contributes a cosine of 0
            s.append(max(cosine(word_table.get(w), word_table.get(c))
                         if w in word_table and c in word_table else 0.0 for c in context))
        s.sort(reverse=True)
        keep = -(-4 * len(words) // 5)  # ceil(0.8 n) in integers
        scored.append((sum(s[:keep]), i))
    scored.sort(key=lambda x: (-round(x[0], 9), x[1]))
    return [(tuple(kg.edges[i].tolist()), eta) for eta, i in scored[:top_k]]


def random_text_kg(seed, max_facts=500):
    """Random KG with multi-word surfaces, a word table that misses some
    tokens, and a question generator."""
    from kgvqa.kg import KnowledgeGraph

    rng = np.random.default_rng(seed)
    vocab = [f"t{i}" for i in range(int(rng.integers(8, 60)))]
    known = [w for w in vocab if rng.random() < 0.85]
    vecs = rng.normal(size=(len(known), 6))
    if seed % 2 == 0:
        # repeated vectors make exact eta ties likely
        vecs = vecs[rng.integers(0, max(1, len(known) // 3), size=len(known))]
    table = WordVectorTable(tuple(known), vecs)

    def phrase():
        return " ".join(rng.choice(vocab, size=int(rng.integers(1, 4))))

    ents = list(dict.fromkeys(phrase() for _ in range(int(rng.integers(3, 40)))))
    rels = list(dict.fromkeys(phrase() for _ in range(int(rng.integers(1, 5)))))
    n = int(rng.integers(1, max_facts + 1))
    rows = [(ents[rng.integers(len(ents))], rels[rng.integers(len(rels))], ents[rng.integers(len(ents))])
            for _ in range(n)]
    kg = KnowledgeGraph.from_string_triples(rows)

    def question():
        words = list(rng.choice(vocab + ["oov1", "oov2"], size=int(rng.integers(1, 8))))
        concepts = tuple(int(c) for c in rng.choice(kg.n_entities, size=int(rng.integers(1, min(4, kg.n_entities) + 1)),
                                                     replace=False))
        return tuple(words), ImageAsKnowledge("img", concepts)

    return kg, table, question
