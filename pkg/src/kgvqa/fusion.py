"""Image-as-knowledge question answering network.

Forward path for one question/image pair::

    word vectors --LSTM--> per-word states S          (encode_question)
    a_q = softmax(S w_q),  A_q = sum_t a_q[t] S[t]     (attend_question)
    a_I = softmax([A_q; e_j] . w_I), A_I = sum a_I e_j (attend_image)
    f_head = W2 relu(W1 [A_I; A_q] + b1) + b2          (fuse, head in {kvc, kb})

A separate LSTM + logistic unit (the gate) picks the kvc head when the answer
should be visible in the image. Answers are retrieved by cosine similarity
against the frozen entity embedding table. Everything is batched with
right-padding masks, and all gradients are written out by hand.

LSTM cell (gate order i, f, o, g)::

    a = x Wx + h Wh + b
    i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o);  g = tanh(a_g)
    c' = f * c + i * g;  h' = o * tanh(c')
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, NumericalError
from .optim import SGD
from .qadata import ImageAsKnowledge, QAInstance
from .text import WordVectorTable
from .textio import read_named, write_named

log = logging.getLogger(__name__)

HEADS = ("kvc", "kb")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# parameters


def init_encoder(rng, input_dim, state_dim, prefix="enc"):
    k = 1.0 / np.sqrt(state_dim)
    return {f"{prefix}_Wx": rng.uniform(-k, k, (input_dim, 4 * state_dim)),
            f"{prefix}_Wh": rng.uniform(-k, k, (state_dim, 4 * state_dim)),
            f"{prefix}_b": rng.uniform(-k, k, 4 * state_dim)}


def init_fusion(rng, state_dim, n_e, hidden):
    p = {"w_q": rng.uniform(-1, 1, state_dim) / np.sqrt(state_dim),
         "w_I": rng.uniform(-1, 1, state_dim + n_e) / np.sqrt(state_dim + n_e)}
    for head in HEADS:
        k1, k2 = 1.0 / np.sqrt(n_e + state_dim), 1.0 / np.sqrt(hidden)
        p[f"{head}_W1"] = rng.uniform(-k1, k1, (n_e + state_dim, hidden))
        p[f"{head}_b1"] = rng.uniform(-k1, k1, hidden)
        p[f"{head}_W2"] = rng.uniform(-k2, k2, (hidden, n_e))
        p[f"{head}_b2"] = rng.uniform(-k2, k2, n_e)
    return p


def init_gate(rng, input_dim, state_dim):
    p = init_encoder(rng, input_dim, state_dim, prefix="gate")
    k = 1.0 / np.sqrt(state_dim)
    p["gate_w"] = rng.uniform(-k, k, state_dim)
    p["gate_c"] = np.zeros(1)
    return p


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    X: np.ndarray          # (B, T, D) word vectors, OOV rows zero
    qmask: np.ndarray      # (B, T) bool
    E: np.ndarray          # (B, M, N_e) concept embeddings
    imask: np.ndarray      # (B, M) bool
    is_kvc: np.ndarray     # (B,) bool, answer visible in the image
    targets: np.ndarray    # (B, N_e) answer embeddings

    def __len__(self):
        return self.X.shape[0]


def make_batch(instances, word_table: WordVectorTable, entity_table: np.ndarray) -> Batch:
    B = len(instances)
    if B == 0:
        raise DataError("empty batch")
    T = max(len(q.question) for q in instances)
    M = max(len(q.image.concepts) for q in instances)
    if T == 0:
        raise DataError("empty question")
    n_e = entity_table.shape[1]
    X = np.zeros((B, T, word_table.dim))
    qmask = np.zeros((B, T), dtype=bool)
    E = np.zeros((B, M, n_e))
    imask = np.zeros((B, M), dtype=bool)
    for b, q in enumerate(instances):
        if not q.question:
            raise DataError("empty question")
        X[b, :len(q.question)] = word_table.lookup(q.question)
        qmask[b, :len(q.question)] = True
        E[b, :len(q.image.concepts)] = entity_table[list(q.image.concepts)]
        imask[b, :len(q.image.concepts)] = True
    is_kvc = np.array([q.from_image for q in instances])
    targets = entity_table[[q.answer for q in instances]]
    return Batch(X, qmask, E, imask, is_kvc, targets)


# ---------------------------------------------------------------------------
# LSTM


def _lstm_forward(p, prefix, X, mask):
    Wx, Wh, bias = p[f"{prefix}_Wx"], p[f"{prefix}_Wh"], p[f"{prefix}_b"]
    B, T, _ = X.shape
    H = Wh.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    S = np.zeros((B, T, H))
    cache = []
    for t in range(T):
        a = X[:, t] @ Wx + h @ Wh + bias
        i, f, o = _sigmoid(a[:, :H]), _sigmoid(a[:, H:2 * H]), _sigmoid(a[:, 2 * H:3 * H])
        g = np.tanh(a[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t:t + 1]
        cache.append((i, f, o, g, c, tc, h, m))
        c = np.where(m, c_new, c)
        h = np.where(m, h_new, h)
        S[:, t] = h
    return S, h, cache


def _lstm_backward(p, prefix, X, cache, dS, dh_final, grads):
    Wh = p[f"{prefix}_Wh"]
    H = Wh.shape[0]
    B, T, _ = X.shape
    dWx = np.zeros_like(p[f"{prefix}_Wx"])
    dWh = np.zeros_like(Wh)
    db = np.zeros_like(p[f"{prefix}_b"])
    dh = np.zeros((B, H)) if dh_final is None else dh_final.copy()
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i, f, o, g, c_prev, tc, h_prev, m = cache[t]
        if dS is not None:
            dh = dh + dS[:, t]
        dh_new = np.where(m, dh, 0.0)
        dc_new = np.where(m, dc, 0.0) + dh_new * o * (1.0 - tc * tc)
        da = np.concatenate([dc_new * g * i * (1.0 - i),
                             dc_new * c_prev * f * (1.0 - f),
                             dh_new * tc * o * (1.0 - o),
                             dc_new * i * (1.0 - g * g)], axis=1)
        dWx += X[:, t].T @ da
        dWh += h_prev.T @ da
        db += da.sum(0)
        dh = da @ Wh.T + np.where(m, 0.0, dh)
        dc = dc_new * f + np.where(m, 0.0, dc)
    grads[f"{prefix}_Wx"] = grads.get(f"{prefix}_Wx", 0) + dWx
    grads[f"{prefix}_Wh"] = grads.get(f"{prefix}_Wh", 0) + dWh
    grads[f"{prefix}_b"] = grads.get(f"{prefix}_b", 0) + db


# ---------------------------------------------------------------------------
# attention


def _masked_softmax(logits, mask):
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.where(mask, np.exp(z), 0.0)
    return w / w.sum(axis=-1, keepdims=True)


def _softmax_backward(alpha, dalpha):
    return alpha * (dalpha - np.sum(alpha * dalpha, axis=-1, keepdims=True))


def _attend_q(S, qmask, w_q):
    alpha = _masked_softmax(S @ w_q, qmask)
    return np.einsum("bt,bth->bh", alpha, S), alpha


def _attend_i(A_q, E, imask, w_I):
    H = A_q.shape[1]
    logits = (A_q @ w_I[:H])[:, None] + E @ w_I[H:]
    alpha = _masked_softmax(logits, imask)
    return np.einsum("bm,bme->be", alpha, E), alpha


# ---------------------------------------------------------------------------
# heads


def _head_forward(p, head, x, drop_mask=None):
    z1 = x @ p[f"{head}_W1"] + p[f"{head}_b1"]
    a1 = np.maximum(z1, 0.0)
    if drop_mask is not None:
        a1 = a1 * drop_mask
    return a1 @ p[f"{head}_W2"] + p[f"{head}_b2"], (z1, a1)


def _head_backward(p, head, x, cache, dy, drop_mask, grads):
    z1, a1 = cache
    grads[f"{head}_W2"] += a1.T @ dy
    grads[f"{head}_b2"] += dy.sum(0)
    da1 = dy @ p[f"{head}_W2"].T
    if drop_mask is not None:
        da1 = da1 * drop_mask
    dz1 = da1 * (z1 > 0)
    grads[f"{head}_W1"] += x.T @ dz1
    grads[f"{head}_b1"] += dz1.sum(0)
    return dz1 @ p[f"{head}_W1"].T


# ---------------------------------------------------------------------------
# loss


def fvqa_loss(query, answer_vec) -> float:
    """1 - cos(query, answer); rows are averaged for 2-D inputs."""
    q, a = np.atleast_2d(query).astype(float), np.atleast_2d(answer_vec).astype(float)
    nq, na = np.linalg.norm(q, axis=1), np.linalg.norm(a, axis=1)
    if np.any(nq == 0) or np.any(na == 0):
        raise DataError("cosine loss is undefined for zero vectors")
    cos = np.clip(np.sum(q * a, axis=1) / (nq * na), -1.0, 1.0)
    return float(np.mean(1.0 - cos))


def _cos_loss_grad(y, t):
    """Per-row 1 - cos(y, t) and its gradient wrt y."""
    ny = np.linalg.norm(y, axis=1, keepdims=True)
    nt = np.linalg.norm(t, axis=1, keepdims=True)
    ny = np.where(ny > 0, ny, 1e-12)
    yh, th = y / ny, t / nt
    cos = np.sum(yh * th, axis=1, keepdims=True)
    return 1.0 - cos[:, 0], -(th - cos * yh) / ny


def forward(params, batch: Batch, drop_masks=None, direct_image=False):
    """Query vectors from both heads plus everything backward needs."""
    S, _, lstm_cache = _lstm_forward(params, "enc", batch.X, batch.qmask)
    A_q, alpha_q = _attend_q(S, batch.qmask, params["w_q"])
    A_I, alpha_I = _attend_i(A_q, batch.E, batch.imask, params["w_I"])
    x = np.concatenate([A_I, A_q], axis=1)
    outs, caches = {}, {}
    for head in HEADS:
        dm = None if drop_masks is None else drop_masks[head]
        outs[head], caches[head] = _head_forward(params, head, x, dm)
    if direct_image:
        outs["kvc"] = A_I
    cache = dict(S=S, lstm=lstm_cache, A_q=A_q, alpha_q=alpha_q, A_I=A_I, alpha_I=alpha_I, x=x, heads=caches)
    return outs, cache


def loss_and_grad(params, batch: Batch, drop_masks=None, need_grad=True):
    """Mean cosine loss; each instance uses the head matching its label."""
    outs, cache = forward(params, batch, drop_masks)
    B = len(batch)
    y = np.where(batch.is_kvc[:, None], outs["kvc"], outs["kb"])
    per, dy = _cos_loss_grad(y, batch.targets)
    loss = float(per.mean())
    if not need_grad:
        return loss, None
    dy /= B
    grads = {k: np.zeros_like(v) for k, v in params.items() if not k.startswith("gate")}
    x = cache["x"]
    dx = np.zeros_like(x)
    for head, sel in (("kvc", batch.is_kvc), ("kb", ~batch.is_kvc)):
        dyh = np.where(sel[:, None], dy, 0.0)
        dm = None if drop_masks is None else drop_masks[head]
        dx += _head_backward(params, head, x, cache["heads"][head], dyh, dm, grads)
    n_e = batch.E.shape[2]
    dA_I, dA_q = dx[:, :n_e], dx[:, n_e:].copy()
    # image attention (concept embeddings are frozen)
    H = dA_q.shape[1]
    alpha_I = cache["alpha_I"]
    dl_I = _softmax_backward(alpha_I, np.einsum("bme,be->bm", batch.E, dA_I))
    grads["w_I"][H:] += np.einsum("bm,bme->e", dl_I, batch.E)
    dsum = dl_I.sum(axis=1)
    grads["w_I"][:H] += dsum @ cache["A_q"]
    dA_q += dsum[:, None] * params["w_I"][:H]
    # question attention
    S, alpha_q = cache["S"], cache["alpha_q"]
    dS = alpha_q[:, :, None] * dA_q[:, None, :]
    dl_q = _softmax_backward(alpha_q, np.einsum("bth,bh->bt", S, dA_q))
    grads["w_q"] += np.einsum("bt,bth->h", dl_q, S)
    dS += dl_q[:, :, None] * params["w_q"]
    _lstm_backward(params, "enc", batch.X, cache["lstm"], dS, None, grads)
    return loss, grads


def gate_forward(params, X, qmask):
    _, h, cache = _lstm_forward(params, "gate", X, qmask)
    logit = h @ params["gate_w"] + params["gate_c"][0]
    return _sigmoid(logit), (h, cache, logit)


def gate_loss_and_grad(params, X, qmask, labels, need_grad=True):
    """Mean binary cross-entropy of the gate against ``labels`` (1 = image)."""
    prob, (h, cache, logit) = gate_forward(params, X, qmask)
    y = labels.astype(float)
    loss = float(np.mean(np.logaddexp(0.0, logit) - y * logit))
    if not need_grad:
        return loss, None
    dlogit = (prob - y) / len(y)
    grads = {"gate_w": h.T @ dlogit, "gate_c": np.array([dlogit.sum()])}
    _lstm_backward(params, "gate", X, cache, None, dlogit[:, None] * params["gate_w"], grads)
    return loss, grads


# ---------------------------------------------------------------------------
# single-instance API


def encode_question(tokens, word_table: WordVectorTable, encoder: dict, prefix="enc") -> np.ndarray:
    """(|q|, state_dim) hidden state after each token."""
    if len(tokens) == 0:
        raise DataError("empty question")
    X = word_table.lookup(list(tokens))[None]
    S, _, _ = _lstm_forward(encoder, prefix, X, np.ones((1, len(tokens)), dtype=bool))
    return S[0]


def attend_question(states, w_q):
    states = np.atleast_2d(states)
    A, alpha = _attend_q(states[None], np.ones((1, len(states)), dtype=bool), np.asarray(w_q))
    return A[0], alpha[0]


def attend_image(A_q, image: ImageAsKnowledge, entity_table, w_I):
    if not image.concepts:
        raise DataError("image has no concepts")
    E = np.asarray(entity_table)[list(image.concepts)][None]
    A, alpha = _attend_i(np.asarray(A_q)[None], E, np.ones((1, E.shape[1]), dtype=bool), np.asarray(w_I))
    return A[0], alpha[0]


def fuse(A_I, A_q, head: str, params: dict) -> np.ndarray:
    if head not in HEADS:
        raise DataError(f"unknown head {head!r}")
    x = np.concatenate([np.asarray(A_I), np.asarray(A_q)])
    if x.shape[0] != params[f"{head}_W1"].shape[0]:
        raise DimensionError(f"fusion input has {x.shape[0]} dims, head expects {params[f'{head}_W1'].shape[0]}")
    return _head_forward(params, head, x[None])[0][0]


def gate(tokens, word_table: WordVectorTable, gate_params: dict) -> float:
    if len(tokens) == 0:
        raise DataError("empty question")
    X = word_table.lookup(list(tokens))[None]
    prob, _ = gate_forward(gate_params, X, np.ones((1, len(tokens)), dtype=bool))
    return float(prob[0])


# ---------------------------------------------------------------------------
# model


@dataclass
class QAConfig:
    state_dim: int = 32
    hidden: int = 0            # 0 -> 2 * N_e
    epochs: int = 250
    batch_size: int = 64
    learning_rate: float = 0.01
    decay_every: int = 100     # epochs
    decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-3
    dropout: float = 0.3
    gate_state_dim: int = 16
    gate_epochs: int = 20
    gate_lr: float = 0.1
    gate_batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.gate_epochs < 0 or self.batch_size < 1 or self.state_dim < 1:
            raise DataError("bad QA training config")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError("dropout must lie in [0, 1)")


@dataclass
class QAModel:
    params: dict
    gate_params: dict
    word_table: WordVectorTable = field(repr=False)
    entity_table: np.ndarray = field(repr=False)
    direct_image: bool = False
    query_calls: int = field(default=0, compare=False)

    @property
    def n_e(self) -> int:
        return self.entity_table.shape[1]

    def batch(self, instances) -> Batch:
        return make_batch(instances, self.word_table, self.entity_table)

    def gate_probs(self, instances) -> np.ndarray:
        b = self.batch(instances)
        return gate_forward(self.gate_params, b.X, b.qmask)[0]

    def queries(self, instances):
        """Gated query vectors (B, N_e) and the chosen-head flags (True = kvc)."""
        self.query_calls += len(instances)
        b = self.batch(instances)
        outs, _ = forward(self.params, b, direct_image=self.direct_image)
        use_kvc = gate_forward(self.gate_params, b.X, b.qmask)[0] >= 0.5
        return np.where(use_kvc[:, None], outs["kvc"], outs["kb"]), use_kvc

    def query(self, instance):
        q, _ = self.queries([instance])
        return q[0]

    def attention(self, instance):
        b = self.batch([instance])
        _, cache = forward(self.params, b)
        return cache["alpha_q"][0, :len(instance.question)], cache["alpha_I"][0, :len(instance.image.concepts)]


def candidate_scores(query, entity_table, candidates=None, stats=None) -> np.ndarray:
    """Cosine of ``query`` against each candidate row: one evaluation per candidate."""
    table = entity_table if candidates is None else entity_table[np.asarray(candidates, dtype=np.int64)]
    if len(table) == 0:
        raise DataError("empty candidate set")
    if stats is not None:
        stats["score_evaluations"] = stats.get("score_evaluations", 0) + len(table)
    # one matvec plus row norms; no normalized copy of the table is built
    q = np.asarray(query, dtype=float).ravel()
    dots = table @ q
    norms = np.sqrt(np.einsum("ij,ij->i", table, table)) * np.linalg.norm(q)
    return np.clip(np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0), -1.0, 1.0)


def answer(instance: QAInstance, model: QAModel, entity_table=None, candidates=None, stats=None) -> int:
    """Gated head query, then a single linear scan for the best cosine."""
    table = model.entity_table if entity_table is None else entity_table
    if candidates is not None and len(candidates) == 0:
        raise DataError("empty candidate set")
    scores = candidate_scores(model.query(instance), table, candidates, stats)
    best = int(np.argmax(scores))
    return best if candidates is None else int(candidates[best])


def rank_of(scores, true_pos) -> int:
    """1 + #better + #equal earlier in candidate order."""
    s = scores[true_pos]
    return int(1 + np.sum(scores > s) + np.sum(scores[:true_pos] == s))


def _drop_masks(rng, B, hidden, p):
    if p <= 0:
        return None
    return {h: (rng.random((B, hidden)) >= p) / (1.0 - p) for h in HEADS}


def init_qa_model(word_table, entity_table, config: QAConfig, seed=None) -> QAModel:
    n_e = entity_table.shape[1]
    hidden = config.hidden or 2 * n_e
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = init_encoder(rng, word_table.dim, config.state_dim)
    params.update(init_fusion(rng, config.state_dim, n_e, hidden))
    gate_params = init_gate(rng, word_table.dim, config.gate_state_dim)
    return QAModel(params, gate_params, word_table, np.asarray(entity_table, dtype=float))


def train_qa(dataset, entity_table, word_table, config: QAConfig, log_every=0) -> QAModel:
    """SGD on the mean cosine loss (heads + shared encoder/attention), then
    the gate on binary cross-entropy. ``entity_table`` stays frozen."""
    if not dataset:
        raise DataError("empty QA training set")
    model = init_qa_model(word_table, entity_table, config)
    hidden = model.params["kvc_W1"].shape[1]
    rng = np.random.default_rng([config.seed, 1])
    opt = SGD(model.params, lr=config.learning_rate, momentum=config.momentum,
              weight_decay=config.weight_decay,
              decay_keys=[f"{h}_{w}" for h in HEADS for w in ("W1", "W2")])
    full = model.batch(dataset)
    n = len(dataset)
    for epoch in range(config.epochs):
        opt.lr = config.learning_rate * config.decay_factor ** (epoch // config.decay_every)
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            b = _subset(full, idx)
            loss, grads = loss_and_grad(model.params, b, _drop_masks(rng, len(idx), hidden, config.dropout))
            if not np.isfinite(loss):
                raise NumericalError(f"QA loss became {loss} in epoch {epoch}")
            opt.step(grads)
            total += loss * len(idx)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.4f", epoch, total / n)
    gopt = SGD(model.gate_params, lr=config.gate_lr, momentum=config.momentum)
    for _ in range(config.gate_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.gate_batch_size):
            b = _subset(full, order[lo:lo + config.gate_batch_size])
            loss, grads = gate_loss_and_grad(model.gate_params, b.X, b.qmask, b.is_kvc)
            if not np.isfinite(loss):
                raise NumericalError("gate loss became non-finite")
            gopt.step(grads)
    return model


def _subset(batch: Batch, idx) -> Batch:
    qm = batch.qmask[idx]
    im = batch.imask[idx]
    T = max(1, int(qm.sum(1).max()))
    M = max(1, int(im.sum(1).max()))
    return Batch(batch.X[idx, :T], qm[:, :T], batch.E[idx, :M], im[:, :M],
                 batch.is_kvc[idx], batch.targets[idx])


# ---------------------------------------------------------------------------
# persistence


def save_qa_model(model: QAModel, path, config: QAConfig | None = None) -> None:
    with Path(path).open("w") as fh:
        fh.write(f"sik {len(model.params)} {len(model.gate_params)} {int(model.direct_image)}\n")
        for name in sorted(model.params):
            write_named(fh, name, model.params[name])
        for name in sorted(model.gate_params):
            write_named(fh, name, model.gate_params[name])


def load_qa_model(path, word_table, entity_table) -> QAModel:
    with Path(path).open() as fh:
        lines = iter(fh.read().splitlines())
    header = next(lines, "").split()
    if len(header) != 4 or header[0] != "sik":
        raise DataError(f"{path}: not a QA checkpoint")
    _, n_p, n_g, direct = header
    params = dict(read_named(lines) for _ in range(int(n_p)))
    gate_params = dict(read_named(lines) for _ in range(int(n_g)))
    return QAModel(params, gate_params, word_table, np.asarray(entity_table, dtype=float), bool(int(direct)))


def dump_attention(model: QAModel, instances, entity_names, path) -> None:
    """Per-instance question and image attention weights as plain text."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, q in enumerate(instances):
            a_q, a_i = model.attention(q)
            fh.write(f"# {k} {q.image.image_id}\n")
            fh.write("words\t" + " ".join(f"{w}:{a:.4f}" for w, a in zip(q.question, a_q)) + "\n")
            fh.write("concepts\t" + " ".join(f"{entity_names[c]}:{a:.4f}" for c, a in zip(q.image.concepts, a_i)) + "\n")


def config_from_dict(d: dict) -> QAConfig:
    names = {f.name for f in fields(QAConfig)}
    return QAConfig(**{k: v for k, v in d.items() if k in names})


def config_to_dict(c: QAConfig) -> dict:
    return asdict(c)
