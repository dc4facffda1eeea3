"""Knowledge graph embeddings: TransE, RotatE and ER-MLP scoring,
self-adversarial negative sampling and the NCE-style training loss.

All gradients are closed form. Entity vectors are shared between the head
and tail roles. RotatE entity vectors use an interleaved complex layout
``[re0, im0, re1, im1, ...]`` and relations are stored as ``dim // 2``
phase angles, so every relation rotation has modulus exactly one.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, NumericalError
from .optim import Adam
from .textio import fmt, next_line, read_rows, write_rows

log = logging.getLogger(__name__)

KINDS = ("transe", "rotate", "ermlp")
_CHUNK = 1 << 16


@dataclass
class ScoringModel:
    kind: str
    params: dict
    gamma: float = 12.0
    trajectory: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown model kind {self.kind!r}")
        has_mlp = "W1" in self.params
        if has_mlp != (self.kind == "ermlp"):
            raise DataError("ERMLP weights present iff kind == 'ermlp'")
        if self.kind != "ermlp" and not self.gamma > 0:
            raise DataError("margin gamma must be positive for distance models")

    @property
    def entity(self) -> np.ndarray:
        return self.params["entity"]

    @property
    def relation(self) -> np.ndarray:
        return self.params["relation"]

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation.shape[0]

    def copy(self) -> "ScoringModel":
        return ScoringModel(self.kind, {k: v.copy() for k, v in self.params.items()},
                            self.gamma, list(self.trajectory))


def init_model(kind, n_entities, n_relations, dim, gamma=12.0, seed=0) -> ScoringModel:
    """Uniform init: vectors in +-6/sqrt(dim), phases in [-pi, pi],
    MLP weights Glorot-uniform with zero biases."""
    if kind == "rotate" and dim % 2:
        raise DimensionError(f"RotatE needs an even embedding dimension, got {dim}")
    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(dim)
    params = {"entity": rng.uniform(-bound, bound, (n_entities, dim))}
    if kind == "rotate":
        params["relation"] = rng.uniform(-np.pi, np.pi, (n_relations, dim // 2))
    else:
        params["relation"] = rng.uniform(-bound, bound, (n_relations, dim))
    if kind == "ermlp":
        for i, (fan_in, fan_out) in enumerate([(3 * dim, 2 * dim), (2 * dim, dim), (dim, 1)], 1):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            params[f"W{i}"] = rng.uniform(-lim, lim, (fan_in, fan_out))
            params[f"b{i}"] = np.zeros(fan_out)
    return ScoringModel(kind, params, gamma)


# ---------------------------------------------------------------------------
# scoring: flat forward/backward over K triples


def _scatter_add(target, idx, vals):
    # bincount per column: deterministic and much faster than np.add.at
    n = target.shape[0]
    for j in range(target.shape[1]):
        target[:, j] += np.bincount(idx, weights=vals[:, j], minlength=n)


def _rotate(x, c, s):
    a, b = x[..., 0::2], x[..., 1::2]
    re, im = a * c - b * s, a * s + b * c
    out = np.empty(re.shape[:-1] + (2 * re.shape[-1],))
    out[..., 0::2], out[..., 1::2] = re, im
    return out


def rotate(h, theta) -> np.ndarray:
    """Element-wise complex product h * exp(i theta); h is interleaved (re, im)."""
    h, theta = np.asarray(h, dtype=float), np.asarray(theta, dtype=float)
    if h.shape[-1] != 2 * theta.shape[-1]:
        raise DimensionError(f"{h.shape[-1]} real coordinates need {h.shape[-1] // 2} phases, got {theta.shape[-1]}")
    return _rotate(h, np.cos(theta), np.sin(theta))


def _forward(model, h, r, t):
    p = model.params
    eh, et = p["entity"][h], p["entity"][t]
    if model.kind == "transe":
        diff = eh + p["relation"][r] - et
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        return model.gamma - dist, (diff, dist)
    if model.kind == "rotate":
        if model.dim % 2:
            raise DimensionError("RotatE needs an even embedding dimension")
        theta = p["relation"][r]
        c, s = np.cos(theta), np.sin(theta)
        rot = _rotate(eh, c, s)
        diff = rot - et
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        return model.gamma - dist, (diff, dist, rot, c, s)
    x = np.concatenate([eh, p["relation"][r], et], axis=1)
    z1 = x @ p["W1"] + p["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ p["W2"] + p["b2"]
    a2 = np.maximum(z2, 0.0)
    phi = (a2 @ p["W3"] + p["b3"])[:, 0]
    return phi, (x, z1, a1, z2, a2)


def _backward(model, h, r, t, dphi, cache, grads):
    """Accumulate dL/dparams into ``grads`` given dL/dphi for each triple."""
    p = model.params
    if model.kind in ("transe", "rotate"):
        diff, dist = cache[0], cache[1]
        safe = np.where(dist > 0, dist, 1.0)
        ddiff = (-dphi / safe)[:, None] * diff
        ddiff[dist == 0] = 0.0
        if model.kind == "transe":
            _scatter_add(grads["entity"], h, ddiff)
            _scatter_add(grads["relation"], r, ddiff)
        else:
            rot, c, s = cache[2], cache[3], cache[4]
            dre, dim_ = ddiff[:, 0::2], ddiff[:, 1::2]
            deh = np.empty_like(ddiff)
            deh[:, 0::2] = dre * c + dim_ * s
            deh[:, 1::2] = -dre * s + dim_ * c
            _scatter_add(grads["entity"], h, deh)
            _scatter_add(grads["relation"], r, -dre * rot[:, 1::2] + dim_ * rot[:, 0::2])
        _scatter_add(grads["entity"], t, -ddiff)
        return
    x, z1, a1, z2, a2 = cache
    d = model.dim
    dout = dphi[:, None]
    grads["W3"] += a2.T @ dout
    grads["b3"] += dout.sum(0)
    dz2 = (dout @ p["W3"].T) * (z2 > 0)
    grads["W2"] += a1.T @ dz2
    grads["b2"] += dz2.sum(0)
    dz1 = (dz2 @ p["W2"].T) * (z1 > 0)
    grads["W1"] += x.T @ dz1
    grads["b1"] += dz1.sum(0)
    dx = dz1 @ p["W1"].T
    _scatter_add(grads["entity"], h, dx[:, :d])
    _scatter_add(grads["relation"], r, dx[:, d:2 * d])
    _scatter_add(grads["entity"], t, dx[:, 2 * d:])


def score(model: ScoringModel, h, r, t):
    """phi(h, r, t). Accepts scalars or broadcastable integer arrays."""
    h, r, t = np.broadcast_arrays(np.asarray(h), np.asarray(r), np.asarray(t))
    shape = h.shape
    phi, _ = _forward(model, h.ravel(), r.ravel(), t.ravel())
    phi = phi.reshape(shape)
    return float(phi) if phi.ndim == 0 else phi


def score_candidates(model: ScoringModel, h, r, t, side: str) -> np.ndarray:
    """Scores of every entity substituted at ``side`` ('head' or 'tail').

    ``h``, ``r``, ``t`` are length-B arrays; returns a (B, |E|) matrix.
    """
    h, r, t = (np.atleast_1d(np.asarray(v, dtype=np.int64)) for v in (h, r, t))
    n = model.n_entities
    out = np.empty((len(r), n))
    cand = np.arange(n)
    rows = max(1, _CHUNK // max(n, 1))
    for lo in range(0, len(r), rows):
        sl = slice(lo, lo + rows)
        k = len(r[sl])
        rr = np.repeat(r[sl], n)
        if side == "tail":
            hh, tt = np.repeat(h[sl], n), np.tile(cand, k)
        elif side == "head":
            hh, tt = np.tile(cand, k), np.repeat(t[sl], n)
        else:
            raise ValueError(side)
        out[sl] = _forward(model, hh, rr, tt)[0].reshape(k, n)
    return out


# ---------------------------------------------------------------------------
# negatives and the loss


@dataclass
class NegativeBatch:
    triples: np.ndarray  # (n, 3)
    scores: np.ndarray | None = None


def corrupt(positives, n_entities, n, rng) -> np.ndarray:
    """(B, 3) positives -> (B, n, 3) negatives.

    A fair coin per sample picks head or tail; the replacement is uniform over
    the other ``n_entities - 1`` entities. No filtering against true edges.
    """
    if n_entities < 2:
        raise DataError("negative sampling needs at least two entities")
    if n < 1:
        raise DataError("need at least one negative per positive")
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    b = len(positives)
    neg = np.repeat(positives[:, None, :], n, axis=1)
    col = np.where(rng.random((b, n)) < 0.5, 0, 2)
    orig = np.take_along_axis(neg, col[..., None], axis=2)[..., 0]
    repl = rng.integers(0, n_entities - 1, size=(b, n))
    repl = repl + (repl >= orig)
    np.put_along_axis(neg, col[..., None], repl[..., None], axis=2)
    return neg


def sample_negatives(kg, positive, n: int, seed: int, model: ScoringModel | None = None) -> NegativeBatch:
    triples = corrupt(np.asarray(positive)[None], kg.n_entities, n, np.random.default_rng(seed))[0]
    scores = score(model, triples[:, 0], triples[:, 1], triples[:, 2]) if model is not None else None
    return NegativeBatch(triples, scores)


def adversarial_weights(neg_scores, alpha: float) -> np.ndarray:
    """Softmax of ``alpha * scores`` along the last axis (max-subtracted)."""
    s = np.asarray(neg_scores, dtype=float)
    if s.size == 0 or s.shape[-1] == 0:
        raise DataError("adversarial_weights needs at least one score")
    if alpha < 0:
        raise DataError("alpha must be non-negative")
    z = alpha * s
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def _as_negative_array(negatives, b) -> np.ndarray:
    if isinstance(negatives, np.ndarray):
        neg = negatives
    else:
        neg = np.stack([np.asarray(nb.triples if isinstance(nb, NegativeBatch) else nb) for nb in negatives])
    neg = np.asarray(neg, dtype=np.int64)
    if neg.ndim != 3 or neg.shape[0] != b or neg.shape[2] != 3:
        raise DataError(f"need one negative batch per positive (got {neg.shape[0] if neg.ndim else 0} for {b})")
    return neg


def kge_loss_and_grad(model, positives, negatives, alpha=1.0, sampling="adversarial",
                      weights=None, grad_through_weights=False, need_grad=True):
    """Sum over positives of -ln s(phi) - sum_j p_j ln s(-phi'_j).

    ``weights`` (B, n) overrides the sampling distribution; otherwise it is the
    adversarial softmax or uniform 1/n. Adversarial weights are treated as
    constants in the backward pass unless ``grad_through_weights``.
    """
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    b = len(pos)
    neg = _as_negative_array(negatives, b)
    n = neg.shape[1]
    allt = np.concatenate([pos, neg.reshape(-1, 3)])
    phi_all, cache = _forward(model, allt[:, 0], allt[:, 1], allt[:, 2])
    phi_pos, phi_neg = phi_all[:b], phi_all[b:].reshape(b, n)
    if weights is not None:
        p = np.asarray(weights, dtype=float).reshape(b, n)
    elif sampling == "adversarial":
        p = adversarial_weights(phi_neg, alpha)
    elif sampling == "uniform":
        p = np.full((b, n), 1.0 / n)
    else:
        raise DataError(f"unknown sampling {sampling!r}")
    ls_neg = _log_sigmoid(-phi_neg)
    loss = float(-np.sum(_log_sigmoid(phi_pos)) - np.sum(p * ls_neg))
    if not need_grad:
        return loss, None
    dpos = -_sigmoid(-phi_pos)
    dneg = p * _sigmoid(phi_neg)
    if grad_through_weights and weights is None and sampling == "adversarial":
        expected = np.sum(p * ls_neg, axis=1, keepdims=True)
        dneg = dneg - alpha * p * (ls_neg - expected)
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    _backward(model, allt[:, 0], allt[:, 1], allt[:, 2],
              np.concatenate([dpos, dneg.ravel()]), cache, grads)
    return loss, grads


def kge_loss(model, positives, negatives, alpha=1.0, sampling="adversarial", weights=None) -> float:
    return kge_loss_and_grad(model, positives, negatives, alpha, sampling, weights, need_grad=False)[0]


# ---------------------------------------------------------------------------
# training


@dataclass
class KgeTrainConfig:
    steps: int = 25000
    batch_size: int = 1000
    learning_rate: float = 0.01
    decay_every: int = 10000
    decay_factor: float = 0.1
    alpha: float = 1.0
    n_negatives: int = 16
    sampling: str = "adversarial"
    dim: int = 300
    gamma: float = 12.0
    seed: int = 0
    grad_through_weights: bool = False

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.n_negatives < 1 or self.dim < 1:
            raise DataError("steps, batch_size, n_negatives and dim must be positive")
        if not self.learning_rate > 0 or self.alpha < 0:
            raise DataError("learning_rate must be positive and alpha non-negative")
        if self.sampling not in ("adversarial", "uniform"):
            raise DataError(f"unknown sampling {self.sampling!r}")


def train_kge(train_edges, config: KgeTrainConfig, kind: str, n_entities: int,
              n_relations: int, log_every: int = 0) -> ScoringModel:
    """Adam on the self-adversarial loss. The loss trajectory is stored on
    ``model.trajectory`` as (step, loss, lr) tuples."""
    edges = np.asarray(train_edges, dtype=np.int64).reshape(-1, 3)
    if len(edges) == 0:
        raise DataError("no training edges")
    init_seq, data_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = init_model(kind, n_entities, n_relations, config.dim, config.gamma,
                       seed=int(init_seq.generate_state(1)[0]))
    rng = np.random.default_rng(data_seq)
    opt = Adam(model.params, lr=config.learning_rate)
    bs = min(config.batch_size, len(edges))
    order, cursor = rng.permutation(len(edges)), 0
    for step in range(config.steps):
        if cursor + bs > len(order):
            order, cursor = rng.permutation(len(edges)), 0
        batch = edges[order[cursor:cursor + bs]]
        cursor += bs
        neg = corrupt(batch, n_entities, config.n_negatives, rng)
        opt.lr = config.learning_rate * config.decay_factor ** (step // config.decay_every)
        loss, grads = kge_loss_and_grad(model, batch, neg, config.alpha, config.sampling,
                                        grad_through_weights=config.grad_through_weights)
        if not np.isfinite(loss):
            raise NumericalError(f"{kind} loss became {loss} at step {step} (lr={opt.lr:g})")
        opt.step(grads)
        model.trajectory.append((step, loss, opt.lr))
        if log_every and step % log_every == 0:
            log.info("step %d loss %.4f lr %g", step, loss, opt.lr)
    return model


def write_trajectory(model: ScoringModel, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "lr"])
        for step, loss, lr in model.trajectory:
            w.writerow([step, fmt(loss), fmt(lr)])


# ---------------------------------------------------------------------------
# checkpoint: "kind dim n_entities n_relations gamma", entity rows, relation
# rows, then for ERMLP "name rows cols" blocks for W1 b1 W2 b2 W3 b3.


def save_model(model: ScoringModel, path) -> None:
    with Path(path).open("w") as fh:
        fh.write(f"{model.kind} {model.dim} {model.n_entities} {model.n_relations} {fmt(model.gamma)}\n")
        write_rows(fh, model.entity)
        write_rows(fh, model.relation)
        if model.kind == "ermlp":
            for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
                m = np.atleast_2d(model.params[name])
                fh.write(f"{name} {m.shape[0]} {m.shape[1]}\n")
                write_rows(fh, m)


def load_model(path) -> ScoringModel:
    with Path(path).open() as fh:
        lines = iter(fh.read().splitlines())
    header = next(lines, "").split()
    if len(header) != 5 or header[0] not in KINDS:
        raise DataError(f"{path}: not an embedding checkpoint")
    kind, dim, n_ent, n_rel, gamma = header
    dim, n_ent, n_rel = int(dim), int(n_ent), int(n_rel)
    params = {"entity": read_rows(lines, n_ent, dim),
              "relation": read_rows(lines, n_rel, dim // 2 if kind == "rotate" else dim)}
    if kind == "ermlp":
        for _ in range(6):
            name, rows, cols = next_line(lines).split()
            m = read_rows(lines, int(rows), int(cols))
            params[name] = m[0] if name.startswith("b") else m
    return ScoringModel(kind, params, float(gamma))
