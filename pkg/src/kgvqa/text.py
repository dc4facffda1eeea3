"""Tokenization, static word vectors and lexical similarity."""

from __future__ import annotations

import string
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DimensionError, MalformedLine

_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties.

    No stemming, no stopword removal.
    """
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class WordVectorTable:
    tokens: tuple[str, ...]
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    @cached_property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def __contains__(self, token) -> bool:
        return token in self.index

    def get(self, token):
        i = self.index.get(token)
        return None if i is None else self.vectors[i]

    def lookup(self, tokens) -> np.ndarray:
        """(len(tokens), dim) matrix; OOV rows are zero."""
        out = np.zeros((len(tokens), self.dim))
        for j, tok in enumerate(tokens):
            i = self.index.get(tok)
            if i is not None:
                out[j] = self.vectors[i]
        return out


def load_vectors(path) -> WordVectorTable:
    """Space-separated ``token v1 ... vd`` lines, no header."""
    path = Path(path)
    tokens, rows, seen = [], [], set()
    dim = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            tok, vals = parts[0], [p for p in parts[1:] if p]
            if dim is None:
                dim = len(vals)
                if dim == 0:
                    raise MalformedLine(path, lineno, "no vector values")
            elif len(vals) != dim:
                raise DimensionError(f"{path}:{lineno}: expected {dim} values, got {len(vals)}")
            try:
                vec = [float(v) for v in vals]
            except ValueError as exc:
                raise MalformedLine(path, lineno, str(exc)) from None
            if tok in seen:
                continue
            seen.add(tok)
            tokens.append(tok)
            rows.append(vec)
    if dim is None:
        raise MalformedLine(path, 0, "empty vector file")
    vectors = np.array(rows, dtype=float)
    if not np.all(np.isfinite(vectors)):
        raise MalformedLine(path, 0, "non-finite vector value")
    return WordVectorTable(tuple(tokens), vectors)


def save_vectors(table: WordVectorTable, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for tok, vec in zip(table.tokens, table.vectors):
            fh.write(tok + " " + " ".join("%.17g" % v for v in vec) + "\n")


def cosine(u, v) -> float:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionError(f"cosine of shapes {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_matrix(a, b) -> np.ndarray:
    """Pairwise cosines between rows of ``a`` and ``b``; zero rows give 0."""
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    an = np.divide(a, na, out=np.zeros_like(a, dtype=float), where=na > 0)
    bn = np.divide(b, nb, out=np.zeros_like(b, dtype=float), where=nb > 0)
    return np.clip(an @ bn.T, -1.0, 1.0)


def jaccard(a, b) -> float:
    sa, sb = set(a), set(b)
    union = sa | sb
    return len(sa & sb) / len(union) if union else 0.0


def avg_vector(tokens, table: WordVectorTable) -> np.ndarray:
    """Mean of in-vocabulary token vectors; zero vector when none are known."""
    idx = [table.index[t] for t in tokens if t in table.index]
    if not idx:
        return np.zeros(table.dim)
    return table.vectors[idx].mean(axis=0)
