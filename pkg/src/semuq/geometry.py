"""Cosine geometry of response embeddings and the SEU score."""

from __future__ import annotations

from typing import Sequence

import numpy as np

ArrayLike = Sequence[float] | np.ndarray

# cosines this close to +-1 are rounding noise; snap them so duplicates score exactly 0
_SNAP = 8 * np.finfo(np.float64).eps


def _tidy(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, -1.0, 1.0)
    c = np.where(c > 1.0 - _SNAP, 1.0, c)
    return np.where(c < -1.0 + _SNAP, -1.0, c)


def embedding(values: ArrayLike) -> np.ndarray:
    """Validate and return a 1-D float64 embedding.

    Rejects empty, non-finite and zero-norm vectors up front so that cosine
    never has to divide by zero.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"embedding must be a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding has non-finite entries")
    if not np.linalg.norm(v) > 0:
        raise ValueError("embedding has zero norm")
    return v


def _stack(embeddings: Sequence[ArrayLike]) -> np.ndarray:
    vecs = [embedding(e) for e in embeddings]
    dims = {v.size for v in vecs}
    if len(dims) > 1:
        raise ValueError(f"embedding dimension mismatch: {sorted(dims)}")
    return np.stack(vecs)


def cosine(a: ArrayLike, b: ArrayLike) -> float:
    a, b = embedding(a), embedding(b)
    if a.size != b.size:
        raise ValueError(f"embedding dimension mismatch: {a.size} vs {b.size}")
    return float(_tidy(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))))


def mean_pairwise_similarity(embeddings: Sequence[ArrayLike]) -> float:
    """Average cosine over the M(M-1)/2 unordered pairs."""
    if len(embeddings) < 2:
        raise ValueError(f"need at least 2 embeddings, got {len(embeddings)}")
    x = _stack(embeddings)
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    gram = _tidy(x @ x.T)
    iu = np.triu_indices(len(x), k=1)
    return float(np.clip(gram[iu].mean(), -1.0, 1.0))


def seu(embeddings: Sequence[ArrayLike]) -> float:
    """Semantic embedding uncertainty: one minus the mean pairwise cosine.

    Lies in [0, 2]; zero when every pair of embeddings points the same way.
    """
    return 1.0 - mean_pairwise_similarity(embeddings)
