"""Embedding diversity of prediction sets and size-capped diverse pruning.

Diversity of a set is the sum of pairwise Euclidean distances between its
members' embeddings divided by ``max(m_cap, |set|)``: it grows as items are
added up to the cap, after which only average spread matters. The metric is
intentionally behind a plain function contract -- any other set diversity
measure could be swapped in without touching the calibration machinery.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Union

import numpy as np

from .core import PredictionSet

__all__ = ["EmbeddingSet", "diversity", "greedy_prune", "exhaustive_prune"]

_EXHAUSTIVE_GUARD = 20


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """K item embeddings of shared dimension, row per item."""

    vectors: np.ndarray

    def __post_init__(self):
        vec = np.array(self.vectors, dtype=float)
        if vec.ndim != 2 or vec.shape[0] < 1 or vec.shape[1] < 1:
            raise ValueError(f"embeddings must be a (K, d) matrix with K, d >= 1, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embeddings contain non-finite values")
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


Embeddings = Union[EmbeddingSet, np.ndarray]


def _as_matrix(embeddings: Embeddings) -> np.ndarray:
    if isinstance(embeddings, EmbeddingSet):
        return embeddings.vectors
    return EmbeddingSet(np.asarray(embeddings)).vectors


def _member_matrix(pred: PredictionSet, embeddings: Embeddings) -> np.ndarray:
    mat = _as_matrix(embeddings)
    idx = pred.as_array()
    if len(idx) and idx[-1] > mat.shape[0]:
        raise ValueError(f"item index {idx[-1]} exceeds embedding count {mat.shape[0]}")
    return mat[idx - 1]


def _distance_matrix(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def diversity(pred: PredictionSet, embeddings: Embeddings, m_cap: int) -> float:
    """Sum of pairwise member distances over ``max(m_cap, |pred|)``.

    Empty and singleton sets have no pairs and score 0.
    """
    if m_cap < 1:
        raise ValueError(f"m_cap must be >= 1, got {m_cap}")
    pts = _member_matrix(pred, embeddings)
    n = pts.shape[0]
    if n <= 1:
        return 0.0
    dist = _distance_matrix(pts)
    total = float(dist[np.triu_indices(n, k=1)].sum())
    return total / max(m_cap, n)


def greedy_prune(
    pred: PredictionSet,
    embeddings: Embeddings,
    m_cap: int,
    keep_most_diverse: bool = True,
) -> PredictionSet:
    """Shrink a set to at most ``m_cap`` items, one removal at a time.

    Each step drops the element whose removal leaves the most diverse
    remainder (the element contributing least); on ties the smallest item
    index is dropped. ``keep_most_diverse=False`` inverts the selection --
    dropping the element whose removal leaves the LEAST diverse remainder --
    and exists only so the two directions can be compared in sweeps.

    The remainder's diversity is evaluated incrementally from a cached
    distance matrix: dropping ``t`` removes exactly its distance row, so each
    candidate costs O(1) after an O(s^2) row-sum pass.
    """
    if m_cap < 1:
        raise ValueError(f"m_cap must be >= 1, got {m_cap}")
    if len(pred) <= m_cap:
        return pred
    items = pred.as_array()
    dist = _distance_matrix(_member_matrix(pred, embeddings))
    while items.size > m_cap:
        rowsums = dist.sum(axis=1)
        total = float(rowsums.sum()) / 2.0
        denom = max(m_cap, items.size - 1)
        remainder_div = (total - rowsums) / denom
        t = int(np.argmax(remainder_div) if keep_most_diverse else np.argmin(remainder_div))
        keep = np.arange(items.size) != t
        items = items[keep]
        dist = dist[np.ix_(keep, keep)]
    return PredictionSet(items.tolist())


def exhaustive_prune(pred: PredictionSet, embeddings: Embeddings, m_cap: int) -> PredictionSet:
    """Exact argmax-diversity subset of size at most ``m_cap`` (test oracle).

    Because every subset within the cap is divided by the same ``m_cap``,
    diversity is nondecreasing in members up to the cap, so the maximum is
    attained at size ``min(|pred|, m_cap)``; only those subsets are
    enumerated, in lexicographic order, keeping the first maximizer. Guarded
    to ``|pred| <= 20`` -- the search is combinatorial.
    """
    if m_cap < 1:
        raise ValueError(f"m_cap must be >= 1, got {m_cap}")
    if len(pred) > _EXHAUSTIVE_GUARD:
        raise ValueError(
            f"exhaustive search limited to sets of size <= {_EXHAUSTIVE_GUARD}, got {len(pred)}"
        )
    if len(pred) <= m_cap:
        return pred
    items = pred.as_array()
    dist = _distance_matrix(_member_matrix(pred, embeddings))
    best_combo = None
    best_div = -1.0
    for combo in combinations(range(items.size), m_cap):
        sub = dist[np.ix_(combo, combo)]
        div = float(sub[np.triu_indices(m_cap, k=1)].sum()) / m_cap
        if div > best_div:
            best_div = div
            best_combo = combo
    return PredictionSet(items[list(best_combo)].tolist())
