"""Exact top-k cosine search over unit-norm embedding matrices.

Scores are plain dot products (inputs are pre-normalized) accumulated in
float64. Brute force only: approximate indexes would change ranking
semantics. Ties always break by ascending row index, so rankings, and
everything computed from them, are reproducible.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .stores import EmbeddingMatrix

SCORE_EPS = 1e-4  # float slack on the [-1, 1] cosine range


@dataclass(frozen=True)
class Neighbor:
    index: int
    score: float


def _as_query(query: np.ndarray, dim: int) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != dim:
        raise DataError(f"query dim {q.shape[0]} != matrix dim {dim}")
    return q


def all_scores(query: np.ndarray, matrix: EmbeddingMatrix, threads: int = 0) -> np.ndarray:
    """score[i] = dot(query, row_i) in float64.

    ``threads > 1`` shards the rows across a thread pool; each shard writes a
    disjoint slice of the output, so the result is identical to the
    sequential one regardless of the thread count.
    """
    q = _as_query(query, matrix.dim)
    m = matrix.f64()
    if threads and threads > 1 and matrix.rows >= 2 * threads:
        out = np.empty(matrix.rows, dtype=np.float64)
        bounds = np.linspace(0, matrix.rows, threads + 1, dtype=np.int64)

        def shard(lo: int, hi: int) -> None:
            out[lo:hi] = m[lo:hi] @ q

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: shard(*b), zip(bounds[:-1], bounds[1:])))
        return out
    return m @ q


def all_scores_multi(queries: np.ndarray, matrix: EmbeddingMatrix) -> np.ndarray:
    """Scores for a batch of queries at once; out[j, i] = dot(queries[j], row_i)."""
    qs = np.asarray(queries, dtype=np.float64)
    if qs.ndim != 2 or qs.shape[1] != matrix.dim:
        raise DataError(f"query batch shape {qs.shape} incompatible with matrix dim {matrix.dim}")
    return qs @ matrix.f64().T


def rank_indices(scores: np.ndarray) -> np.ndarray:
    """Full ranking by (-score, index): stable sort keeps ties in index order."""
    return np.argsort(-np.asarray(scores), kind="stable")


def top_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """First k entries of rank_indices(scores) without sorting the whole array.

    A partition finds the k-th score, every row at or above it is ranked
    stably, so boundary ties still resolve by ascending index, exactly as in
    the full sort.
    """
    scores = np.asarray(scores)
    n = scores.shape[0]
    if k >= n:
        return rank_indices(scores)
    neg = -scores
    threshold = np.partition(neg, k - 1)[k - 1]
    cand = np.flatnonzero(neg <= threshold)
    order = cand[np.argsort(neg[cand], kind="stable")]
    return order[:k]


def top_k(query: np.ndarray, matrix: EmbeddingMatrix, k: int, threads: int = 0) -> list[Neighbor]:
    """The min(k, rows) highest-scoring rows, descending, index tie-break."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    scores = all_scores(query, matrix, threads=threads)
    order = top_indices(scores, k)
    return [Neighbor(index=int(i), score=float(scores[i])) for i in order]
