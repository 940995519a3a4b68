"""Thresholded cosine-similarity structure between candidates and a universe.

The matrix is built by blocked dense dot products over normalized embeddings
and sparsified on the fly: only pairs with similarity strictly above sigma are
stored. Rows are the candidates in their uncertainty rank order, columns the
universe sorted by id. Candidates must be drawn from the universe, so every
row keeps its self-entry (cosine of a vector with itself is 1 > sigma).

Row blocks are independent; ``TAUDIS_THREADS`` (or the ``n_threads`` argument)
fans them out over a thread pool. Blocks are merged in a fixed order, so the
result does not depend on the degree of parallelism.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .maxcover import CoverProblem

THREADS_ENV = "TAUDIS_THREADS"
_BLOCK_ROWS = 256

Embedded = Sequence[tuple[str, np.ndarray]]


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two embeddings, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for zero-norm embeddings")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass
class SimilarityMatrix:
    """Sparse candidate-by-universe similarities, all entries above sigma."""

    rows: list[str]
    cols: list[str]
    entries: dict[str, dict[str, float]]
    sigma: float

    def entry(self, row_id: str, col_id: str) -> float | None:
        return self.entries.get(row_id, {}).get(col_id)

    @property
    def num_entries(self) -> int:
        return sum(len(cols) for cols in self.entries.values())


def _normalized(vectors: np.ndarray, ids: Sequence[str]) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ValueError(f"zero-norm embedding for instance {ids[bad[0]]!r}")
    return vectors / norms[:, None]


def build_similarity_matrix(candidates: Embedded, universe: Embedded,
                            sigma: float, n_threads: int | None = None
                            ) -> SimilarityMatrix:
    """Sparse matrix of pairwise similarities strictly above ``sigma``.

    ``candidates`` and ``universe`` are (id, embedding) pairs; candidate ids
    must appear in the universe and candidate rows reuse the universe vectors,
    so self-similarities are exact. Row order follows ``candidates`` (the
    uncertainty rank), column listing is sorted by id.
    """
    if not (0 < sigma < 1):
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    uni_ids = [uid for uid, _ in universe]
    uni_id_set = set(uni_ids)
    if len(uni_id_set) != len(uni_ids):
        raise ValueError("universe ids must be unique")
    cand_ids = [cid for cid, _ in candidates]
    if len(set(cand_ids)) != len(cand_ids):
        raise ValueError("candidate ids must be unique")
    missing = [cid for cid in cand_ids if cid not in uni_id_set]
    if missing:
        raise ValueError(f"candidates not present in the universe: {missing[:5]}")

    if not uni_ids:
        return SimilarityMatrix(rows=[], cols=[], entries={}, sigma=sigma)

    dims = {np.asarray(vec).shape for _, vec in universe}
    if len(dims) > 1:
        raise ValueError(f"inconsistent embedding dimensions: {sorted(dims)}")
    uni_matrix = np.asarray([vec for _, vec in universe], dtype=np.float64)
    if uni_matrix.ndim != 2:
        raise ValueError("embeddings must be 1-d vectors")
    uni_matrix = _normalized(uni_matrix, uni_ids)
    uni_index = {uid: i for i, uid in enumerate(uni_ids)}
    cand_matrix = uni_matrix[[uni_index[cid] for cid in cand_ids]]

    blocks = [(start, min(start + _BLOCK_ROWS, len(cand_ids)))
              for start in range(0, len(cand_ids), _BLOCK_ROWS)]

    def block_entries(bounds):
        start, stop = bounds
        sims = np.clip(cand_matrix[start:stop] @ uni_matrix.T, -1.0, 1.0)
        out = []
        for row in sims:
            keep = np.flatnonzero(row > sigma)
            out.append({uni_ids[j]: float(row[j]) for j in keep})
        return out

    n_threads = default_threads() if n_threads is None else max(1, n_threads)
    if n_threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            per_block = list(pool.map(block_entries, blocks))
    else:
        per_block = [block_entries(b) for b in blocks]

    entries: dict[str, dict[str, float]] = {}
    flat = (row for block in per_block for row in block)
    for cid, row_entries in zip(cand_ids, flat):
        row_entries[cid] = 1.0
        entries[cid] = row_entries
    return SimilarityMatrix(rows=list(cand_ids), cols=sorted(uni_ids),
                            entries=entries, sigma=sigma)


def to_cover_problem(matrix: SimilarityMatrix) -> CoverProblem:
    """Rows become candidate subsets, the universe is every covered column."""
    subsets = []
    universe: set[str] = set()
    for row_id in matrix.rows:
        row = matrix.entries.get(row_id, {})
        subsets.append((row_id, frozenset(row)))
        universe.update(row)
    return CoverProblem(subsets=tuple(subsets), universe=frozenset(universe))
