"""
Sparse kernels shared by every recommender.

Interaction and feature matrices are plain :class:`scipy.sparse.csr_matrix`
objects in canonical form (no duplicates, sorted column indices). Similarity
matrices are CSR as well; item-based similarities are pruned per column
(column ``i`` holds the neighbours ``j`` used to score ``i``), playlist-based
similarities are pruned per row.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field

BLOCK_SIZE = 2048


class KernelParams(BaseModel):
    """Tunable parameters of the similarity kernels."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    knn: int | None = Field(100, ge=0)
    """Neighbours kept per pruning axis; ``None`` disables pruning."""
    power_p: float = Field(1.0, ge=0)
    alpha: float = Field(1.0, ge=0, le=1)
    beta: float = Field(1.0, ge=0, le=1)
    shrink_h: float = Field(0.0, ge=0)
    bm25_k1: float = Field(1.2, gt=0)
    bm25_b: float = Field(0.75, ge=0, le=1)


@dataclass(frozen=True)
class ScoreSet:
    """
    Candidate scores for a batch of playlists.

    ``scores`` holds raw model output; ``mask`` marks the tracks already in
    each playlist. Masked tracks are never ranked, but their raw scores stay
    untouched so blends can re-read them.
    """

    pids: np.ndarray
    scores: sp.csr_matrix
    mask: sp.csr_matrix
    model: str

    def __post_init__(self):
        if not self.model:
            raise ValueError("ScoreSet model tag must be nonempty")
        if self.scores.shape != self.mask.shape:
            raise ValueError(f"scores shape {self.scores.shape} != mask shape {self.mask.shape}")
        if len(self.pids) != self.scores.shape[0]:
            raise ValueError("one pid is required per score row")
        if self.scores.nnz and not np.all(np.isfinite(self.scores.data)):
            raise ValueError(f"non-finite scores in model {self.model!r}")

    @property
    def n_items(self) -> int:
        return self.scores.shape[1]

    def __len__(self) -> int:
        return self.scores.shape[0]

    def dense(self) -> np.ndarray:
        """Dense raw scores, masked entries included."""
        return self.scores.toarray()

    def masked_dense(self) -> np.ndarray:
        """Dense scores with known tracks set to ``-inf``."""
        out = self.scores.toarray()
        out[self.mask.toarray()] = -np.inf
        return out

    def rows(self, index: Sequence[int] | np.ndarray) -> ScoreSet:
        index = np.asarray(index, dtype=np.intp)
        return ScoreSet(self.pids[index], self.scores[index], self.mask[index], self.model)

    def with_scores(self, scores: sp.csr_matrix, model: str | None = None) -> ScoreSet:
        return ScoreSet(self.pids, canonical(scores), self.mask, model or self.model)

    def with_mask(self, extra: sp.spmatrix) -> ScoreSet:
        """Union the current mask with ``extra``."""
        mask = (self.mask + sp.csr_matrix(extra, dtype=bool)).astype(bool)
        return ScoreSet(self.pids, self.scores, sp.csr_matrix(mask), self.model)


def canonical(m, dtype=np.float64) -> sp.csr_matrix:
    """Return ``m`` as a canonical CSR matrix (summed duplicates, sorted indices)."""
    out = sp.csr_matrix(m, dtype=dtype, copy=True)
    out.sum_duplicates()
    out.sort_indices()
    return out


def as_interactions(m) -> sp.csr_matrix:
    out = canonical(m)
    if out.nnz and out.data.min() < 0:
        raise ValueError("interaction values must be non-negative")
    return out


def binarize(m) -> sp.csr_matrix:
    out = canonical(m)
    out.eliminate_zeros()
    out.data[:] = 1.0
    return out


def _row_ids(m: sp.csr_matrix) -> np.ndarray:
    return np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))


def bm25_weight(m, k1: float = 1.2, b: float = 0.75) -> sp.csr_matrix:
    """
    Okapi BM25 reweighting with rows as documents and columns as terms.

    Each nonzero becomes ``idf(col) * v * (k1 + 1) / (v + k1 * (1 - b + b * len/avg_len))``
    with ``idf = ln((n - df + 0.5) / (df + 0.5))`` clamped at zero. The
    sparsity pattern is preserved even where the weight becomes zero.
    """
    if k1 <= 0:
        raise ValueError("k1 must be positive")
    if not 0 <= b <= 1:
        raise ValueError("b must lie in [0, 1]")
    m = as_interactions(m)
    if m.nnz == 0:
        return m
    n_rows, n_cols = m.shape
    df = np.bincount(m.indices, minlength=n_cols)
    idf = np.maximum(np.log((n_rows - df + 0.5) / (df + 0.5)), 0.0)
    row_len = np.asarray(m.sum(axis=1)).ravel()
    avg_len = row_len.mean()
    rows = _row_ids(m)
    v = m.data
    norm = k1 * (1.0 - b + b * row_len[rows] / avg_len)
    m.data = idf[m.indices] * (v * (k1 + 1.0)) / (v + norm)
    return m


def top_k_rows(m: sp.csr_matrix, k: int | None) -> sp.csr_matrix:
    """
    Keep the ``k`` largest entries of each row; ties go to the smaller column.

    ``m`` must be canonical with explicit zeros removed.
    """
    if k is None:
        return m
    if k == 0:
        return sp.csr_matrix(m.shape)
    counts = np.diff(m.indptr)
    if m.nnz == 0 or counts.max() <= k:
        return m
    rows = _row_ids(m)
    order = np.lexsort((m.indices, -m.data, rows))
    rank = np.arange(m.nnz) - m.indptr[rows[order]]
    keep = np.sort(order[rank < k])
    out = sp.csr_matrix((m.data[keep], (rows[keep], m.indices[keep])), shape=m.shape)
    out.sort_indices()
    return out


def _blocks(n: int, block_size: int):
    for start in range(0, n, block_size):
        yield start, min(n, start + block_size)


def _drop_diagonal(block: sp.csr_matrix, rows: np.ndarray) -> sp.csr_matrix:
    """Zero entries where the column equals the global row id ``rows[r]``."""
    block = block.tocoo()
    keep = (block.col != rows[block.row]) & (block.data != 0)
    out = sp.csr_matrix(
        (block.data[keep], (block.row[keep], block.col[keep])), shape=block.shape
    )
    out.sort_indices()
    return out


def _run_blocks(fn, row_sets: list[np.ndarray], threads: int | None) -> list[sp.csr_matrix]:
    if threads is not None and threads > 1 and len(row_sets) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, row_sets))
    return [fn(rows) for rows in row_sets]


def _assemble(blocks: list[sp.csr_matrix], row_sets: list[np.ndarray], shape) -> sp.csr_matrix:
    """Place each block's rows at their global row ids in a square matrix."""
    if not blocks:
        return sp.csr_matrix(shape)
    coos = [b.tocoo() for b in blocks]
    r = np.concatenate([rows[c.row] for c, rows in zip(coos, row_sets)])
    c = np.concatenate([c.col for c in coos])
    d = np.concatenate([c.data for c in coos])
    out = sp.csr_matrix((d, (r, c)), shape=shape)
    out.sort_indices()
    return out


def _row_sets(n: int, rows, block_size: int) -> list[np.ndarray]:
    ids = np.arange(n) if rows is None else np.unique(np.asarray(rows, dtype=np.intp))
    if ids.size and (ids[0] < 0 or ids[-1] >= n):
        raise IndexError(f"similarity rows out of range for dimension {n}")
    return [ids[a:b] for a, b in _blocks(ids.size, block_size)]


def dot_similarity(
    m,
    params: KernelParams,
    *,
    block_size: int = BLOCK_SIZE,
    threads: int | None = None,
) -> sp.csr_matrix:
    """
    Item-item similarity ``s_ij = col_i . col_j`` over the columns of ``m``.

    The diagonal is dropped; each column keeps its ``knn`` largest entries
    (ties by smaller row index) and kept values are raised to ``power_p``.
    The result is ``n_cols x n_cols`` with column ``i`` listing the
    neighbours of item ``i``.
    """
    m = as_interactions(m)
    items = sp.csr_matrix(m.T)
    items.sort_indices()
    n = items.shape[0]
    if params.knn == 0:
        return sp.csr_matrix((n, n))
    items_t = sp.csr_matrix(items.T)

    def block(rows: np.ndarray) -> sp.csr_matrix:
        prod = canonical(items[rows] @ items_t)
        return top_k_rows(_drop_diagonal(prod, rows), params.knn)

    row_sets = _row_sets(n, None, block_size)
    # rows of the symmetric product are the columns of the similarity
    neighbours = _assemble(_run_blocks(block, row_sets, threads), row_sets, (n, n))
    sim = canonical(neighbours.T)
    if params.power_p != 1.0:
        sim.data = sim.data**params.power_p
    return sim


def tversky_similarity(
    m,
    params: KernelParams,
    *,
    rows: Sequence[int] | None = None,
    block_size: int = BLOCK_SIZE,
    threads: int | None = None,
) -> sp.csr_matrix:
    """
    Row-row Tversky similarity.

    ``s_ij = x / (alpha (|r_i| - x) + beta (|r_j| - x) + x + h)`` with
    ``x = r_i . r_j`` and ``|r|`` the row sum. Entries with a non-positive
    denominator are zero. Each row keeps its ``knn`` largest entries before
    the power is applied. When ``rows`` is given only those rows are filled.
    """
    m = as_interactions(m)
    n = m.shape[0]
    if params.knn == 0:
        return sp.csr_matrix((n, n))
    mass = np.asarray(m.sum(axis=1)).ravel()
    m_t = sp.csr_matrix(m.T)
    a, b, h = params.alpha, params.beta, params.shrink_h

    def block(ids: np.ndarray) -> sp.csr_matrix:
        prod = _drop_diagonal(canonical(m[ids] @ m_t), ids)
        x = prod.data
        mi = mass[ids[_row_ids(prod)]]
        mj = mass[prod.indices]
        denom = a * (mi - x) + b * (mj - x) + x + h
        with np.errstate(divide="ignore", invalid="ignore"):
            prod.data = np.where(denom > 0, x / denom, 0.0)
        prod.eliminate_zeros()
        return top_k_rows(prod, params.knn)

    row_sets = _row_sets(n, rows, block_size)
    sim = _assemble(_run_blocks(block, row_sets, threads), row_sets, (n, n))
    if params.power_p != 1.0:
        sim.data = sim.data**params.power_p
    return sim


def _target_rows(m: sp.csr_matrix, targets) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.intp).ravel()
    bad = (targets < 0) | (targets >= m.shape[0])
    if bad.any():
        raise IndexError(f"target row {int(targets[bad][0])} out of range for {m.shape[0]} rows")
    return targets


def predict_item_based(
    ptm, sim: sp.spmatrix, targets, *, pids=None, model: str = "item_based"
) -> ScoreSet:
    """Score ``r_ui = sum_j r_uj * s_ji`` for each target row ``u``."""
    ptm = as_interactions(ptm)
    if sim.shape != (ptm.shape[1], ptm.shape[1]):
        raise ValueError(f"item similarity shape {sim.shape} does not match {ptm.shape[1]} items")
    targets = _target_rows(ptm, targets)
    known = ptm[targets]
    scores = canonical(known @ sp.csr_matrix(sim))
    pids = targets if pids is None else np.asarray(pids)
    return ScoreSet(pids, scores, sp.csr_matrix(known, dtype=bool), model)


def predict_user_based(
    ptm, user_sim: sp.spmatrix, targets, *, pids=None, model: str = "user_based"
) -> ScoreSet:
    """Score ``r_ui = sum_v s_uv * r_vi`` for each target row ``u``."""
    ptm = as_interactions(ptm)
    if user_sim.shape != (ptm.shape[0], ptm.shape[0]):
        raise ValueError(
            f"playlist similarity shape {user_sim.shape} does not match {ptm.shape[0]} playlists"
        )
    targets = _target_rows(ptm, targets)
    scores = canonical(sp.csr_matrix(user_sim)[targets] @ ptm)
    pids = targets if pids is None else np.asarray(pids)
    return ScoreSet(pids, scores, sp.csr_matrix(ptm[targets], dtype=bool), model)


def rank_row(
    indices: np.ndarray, values: np.ndarray, masked: np.ndarray, n_items: int, n: int
) -> np.ndarray:
    """
    Rank one sparse score row: positives by score, then implicit zeros by
    index, then negatives. Masked items are skipped.
    """
    excluded = np.zeros(n_items, dtype=bool)
    excluded[masked] = True
    keep = ~excluded[indices]
    indices, values = indices[keep], values[keep]

    pos = values > 0
    order = np.lexsort((indices[pos], -values[pos]))
    ranked = indices[pos][order][:n]
    if ranked.size < n:
        excluded[indices] = True
        zeros = np.flatnonzero(~excluded)[: n - ranked.size]
        ranked = np.concatenate([ranked, zeros])
    if ranked.size < n:
        neg = values < 0
        order = np.lexsort((indices[neg], -values[neg]))
        ranked = np.concatenate([ranked, indices[neg][order][: n - ranked.size]])
    return ranked.astype(np.intp)


def top_n(scores: ScoreSet, n: int) -> list[np.ndarray]:
    """
    Best ``n`` unmasked items per playlist, by descending score with ties to
    the smaller item index.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    s, msk = scores.scores, scores.mask
    out = []
    for r in range(s.shape[0]):
        lo, hi = s.indptr[r], s.indptr[r + 1]
        masked = msk.indices[msk.indptr[r] : msk.indptr[r + 1]]
        out.append(rank_row(s.indices[lo:hi], s.data[lo:hi], masked, s.shape[1], n))
    return out


def ranked_scores(scores: ScoreSet, row: int, items: np.ndarray) -> np.ndarray:
    """Scores of ``items`` in one row (zero where absent)."""
    return np.asarray(scores.scores[row, items].todense()).ravel() if len(items) else np.zeros(0)
