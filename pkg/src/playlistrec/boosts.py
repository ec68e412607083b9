"""
Additive post-processing boosts that exploit how playlists are built.

All three boosts add a non-negative term to candidate scores. Gap and tail
boosts touch only the first ``k_candidates`` ranked candidates; the album
boost touches only the tracks of one album. Similarities are looked up as
``sim[g, k]``, the contribution of known track ``g`` to candidate ``k``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field

from .sparse import ScoreSet, canonical, rank_row

__all__ = [
    "BoostParams",
    "PlaylistContext",
    "album_boost",
    "boost_scores",
    "gap_boost",
    "tail_boost",
]


class BoostParams(BaseModel):
    """
    Boost magnitudes and the categories each boost applies to.

    A gamma of zero disables the corresponding boost.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    k_candidates: int = Field(100, ge=1)
    gap_gamma: float = Field(0.0, ge=0)
    tail_gamma: float = Field(0.0, ge=0)
    tail_discount: float = Field(0.5, gt=0, le=1)
    tail_span: int = Field(3, ge=1)
    album_gamma: float = Field(0.0, ge=0)
    gap_categories: frozenset[int] = frozenset({8, 10})
    tail_categories: frozenset[int] = frozenset({5, 6, 7, 9})
    album_categories: frozenset[int] = frozenset({3, 4, 7, 9})


@dataclass(frozen=True)
class PlaylistContext:
    """
    Known tracks of one playlist as catalog columns, in playlist order.
    """

    category: int
    visible: np.ndarray
    positions: np.ndarray

    @classmethod
    def build(cls, category: int, visible: Sequence[int], positions: Sequence[int] | None = None):
        visible = np.asarray(visible, dtype=np.intp)
        positions = np.arange(len(visible)) if positions is None else np.asarray(positions, dtype=np.int64)
        if positions.shape != visible.shape:
            raise ValueError("positions and visible tracks differ in length")
        order = np.argsort(positions, kind="stable")
        return cls(category, visible[order], positions[order])


def _lookup(sim: sp.csr_matrix, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return sim[rows][:, cols].toarray()


def _gap_delta(cands, visible, positions, sim, gamma) -> np.ndarray:
    if len(visible) < 2 or gamma == 0 or len(cands) == 0:
        return np.zeros(len(cands))
    s = _lookup(sim, visible, cands)
    d = np.diff(positions).astype(np.float64)
    if np.any(d <= 0):
        raise ValueError("visible positions must be strictly increasing")
    return gamma * ((s[:-1] * s[1:]) / d[:, None]).sum(axis=0)


def _tail_delta(cands, visible, sim, gamma, discount, span) -> np.ndarray:
    if len(visible) == 0 or gamma == 0 or len(cands) == 0:
        return np.zeros(len(cands))
    tail = visible[::-1][:span]
    weights = discount ** np.arange(len(tail), dtype=np.float64)
    return gamma * (weights @ _lookup(sim, tail, cands))


def _album_targets(visible, album_ids, exclude) -> tuple[np.ndarray, np.ndarray]:
    """Album tracks to boost, in album order, and their rank weights."""
    if len(visible) < 2 or album_ids[visible[-1]] != album_ids[visible[-2]]:
        return np.empty(0, np.intp), np.empty(0)
    members = np.flatnonzero(album_ids == album_ids[visible[-1]])
    members = members[~np.isin(members, exclude)]
    m = len(members)
    return members, (m - np.arange(m)) / max(m, 1)


def _resort(items: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((items, -scores))
    return items[order], scores[order]


def gap_boost(items, scores, ctx: PlaylistContext, sim, params: BoostParams):
    """
    Reward candidates that fit between consecutive known tracks.

    Each gap between known tracks at positions ``p_l < p_r`` adds
    ``S[g_l, k] * S[g_r, k] / (p_r - p_l)``; the sum is scaled by
    ``gap_gamma``.

    Returns:
        ``(items, scores)`` re-sorted by descending score.
    """
    items, scores = np.asarray(items, np.intp), np.asarray(scores, np.float64).copy()
    k = min(params.k_candidates, len(items))
    scores[:k] += _gap_delta(items[:k], ctx.visible, ctx.positions, sim, params.gap_gamma)
    return _resort(items, scores)


def tail_boost(items, scores, ctx: PlaylistContext, sim, params: BoostParams):
    """
    Reward candidates similar to the last known tracks, with a geometric
    discount moving from the tail toward the head.
    """
    items, scores = np.asarray(items, np.intp), np.asarray(scores, np.float64).copy()
    k = min(params.k_candidates, len(items))
    scores[:k] += _tail_delta(
        items[:k], ctx.visible, sim, params.tail_gamma, params.tail_discount, params.tail_span
    )
    return _resort(items, scores)


def album_boost(items, scores, ctx: PlaylistContext, album_ids: np.ndarray, params: BoostParams):
    """
    When the last two known tracks share an album, push that album's other
    tracks up, earlier album positions first.

    Album position is the catalog column order. Album tracks missing from
    ``items`` are appended with a base score of zero before boosting.
    """
    items, scores = np.asarray(items, np.intp), np.asarray(scores, np.float64)
    members, weight = _album_targets(ctx.visible, np.asarray(album_ids), ctx.visible)
    if params.album_gamma == 0 or len(members) == 0:
        return items.copy(), scores.copy()
    missing = members[~np.isin(members, items)]
    items = np.concatenate([items, missing])
    scores = np.concatenate([scores, np.zeros(len(missing))])
    pos = {int(t): i for i, t in enumerate(items)}
    for t, w in zip(members, weight):
        scores[pos[int(t)]] += params.album_gamma * w
    return _resort(items, scores)


def boost_scores(
    scores: ScoreSet,
    contexts: Sequence[PlaylistContext],
    sim: sp.csr_matrix | None,
    album_ids: np.ndarray | None,
    params: BoostParams,
) -> ScoreSet:
    """
    Apply every enabled boost to each playlist of a score set.

    Boosts are computed from the unboosted ranking and summed, so their
    order does not matter. Rows and entries no boost touches keep their
    exact values.

    Args:
        scores: blended scores, one row per playlist.
        contexts: known tracks and category for each row.
        sim: track-track similarity for the gap and tail boosts.
        album_ids: album of each catalog column, for the album boost.
        params: boost configuration.
    """
    if len(contexts) != len(scores):
        raise ValueError(f"{len(contexts)} contexts for {len(scores)} score rows")
    use_gap = params.gap_gamma > 0
    use_tail = params.tail_gamma > 0
    use_album = params.album_gamma > 0
    if (use_gap or use_tail) and sim is None:
        raise ValueError("gap and tail boosts need a similarity matrix")
    if use_album and album_ids is None:
        raise ValueError("album boost needs album ids")

    s, msk = scores.scores, scores.mask
    rows, cols, vals = [], [], []
    for r, ctx in enumerate(contexts):
        gap = use_gap and ctx.category in params.gap_categories and len(ctx.visible) >= 2
        tail = use_tail and ctx.category in params.tail_categories and len(ctx.visible) >= 1
        album = use_album and ctx.category in params.album_categories and len(ctx.visible) >= 2
        if not (gap or tail or album):
            continue
        masked = msk.indices[msk.indptr[r] : msk.indptr[r + 1]]
        delta: dict[int, float] = {}
        if gap or tail:
            lo, hi = s.indptr[r], s.indptr[r + 1]
            cands = rank_row(s.indices[lo:hi], s.data[lo:hi], masked, s.shape[1], params.k_candidates)
            boost = np.zeros(len(cands))
            if gap:
                boost += _gap_delta(cands, ctx.visible, ctx.positions, sim, params.gap_gamma)
            if tail:
                boost += _tail_delta(
                    cands, ctx.visible, sim, params.tail_gamma, params.tail_discount, params.tail_span
                )
            for c, b in zip(cands.tolist(), boost.tolist()):
                if b != 0:
                    delta[c] = delta.get(c, 0.0) + b
        if album:
            members, weight = _album_targets(ctx.visible, album_ids, masked)
            for c, w in zip(members.tolist(), weight.tolist()):
                delta[c] = delta.get(c, 0.0) + params.album_gamma * w
        if delta:
            keys = sorted(delta)
            rows.extend([r] * len(keys))
            cols.extend(keys)
            vals.extend(delta[c] for c in keys)

    if not rows:
        return scores
    add = sp.csr_matrix((vals, (rows, cols)), shape=s.shape)
    return scores.with_scores(canonical(s + add))
