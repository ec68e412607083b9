"""
The recommender families: personalized top-popular, track- and
playlist-based CF, track- and playlist-based CBF, title CBF, and the
feature-layered CBF/CF variants.

Every model scores a batch of target rows of the playlist-track matrix and
returns a :class:`~playlistrec.sparse.ScoreSet` masking the rows' known
tracks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field

from .data import Catalog
from .sparse import (
    KernelParams,
    ScoreSet,
    as_interactions,
    binarize,
    bm25_weight,
    canonical,
    dot_similarity,
    predict_item_based,
    predict_user_based,
    tversky_similarity,
)
from .text import normalize_title, tokenize_title

N_LAYERS = 4


class FeatureCombo(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    selector: Literal["artist", "album", "album_artist"] = "album_artist"
    album_weight: float = Field(2.0, gt=0)
    artist_weight: float = Field(1.0, gt=0)


@dataclass(frozen=True)
class LayeredMatrix:
    base: sp.csr_matrix
    assignment: np.ndarray
    matrix: sp.csr_matrix
    n_layers: int = N_LAYERS


def _targets(targets) -> np.ndarray:
    return np.asarray(targets, dtype=np.intp).ravel()


def _pids(targets, pids) -> np.ndarray:
    return _targets(targets) if pids is None else np.asarray(pids)


def toppop(ptm, targets, *, pids=None) -> ScoreSet:
    """Global popularity: the number of playlists containing each track."""
    ptm = binarize(ptm)
    t = _targets(targets)
    counts = np.asarray(ptm.sum(axis=0)).ravel()
    nz = np.flatnonzero(counts)
    row = sp.csr_matrix((counts[nz], (np.zeros(nz.size, dtype=np.intp), nz)), shape=(1, ptm.shape[1]))
    scores = sp.vstack([row] * len(t), format="csr") if len(t) else sp.csr_matrix((0, ptm.shape[1]))
    return ScoreSet(_pids(t, pids), canonical(scores), sp.csr_matrix(ptm[t], dtype=bool), "toppop")


def _indicator(seeds: np.ndarray, width: int) -> sp.csr_matrix:
    """One row per seed with a single 1 at the seed's column; negative seeds stay empty."""
    valid = np.flatnonzero(seeds >= 0)
    return sp.csr_matrix(
        (np.ones(valid.size), (valid, seeds[valid])), shape=(len(seeds), width)
    )


def _seed_scores(selector: sp.csr_matrix, ptm: sp.csr_matrix, seeds: np.ndarray, pids, model) -> ScoreSet:
    scores = canonical(selector @ ptm)
    mask = sp.csr_matrix(_indicator(seeds, ptm.shape[1]), dtype=bool)
    pids = np.arange(len(seeds)) if pids is None else np.asarray(pids)
    return ScoreSet(pids, scores, mask, model)


def toppop_track(ptm, seeds: Sequence[int], *, pids=None) -> ScoreSet:
    """
    Per seed track: how many playlists contain both the seed and each track.
    A negative seed yields an empty row. The seed itself is masked.
    """
    ptm = binarize(ptm)
    seeds = np.asarray(seeds, dtype=np.intp).ravel()
    selector = _indicator(seeds, ptm.shape[1]) @ ptm.T
    return _seed_scores(selector, ptm, seeds, pids, "toppop_track")


def toppop_album(ptm, seeds: Sequence[int], album_ids: np.ndarray, *, pids=None) -> ScoreSet:
    """Top-popular over the playlists holding any track of the seed's album."""
    ptm = binarize(ptm)
    seeds = np.asarray(seeds, dtype=np.intp).ravel()
    album_of = _onehot(np.asarray(album_ids), 1.0)
    has_album = binarize(ptm @ album_of)
    seed_album = _indicator(seeds, ptm.shape[1]) @ album_of
    selector = seed_album @ has_album.T
    return _seed_scores(selector, ptm, seeds, pids, "toppop_album")


def cf_track(ptm, targets, params: KernelParams, *, pids=None, threads=None) -> ScoreSet:
    """Item-based CF: BM25-weighted column dot products, raw PTM on the prediction side."""
    ptm = as_interactions(ptm)
    weighted = bm25_weight(ptm, params.bm25_k1, params.bm25_b)
    sim = dot_similarity(weighted, params, threads=threads)
    return predict_item_based(ptm, sim, targets, pids=_pids(targets, pids), model="cf_track")


def cf_playlist(ptm, targets, params: KernelParams, *, pids=None, threads=None) -> ScoreSet:
    """Playlist-based CF: Tversky similarity between PTM rows."""
    ptm = as_interactions(ptm)
    sim = tversky_similarity(ptm, params, rows=_targets(targets), threads=threads)
    return predict_user_based(ptm, sim, targets, pids=_pids(targets, pids), model="cf_playlist")


def build_icm(album_ids: np.ndarray, artist_ids: np.ndarray, combo: FeatureCombo) -> sp.csr_matrix:
    """One-hot album and/or artist columns, one row per track."""
    n = len(album_ids)
    blocks = []
    if combo.selector in ("album", "album_artist"):
        w = combo.album_weight if combo.selector == "album_artist" else 1.0
        blocks.append(_onehot(album_ids, w))
    if combo.selector in ("artist", "album_artist"):
        w = combo.artist_weight if combo.selector == "album_artist" else 1.0
        blocks.append(_onehot(artist_ids, w))
    return canonical(sp.hstack(blocks, format="csr")) if n else sp.csr_matrix((0, 0))


def _onehot(ids: np.ndarray, value: float) -> sp.csr_matrix:
    _, col = np.unique(ids, return_inverse=True)
    return sp.csr_matrix(
        (np.full(len(col), float(value)), (np.arange(len(col)), col)),
        shape=(len(col), col.max() + 1 if len(col) else 0),
    )


def cbf_track(ptm, icm, targets, params: KernelParams, *, pids=None, threads=None, model="cbf_track") -> ScoreSet:
    """Item-based CBF: dot products of BM25-weighted ICM rows."""
    ptm = as_interactions(ptm)
    icm = as_interactions(icm)
    if icm.shape[0] != ptm.shape[1]:
        raise ValueError(f"ICM has {icm.shape[0]} rows for {ptm.shape[1]} tracks")
    weighted = bm25_weight(icm, params.bm25_k1, params.bm25_b)
    sim = dot_similarity(weighted.T, params, threads=threads)
    return predict_item_based(ptm, sim, targets, pids=_pids(targets, pids), model=model)


def cbf_track_similarity(icm, params: KernelParams, *, threads=None) -> sp.csr_matrix:
    """The track-track similarity used by :func:`cbf_track` (and by the boosts)."""
    weighted = bm25_weight(icm, params.bm25_k1, params.bm25_b)
    return dot_similarity(weighted.T, params, threads=threads)


def cbf_playlist_features(
    ptm, icm, targets, params: KernelParams, *, pids=None, threads=None, model="cbf_playlist"
) -> ScoreSet:
    """Playlist-based CBF: Tversky over BM25-weighted playlist-feature counts."""
    ptm = as_interactions(ptm)
    content = bm25_weight(ptm @ as_interactions(icm), params.bm25_k1, params.bm25_b)
    sim = tversky_similarity(content, params, rows=_targets(targets), threads=threads)
    return predict_user_based(ptm, sim, targets, pids=_pids(targets, pids), model=model)


def build_token_matrix(titles: Sequence[str | None]) -> tuple[sp.csr_matrix, list[str]]:
    """Binary playlist x token matrix over :func:`tokenize_title` output."""
    vocab: dict[str, int] = {}
    rows, cols = [], []
    for r, title in enumerate(titles):
        for tok in tokenize_title(title):
            rows.append(r)
            cols.append(vocab.setdefault(tok, len(vocab)))
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(titles), len(vocab)))
    return canonical(m), list(vocab)


def exact_title_similarity(titles: Sequence[str | None], targets) -> sp.csr_matrix:
    """1 between each target and every other playlist with the same normalized title."""
    groups: dict[str, list[int]] = {}
    norm = [normalize_title(t) for t in titles]
    for i, key in enumerate(norm):
        if key:
            groups.setdefault(key, []).append(i)
    rows, cols = [], []
    for u in np.unique(_targets(targets)):
        for v in groups.get(norm[u], ()):
            if v != u:
                rows.append(u)
                cols.append(v)
    n = len(titles)
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


def cbf_title(
    token_matrix,
    titles: Sequence[str | None],
    ptm,
    targets,
    params: KernelParams,
    w_tokens: float = 1.0,
    w_exact: float = 1.0,
    *,
    pids=None,
    threads=None,
) -> ScoreSet:
    """Weighted sum of token-based playlist CBF and exact-title top-popular."""
    ptm = as_interactions(ptm)
    t = _targets(targets)
    pids = _pids(t, pids)
    scores = sp.csr_matrix((len(t), ptm.shape[1]))
    if w_tokens:
        weighted = bm25_weight(token_matrix, params.bm25_k1, params.bm25_b)
        sim = tversky_similarity(weighted, params, rows=t, threads=threads)
        scores = scores + w_tokens * predict_user_based(ptm, sim, t).scores
    if w_exact:
        exact = exact_title_similarity(titles, t)
        scores = scores + w_exact * predict_user_based(ptm, exact, t).scores
    return ScoreSet(pids, canonical(scores), sp.csr_matrix(ptm[t], dtype=bool), "cbf_title")


def quartile_cluster(values: Sequence[float], n_clusters: int = N_LAYERS) -> np.ndarray:
    """
    Equal-size clusters ``1..n_clusters`` over ascending values (ties by
    position); earlier clusters take the remainder.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n == 0:
        raise ValueError("cannot cluster an empty list")
    if n_clusters < 1:
        raise ValueError("n_clusters must be at least 1")
    order = np.lexsort((np.arange(n), values))
    base, extra = divmod(n, n_clusters)
    sizes = [base + (1 if c < extra else 0) for c in range(n_clusters)]
    labels = np.repeat(np.arange(1, n_clusters + 1), sizes)
    out = np.empty(n, dtype=np.int64)
    out[order] = labels
    return out


def layer_matrix(base, assignment: Sequence[int], n_layers: int = N_LAYERS) -> LayeredMatrix:
    """Move each row's nonzeros into horizontal block ``assignment[row]``."""
    base = canonical(base)
    assignment = np.asarray(assignment, dtype=np.int64)
    if len(assignment) != base.shape[0]:
        raise ValueError(f"assignment covers {len(assignment)} of {base.shape[0]} rows")
    if assignment.size and (assignment.min() < 1 or assignment.max() > n_layers):
        raise ValueError(f"layer ids must lie in 1..{n_layers}")
    width = base.shape[1]
    rows = np.repeat(np.arange(base.shape[0]), np.diff(base.indptr))
    cols = base.indices + (assignment[rows] - 1) * width
    out = sp.csr_matrix((base.data.copy(), (rows, cols)), shape=(base.shape[0], n_layers * width))
    out.sort_indices()
    return LayeredMatrix(base, assignment, out, n_layers)


def layer_assignment(spec: str | np.ndarray, catalog: Catalog, n_clusters: int = N_LAYERS) -> np.ndarray:
    """
    Track layers for ``spec``: an explicit array, ``"album"``/``"artist"``
    (id modulo 4) or an audio-feature name (equal-size value clusters).
    """
    if not isinstance(spec, str):
        return np.asarray(spec, dtype=np.int64)
    if spec == "album":
        return catalog.album_ids % N_LAYERS + 1
    if spec == "artist":
        return catalog.artist_ids % N_LAYERS + 1
    return quartile_cluster(catalog.feature(spec), n_clusters)


def cbf_track_layered(
    ptm,
    catalog: Catalog,
    feature: str | np.ndarray,
    targets,
    params: KernelParams,
    *,
    n_clusters: int = N_LAYERS,
    pids=None,
    threads=None,
) -> ScoreSet:
    """Artist CBF on an ICM split into layers by clusters of one audio feature."""
    icm = build_icm(catalog.album_ids, catalog.artist_ids, FeatureCombo(selector="artist"))
    assignment = layer_assignment(feature, catalog, n_clusters)
    layered = layer_matrix(icm, assignment).matrix
    name = feature if isinstance(feature, str) else "custom"
    return cbf_track(ptm, layered, targets, params, pids=pids, threads=threads, model=f"cbf_track_layered:{name}")


def cf_track_layered(
    ptm,
    catalog: Catalog,
    layers: Sequence[str | np.ndarray],
    targets,
    params: KernelParams,
    *,
    n_clusters: int = N_LAYERS,
    pids=None,
    threads=None,
) -> ScoreSet:
    """
    Item CF where each track's playlist vector is placed in its layer; with
    several layerings the layered blocks are concatenated side by side.
    """
    if not layers:
        raise ValueError("at least one layering is required")
    ptm = as_interactions(ptm)
    weighted = bm25_weight(ptm, params.bm25_k1, params.bm25_b)
    track_rows = sp.csr_matrix(weighted.T)
    blocks = [layer_matrix(track_rows, layer_assignment(s, catalog, n_clusters)).matrix for s in layers]
    layered = sp.hstack(blocks, format="csr")
    sim = dot_similarity(layered.T, params, threads=threads)
    return predict_item_based(ptm, sim, targets, pids=_pids(targets, pids), model="cf_track_layered")


def write_scores(scores: ScoreSet, track_ids: np.ndarray, path: str | Path, limit: int | None = None) -> None:
    """Score file: one JSON line per playlist with its ranked unmasked candidates."""
    s, m = scores.scores, scores.mask
    with open(path, "w", encoding="utf-8") as f:
        for r, pid in enumerate(scores.pids):
            lo, hi = s.indptr[r], s.indptr[r + 1]
            idx, val = s.indices[lo:hi], s.data[lo:hi]
            masked = m.indices[m.indptr[r] : m.indptr[r + 1]]
            keep = (val != 0) & ~np.isin(idx, masked)
            idx, val = idx[keep], val[keep]
            order = np.lexsort((idx, -val))[:limit]
            items = [[int(track_ids[i]), float(v)] for i, v in zip(idx[order], val[order])]
            f.write(json.dumps({"pid": int(pid), "model": scores.model, "items": items}) + "\n")


def read_scores(path: str | Path, catalog: Catalog) -> ScoreSet:
    """Inverse of :func:`write_scores`; the mask is left empty."""
    pids, rows, cols, vals, model = [], [], [], [], None
    with open(path, encoding="utf-8") as f:
        for r, line in enumerate(x for x in f if x.strip()):
            rec = json.loads(line)
            model = rec["model"]
            pids.append(int(rec["pid"]))
            for tid, v in rec["items"]:
                rows.append(r)
                cols.append(catalog.index[int(tid)])
                vals.append(float(v))
    shape = (len(pids), len(catalog))
    scores = sp.csr_matrix((vals, (rows, cols)), shape=shape)
    return ScoreSet(np.asarray(pids), canonical(scores), sp.csr_matrix(shape, dtype=bool), model or "unknown")
