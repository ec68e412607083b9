"""Brute-force reference implementations used only by the tests."""

import math

import numpy as np


def bm25_dense(m, k1, b):
    m = np.asarray(m, dtype=float)
    n_rows, n_cols = m.shape
    out = np.zeros_like(m)
    row_len = m.sum(axis=1)
    avg = row_len.mean() if n_rows else 0.0
    for j in range(n_cols):
        df = int(np.count_nonzero(m[:, j]))
        idf = max(0.0, math.log((n_rows - df + 0.5) / (df + 0.5)))
        for i in range(n_rows):
            v = m[i, j]
            if v != 0:
                out[i, j] = idf * (v * (k1 + 1)) / (v + k1 * (1 - b + b * row_len[i] / avg))
    return out


def dot_dense(m):
    m = np.asarray(m, dtype=float)
    n = m.shape[1]
    s = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                s[i, j] = float(np.dot(m[:, i], m[:, j]))
    return s


def tversky_dense(m, alpha, beta, h):
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    mass = m.sum(axis=1)
    s = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            x = float(np.dot(m[i], m[j]))
            denom = alpha * (mass[i] - x) + beta * (mass[j] - x) + x + h
            s[i, j] = x / denom if denom > 0 else 0.0
    return s


def top_k_sets(vectors, k):
    """For each vector, the set of kept indices under (desc value, asc index)."""
    out = []
    for vec in vectors:
        cands = [(-v, j) for j, v in enumerate(vec) if v != 0]
        cands.sort()
        out.append({j for _, j in cands[:k]})
    return out


def prune_columns_dense(s, k):
    out = np.zeros_like(s)
    for i, keep in enumerate(top_k_sets(s.T, k)):
        for j in keep:
            out[j, i] = s[j, i]
    return out


def prune_rows_dense(s, k):
    out = np.zeros_like(s)
    for i, keep in enumerate(top_k_sets(s, k)):
        for j in keep:
            out[i, j] = s[i, j]
    return out


def full_sort_top_n(scores, masked, n):
    cands = sorted((-v, j) for j, v in enumerate(scores) if j not in masked)
    return [j for _, j in cands[:n]]


def r_precision_ref(recommended, truth, artist_of):
    truth = set(truth)
    window = list(recommended[: len(truth)])
    hits = [t for t in window if t in truth]
    track_part = len(hits) / len(truth)
    truth_artists = {artist_of[t] for t in truth}
    unmatched_artists = {artist_of[t] for t in window if t not in truth}
    artist_part = len(truth_artists & unmatched_artists) / len(truth_artists)
    return track_part + 0.25 * artist_part


def ndcg_ref(recommended, truth):
    truth = set(truth)
    dcg = 0.0
    for i, t in enumerate(recommended, start=1):
        if t in truth:
            dcg += 1.0 / math.log2(i + 1)
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(len(truth), 500) + 1))
    return dcg / ideal


def clicks_ref(recommended, truth):
    truth = set(truth)
    for i, t in enumerate(recommended[:500], start=1):
        if t in truth:
            return (i - 1) // 10
    return 51
