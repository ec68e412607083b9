"""
Per-category (and per artist-heterogeneity cluster) weighted blending of
model scores, plus a seeded weight search.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Mapping, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from .evaluation import MAX_RECOMMENDATIONS, clicks, ndcg, r_precision
from .sparse import ScoreSet, canonical, top_n

NormMode = Literal["none", "max", "l2"]
CLUSTER_CATEGORIES = frozenset({4, 5, 6, 8, 10})
TITLE_CATEGORIES = frozenset({1, 2, 3, 5, 7, 8, 9, 10})
TRACK_CATEGORIES = frozenset(range(2, 11))
TITLE_MODELS = frozenset({"cbf_title"})
GLOBAL_MODELS = frozenset({"toppop"})

Cell = tuple[int, "int | None"]


class EnsembleError(ValueError):
    pass


def normalize_scores(s: ScoreSet, mode: NormMode = "max") -> ScoreSet:
    """
    Scale each playlist's unmasked scores by their max |score| or L2 norm.
    Masked entries and all-zero rows are left as they are.
    """
    if mode == "none":
        return s
    if mode not in ("max", "l2"):
        raise EnsembleError(f"unknown normalization {mode!r}")
    masked_part = sp.csr_matrix(s.scores.multiply(s.mask))
    live = canonical(s.scores - masked_part)
    if mode == "max":
        stat = np.asarray(abs(live).max(axis=1).todense()).ravel()
    else:
        stat = np.sqrt(np.asarray(live.multiply(live).sum(axis=1)).ravel())
    scale = np.divide(1.0, stat, out=np.ones_like(stat), where=stat > 0)
    scores = sp.diags(scale) @ live + masked_part
    return s.with_scores(scores)


def blend(
    score_sets: Sequence[ScoreSet],
    weights: Sequence[float],
    normalization: NormMode | Sequence[NormMode] = "max",
    model: str = "blend",
) -> ScoreSet:
    """``sum_m w_m * normalize(score_m)`` with the union of member masks."""
    if not score_sets:
        raise EnsembleError("nothing to blend")
    if len(weights) != len(score_sets):
        raise EnsembleError(f"{len(weights)} weights for {len(score_sets)} score sets")
    modes = [normalization] * len(score_sets) if isinstance(normalization, str) else list(normalization)
    first = score_sets[0]
    for s in score_sets[1:]:
        if s.scores.shape != first.scores.shape or not np.array_equal(s.pids, first.pids):
            raise EnsembleError(f"model {s.model!r} covers different playlists than {first.model!r}")
    total = sp.csr_matrix(first.scores.shape)
    mask = sp.csr_matrix(first.scores.shape, dtype=bool)
    for s, w, mode in zip(score_sets, weights, modes):
        mask = mask + s.mask
        if w:
            total = total + float(w) * normalize_scores(s, mode).scores
    return ScoreSet(first.pids, canonical(total), sp.csr_matrix(mask, dtype=bool), model)


@dataclass
class EnsembleConfig:
    """Weight rows keyed by ``(category, cluster)``; ``cluster=None`` is the category row."""

    cells: dict[Cell, dict[str, float]] = field(default_factory=dict)
    normalization: dict[str, NormMode] = field(default_factory=dict)
    default_normalization: NormMode = "max"

    def validate(self) -> None:
        for (cat, cluster), weights in self.cells.items():
            if cat not in range(1, 11) or cluster not in (None, 1, 2, 3, 4):
                raise EnsembleError(f"bad cell ({cat}, {cluster})")
            if cluster is not None and cat not in CLUSTER_CATEGORIES:
                raise EnsembleError(f"category {cat} does not take cluster-specific weights")
            if any(w < 0 for w in weights.values()) or not any(w > 0 for w in weights.values()):
                raise EnsembleError(f"cell ({cat}, {cluster}) needs non-negative weights, one positive")

    def weights_for(self, category: int, cluster: int | None) -> dict[str, float]:
        if category in CLUSTER_CATEGORIES and (category, cluster) in self.cells:
            return self.cells[(category, cluster)]
        if (category, None) in self.cells:
            return self.cells[(category, None)]
        raise EnsembleError(f"no ensemble weights for category {category}, cluster {cluster}")

    def mode(self, model: str) -> NormMode:
        return self.normalization.get(model, self.default_normalization)

    def models(self) -> list[str]:
        return sorted({m for w in self.cells.values() for m in w})

    def to_json(self) -> str:
        cells = [
            {"category": c, "cluster": k, "weights": dict(sorted(w.items()))}
            for (c, k), w in sorted(self.cells.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0))
        ]
        doc = {
            "cells": cells,
            "normalization": dict(sorted(self.normalization.items())),
            "default_normalization": self.default_normalization,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> EnsembleConfig:
        doc = json.loads(text)
        cells = {
            (int(c["category"]), None if c.get("cluster") is None else int(c["cluster"])): {
                k: float(v) for k, v in c["weights"].items()
            }
            for c in doc["cells"]
        }
        out = cls(cells, dict(doc.get("normalization", {})), doc.get("default_normalization", "max"))
        out.validate()
        return out

    @classmethod
    def load(cls, path: str | Path) -> EnsembleConfig:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def default(
        cls,
        models: Sequence[str],
        weights: Mapping[str, float] | None = None,
        kinds: Mapping[str, str] | None = None,
    ) -> EnsembleConfig:
        """
        Every applicable model in every category: title models where titles
        exist, track-history models where tracks exist, global popularity
        everywhere. A category no model applies to gets every model. A
        model's kind defaults to its name up to any ``:``.
        """
        weights = dict(weights or {})
        kinds = dict(kinds or {})
        cells = {}
        for cat in range(1, 11):
            row = {}
            for m in models:
                family = kinds.get(m, m.split(":")[0])
                title_model = family in TITLE_MODELS
                if (
                    family in GLOBAL_MODELS
                    or (title_model and cat in TITLE_CATEGORIES)
                    or (not title_model and cat in TRACK_CATEGORIES)
                ):
                    row[m] = weights.get(m, 1.0)
            cells[(cat, None)] = row or {m: weights.get(m, 1.0) for m in models}
        return cls(cells)


def _blend_rows(
    score_sets: Mapping[str, ScoreSet], rows: np.ndarray, weights: Mapping[str, float], config: EnsembleConfig
) -> ScoreSet:
    missing = [m for m in weights if m not in score_sets]
    if missing:
        raise EnsembleError(f"ensemble references models without scores: {missing}")
    names = sorted(weights)
    return blend(
        [score_sets[m].rows(rows) for m in names],
        [weights[m] for m in names],
        [config.mode(m) for m in names],
    )


def blend_for_playlist(
    row: int,
    category: int,
    cluster: int | None,
    config: EnsembleConfig,
    score_sets: Mapping[str, ScoreSet],
) -> ScoreSet:
    """Blend one playlist (score row ``row``) with its cell's weights."""
    return _blend_rows(score_sets, np.array([row]), config.weights_for(category, cluster), config)


def blend_by_config(
    score_sets: Mapping[str, ScoreSet],
    categories: Sequence[int],
    clusters: Sequence[int | None],
    config: EnsembleConfig,
) -> ScoreSet:
    """Blend every row with its own cell's weights; rows keep their order."""
    any_set = next(iter(score_sets.values()))
    n = len(any_set)
    if len(categories) != n or len(clusters) != n:
        raise EnsembleError("one category and cluster are required per score row")
    groups: dict[tuple, list[int]] = {}
    for r, (cat, cl) in enumerate(zip(categories, clusters)):
        w = config.weights_for(cat, cl)
        groups.setdefault(tuple(sorted(w.items())), []).append(r)
    parts, order = [], []
    for key, rows in groups.items():
        parts.append(_blend_rows(score_sets, np.asarray(rows), dict(key), config))
        order.extend(rows)
    inverse = np.argsort(np.asarray(order))
    scores = sp.vstack([p.scores for p in parts], format="csr")[inverse]
    mask = sp.vstack([p.mask for p in parts], format="csr")[inverse]
    return ScoreSet(any_set.pids, canonical(scores), sp.csr_matrix(mask, dtype=bool), "blend")


Objective = Literal["r-precision", "ndcg", "clicks", "combined"]


def objective_value(
    objective: Objective | Callable,
    ranked: Sequence[Sequence[int]],
    truths: Sequence[set[int]],
    artist_of: Mapping[int, int],
) -> float:
    """Mean objective over playlists; higher is better (clicks are negated)."""
    if callable(objective):
        return float(objective(ranked, truths))
    vals = []
    for recs, truth in zip(ranked, truths):
        if objective == "r-precision":
            vals.append(r_precision(recs, truth, artist_of))
        elif objective == "ndcg":
            vals.append(ndcg(recs, truth))
        elif objective == "clicks":
            vals.append(-clicks(recs, truth))
        elif objective == "combined":
            vals.append(r_precision(recs, truth, artist_of) + ndcg(recs, truth) - clicks(recs, truth) / 51)
        else:
            raise EnsembleError(f"unknown objective {objective!r}")
    return math.fsum(vals) / len(vals)


class WeightSearch(Protocol):
    def propose(self, rng: np.random.Generator, n_models: int, history: list[tuple[np.ndarray, float]]) -> np.ndarray:
        """Next candidate weight vector given the evaluated history."""


class RandomSimplexSearch:
    """Uniform weights first, then uniform draws from the simplex."""

    def propose(self, rng, n_models, history):
        if not history:
            return np.full(n_models, 1.0 / n_models)
        return rng.dirichlet(np.ones(n_models))


@dataclass
class SearchTrace:
    """Objective of every evaluated candidate per cell, in evaluation order."""

    values: dict[Cell, list[float]] = field(default_factory=dict)


def optimize_weights(
    score_sets: Mapping[str, ScoreSet],
    truths: Sequence[set[int]],
    categories: Sequence[int],
    clusters: Sequence[int | None],
    artist_of: Mapping[int, int],
    track_ids: np.ndarray,
    *,
    objective: Objective | Callable = "combined",
    budget: int = 20,
    seed: int = 0,
    models: Sequence[str] | None = None,
    normalization: NormMode = "max",
    strategy: WeightSearch | None = None,
    n: int = MAX_RECOMMENDATIONS,
    trace: SearchTrace | None = None,
) -> EnsembleConfig:
    """
    Search blend weights independently per ``(category, cluster)`` cell,
    keeping the best candidate seen. The first candidate is uniform weights.
    Cluster cells are searched for categories that take them, alongside a
    category-wide row used as fallback.
    """
    if budget < 1:
        raise EnsembleError("budget must be at least 1")
    strategy = strategy or RandomSimplexSearch()
    models = sorted(models or score_sets)
    config = EnsembleConfig(normalization={m: normalization for m in models}, default_normalization=normalization)
    categories = np.asarray(categories)
    cluster_arr = np.asarray([-1 if c is None else c for c in clusters])

    cells: list[tuple[Cell, np.ndarray]] = []
    for cat in sorted(set(categories.tolist())):
        in_cat = np.flatnonzero(categories == cat)
        cells.append(((int(cat), None), in_cat))
        if cat in CLUSTER_CATEGORIES:
            for cl in sorted(set(cluster_arr[in_cat].tolist()) - {-1}):
                cells.append(((int(cat), int(cl)), in_cat[cluster_arr[in_cat] == cl]))

    for cell, rows in cells:
        rows = np.asarray([r for r in rows if truths[r]], dtype=np.intp)
        if rows.size == 0:
            raise EnsembleError(f"no validation playlists with ground truth for cell {cell}")
        if len(models) == 1:
            config.cells[cell] = {models[0]: 1.0}
            continue
        subsets = [score_sets[m].rows(rows) for m in models]
        cell_truths = [truths[r] for r in rows]
        rng = np.random.default_rng([seed, cell[0], cell[1] or 0])
        history: list[tuple[np.ndarray, float]] = []
        best_w, best_v = None, -math.inf
        for _ in range(budget):
            w = np.asarray(strategy.propose(rng, len(models), history), dtype=float)
            blended = blend(subsets, w, normalization)
            ranked = [track_ids[items].tolist() for items in top_n(blended, n)]
            value = objective_value(objective, ranked, cell_truths, artist_of)
            history.append((w, value))
            if value > best_v:
                best_w, best_v = w, value
        if trace is not None:
            trace.values[cell] = [v for _, v in history]
        config.cells[cell] = {m: float(x) for m, x in zip(models, best_w)}
    return config
