"""
End-to-end orchestration: load, split, build models, blend, boost, rank and
evaluate, driven by a single JSON configuration document.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Iterator, Mapping, Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .boosts import BoostParams, PlaylistContext, boost_scores
from .data import (
    CATEGORIES,
    Catalog,
    ChallengePlaylist,
    DataError,
    Dataset,
    Track,
    artist_heterogeneity,
    build_ptm,
    impute_features,
    load_dataset,
    load_features,
    read_challenge,
    split_challenge,
    write_challenge,
    write_dataset,
)
from .ensemble import EnsembleConfig, NormMode, Objective, blend_by_config, optimize_weights
from .evaluation import MAX_RECOMMENDATIONS, EvalReport, evaluate_run, read_submission, write_submission
from .recommenders import (
    FeatureCombo,
    build_icm,
    build_token_matrix,
    cbf_playlist_features,
    cbf_title,
    cbf_track,
    cbf_track_layered,
    cbf_track_similarity,
    cf_playlist,
    cf_track,
    cf_track_layered,
    read_scores,
    toppop,
    toppop_album,
    toppop_track,
    write_scores,
)
from .sparse import KernelParams, ScoreSet, canonical, rank_row, top_k_rows
from .synthetic import PatternMix, SyntheticParams, generate_corpus, write_corpus

__all__ = [
    "ConfigError",
    "ModelConfig",
    "PipelineConfig",
    "StageError",
    "TuneConfig",
    "Workspace",
    "cmd_build",
    "cmd_evaluate",
    "cmd_generate_synthetic",
    "cmd_recommend",
    "cmd_run",
    "cmd_split",
    "cmd_tune",
    "compute_scores",
    "load_config",
    "recommend",
]

log = logging.getLogger(__name__)

ModelKind = Literal[
    "toppop",
    "toppop_track",
    "toppop_album",
    "cf_track",
    "cf_playlist",
    "cbf_track",
    "cbf_playlist",
    "cbf_title",
    "cbf_track_layered",
    "cf_track_layered",
]


class ModelConfig(BaseModel):
    """One base recommender and its parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ModelKind
    params: KernelParams = KernelParams()
    combo: FeatureCombo = FeatureCombo()
    feature: str = "loudness"
    layers: list[str] = ["album", "artist"]
    w_tokens: float = 1.0
    w_exact: float = 1.0


def default_models() -> dict[str, ModelConfig]:
    return {
        "toppop": ModelConfig(kind="toppop"),
        "cf_track": ModelConfig(kind="cf_track"),
        "cf_playlist": ModelConfig(kind="cf_playlist", params=KernelParams(knn=200, alpha=0.5, beta=0.5)),
        "cbf_track": ModelConfig(kind="cbf_track"),
        "cbf_playlist": ModelConfig(kind="cbf_playlist", params=KernelParams(knn=200, alpha=0.5, beta=0.5)),
        "cbf_title": ModelConfig(kind="cbf_title", params=KernelParams(knn=200)),
    }


class TuneConfig(BaseModel):
    """Ensemble weight search on a validation split of the training data."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    budget: int = Field(0, ge=0)
    objective: Objective = "combined"
    per_category: int = Field(20, ge=1)


class PipelineConfig(BaseModel):
    """
    Everything a run needs. Relative paths are resolved against the
    directory of the configuration file.

    ``dataset`` is the full corpus when ``challenge`` is unset (the run
    draws its own split) and the training set otherwise.
    """

    model_config = ConfigDict(extra="forbid")

    dataset: Path | None = None
    features: Path | None = None
    challenge: Path | None = None
    truth: Path | None = None
    per_category: int = Field(50, ge=1)
    categories: list[int] | None = None
    models: dict[str, ModelConfig] = Field(default_factory=default_models)
    ensemble: Path | None = None
    normalization: NormMode = "max"
    tune: TuneConfig = TuneConfig()
    boosts: BoostParams = BoostParams()
    boost_similarity: KernelParams = KernelParams()
    boost_combo: FeatureCombo = FeatureCombo()
    fill_popular: bool = True
    score_limit: int | None = Field(1000, ge=1)
    seed: int = 0
    threads: int | None = Field(None, ge=1)
    out_dir: Path = Path("out")
    n_recommendations: int = Field(MAX_RECOMMENDATIONS, ge=1, le=MAX_RECOMMENDATIONS)

    @field_validator("categories")
    @classmethod
    def _known_categories(cls, v):
        if v is not None:
            bad = sorted(set(v) - set(CATEGORIES))
            if bad:
                raise ValueError(f"unknown categories {bad}")
        return v

    @field_validator("models")
    @classmethod
    def _some_models(cls, v):
        if not v:
            raise ValueError("at least one model is required")
        return v


def load_config(path: str | Path | None, **overrides) -> PipelineConfig:
    """Read a config file (or defaults), apply non-``None`` overrides, resolve paths."""
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent
    raw.update({k: v for k, v in overrides.items() if v is not None})
    cfg = PipelineConfig.model_validate(raw)
    updates = {}
    for name in ("dataset", "features", "challenge", "truth", "ensemble", "out_dir"):
        value = getattr(cfg, name)
        if value is not None and not value.is_absolute():
            updates[name] = base / value
    return cfg.model_copy(update=updates)


class ConfigError(ValueError):
    """The configuration cannot drive the requested command."""


class StageError(RuntimeError):
    """A failure inside one pipeline stage, naming the stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str) -> Iterator[None]:
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class Workspace:
    """Training playlists plus the incomplete playlists to continue."""

    train: Dataset
    challenges: list[ChallengePlaylist]
    tracks: dict[int, Track]
    catalog: Catalog
    ptm: sp.csr_matrix
    targets: np.ndarray
    titles: list[str | None]

    @classmethod
    def build(cls, train: Dataset, challenges: Sequence[ChallengePlaylist], tracks: dict[int, Track]):
        catalog = Catalog(tracks)
        rows = [p.track_ids for p in train.playlists] + [c.visible_ids for c in challenges]
        ptm = build_ptm(rows, catalog)
        targets = np.arange(len(train.playlists), ptm.shape[0])
        titles = [p.title for p in train.playlists] + [c.title for c in challenges]
        return cls(train, list(challenges), tracks, catalog, ptm, targets, titles)

    @property
    def pids(self) -> np.ndarray:
        return np.asarray([c.pid for c in self.challenges], dtype=np.int64)

    @property
    def categories(self) -> list[int]:
        return [c.category for c in self.challenges]

    def clusters(self) -> list[int | None]:
        return [
            artist_heterogeneity(c.visible_ids, self.tracks).cluster if c.visible else None
            for c in self.challenges
        ]

    def contexts(self) -> list[PlaylistContext]:
        return [
            PlaylistContext.build(c.category, self.catalog.columns(c.visible_ids), [p for _, p in c.visible])
            for c in self.challenges
        ]

    def artist_of(self) -> dict[int, int]:
        return {t: tr.artist_id for t, tr in self.tracks.items()}

    def visible_mask(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.ptm[self.targets], dtype=bool)


def truncate_scores(s: ScoreSet, limit: int | None) -> ScoreSet:
    """Drop masked entries and keep the ``limit`` best per row (ties to the smaller index)."""
    live = canonical(s.scores - s.scores.multiply(s.mask))
    if limit is not None:
        live = top_k_rows(live, limit)
    return s.with_scores(live)


def _model_scores(name: str, spec: ModelConfig, ws: Workspace, threads: int | None, cache: dict) -> ScoreSet:
    ptm, t, pids, cat = ws.ptm, ws.targets, ws.pids, ws.catalog
    p = spec.params
    if spec.kind == "toppop":
        return toppop(ptm, t, pids=pids)
    if spec.kind in ("toppop_track", "toppop_album"):
        seeds = np.asarray(
            [cat.index[c.visible_ids[0]] if c.visible else -1 for c in ws.challenges], dtype=np.intp
        )
        if spec.kind == "toppop_track":
            return toppop_track(ptm, seeds, pids=pids)
        return toppop_album(ptm, seeds, cat.album_ids, pids=pids)
    if spec.kind == "cf_track":
        return cf_track(ptm, t, p, pids=pids, threads=threads)
    if spec.kind == "cf_playlist":
        return cf_playlist(ptm, t, p, pids=pids, threads=threads)
    if spec.kind == "cbf_track":
        icm = build_icm(cat.album_ids, cat.artist_ids, spec.combo)
        return cbf_track(ptm, icm, t, p, pids=pids, threads=threads, model=name)
    if spec.kind == "cbf_playlist":
        icm = build_icm(cat.album_ids, cat.artist_ids, spec.combo)
        return cbf_playlist_features(ptm, icm, t, p, pids=pids, threads=threads, model=name)
    if spec.kind == "cbf_title":
        if "tokens" not in cache:
            cache["tokens"] = build_token_matrix(ws.titles)[0]
        return cbf_title(cache["tokens"], ws.titles, ptm, t, p, spec.w_tokens, spec.w_exact, pids=pids, threads=threads)
    if spec.kind == "cbf_track_layered":
        return cbf_track_layered(ptm, cat, spec.feature, t, p, pids=pids, threads=threads)
    if spec.kind == "cf_track_layered":
        return cf_track_layered(ptm, cat, spec.layers, t, p, pids=pids, threads=threads)
    raise ValueError(f"unknown model kind {spec.kind!r}")


def compute_scores(
    ws: Workspace,
    models: Mapping[str, ModelConfig],
    *,
    threads: int | None = None,
    limit: int | None = None,
) -> dict[str, ScoreSet]:
    """Scores of every configured model for the workspace's challenge rows."""
    cache: dict = {}
    mask = ws.visible_mask()
    out = {}
    for name in sorted(models):
        log.info("model %s", name)
        s = _model_scores(name, models[name], ws, threads, cache)
        s = ScoreSet(s.pids, s.scores, s.mask, name).with_mask(mask)
        out[name] = truncate_scores(s, limit)
    return out


def _popularity_order(ptm: sp.csr_matrix) -> np.ndarray:
    counts = np.asarray(ptm.sum(axis=0)).ravel()
    return np.lexsort((np.arange(len(counts)), -counts))


def rank_playlists(scores: ScoreSet, n: int, fill_order: np.ndarray | None = None) -> list[np.ndarray]:
    """
    Top ``n`` unmasked items per row. Positive scores come first; with a
    ``fill_order`` the remaining slots follow it instead of item index.
    """
    s, msk = scores.scores, scores.mask
    out = []
    for r in range(s.shape[0]):
        lo, hi = s.indptr[r], s.indptr[r + 1]
        idx, val = s.indices[lo:hi], s.data[lo:hi]
        masked = msk.indices[msk.indptr[r] : msk.indptr[r + 1]]
        if fill_order is None:
            out.append(rank_row(idx, val, masked, s.shape[1], n))
            continue
        keep = val > 0
        head = rank_row(idx[keep], val[keep], masked, s.shape[1], n)
        head = head[: int(np.count_nonzero(keep & ~np.isin(idx, masked)))]
        if head.size < n:
            taken = np.zeros(s.shape[1], dtype=bool)
            taken[masked] = True
            taken[head] = True
            tail = fill_order[~taken[fill_order]][: n - head.size]
            head = np.concatenate([head, tail]).astype(np.intp)
        out.append(head)
    return out


def _ensemble(cfg: PipelineConfig, ws: Workspace, tuned: EnsembleConfig | None) -> EnsembleConfig:
    if tuned is not None:
        return tuned
    if cfg.ensemble is not None:
        return EnsembleConfig.load(cfg.ensemble)
    kinds = {name: m.kind for name, m in cfg.models.items()}
    ens = EnsembleConfig.default(sorted(cfg.models), kinds=kinds)
    ens.default_normalization = cfg.normalization
    return ens


def recommend(
    cfg: PipelineConfig,
    ws: Workspace,
    score_sets: Mapping[str, ScoreSet],
    ensemble: EnsembleConfig,
) -> dict[int, list[int]]:
    """Blend, boost and rank; returns track ids per challenge pid."""
    with stage("blend"):
        blended = blend_by_config(score_sets, ws.categories, ws.clusters(), ensemble)
    with stage("boost"):
        b = cfg.boosts
        sim = None
        if b.gap_gamma > 0 or b.tail_gamma > 0:
            icm = build_icm(ws.catalog.album_ids, ws.catalog.artist_ids, cfg.boost_combo)
            sim = cbf_track_similarity(icm, cfg.boost_similarity, threads=cfg.threads)
        boosted = boost_scores(blended, ws.contexts(), sim, ws.catalog.album_ids, b)
    with stage("rank"):
        fill = _popularity_order(ws.ptm) if cfg.fill_popular else None
        ranked = rank_playlists(boosted, cfg.n_recommendations, fill)
        return {int(pid): ws.catalog.track_ids[items].tolist() for pid, items in zip(ws.pids, ranked)}


def _load_tracks(cfg: PipelineConfig, tracks: dict[int, Track]) -> dict[int, Track]:
    if cfg.features is None:
        return tracks
    return impute_features(load_features(cfg.features, tracks))


def _filter(cfg: PipelineConfig, challenges: list[ChallengePlaylist]) -> list[ChallengePlaylist]:
    if cfg.categories is None:
        return challenges
    keep = set(cfg.categories)
    return [c for c in challenges if c.category in keep]


def load_workspace(cfg: PipelineConfig) -> tuple[Workspace, bool]:
    """
    Load (and, without a challenge file, split) the data. Returns the
    workspace and whether the split was drawn here.
    """
    if cfg.dataset is None:
        raise ConfigError("config has no dataset")
    with stage("load"):
        dataset = load_dataset(cfg.dataset)
        tracks = dict(dataset.tracks)
        challenges = None
        if cfg.challenge is not None:
            challenges = read_challenge(cfg.challenge, tracks, cfg.truth)
    if challenges is None:
        with stage("split"):
            dataset, challenges = split_challenge(dataset, cfg.seed, cfg.per_category)
            tracks = dict(dataset.tracks)
    with stage("features"):
        tracks = _load_tracks(cfg, tracks)
        train = Dataset(dataset.playlists, tracks)
    return Workspace.build(train, _filter(cfg, challenges), tracks), cfg.challenge is None


def tune_ensemble(cfg: PipelineConfig, train: Dataset) -> EnsembleConfig:
    """Split the training data again and search blend weights on it."""
    with stage("tune"):
        inner, val = split_challenge(train, cfg.seed + 1, cfg.tune.per_category)
        tracks = {**train.tracks, **inner.tracks}
        ws = Workspace.build(Dataset(inner.playlists, tracks), _filter(cfg, val), tracks)
        scores = compute_scores(ws, cfg.models, threads=cfg.threads, limit=cfg.score_limit)
        truths = [set(c.ground_truth) for c in ws.challenges]
        return optimize_weights(
            scores,
            truths,
            ws.categories,
            ws.clusters(),
            ws.artist_of(),
            ws.catalog.track_ids,
            objective=cfg.tune.objective,
            budget=cfg.tune.budget,
            seed=cfg.seed,
            normalization=cfg.normalization,
            n=cfg.n_recommendations,
        )


def _evaluate(ws: Workspace, submission: Mapping[int, Sequence[int]]) -> EvalReport | None:
    if not any(c.ground_truth for c in ws.challenges):
        return None
    with stage("evaluate"):
        return evaluate_run(submission, ws.challenges, ws.artist_of())


@dataclass
class RunResult:
    submission: dict[int, list[int]]
    report: EvalReport | None
    submission_path: Path
    report_path: Path | None


def cmd_run(cfg: PipelineConfig) -> RunResult:
    """
    Full pipeline: load, split (if needed), optionally tune, build every
    model, blend per category and cluster, boost, rank, write the submission
    and, when ground truth is known, the evaluation report.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ws, drew_split = load_workspace(cfg)
    if drew_split:
        with stage("split"):
            write_challenge(ws.challenges, ws.tracks, out / "challenge.jsonl", out / "truth.jsonl")
    tuned = None
    if cfg.ensemble is None and cfg.tune.budget > 0:
        tuned = tune_ensemble(cfg, ws.train)
        tuned.save(out / "ensemble.json")
    with stage("build"):
        scores = compute_scores(ws, cfg.models, threads=cfg.threads, limit=cfg.score_limit)
    with stage("ensemble"):
        ensemble = _ensemble(cfg, ws, tuned)
    submission = recommend(cfg, ws, scores, ensemble)
    with stage("write"):
        write_submission(submission, out / "submission.csv")
    report = _evaluate(ws, submission)
    report_path = None
    if report is not None:
        report_path = out / "report.json"
        report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    return RunResult(submission, report, out / "submission.csv", report_path)


def cmd_generate_synthetic(
    seed: int,
    out_dir: str | Path,
    n_playlists: int = 2000,
    n_tracks: int = 5000,
    mix: PatternMix | None = None,
    **params,
) -> tuple[Path, Path]:
    """Write a synthetic corpus: ``playlists.jsonl`` and ``features.csv``."""
    p = SyntheticParams(n_playlists=n_playlists, n_tracks=n_tracks, mix=mix or PatternMix(), **params)
    with stage("generate"):
        return write_corpus(generate_corpus(seed, p), out_dir)


def cmd_split(cfg: PipelineConfig) -> tuple[Path, Path, Path]:
    """Split the configured corpus into training, challenge and ground-truth files."""
    if cfg.dataset is None:
        raise ConfigError("config has no dataset")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with stage("load"):
        dataset = load_dataset(cfg.dataset)
    with stage("split"):
        train, challenges = split_challenge(dataset, cfg.seed, cfg.per_category)
        paths = out / "train.jsonl", out / "challenge.jsonl", out / "truth.jsonl"
        write_dataset(train, paths[0])
        write_challenge(challenges, train.tracks, paths[1], paths[2])
    return paths


def _digest(*parts: bytes) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(hashlib.sha256(part).digest())
    return h.hexdigest()[:16]


def score_cache_path(cfg: PipelineConfig, name: str) -> Path:
    """Cache file of one model's scores, keyed by its config and the inputs."""
    inputs = [
        Path(p).read_bytes() if p is not None and Path(p).exists() else b""
        for p in (cfg.dataset, cfg.challenge, cfg.features)
    ]
    key = _digest(
        cfg.models[name].model_dump_json().encode(),
        json.dumps([cfg.score_limit, cfg.categories]).encode(),
        *inputs,
    )
    return Path(cfg.out_dir) / "scores" / f"{name}.{key}.jsonl"


def _require_challenge(cfg: PipelineConfig) -> None:
    if cfg.challenge is None:
        raise ConfigError("this command needs a challenge file; run 'split' first or set 'challenge'")


def cmd_build(cfg: PipelineConfig) -> dict[str, Path]:
    """Compute every model's scores for the challenge playlists and cache them."""
    _require_challenge(cfg)
    ws, _ = load_workspace(cfg)
    paths = {}
    with stage("build"):
        scores = compute_scores(ws, cfg.models, threads=cfg.threads, limit=cfg.score_limit)
        for name, s in scores.items():
            path = score_cache_path(cfg, name)
            path.parent.mkdir(parents=True, exist_ok=True)
            write_scores(s, ws.catalog.track_ids, path)
            paths[name] = path
    return paths


def cmd_tune(cfg: PipelineConfig) -> Path:
    """Search ensemble weights on a validation split of the training set."""
    if cfg.tune.budget < 1:
        cfg = cfg.model_copy(update={"tune": cfg.tune.model_copy(update={"budget": 20})})
    if cfg.dataset is None:
        raise ConfigError("config has no dataset")
    with stage("load"):
        dataset = load_dataset(cfg.dataset)
        train = Dataset(dataset.playlists, _load_tracks(cfg, dict(dataset.tracks)))
    ensemble = tune_ensemble(cfg, train)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ensemble.save(out / "ensemble.json")
    return out / "ensemble.json"


def cmd_recommend(cfg: PipelineConfig) -> Path:
    """Blend cached (or freshly computed) scores into a submission file."""
    _require_challenge(cfg)
    ws, _ = load_workspace(cfg)
    with stage("build"):
        mask = ws.visible_mask()
        scores, missing = {}, {}
        for name, spec in cfg.models.items():
            path = score_cache_path(cfg, name)
            if path.exists():
                cached = read_scores(path, ws.catalog)
                if not np.array_equal(cached.pids, ws.pids):
                    raise DataError(f"cached scores {path} cover different playlists")
                scores[name] = cached.with_mask(mask)
            else:
                missing[name] = spec
        scores.update(compute_scores(ws, missing, threads=cfg.threads, limit=cfg.score_limit))
    with stage("ensemble"):
        ensemble = _ensemble(cfg, ws, None)
    submission = recommend(cfg, ws, scores, ensemble)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with stage("write"):
        write_submission(submission, out / "submission.csv")
    return out / "submission.csv"


def cmd_evaluate(cfg: PipelineConfig, submission_path: str | Path | None = None) -> EvalReport:
    """Score a submission file against the challenge ground truth."""
    _require_challenge(cfg)
    if cfg.truth is None:
        raise ConfigError("evaluation needs a ground-truth file ('truth')")
    out = Path(cfg.out_dir)
    with stage("load"):
        tracks = dict(load_dataset(cfg.dataset).tracks) if cfg.dataset is not None else {}
        challenges = _filter(cfg, read_challenge(cfg.challenge, tracks, cfg.truth))
        submission = read_submission(submission_path or out / "submission.csv")
    with stage("evaluate"):
        artist_of = {t: tr.artist_id for t, tr in tracks.items()}
        report = evaluate_run(submission, challenges, artist_of)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return report


