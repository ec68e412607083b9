"""
Datasets, challenge splits, artist heterogeneity and feature imputation.

Playlist files are JSON lines::

    {"pid": 1, "name": "rock", "tracks": [{"track_id": 7, "album_id": 2, "artist_id": 1, "pos": 0}]}

A track entry may omit ``album_id``/``artist_id`` when the same track is
fully described on another line.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

AUDIO_FEATURES = (
    "acousticness",
    "danceability",
    "energy",
    "instrumentalness",
    "liveness",
    "loudness",
    "speechiness",
    "tempo",
    "valence",
    "popularity",
)

# category -> (visible tracks, title kept, random sample)
CATEGORIES: dict[int, tuple[int, bool, bool]] = {
    1: (0, True, False),
    2: (1, True, False),
    3: (5, True, False),
    4: (5, False, False),
    5: (10, True, False),
    6: (10, False, False),
    7: (25, True, False),
    8: (25, True, True),
    9: (100, True, False),
    10: (100, True, True),
}


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Track:
    track_id: int
    album_id: int
    artist_id: int
    audio_features: Mapping[str, float | None] | None = None

    def __post_init__(self):
        if min(self.track_id, self.album_id, self.artist_id) < 0:
            raise DataError(f"track {self.track_id}: ids must be non-negative")
        pop = (self.audio_features or {}).get("popularity")
        if pop is not None and not 0 <= pop <= 100:
            raise DataError(f"track {self.track_id}: popularity {pop} outside [0, 100]")


@dataclass(frozen=True)
class Playlist:
    pid: int
    title: str | None
    tracks: tuple[tuple[int, int], ...] = ()
    """``(track_id, position)`` pairs in playlist order."""

    def __post_init__(self):
        pos = [p for _, p in self.tracks]
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise DataError(f"playlist {self.pid}: positions must be strictly increasing")

    @property
    def track_ids(self) -> list[int]:
        return [t for t, _ in self.tracks]


@dataclass(frozen=True)
class ArhValue:
    value: float
    cluster: int


@dataclass
class Dataset:
    playlists: list[Playlist] = field(default_factory=list)
    tracks: dict[int, Track] = field(default_factory=dict)

    def __post_init__(self):
        pids = [p.pid for p in self.playlists]
        if len(set(pids)) != len(pids):
            raise DataError("duplicate playlist ids")
        for p in self.playlists:
            for t in p.track_ids:
                if t not in self.tracks:
                    raise DataError(f"playlist {p.pid} references unknown track_id {t}")


@dataclass(frozen=True)
class ChallengePlaylist:
    """An incomplete playlist with its hidden continuation."""

    pid: int
    category: int
    title: str | None
    visible: tuple[tuple[int, int], ...]
    hidden: tuple[int, ...] = ()
    ordered: bool = True

    @property
    def visible_ids(self) -> list[int]:
        return [t for t, _ in self.visible]

    @property
    def ground_truth(self) -> frozenset[int]:
        return frozenset(self.hidden) - set(self.visible_ids)


class Catalog:
    """Column layout of the track axis: track ids sorted ascending."""

    def __init__(self, tracks: Mapping[int, Track], track_ids: Iterable[int] | None = None):
        ids = sorted(tracks) if track_ids is None else sorted(set(track_ids))
        self.track_ids = np.asarray(ids, dtype=np.int64)
        self.index = {t: i for i, t in enumerate(ids)}
        self.tracks = tracks
        self.album_ids = np.asarray([tracks[t].album_id for t in ids], dtype=np.int64)
        self.artist_ids = np.asarray([tracks[t].artist_id for t in ids], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.track_ids)

    def columns(self, track_ids: Iterable[int]) -> np.ndarray:
        return np.asarray([self.index[t] for t in track_ids], dtype=np.intp)

    def feature(self, name: str) -> np.ndarray:
        """One audio feature per column; raises if any track lacks it."""
        out = np.empty(len(self))
        for i, t in enumerate(self.track_ids):
            feats = self.tracks[int(t)].audio_features or {}
            v = feats.get(name)
            if v is None:
                raise DataError(f"track {t} has no value for feature {name!r}; impute first")
            out[i] = v
        return out


def build_ptm(rows: Sequence[Sequence[int]], catalog: Catalog) -> sp.csr_matrix:
    """Binary playlist x track matrix from per-playlist track id lists."""
    indptr = [0]
    indices: list[int] = []
    for ids in rows:
        cols = sorted({catalog.index[t] for t in ids})
        indices.extend(cols)
        indptr.append(len(indices))
    data = np.ones(len(indices))
    return sp.csr_matrix((data, np.asarray(indices, dtype=np.int64), indptr), shape=(len(rows), len(catalog)))


def _track_entry(raw: Mapping, tracks: dict[int, Track], line: int) -> tuple[int, int]:
    try:
        tid = int(raw["track_id"])
        pos = int(raw["pos"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"line {line}: bad track entry {raw!r}") from exc
    if "album_id" in raw or "artist_id" in raw:
        try:
            track = Track(tid, int(raw["album_id"]), int(raw["artist_id"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"line {line}: bad track entry {raw!r}") from exc
        known = tracks.get(tid)
        if known is not None and (known.album_id, known.artist_id) != (track.album_id, track.artist_id):
            raise DataError(f"line {line}: track {tid} redefined with different album/artist")
        tracks[tid] = track
    return tid, pos


def read_playlists(path: str | Path, tracks: dict[int, Track] | None = None) -> tuple[list[Playlist], dict[int, Track]]:
    """Parse a playlist JSON-lines file without resolving references."""
    tracks = {} if tracks is None else tracks
    playlists = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pid = int(rec["pid"])
                name = rec.get("name")
                entries = rec["tracks"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"line {line_no}: malformed playlist record ({exc})") from exc
            if name is not None and not isinstance(name, str):
                raise DataError(f"line {line_no}: name must be a string or null")
            pairs = tuple(_track_entry(e, tracks, line_no) for e in entries)
            try:
                playlists.append(Playlist(pid, name, pairs))
            except DataError as exc:
                raise DataError(f"line {line_no}: {exc}") from exc
    return playlists, tracks


def load_dataset(path: str | Path) -> Dataset:
    playlists, tracks = read_playlists(path)
    return Dataset(playlists, tracks)


def _track_json(track: Track, pos: int) -> dict:
    return {"track_id": track.track_id, "album_id": track.album_id, "artist_id": track.artist_id, "pos": pos}


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in dataset.playlists:
            rec = {
                "pid": p.pid,
                "name": p.title,
                "tracks": [_track_json(dataset.tracks[t], pos) for t, pos in p.tracks],
            }
            f.write(json.dumps(rec) + "\n")


def load_features(path: str | Path, tracks: Mapping[int, Track]) -> dict[int, Track]:
    """Attach audio features from a CSV file; empty cells become ``None``."""
    out = dict(tracks)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = [c for c in ("track_id", *AUDIO_FEATURES) if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"feature file lacks columns {missing}")
        for line_no, row in enumerate(reader, start=2):
            try:
                tid = int(row["track_id"])
                feats = {k: (float(row[k]) if row[k] not in ("", None) else None) for k in AUDIO_FEATURES}
            except ValueError as exc:
                raise DataError(f"feature file line {line_no}: {exc}") from exc
            if tid in out:
                out[tid] = replace(out[tid], audio_features=feats)
    return out


def write_features(tracks: Mapping[int, Track], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["track_id", *AUDIO_FEATURES])
        for tid in sorted(tracks):
            feats = tracks[tid].audio_features
            if feats is None:
                w.writerow([tid, *[""] * len(AUDIO_FEATURES)])
            else:
                w.writerow([tid, *["" if feats.get(k) is None else repr(float(feats[k])) for k in AUDIO_FEATURES]])


def impute_features(tracks: Mapping[int, Track]) -> dict[int, Track]:
    """
    Fill missing audio features with the column mean and missing popularity
    with 0. Tracks without any feature map count as missing everywhere.
    """
    means = {}
    for name in AUDIO_FEATURES:
        if name == "popularity":
            continue
        vals = [
            t.audio_features[name]
            for t in tracks.values()
            if t.audio_features is not None and t.audio_features.get(name) is not None
        ]
        if not vals:
            raise DataError(f"feature {name!r} is missing for every track")
        means[name] = math.fsum(vals) / len(vals)

    out = {}
    for tid, t in tracks.items():
        feats = dict(t.audio_features or {})
        if len(feats) == len(AUDIO_FEATURES) and all(v is not None for v in feats.values()):
            out[tid] = t
            continue
        for name in AUDIO_FEATURES:
            if feats.get(name) is None:
                feats[name] = 0.0 if name == "popularity" else means[name]
        out[tid] = replace(t, audio_features=feats)
    return out


def arh_cluster(value: float) -> int:
    """Artist-heterogeneity cluster: 1 for 0, then [0,1), [1,2), [2,inf)."""
    if value == 0:
        return 1
    if value < 1:
        return 2
    if value < 2:
        return 3
    return 4


def artist_heterogeneity(track_ids: Iterable[int], tracks: Mapping[int, Track]) -> ArhValue:
    """``log2(unique tracks / unique artists)`` with its cluster."""
    unique = set(track_ids)
    if not unique:
        raise DataError("artist heterogeneity is undefined for an empty playlist")
    artists = {tracks[t].artist_id for t in unique}
    value = math.log2(len(unique) / len(artists))
    return ArhValue(value, arh_cluster(value))


def _eligible(p: Playlist, category: int) -> bool:
    n_visible, needs_title, _ = CATEGORIES[category]
    if needs_title and not (p.title and p.title.strip()):
        return False
    return len(p.tracks) > n_visible


def split_challenge(
    dataset: Dataset, seed: int, per_category: int
) -> tuple[Dataset, list[ChallengePlaylist]]:
    """
    Draw ``per_category`` incomplete playlists for each challenge category.

    The most demanding categories draw first. Playlists not drawn form the
    training dataset.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset.playlists))
    used: set[int] = set()
    challenges = []
    for category in sorted(CATEGORIES, key=lambda c: (-CATEGORIES[c][0], c)):
        n_visible, keep_title, random_sample = CATEGORIES[category]
        picked = []
        for i in order:
            if len(picked) == per_category:
                break
            if i not in used and _eligible(dataset.playlists[i], category):
                picked.append(int(i))
        if len(picked) < per_category:
            raise DataError(
                f"category {category}: only {len(picked)} eligible playlists for {per_category} requested"
            )
        for i in picked:
            used.add(i)
            p = dataset.playlists[i]
            if random_sample:
                chosen = np.sort(rng.choice(len(p.tracks), size=n_visible, replace=False))
            else:
                chosen = np.arange(n_visible)
            chosen_set = set(chosen.tolist())
            visible = tuple(p.tracks[j] for j in chosen)
            hidden = tuple(p.tracks[j][0] for j in range(len(p.tracks)) if j not in chosen_set)
            challenges.append(
                ChallengePlaylist(
                    pid=p.pid,
                    category=category,
                    title=p.title if keep_title else None,
                    visible=visible,
                    hidden=hidden,
                    ordered=not random_sample,
                )
            )
    challenges.sort(key=lambda c: (c.category, c.pid))
    train = [p for i, p in enumerate(dataset.playlists) if i not in used]
    referenced = {t for p in train for t in p.track_ids}
    referenced |= {t for c in challenges for t in c.visible_ids}
    referenced |= {t for c in challenges for t in c.hidden}
    tracks = {t: dataset.tracks[t] for t in sorted(referenced)}
    return Dataset(train, tracks), challenges


def write_challenge(
    challenges: Sequence[ChallengePlaylist],
    tracks: Mapping[int, Track],
    path: str | Path,
    truth_path: str | Path | None = None,
) -> None:
    """Write the challenge file and, optionally, the evaluator's ground truth."""
    with open(path, "w", encoding="utf-8") as f:
        for c in challenges:
            rec = {
                "pid": c.pid,
                "category": c.category,
                "title": c.title,
                "ordered": c.ordered,
                "visible": [_track_json(tracks[t], pos) for t, pos in c.visible],
            }
            f.write(json.dumps(rec) + "\n")
    if truth_path is not None:
        with open(truth_path, "w", encoding="utf-8") as f:
            for c in challenges:
                rec = {
                    "pid": c.pid,
                    "category": c.category,
                    "tracks": [_track_json(tracks[t], i) for i, t in enumerate(c.hidden)],
                }
                f.write(json.dumps(rec) + "\n")


def read_challenge(
    path: str | Path, tracks: dict[int, Track], truth_path: str | Path | None = None
) -> list[ChallengePlaylist]:
    """Read a challenge file (and ground truth), registering any new tracks."""
    truth: dict[int, tuple[int, ...]] = {}
    if truth_path is not None:
        with open(truth_path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    truth[int(rec["pid"])] = tuple(_track_entry(e, tracks, line_no)[0] for e in rec["tracks"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"ground truth line {line_no}: malformed record ({exc})") from exc
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pid, category = int(rec["pid"]), int(rec["category"])
                visible = tuple(_track_entry(e, tracks, line_no) for e in rec["visible"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"challenge line {line_no}: malformed record ({exc})") from exc
            if category not in CATEGORIES:
                raise DataError(f"challenge line {line_no}: unknown category {category}")
            for t, _ in visible:
                if t not in tracks:
                    raise DataError(f"challenge line {line_no}: unknown track_id {t}")
            ordered = bool(rec.get("ordered", not CATEGORIES[category][2]))
            out.append(
                ChallengePlaylist(pid, category, rec.get("title"), visible, truth.get(pid, ()), ordered)
            )
    return out
