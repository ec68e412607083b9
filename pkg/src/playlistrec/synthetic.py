"""
Seeded synthetic corpora that mimic how people build playlists.

The catalog groups tracks into albums (contiguous track ids, in album order)
and albums into artists and genres. Every album has a mood in [0, 1] that
drives the ``loudness`` feature, and most playlist patterns draw tracks near
a target mood that drifts slowly along the playlist, so loudness is
correlated with co-listening.

Playlist patterns:

``album``
    whole albums added one after another.
``artist``
    tracks of a single artist.
``genre``
    a handful of same-genre artists, revisited throughout.
``readd``
    many distinct artists first, the same artists re-added later.
``diverse``
    every track by a different artist.
``random``
    popularity-weighted tracks from the whole catalog.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .data import AUDIO_FEATURES, Dataset, Playlist, Track, write_dataset, write_features

__all__ = ["Corpus", "PatternMix", "SyntheticParams", "generate_corpus", "write_corpus"]

PATTERNS = ("album", "artist", "genre", "readd", "diverse", "random")

GENRES = (
    "rock", "pop", "jazz", "hip hop", "country", "edm", "indie", "metal",
    "soul", "blues", "folk", "latin", "reggae", "punk", "disco", "ambient",
)  # fmt: skip

TITLE_FORMATS = (
    "{g}",
    "{G}",
    "{g}!!",
    "best of {g}",
    "{g} {year}",
    "{g}{year}",
    "{spaced}",
    "my {g} mix",
    "{g} vibes",
    "{g} & chill",
)


class PatternMix(BaseModel):
    """Relative weights of the playlist patterns; normalized when sampling."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    album: float = Field(0.2, ge=0)
    artist: float = Field(0.1, ge=0)
    genre: float = Field(0.35, ge=0)
    readd: float = Field(0.15, ge=0)
    diverse: float = Field(0.1, ge=0)
    random: float = Field(0.1, ge=0)

    @model_validator(mode="after")
    def _positive(self):
        if sum(self.weights()) <= 0:
            raise ValueError("pattern mix needs at least one positive weight")
        return self

    def weights(self) -> np.ndarray:
        return np.array([getattr(self, p) for p in PATTERNS], dtype=np.float64)


class SyntheticParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_playlists: int = Field(2000, ge=1)
    n_tracks: int = Field(5000, ge=1)
    tracks_per_artist: int = Field(20, ge=1)
    artists_per_genre: int = Field(12, ge=1)
    mix: PatternMix = PatternMix()
    long_fraction: float = Field(0.1, ge=0, le=1)
    mood_width: float = Field(0.05, gt=0)
    mood_drift: float = Field(0.01, ge=0)
    missing_rate: float = Field(0.0, ge=0, le=1)


@dataclass
class Corpus:
    dataset: Dataset
    tracks: dict[int, Track]
    """Every catalog track, with audio features (some possibly missing)."""
    patterns: list[str]
    """Pattern that generated each playlist."""


class _World:
    """Artists, albums, moods and popularity of a synthetic catalog."""

    def __init__(self, rng: np.random.Generator, p: SyntheticParams):
        n = p.n_tracks
        n_artists = max(1, n // p.tracks_per_artist)
        n_genres = max(1, n_artists // p.artists_per_genre)
        self.artist_genre = np.arange(n_artists) % n_genres
        rng.shuffle(self.artist_genre)
        artist_mood = rng.random(n_artists)
        artist_pop = 1.0 / (rng.permutation(n_artists) + 1.0) ** 0.8

        # every artist releases one album first, then extra albums at random
        sizes, owners = [], []
        total, a = 0, 0
        while total < n:
            owner = a if a < n_artists else int(rng.integers(n_artists))
            size = min(int(rng.integers(6, 15)), n - total)
            sizes.append(size)
            owners.append(owner)
            total += size
            a += 1
        order = np.argsort(owners, kind="stable")
        album_artist = np.asarray(owners)[order]
        album_size = np.asarray(sizes)[order]
        album_mood = np.clip(artist_mood[album_artist] + rng.normal(0, 0.3, len(order)), 0, 1)

        self.album = np.repeat(np.arange(len(order)), album_size)
        self.artist = album_artist[self.album]
        self.mood = np.clip(album_mood[self.album] + rng.normal(0, 0.02, n), 0, 1)
        self.pop = artist_pop[self.artist] * rng.uniform(0.5, 1.5, n)
        self.album_tracks = np.split(np.arange(n), np.cumsum(album_size)[:-1])
        self.artist_tracks = [np.flatnonzero(self.artist == i) for i in range(n_artists)]
        self.artist_albums = [np.flatnonzero(album_artist == i) for i in range(n_artists)]
        self.genre_artists = [np.flatnonzero(self.artist_genre == g) for g in range(n_genres)]
        self.album_mood = album_mood
        self.n_artists = n_artists

    def features(self, rng: np.random.Generator, missing_rate: float) -> list[dict[str, float | None]]:
        n = len(self.artist)
        cols = {name: rng.random(n) for name in AUDIO_FEATURES}
        cols["loudness"] = -60.0 + 60.0 * self.mood
        cols["tempo"] = 60.0 + 140.0 * cols["tempo"]
        cols["popularity"] = np.floor(100.0 * self.pop / self.pop.max())
        missing = rng.random((n, len(AUDIO_FEATURES))) < missing_rate
        out = []
        for i in range(n):
            out.append(
                {
                    name: None if missing[i, j] else round(float(cols[name][i]), 6)
                    for j, name in enumerate(AUDIO_FEATURES)
                }
            )
        return out


def _pick(rng, pool: np.ndarray, weights: np.ndarray, used: set[int]) -> int | None:
    if len(pool) == 0:
        return None
    w = weights.copy()
    if used:
        w[np.isin(pool, list(used))] = 0.0
    total = w.sum()
    if total <= 0:
        return None
    return int(pool[np.searchsorted(np.cumsum(w), rng.random() * total, side="right").clip(0, len(pool) - 1)])


class _Builder:
    def __init__(self, rng, world: _World, p: SyntheticParams):
        self.rng, self.w, self.p = rng, world, p

    def closeness(self, moods: np.ndarray, target: float) -> np.ndarray:
        z = (moods - target) / self.p.mood_width
        return np.where(np.abs(z) <= 3.0, np.exp(-0.5 * z**2), 0.0)

    def drift(self, target: float) -> float:
        return float(np.clip(target + self.rng.normal(0, self.p.mood_drift), 0, 1))

    def mood_track(self, pool: np.ndarray, target: float, used: set[int], strict: bool = True) -> int | None:
        """A popularity-weighted track near ``target``; the nearest one if not ``strict``."""
        w = self.closeness(self.w.mood[pool], target) * self.w.pop[pool]
        t = _pick(self.rng, pool, w, used)
        if t is None and not strict:
            free = pool[~np.isin(pool, list(used))]
            if len(free):
                t = int(free[np.argmin(np.abs(self.w.mood[free] - target))])
        return t

    def seed_mood(self, pool: np.ndarray) -> float:
        return float(self.w.mood[self.rng.choice(pool)])

    def length(self, long: bool) -> int:
        if long:
            return int(self.rng.integers(101, 201))
        return int(np.clip(self.rng.lognormal(3.0, 0.6), 5, 100))

    def album(self, n: int, genre: int, target: float) -> list[int]:
        artists = self.w.genre_artists[genre]
        albums = np.concatenate([self.w.artist_albums[a] for a in artists])
        target = float(self.w.album_mood[self.rng.choice(albums)])
        out: list[int] = []
        seen_albums: set[int] = set()
        while len(out) < n:
            w = self.closeness(self.w.album_mood[albums], target)
            alb = _pick(self.rng, albums, w, seen_albums)
            if alb is None:
                break
            seen_albums.add(alb)
            out.extend(self.w.album_tracks[alb][: n - len(out)].tolist())
            target = self.drift(target)
        return out

    def artist(self, n: int, genre: int, target: float) -> list[int]:
        a = int(self.rng.choice(self.w.genre_artists[genre]))
        pool = self.w.artist_tracks[a]
        target = self.seed_mood(pool)
        out: list[int] = []
        used: set[int] = set()
        for _ in range(min(n, len(pool))):
            t = self.mood_track(pool, target, used)
            if t is None:
                break
            used.add(t)
            out.append(t)
            target = self.drift(target)
        return out

    def genre(self, n: int, genre: int, target: float) -> list[int]:
        artists = self.w.genre_artists[genre]
        k = min(len(artists), int(self.rng.integers(3, 9)))
        chosen = self.rng.choice(artists, size=k, replace=False)
        pool = np.concatenate([self.w.artist_tracks[a] for a in np.sort(chosen)])
        target = self.seed_mood(pool)
        out: list[int] = []
        used: set[int] = set()
        while len(out) < n:
            t = self.mood_track(pool, target, used)
            if t is None:
                break
            used.add(t)
            out.append(t)
            target = self.drift(target)
        return out

    def readd(self, n: int, genre: int, target: float) -> list[int]:
        bias = np.where(self.w.artist_genre == genre, 5.0, 1.0)
        k = min(self.w.n_artists, int(self.rng.integers(15, 31)))
        artists = self.rng.choice(self.w.n_artists, size=k, replace=False, p=bias / bias.sum())
        out: list[int] = []
        used: set[int] = set()
        live = []
        for a in artists:
            t = self.mood_track(self.w.artist_tracks[a], target, used, strict=False)
            if t is None:
                continue
            live.append(a)
            used.add(t)
            out.append(t)
            target = self.drift(target)
        while len(out) < n and live:
            a = live[int(self.rng.integers(len(live)))]
            t = self.mood_track(self.w.artist_tracks[a], target, used)
            if t is None:
                live.remove(a)
                continue
            used.add(t)
            out.append(t)
            target = self.drift(target)
        return out

    def diverse(self, n: int, genre: int, target: float) -> list[int]:
        bias = np.where(self.w.artist_genre == genre, 5.0, 1.0)
        k = min(n, self.w.n_artists)
        artists = self.rng.choice(self.w.n_artists, size=k, replace=False, p=bias / bias.sum())
        out = []
        for a in artists:
            out.append(self.mood_track(self.w.artist_tracks[a], target, set(), strict=False))
            target = self.drift(target)
        return out

    def random(self, n: int, genre: int, target: float) -> list[int]:
        n = min(n, len(self.w.pop))
        p = self.w.pop / self.w.pop.sum()
        return self.rng.choice(len(p), size=n, replace=False, p=p).tolist()


def _title(rng, genre: int) -> str:
    g = GENRES[genre % len(GENRES)]
    fmt = TITLE_FORMATS[int(rng.integers(len(TITLE_FORMATS)))]
    return fmt.format(
        g=g,
        G=g.upper(),
        year=int(rng.integers(2010, 2018)),
        spaced=" ".join(g.replace(" ", "")),
    )


def generate_corpus(seed: int, params: SyntheticParams | None = None) -> Corpus:
    """
    Generate a playlist corpus and its track table.

    The same seed and parameters always yield the same corpus.
    """
    p = params or SyntheticParams()
    rng = np.random.default_rng(seed)
    world = _World(rng, p)
    builder = _Builder(rng, world, p)
    mix = p.mix.weights() / p.mix.weights().sum()

    playlists, patterns = [], []
    for pid in range(p.n_playlists):
        pattern = PATTERNS[int(rng.choice(len(PATTERNS), p=mix))]
        genre = int(rng.integers(len(world.genre_artists)))
        long = pattern == "readd" or rng.random() < p.long_fraction
        target = float(rng.random())
        tracks = getattr(builder, pattern)(builder.length(long), genre, target)
        playlists.append(Playlist(pid, _title(rng, genre), tuple((t, i) for i, t in enumerate(tracks))))
        patterns.append(pattern)

    feats = world.features(rng, p.missing_rate)
    tracks = {
        i: Track(i, int(world.album[i]), int(world.artist[i]), feats[i]) for i in range(p.n_tracks)
    }
    used = {t for pl in playlists for t in pl.track_ids}
    dataset = Dataset(playlists, {t: tracks[t] for t in sorted(used)})
    return Corpus(dataset, tracks, patterns)


def write_corpus(corpus: Corpus, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``playlists.jsonl`` and ``features.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    playlists, features = out / "playlists.jsonl", out / "features.csv"
    write_dataset(corpus.dataset, playlists)
    write_features(corpus.tracks, features)
    return playlists, features
