import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from playlistrec.data import (
    AUDIO_FEATURES,
    CATEGORIES,
    DataError,
    Dataset,
    Playlist,
    Track,
    arh_cluster,
    artist_heterogeneity,
    impute_features,
    load_dataset,
    load_features,
    read_challenge,
    split_challenge,
    write_challenge,
    write_dataset,
    write_features,
)
from playlistrec.text import normalize_title, tokenize_title


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def corpus(n_playlists=40, length=120, n_artists=10):
    tracks = {t: Track(t, t // 5, t % n_artists) for t in range(400)}
    playlists = []
    for pid in range(n_playlists):
        start = (pid * 7) % 250
        ids = list(range(start, start + (length if pid % 2 else 30)))
        playlists.append(Playlist(pid, f"list {pid}", tuple((t, i) for i, t in enumerate(ids))))
    return Dataset(playlists, tracks)


class TestLoad:
    def test_empty_file(self, tmp_path):
        ds = load_dataset(write_lines(tmp_path / "e.jsonl", []))
        assert ds.playlists == [] and ds.tracks == {}

    def test_two_playlists(self, tmp_path):
        recs = [
            {"pid": 1, "name": "a", "tracks": [
                {"track_id": 10, "album_id": 1, "artist_id": 1, "pos": 0},
                {"track_id": 11, "album_id": 1, "artist_id": 1, "pos": 1}]},
            {"pid": 2, "name": None, "tracks": [
                {"track_id": 11, "pos": 0},
                {"track_id": 12, "album_id": 2, "artist_id": 3, "pos": 4}]},
        ]
        ds = load_dataset(write_lines(tmp_path / "d.jsonl", recs))
        assert len(ds.playlists) == 2
        assert len(ds.tracks) == 3
        assert ds.playlists[1].tracks == ((11, 0), (12, 4))

    def test_dangling_track(self, tmp_path):
        recs = [{"pid": 1, "name": "a", "tracks": [{"track_id": 99, "pos": 0}]}]
        with pytest.raises(DataError, match="99"):
            load_dataset(write_lines(tmp_path / "d.jsonl", recs))

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"pid": 1, "name": "a", "tracks": []}\n{not json\n')
        with pytest.raises(DataError, match="line 2"):
            load_dataset(path)

    def test_round_trip(self, tmp_path):
        ds = corpus(4)
        write_dataset(ds, tmp_path / "d.jsonl")
        again = load_dataset(tmp_path / "d.jsonl")
        assert again.playlists == ds.playlists


class TestSplit:
    def test_categories(self):
        train, challenges = split_challenge(corpus(), seed=1, per_category=2)
        assert len(challenges) == 20
        by_cat = {c.category: c for c in challenges}
        assert by_cat[1].visible == () and by_cat[1].title
        assert len(by_cat[6].visible) == 10 and by_cat[6].title is None
        assert len(by_cat[4].visible) == 5 and by_cat[4].title is None
        for c in challenges:
            n, titled, rand = CATEGORIES[c.category]
            assert len(c.visible) == n
            assert c.ordered is not rand
            assert (c.title is not None) == titled
        assert len(train.playlists) == 20

    def test_prefix_and_partition(self):
        ds = corpus()
        original = {p.pid: p for p in ds.playlists}
        _, challenges = split_challenge(ds, seed=3, per_category=2)
        for c in challenges:
            tracks = original[c.pid].track_ids
            assert sorted(c.visible_ids + list(c.hidden)) == sorted(tracks)
            assert not set(c.visible_ids) & c.ground_truth
            if c.ordered:
                assert c.visible_ids == tracks[: len(c.visible)]

    def test_deterministic(self):
        a = split_challenge(corpus(), seed=5, per_category=2)[1]
        b = split_challenge(corpus(), seed=5, per_category=2)[1]
        assert a == b

    def test_insufficient(self):
        with pytest.raises(DataError, match="category"):
            split_challenge(corpus(10), seed=0, per_category=5)

    def test_file_round_trip(self, tmp_path):
        train, challenges = split_challenge(corpus(), seed=1, per_category=1)
        write_challenge(challenges, train.tracks, tmp_path / "c.jsonl", tmp_path / "g.jsonl")
        tracks = dict(train.tracks)
        back = read_challenge(tmp_path / "c.jsonl", tracks, tmp_path / "g.jsonl")
        assert back == challenges
        no_truth = read_challenge(tmp_path / "c.jsonl", tracks)
        assert all(c.hidden == () for c in no_truth)


class TestTokenize:
    def test_spaced_letters(self):
        assert tokenize_title("r o c k") == ["rock"]

    def test_letters_and_digits(self):
        toks = tokenize_title("summer2017")
        assert "summer" in toks and "2017" in toks and toks[0] == "summer2017"

    def test_stemming(self):
        toks = tokenize_title("Running")
        assert toks[0] == "running" and "run" in toks

    def test_uncommon_characters(self):
        assert tokenize_title("(chill.)")[0] == "chill"

    def test_emoji_only(self):
        assert tokenize_title("🔥🎶") == []
        assert tokenize_title(None) == []

    def test_mixed_title_not_joined(self):
        assert tokenize_title("a b c rock")[:4] == ["a", "b", "c", "rock"]

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=30))
    def test_rerun_adds_no_new_plain_tokens(self, title):
        first = tokenize_title(title)
        assert set(tokenize_title(" ".join(first), stem=False)) <= set(first)

    def test_normalize(self):
        assert normalize_title("  WORKOUT! ") == normalize_title("workout") == "workout"


class TestArh:
    tracks = {t: Track(t, 0, a) for t, a in enumerate([0, 1, 2, 3, 0, 1, 2, 3])}

    def test_all_distinct(self):
        v = artist_heterogeneity([0, 1, 2, 3], self.tracks)
        assert (v.value, v.cluster) == (0.0, 1)

    def test_eight_tracks_two_artists(self):
        tracks = {t: Track(t, 0, t % 2) for t in range(8)}
        v = artist_heterogeneity(range(8), tracks)
        assert (v.value, v.cluster) == (2.0, 4)

    def test_six_tracks_four_artists(self):
        v = artist_heterogeneity(range(6), self.tracks)
        assert v.value == pytest.approx(math.log2(1.5), abs=1e-15)
        assert v.cluster == 2

    @pytest.mark.parametrize(
        "value,cluster", [(0, 1), (0.5, 2), (1.0, 3), (1.5, 3), (2.0, 4), (3.0, 4)]
    )
    def test_boundaries(self, value, cluster):
        assert arh_cluster(value) == cluster

    def test_empty(self):
        with pytest.raises(DataError):
            artist_heterogeneity([], self.tracks)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 7), min_size=1, max_size=20), st.randoms())
    def test_order_and_duplicate_invariance(self, ids, rnd):
        shuffled = list(ids) + list(ids[:3])
        rnd.shuffle(shuffled)
        assert artist_heterogeneity(ids, self.tracks) == artist_heterogeneity(shuffled, self.tracks)


class TestImpute:
    def feats(self, **over):
        base = {k: 0.5 for k in AUDIO_FEATURES}
        base["popularity"] = 40.0
        base.update(over)
        return base

    def test_no_gaps_identity(self):
        tracks = {1: Track(1, 0, 0, self.feats()), 2: Track(2, 0, 0, self.feats(energy=0.1))}
        assert impute_features(tracks) == tracks

    def test_mean_fill(self):
        tracks = {
            1: Track(1, 0, 0, self.feats(loudness=-4.0)),
            2: Track(2, 0, 0, self.feats(loudness=-6.0)),
            3: Track(3, 0, 0, self.feats(loudness=None)),
        }
        out = impute_features(tracks)
        assert out[3].audio_features["loudness"] == -5.0
        assert out[1] == tracks[1]

    def test_popularity_zero(self):
        tracks = {1: Track(1, 0, 0, self.feats()), 2: Track(2, 0, 0, None)}
        out = impute_features(tracks)
        assert out[2].audio_features["popularity"] == 0.0
        assert out[2].audio_features["energy"] == 0.5

    def test_entirely_missing_column(self):
        tracks = {1: Track(1, 0, 0, self.feats(tempo=None))}
        with pytest.raises(DataError, match="tempo"):
            impute_features(tracks)

    def test_only_missing_coordinates_change(self):
        tracks = {
            1: Track(1, 0, 0, self.feats(valence=0.9, tempo=None)),
            2: Track(2, 0, 0, self.feats(valence=None, tempo=120.0)),
        }
        out = impute_features(tracks)
        for tid, t in tracks.items():
            for k, v in t.audio_features.items():
                if v is not None:
                    assert out[tid].audio_features[k] == v

    def test_csv_round_trip(self, tmp_path):
        tracks = {1: Track(1, 0, 0, self.feats(loudness=-3.25)), 2: Track(2, 0, 0, None)}
        write_features(tracks, tmp_path / "f.csv")
        bare = {t: Track(t, 0, 0) for t in tracks}
        assert load_features(tmp_path / "f.csv", bare)[1] == tracks[1]
        assert all(v is None for v in load_features(tmp_path / "f.csv", bare)[2].audio_features.values())

    def test_popularity_range(self):
        with pytest.raises(DataError):
            Track(1, 0, 0, {"popularity": 140.0})
