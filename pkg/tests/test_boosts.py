import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from playlistrec.boosts import (
    BoostParams,
    PlaylistContext,
    album_boost,
    boost_scores,
    gap_boost,
    tail_boost,
)
from playlistrec.sparse import ScoreSet, top_n


def boost_of(items, before, after):
    """Per-item score change between two (items, scores) pairs."""
    old = dict(zip(np.asarray(items).tolist(), before))
    return {int(i): s - old.get(int(i), 0.0) for i, s in zip(*after)}


class TestGap:
    def test_single_gap_half(self):
        sim = sp.csr_matrix(np.array([[0, 0, 1.0], [0, 0, 1.0], [0, 0, 0]]))
        ctx = PlaylistContext.build(8, [0, 1], [3, 5])
        out = gap_boost([2], [0.0], ctx, sim, BoostParams(gap_gamma=1.0))
        assert out[1].tolist() == [0.5]

    def test_orthogonal_candidate(self):
        sim = sp.csr_matrix(np.array([[0, 0, 1.0, 0], [0, 0, 1.0, 0], [0] * 4, [0] * 4]))
        ctx = PlaylistContext.build(8, [0, 1], [0, 1])
        items, scores = gap_boost([2, 3], [0.2, 0.1], ctx, sim, BoostParams(gap_gamma=1.0))
        assert boost_of([2, 3], [0.2, 0.1], (items, scores))[3] == 0.0

    def test_two_gaps_oracle(self):
        # known tracks 0, 1, 2 at positions 0, 2, 7; candidate 3
        dense = np.zeros((4, 4))
        dense[[0, 1, 2], 3] = [0.5, 0.8, 0.3]
        ctx = PlaylistContext.build(10, [2, 0, 1], [7, 0, 2])
        out = gap_boost([3], [1.0], ctx, sp.csr_matrix(dense), BoostParams(gap_gamma=2.0))
        expected = 1.0 + 2.0 * (0.5 * 0.8 / 2 + 0.8 * 0.3 / 5)
        assert out[1][0] == pytest.approx(expected, abs=1e-12)

    def test_one_visible_identity(self):
        sim = sp.csr_matrix(np.ones((3, 3)))
        ctx = PlaylistContext.build(8, [0])
        out = gap_boost([1, 2], [0.5, 0.4], ctx, sim, BoostParams(gap_gamma=1.0))
        assert out[1].tolist() == [0.5, 0.4]

    def test_only_first_k(self):
        sim = sp.csr_matrix(np.ones((5, 5)))
        ctx = PlaylistContext.build(8, [0, 1], [0, 1])
        items, scores = gap_boost([2, 3, 4], [0.3, 0.2, 0.1], ctx, sim, BoostParams(gap_gamma=1.0, k_candidates=2))
        assert boost_of([2, 3, 4], [0.3, 0.2, 0.1], (items, scores)) == pytest.approx({2: 1.0, 3: 1.0, 4: 0.0})


class TestTail:
    sim = sp.csr_matrix(
        np.array(
            [
                [0, 0, 0, 0.2, 0.9],
                [0, 0, 0, 0.4, 0.0],
                [0, 0, 0, 0.6, 0.1],
                [0] * 5,
                [0] * 5,
            ]
        )
    )
    ctx = PlaylistContext.build(7, [0, 1, 2])

    def test_span_one_proportional_to_last(self):
        p = BoostParams(tail_gamma=2.0, tail_span=1, tail_discount=0.3)
        d = boost_of([3, 4], [0, 0], tail_boost([3, 4], [0.0, 0.0], self.ctx, self.sim, p))
        assert d == pytest.approx({3: 1.2, 4: 0.2})

    def test_discount_one_unweighted_sum(self):
        p = BoostParams(tail_gamma=1.0, tail_span=3, tail_discount=1.0)
        d = boost_of([3, 4], [0, 0], tail_boost([3, 4], [0.0, 0.0], self.ctx, self.sim, p))
        assert d == pytest.approx({3: 1.2, 4: 1.0})

    def test_three_term_oracle(self):
        p = BoostParams(tail_gamma=1.0, tail_span=3, tail_discount=0.5)
        d = boost_of([3, 4], [0, 0], tail_boost([3, 4], [0.0, 0.0], self.ctx, self.sim, p))
        assert d[3] == pytest.approx(0.6 + 0.5 * 0.4 + 0.25 * 0.2, abs=1e-12)
        assert d[4] == pytest.approx(0.1 + 0.25 * 0.9, abs=1e-12)

    def test_empty_visible_identity(self):
        ctx = PlaylistContext.build(7, [])
        out = tail_boost([3, 4], [0.5, 0.1], ctx, self.sim, BoostParams(tail_gamma=1.0))
        assert out[1].tolist() == [0.5, 0.1]

    def test_resorted(self):
        p = BoostParams(tail_gamma=1.0, tail_span=1)
        items, _ = tail_boost([4, 3], [0.2, 0.1], self.ctx, self.sim, p)
        assert items.tolist() == [3, 4]


class TestAlbum:
    # albums: columns 0-4 album 7, columns 5-7 album 8
    album_ids = np.array([7, 7, 7, 7, 7, 8, 8, 8])

    def test_different_albums_identity(self):
        ctx = PlaylistContext.build(7, [0, 5])
        items, scores = album_boost([1, 6], [0.3, 0.2], ctx, self.album_ids, BoostParams(album_gamma=1.0))
        assert items.tolist() == [1, 6] and scores.tolist() == [0.3, 0.2]

    def test_same_album_boosts_unseen_in_order(self):
        ctx = PlaylistContext.build(7, [0, 1])
        items, scores = album_boost([6, 4, 5, 3], [0.9, 0.8, 0.7, 0.1], ctx, self.album_ids, BoostParams(album_gamma=5.0))
        d = boost_of([6, 4, 5, 3], [0.9, 0.8, 0.7, 0.1], (items, scores))
        assert {t for t, v in d.items() if v > 0} == {2, 3, 4}
        assert items[:3].tolist() == [2, 3, 4]

    def test_diff_only_album_tracks(self):
        rng = np.random.default_rng(0)
        n = 8
        dense = rng.random((2, n))
        mask = np.zeros((2, n), bool)
        mask[0, [0, 1]] = True
        mask[1, [0, 5]] = True
        s = ScoreSet(np.arange(2), sp.csr_matrix(dense), sp.csr_matrix(mask), "blend")
        ctxs = [PlaylistContext.build(3, [0, 1]), PlaylistContext.build(3, [0, 5])]
        out = boost_scores(s, ctxs, None, self.album_ids, BoostParams(album_gamma=1.0))
        diff = out.dense() - s.dense()
        changed = {tuple(x) for x in np.argwhere(diff != 0).tolist()}
        assert changed == {(0, 2), (0, 3), (0, 4)}


def random_case(seed, n_items=30, n_rows=5):
    rng = np.random.default_rng(seed)
    dense = rng.random((n_rows, n_items)) * (rng.random((n_rows, n_items)) < 0.6)
    sim = sp.csr_matrix(rng.random((n_items, n_items)) * (rng.random((n_items, n_items)) < 0.3))
    ctxs, mask = [], np.zeros((n_rows, n_items), bool)
    for r in range(n_rows):
        vis = rng.choice(n_items, int(rng.integers(0, 6)), replace=False)
        mask[r, vis] = True
        ctxs.append(PlaylistContext.build(int(rng.integers(1, 11)), vis, np.sort(rng.choice(100, len(vis), replace=False))))
    s = ScoreSet(np.arange(n_rows), sp.csr_matrix(dense), sp.csr_matrix(mask), "blend")
    albums = rng.integers(0, 4, n_items)
    return s, ctxs, sim, albums


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_zero_gamma_bit_identical(seed):
    s, ctxs, sim, albums = random_case(seed)
    out = boost_scores(s, ctxs, sim, albums, BoostParams())
    assert out is s


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_boosts_touch_only_allowed_entries(seed, k):
    s, ctxs, sim, albums = random_case(seed)
    p = BoostParams(k_candidates=k, gap_gamma=1.0, tail_gamma=0.5, album_gamma=0.3)
    out = boost_scores(s, ctxs, sim, albums, p)
    before = top_n(s, k)
    diff = out.dense() - s.dense()
    assert np.all(diff >= 0)
    for r, ctx in enumerate(ctxs):
        allowed = set(before[r].tolist())
        if len(ctx.visible) >= 2 and albums[ctx.visible[-1]] == albums[ctx.visible[-2]]:
            allowed |= set(np.flatnonzero(albums == albums[ctx.visible[-1]]).tolist())
        allowed -= set(ctx.visible.tolist())
        assert set(np.flatnonzero(diff[r]).tolist()) <= allowed
    assert (out.mask != s.mask).nnz == 0


def test_batch_matches_single_playlist():
    s, ctxs, sim, albums = random_case(11, n_rows=1)
    ctx = PlaylistContext.build(8, ctxs[0].visible, ctxs[0].positions)
    p = BoostParams(k_candidates=6, gap_gamma=1.5)
    out = boost_scores(s, [ctx], sim, albums, p)
    cands = top_n(s, 6)[0]
    items, scores = gap_boost(cands, s.dense()[0, cands], ctx, sim, p)
    np.testing.assert_allclose(out.dense()[0, items], scores, atol=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        BoostParams(tail_discount=0.0)
    with pytest.raises(ValueError):
        BoostParams(gap_gamma=-1)
    assert BoostParams().gap_categories == {8, 10}
