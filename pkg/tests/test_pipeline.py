import json

import numpy as np
import pytest

from playlistrec.boosts import BoostParams
from playlistrec.cli import main
from playlistrec.ensemble import EnsembleConfig
from playlistrec.evaluation import read_submission
from playlistrec.pipeline import (
    ModelConfig,
    StageError,
    cmd_build,
    cmd_generate_synthetic,
    cmd_recommend,
    cmd_run,
    cmd_split,
    compute_scores,
    load_config,
    load_workspace,
)
from playlistrec.sparse import top_n


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    cmd_generate_synthetic(5, root, n_playlists=600, n_tracks=2000)
    return root


def config(corpus, out, **kw):
    base = {"dataset": str(corpus / "playlists.jsonl"), "features": str(corpus / "features.csv"), "per_category": 5}
    return load_config(None, **{**base, "out_dir": str(out), **kw})


def test_load_config_resolves_relative_paths(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"dataset": "data/p.jsonl", "out_dir": "o", "seed": 4}))
    cfg = load_config(tmp_path / "cfg.json", seed=9)
    assert cfg.dataset == tmp_path / "data" / "p.jsonl"
    assert cfg.out_dir == tmp_path / "o"
    assert cfg.seed == 9


def test_config_rejects_unknown_keys_and_categories():
    with pytest.raises(ValueError):
        load_config(None, bogus=1)
    with pytest.raises(ValueError):
        load_config(None, categories=[11])
    with pytest.raises(ValueError):
        load_config(None, n_recommendations=0)


def test_run_deterministic(corpus, tmp_path):
    a = cmd_run(config(corpus, tmp_path / "a", threads=1))
    b = cmd_run(config(corpus, tmp_path / "b", threads=4))
    assert a.submission_path.read_bytes() == b.submission_path.read_bytes()
    assert a.report_path.read_bytes() == b.report_path.read_bytes()
    sub = read_submission(a.submission_path)
    assert len(sub) == 50 and all(len(v) == 500 for v in sub.values())
    assert a.report.overall.count == 50


def test_single_model_equals_model_top_n(corpus, tmp_path):
    cfg = config(corpus, tmp_path, models={"cf_track": {"kind": "cf_track"}}, fill_popular=False)
    result = cmd_run(cfg)
    ws, _ = load_workspace(cfg)
    scores = compute_scores(ws, cfg.models, limit=cfg.score_limit)["cf_track"]
    expected = {int(p): ws.catalog.track_ids[r].tolist() for p, r in zip(ws.pids, top_n(scores, 500))}
    assert result.submission == expected


def test_zero_boosts_identical(corpus, tmp_path):
    plain = cmd_run(config(corpus, tmp_path / "a"))
    zero = cmd_run(config(corpus, tmp_path / "b", boosts={"gap_gamma": 0, "tail_gamma": 0, "album_gamma": 0}))
    boosted = cmd_run(config(corpus, tmp_path / "c", boosts={"album_gamma": 0.5, "tail_gamma": 0.01}))
    assert plain.submission_path.read_bytes() == zero.submission_path.read_bytes()
    assert plain.submission != boosted.submission


def test_removing_model_only_touches_its_cells(corpus, tmp_path):
    full = cmd_run(config(corpus, tmp_path / "a"))
    cfg = config(corpus, tmp_path / "b")
    models = {k: v for k, v in cfg.models.items() if k != "cbf_title"}
    reduced = cmd_run(cfg.model_copy(update={"models": models}))
    ws, _ = load_workspace(cfg)
    for c in ws.challenges:
        if c.category in (4, 6):
            assert full.submission[c.pid] == reduced.submission[c.pid]
    assert full.submission != reduced.submission


def test_split_build_recommend_matches_run(corpus, tmp_path):
    base = config(corpus, tmp_path / "split")
    train, challenge, truth = cmd_split(base)
    staged = load_config(
        None,
        dataset=str(train),
        challenge=str(challenge),
        truth=str(truth),
        features=str(corpus / "features.csv"),
        out_dir=str(tmp_path / "staged"),
    )
    paths = cmd_build(staged)
    assert set(paths) == set(staged.models)
    submission = cmd_recommend(staged)
    direct = cmd_run(staged.model_copy(update={"out_dir": tmp_path / "direct"}))
    assert submission.read_bytes() == direct.submission_path.read_bytes()


def test_tuned_run_writes_ensemble(corpus, tmp_path):
    cfg = config(corpus, tmp_path, tune={"budget": 3, "per_category": 5}, categories=[2, 5, 9])
    result = cmd_run(cfg)
    ens = EnsembleConfig.load(tmp_path / "ensemble.json")
    assert {c for c, _ in ens.cells} == {2, 5, 9}
    assert set(read_submission(result.submission_path)) == {c.pid for c in load_workspace(cfg)[0].challenges}


def test_layered_models_need_features(corpus, tmp_path):
    cfg = config(corpus, tmp_path, features=None, models={"x": {"kind": "cbf_track_layered"}})
    with pytest.raises(StageError) as err:
        cmd_run(cfg)
    assert err.value.stage == "build"
    assert "loudness" in str(err.value)


def test_stage_named_on_bad_dataset(tmp_path):
    (tmp_path / "bad.jsonl").write_text('{"pid": 1, "tracks": [{"track_id": 3}]}\n')
    cfg = load_config(None, dataset=str(tmp_path / "bad.jsonl"), out_dir=str(tmp_path))
    with pytest.raises(StageError) as err:
        cmd_run(cfg)
    assert err.value.stage == "load"


def test_model_config_kinds():
    with pytest.raises(ValueError):
        ModelConfig(kind="svd")
    assert ModelConfig(kind="cf_track_layered").layers == ["album", "artist"]


class TestCli:
    def test_generate_and_run(self, tmp_path, capsys):
        assert main(["generate", "--seed", "1", "--playlists", "400", "--tracks", "1500", "--out", str(tmp_path)]) == 0
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"dataset": "playlists.jsonl", "per_category": 4}))
        out = tmp_path / "run"
        code = main(["run", "--config", str(cfg), "--out", str(out), "--models", "cf_track,toppop", "--category", "2,3"])
        assert code == 0
        assert len(read_submission(out / "submission.csv")) == 8
        capsys.readouterr()
        assert main(["evaluate", "--config", str(cfg), "--out", str(out)]) == 1  # no challenge file configured
        staged = tmp_path / "staged.json"
        staged.write_text(json.dumps({"dataset": "playlists.jsonl", "challenge": "run/challenge.jsonl", "truth": "run/truth.jsonl", "categories": [2, 3]}))
        assert main(["evaluate", "--config", str(staged), "--out", str(out)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["overall"]["count"] == 8

    def test_exit_codes(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
        assert main(["run", "--models", "nope"]) == 1
        (tmp_path / "c.json").write_text("{not json")
        assert main(["run", "--config", str(tmp_path / "c.json")]) == 1
        (tmp_path / "bad.jsonl").write_text("garbage\n")
        (tmp_path / "d.json").write_text(json.dumps({"dataset": "bad.jsonl"}))
        assert main(["run", "--config", str(tmp_path / "d.json"), "--out", str(tmp_path)]) == 2
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 1
        assert "error" in capsys.readouterr().err

    def test_internal_error_code(self, tmp_path, monkeypatch):
        import playlistrec.cli as cli

        def boom(cfg):
            raise AssertionError("invariant broken")

        monkeypatch.setattr(cli, "cmd_run", boom)
        assert main(["run", "--out", str(tmp_path)]) == 3


def test_boost_params_in_config():
    cfg = load_config(None, boosts={"album_gamma": 0.3, "album_categories": [3]})
    assert cfg.boosts == BoostParams(album_gamma=0.3, album_categories=frozenset({3}))
    assert np.isclose(cfg.boosts.album_gamma, 0.3)
