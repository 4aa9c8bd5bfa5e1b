"""Subcommand smoke tests running the console entry point in-process."""

import json

import numpy as np
import pytest

from meshanno import parse_ply
from meshanno.cli import main
from meshanno.sampler import read_point_cloud


@pytest.fixture(scope="module")
def town(tmp_path_factory):
    root = tmp_path_factory.mktemp("town")
    rc = main(["synth", "--out-dir", str(root / "tiles"),
               "--tiles", "3", "--seed", "11"])
    assert rc == 0
    return root


def tile_paths(town):
    return sorted(str(p) for p in (town / "tiles").glob("*.ply"))


def test_synth_creates_parseable_tiles(town):
    paths = tile_paths(town)
    assert len(paths) == 3
    mesh = parse_ply((town / "tiles" / "tile_000.ply").read_bytes())
    assert mesh.n_faces > 100
    assert set(np.unique(mesh.face_labels)) <= set(range(1, 7))


def test_segment_to_evaluate_chain(town, capsys):
    tiles = tile_paths(town)
    segged = town / "segged"
    assert main(["segment", *tiles, "--out-dir", str(segged)]) == 0
    seg_mesh = parse_ply((segged / "tile_000.ply").read_bytes())
    assert (seg_mesh.face_segments >= 0).all()

    feats = town / "feats"
    assert main(["featurize", str(segged / "tile_000.ply"),
                 str(segged / "tile_001.ply"),
                 "--out-dir", str(feats)]) == 0
    header = (feats / "tile_000.csv").read_text().splitlines()[0]
    assert header.count(",") == 46  # tile, segment, label + 44 features

    model = town / "model.bin"
    assert main(["train", str(feats / "tile_000.csv"),
                 str(feats / "tile_001.csv"),
                 "--out", str(model), "--trees", "20"]) == 0
    assert model.stat().st_size > 0

    preds = town / "preds"
    assert main(["predict", str(segged / "tile_002.ply"),
                 "--model", str(model), "--out-dir", str(preds)]) == 0
    pred_mesh = parse_ply((preds / "tile_002.ply").read_bytes())
    assert set(np.unique(pred_mesh.face_labels)) <= set(range(1, 7))

    capsys.readouterr()
    csv_out = town / "metrics.csv"
    assert main(["evaluate", "--gt", str(town / "tiles" / "tile_002.ply"),
                 "--pred", str(preds / "tile_002.ply"),
                 "--csv", str(csv_out)]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["overall_accuracy"] >= 0.9
    assert csv_out.read_text().startswith("class,precision,recall,f1,iou")


def test_rank_outputs_descending_diversity(town):
    out = town / "rank.json"
    assert main(["rank", *tile_paths(town), "--json", str(out)]) == 0
    ranking = json.loads(out.read_text())
    assert len(ranking) == 3
    divs = [row["diversity"] for row in ranking]
    assert divs == sorted(divs, reverse=True)
    assert {row["tile_id"] for row in ranking} == {
        "tile_000", "tile_001", "tile_002"}


def test_split_assigns_roles(town, capsys):
    assert main(["split", "--tiles-dir", str(town / "tiles"),
                 "--train", "2", "--test", "1"]) == 0
    roles = json.loads(capsys.readouterr().out)
    assert sorted(roles.values()).count("train") == 2
    assert sorted(roles.values()).count("test") == 1


def test_sample_writes_point_cloud(town):
    out = town / "cloud.ply"
    assert main(["sample", str(town / "tiles" / "tile_001.ply"), str(out),
                 "--density", "6"]) == 0
    with open(out, "rb") as stream:
        cloud = read_point_cloud(stream)
    assert len(cloud) > 500
    assert cloud.colors.max() > 0


def test_run_and_study(town, capsys):
    config = {
        "tiles_dir": str(town / "tiles"),
        "out_dir": str(town / "runout"),
        "train_tiles": ["tile_000", "tile_001"],
        "test_tiles": ["tile_002"],
        "forest": {"n_trees": 15, "seed": 1},
    }
    cfg_path = town / "config.json"
    cfg_path.write_text(json.dumps(config))
    assert main(["run", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "manifest" in out and (town / "runout" / "manifest.json").exists()

    study_out = town / "study.json"
    assert main(["study", "--config", str(cfg_path),
                 "--fractions", "0.5", "1.0", "--seeds", "1",
                 "--out", str(study_out)]) == 0
    rows = json.loads(study_out.read_text())
    assert [r["fraction"] for r in rows] == [0.5, 1.0]
    assert all(0.0 <= r["oa_mean"] <= 1.0 for r in rows)


def test_serve_builds_working_app(town, monkeypatch):
    import uvicorn
    from fastapi.testclient import TestClient

    captured = {}
    monkeypatch.setattr(uvicorn, "run",
                        lambda app, **kw: captured.update(app=app, **kw))
    assert main(["serve", "--tiles-dir", str(town / "tiles"),
                 "--port", "9009"]) == 0
    assert captured["port"] == 9009
    client = TestClient(captured["app"])
    body = client.get("/tiles").json()
    assert body["tiles"] == ["tile_000", "tile_001", "tile_002"]


def test_errors_exit_nonzero(town, capsys):
    rc = main(["evaluate", "--gt", str(town / "tiles" / "tile_000.ply"),
               "--pred", str(town / "tiles" / "tile_001.ply")])
    assert rc == 1
    assert "error" in capsys.readouterr().err
    assert main(["train", str(town / "nope.csv"), "--out", "x"]) == 1
