import json

import numpy as np
import pytest

from hfcn import fileio
from hfcn.cli import main
from hfcn.model import build_network
from hfcn.netspec import load_spec

TINY = {"train_scenes": 3, "test_scenes": 2, "frames": 4, "train_frames": [0],
        "fcn_iterations": 2, "fcn_batch": 2, "fcn_milestones": [[0, 0.01]],
        "cls_iterations": 2, "cls_batch": 4, "cls_milestones": [[0, 0.01]], "scales": [1.0]}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    assert main(["init-config", "--out", str(cfg)]) == 0
    data = json.loads(cfg.read_text())
    data.update(TINY)
    cfg.write_text(json.dumps(data))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train-toy", "--config", str(cfg), "--out", str(root / "w")]) == 0
    return root, str(cfg)


def test_full_command_chain(workspace, capsys):
    root, cfg = workspace
    r = lambda p: str(root / p)
    assert main(["estimate", "--config", cfg, "--weights", r("w"), "--data", r("data"),
                 "--out", r("maps")]) == 0
    assert len(list((root / "maps").glob("*.amap"))) == 2 * 4
    assert main(["propose", "--config", cfg, "--maps", r("maps"), "--out", r("props.txt")]) == 0
    assert main(["detect", "--config", cfg, "--weights", r("w"), "--data", r("data"),
                 "--proposals", r("props.txt"), "--out", r("dets.txt")]) == 0
    assert main(["link", "--config", cfg, "--detections", r("dets.txt"), "--out", r("tubes.txt")]) == 0
    ann = r("data/annotations.txt")
    for proto, pred in (("grid", "maps"), ("recall", "props.txt"), ("frame-ap", "dets.txt"),
                        ("video-ap", "tubes.txt")):
        assert main(["evaluate", "--config", cfg, "--protocol", proto, "--predictions", r(pred),
                     "--annotations", ann, "--out", r(f"eval_{proto}")]) == 0
        assert (root / f"eval_{proto}" / "metrics.txt").is_file()
    assert (root / "eval_recall" / "recall_vs_count.txt").is_file()
    first = sorted((root / "maps").glob("*.amap"))[0]
    assert main(["render", "--map", str(first), "--colour", "--out", r("heat.ppm")]) == 0
    assert main(["render", "--frame", r("data/test0000/frame_000.ppm"), "--boxes", r("props.txt"),
                 "--video", "test0000", "--index", "0", "--out", r("boxes.ppm")]) == 0
    assert fileio.read_pnm(root / "boxes.ppm").shape == (64, 64, 3)
    assert "video_ap" in capsys.readouterr().out


def test_pipeline_with_weights(workspace):
    root, cfg = workspace
    assert main(["pipeline", "--config", cfg, "--weights", str(root / "w"),
                 "--out", str(root / "run")]) == 0
    metrics, _ = fileio.read_metrics(root / "run" / "metrics.txt")
    assert {"grid_map_hybrid", "frame_ap", "video_ap"} <= set(metrics)


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["propose", "--maps", "x"]) == 1
    assert main(["render", "--out", "x.ppm"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_data_errors(tmp_path):
    assert main(["propose", "--maps", str(tmp_path), "--out", str(tmp_path / "p.txt")]) == 2
    bad = tmp_path / "bad_000.amap"
    bad.write_bytes(b"junk")
    assert main(["propose", "--maps", str(bad), "--out", str(tmp_path / "p.txt")]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text('{"nonsense": 1}')
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2
    assert main(["estimate", "--weights", str(tmp_path), "--data", str(tmp_path),
                 "--out", str(tmp_path / "m")]) == 2


def test_numeric_failure(workspace, tmp_path):
    root, cfg = workspace
    wdir = tmp_path / "w"
    for name, spec in (("appearance", "toy_afcn"), ("motion", "toy_mfcn")):
        net = build_network(load_spec(spec), 0)
        params = net.parameters()
        params["conv1.weights"] = np.full_like(params["conv1.weights"], np.nan)
        net.set_parameters(params)
        fileio.write_weights(wdir / f"{name}.weights", net)
    assert main(["estimate", "--config", cfg, "--weights", str(wdir), "--data",
                 str(root / "data"), "--out", str(tmp_path / "m")]) == 3
