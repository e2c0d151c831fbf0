import json

import numpy as np
import pytest

from hfcn import fileio
from hfcn.boxes import Box
from hfcn.dataset import read_dataset, write_dataset
from hfcn.detector import Detection, Tube
from hfcn.fileio import FormatError, Provenance
from hfcn.model import build_network
from hfcn.netspec import load_spec
from hfcn.render import draw_boxes, false_colour, grayscale, overlay_heatmap
from hfcn.synth import SceneConfig, gen_action_video

PROV = Provenance(7, "abcdef0123456789")


def test_provenance_validation():
    with pytest.raises(ValueError):
        Provenance(0, "short")


def test_amap_round_trip_and_errors(tmp_path):
    m = np.random.default_rng(0).random((5, 7)).astype(np.float32)
    p = tmp_path / "m.amap"
    fileio.write_amap(p, m, PROV)
    got, prov = fileio.read_amap(p, with_provenance=True)
    assert got.tobytes() == m.tobytes() and prov == PROV
    raw = p.read_bytes()
    (tmp_path / "a.amap").write_bytes(b"XMAP" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        fileio.read_amap(tmp_path / "a.amap")
    (tmp_path / "b.amap").write_bytes(raw[:-1])
    with pytest.raises(FormatError, match="payload"):
        fileio.read_amap(tmp_path / "b.amap")
    (tmp_path / "c.amap").write_bytes(raw[:10])
    with pytest.raises(FormatError, match="truncated"):
        fileio.read_amap(tmp_path / "c.amap")
    with pytest.raises(ValueError):
        fileio.write_amap(p, np.zeros((2, 2, 2)))


def test_pnm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    rgb = np.round(rng.random((6, 9, 3)) * 255) / 255
    gray = np.round(rng.random((4, 3)) * 255) / 255
    fileio.write_pnm(tmp_path / "a.ppm", rgb, PROV)
    fileio.write_pnm(tmp_path / "b.pgm", gray)
    np.testing.assert_allclose(fileio.read_pnm(tmp_path / "a.ppm"), rgb, atol=1e-6)
    np.testing.assert_allclose(fileio.read_pnm(tmp_path / "b.pgm"), gray, atol=1e-6)
    assert b"seed=7" in (tmp_path / "a.ppm").read_bytes()[:60]
    raw = (tmp_path / "a.ppm").read_bytes()
    (tmp_path / "c.ppm").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        fileio.read_pnm(tmp_path / "c.ppm")


def test_weights_round_trip_and_spec_check(tmp_path):
    spec = load_spec("toy_afcn")
    net = build_network(spec, 3)
    p = tmp_path / "w.weights"
    fileio.write_weights(p, net, PROV)
    loaded = fileio.load_network(p, spec)
    for k, v in net.parameters().items():
        assert loaded.parameters()[k].tobytes() == v.tobytes()
    header = json.loads(p.read_bytes().split(b"\n", 1)[0])
    assert header["seed"] == 7 and header["config"] == PROV.config
    with pytest.raises(FormatError, match="spec_hash"):
        fileio.load_network(p, load_spec("toy_mfcn"))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError, match="payload"):
        fileio.read_weights(p)


def test_weights_deterministic_bytes(tmp_path):
    spec = load_spec("cls_spatial")
    fileio.write_weights(tmp_path / "a", build_network(spec, 1), PROV)
    fileio.write_weights(tmp_path / "b", build_network(spec, 1), PROV)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_record_round_trips(tmp_path):
    ann = [("v0", 0, [(Box(1, 2, 30, 40), 1)]), ("v0", 1, [])]
    fileio.write_annotations(tmp_path / "ann.txt", ann, PROV)
    got, prov = fileio.read_annotations(tmp_path / "ann.txt")
    assert got == ann and prov == PROV

    props = [("v0", 0, [(Box(0, 0, 4, 4), 0.75), (Box(1, 1, 9, 9), 0.1 + 0.2)])]
    fileio.write_proposals(tmp_path / "p.txt", props)
    assert fileio.read_proposals(tmp_path / "p.txt")[0] == props

    dets = [Detection(2, Box(0, 0, 4, 4), 1, 1 / 3, "v1"), Detection(0, Box(1, 1, 2, 2), 0, 0.5)]
    fileio.write_detections(tmp_path / "d.txt", dets)
    assert fileio.read_detections(tmp_path / "d.txt")[0] == dets

    tubes = [Tube(1, 2, [Box(0, 0, 4, 4), Box(1, 0, 5, 4)], 0.6, "v", [0.5, 0.7])]
    fileio.write_tubes(tmp_path / "t.txt", tubes)
    assert fileio.read_tubes(tmp_path / "t.txt")[0] == tubes

    fileio.write_curve(tmp_path / "c.txt", [(1, 0.5), (2, 0.75)])
    assert fileio.read_curve(tmp_path / "c.txt")[0] == [(1.0, 0.5), (2.0, 0.75)]
    fileio.write_metrics(tmp_path / "m.txt", {"a": 0.1, "b": 3})
    assert fileio.read_metrics(tmp_path / "m.txt")[0] == {"a": 0.1, "b": 3}


def test_record_errors(tmp_path):
    p = tmp_path / "x.txt"
    fileio.write_detections(p, [Detection(0, Box(0, 0, 1, 1), 0, 0.5, "v")])
    with pytest.raises(FormatError, match="kind"):
        fileio.read_proposals(p)
    p.write_text(p.read_text() + "v 0 0 1 1\n")
    with pytest.raises(FormatError, match="line"):
        fileio.read_detections(p)
    p.write_text("no header\n")
    with pytest.raises(FormatError, match="header"):
        fileio.read_detections(p)
    with pytest.raises(ValueError):
        fileio.write_detections(p, [Detection(0, Box(0, 0, 1, 1), 0, 0.5, "a b")])


def test_dataset_round_trip(tmp_path):
    videos = [gen_action_video(i, SceneConfig(frames=3)) for i in range(2)]
    write_dataset(tmp_path, videos, ["a", "b"], PROV)
    ids, back = read_dataset(tmp_path)
    assert ids == ["a", "b"]
    for v, w in zip(videos, back):
        np.testing.assert_array_equal(v.frames, w.frames)
        assert v.boxes == w.boxes and v.labels == w.labels
        for f, g in zip(v.flows, w.flows):
            np.testing.assert_array_equal(f.u, g.u)
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "missing")


def test_render_zero_map_and_boxes():
    assert not grayscale(np.zeros((4, 4))).any()
    fc = false_colour(np.zeros((4, 4)))
    assert fc.shape == (4, 4, 3) and not fc.any()
    np.testing.assert_array_equal(false_colour(np.ones((2, 2))), 1.0)
    np.testing.assert_array_equal(false_colour(np.full((1, 1), 0.25))[0, 0], [0, 0, 1])
    frame = np.zeros((8, 8, 3))
    np.testing.assert_array_equal(overlay_heatmap(frame, np.zeros((2, 2))), 0)
    img = draw_boxes(np.zeros((8, 8)), [(2, 2, 6, 6)])
    assert img.shape == (8, 8, 3)
    assert img[2, 3, 1] == 1.0 and img[3, 3, 1] == 0.0
    assert not draw_boxes(np.zeros((8, 8)), [(10, 10, 12, 12)]).any()
