import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfcn.boxes import Box, iou
from hfcn.proposals import (ScoredBox, ScoredBoxes, box_mean_score, enumerate_scored_boxes,
                            generate_proposals, greedy_nms, integral_image, nms_sample,
                            project_box, resize_map_to_lattice, unproject_box)
from oracles import _iou, box_mean_naive, greedy_oracle


def random_boxes(rng, k, size=32):
    x1 = rng.integers(0, size - 1, k)
    y1 = rng.integers(0, size - 1, k)
    x2 = x1 + rng.integers(1, size // 2, k)
    y2 = y1 + rng.integers(1, size // 2, k)
    return np.stack([x1, y1, np.minimum(x2, size), np.minimum(y2, size)], 1).astype(float)


# -- lattice and integral image ---------------------------------------------------

def test_resize_constant_and_identity():
    np.testing.assert_allclose(resize_map_to_lattice(np.full((50, 70), 0.3)), 0.3)
    m = np.random.default_rng(0).random((32, 32))
    np.testing.assert_array_equal(resize_map_to_lattice(m), m)


def test_resize_range():
    m = np.random.default_rng(1).random((224, 224)) * 0.5 + 0.2
    r = resize_map_to_lattice(m)
    assert r.shape == (32, 32)
    assert r.min() >= m.min() and r.max() <= m.max()
    with pytest.raises(ValueError):
        resize_map_to_lattice(np.zeros((0, 0)))


def test_integral_image_examples():
    np.testing.assert_array_equal(integral_image(np.ones((2, 2)))[1:, 1:], [[1, 2], [2, 4]])
    m = np.zeros((3, 4))
    m[0, 0] = 5.0
    ii = integral_image(m)
    assert (ii[1:, 1:] == 5.0).all() and (ii[0] == 0).all() and (ii[:, 0] == 0).all()


def test_integral_image_entries():
    m = np.random.default_rng(2).random((7, 9))
    ii = integral_image(m)
    for i in range(8):
        for j in range(10):
            assert abs(ii[i, j] - m[:i, :j].sum()) < 1e-9


def test_box_mean_examples():
    ii = integral_image(np.ones((32, 32)))
    assert box_mean_score(ii, (3, 4, 20, 30)) == 1.0
    m = np.random.default_rng(3).random((32, 32))
    ii = integral_image(m)
    assert abs(box_mean_score(ii, (5, 7, 5, 7)) - m[7, 5]) < 1e-12
    with pytest.raises(ValueError):
        box_mean_score(ii, (0, 0, 32, 3))
    with pytest.raises(ValueError):
        box_mean_score(ii, (4, 0, 3, 3))


def test_box_mean_matches_naive_random_boxes():
    rng = np.random.default_rng(4)
    m = rng.random((32, 32))
    ii = integral_image(m)
    for _ in range(50):
        x1, x2 = sorted(rng.integers(0, 32, 2))
        y1, y2 = sorted(rng.integers(0, 32, 2))
        assert abs(box_mean_score(ii, (x1, y1, x2, y2)) - box_mean_naive(m, x1, y1, x2, y2)) < 1e-6


def test_enumeration_counts():
    assert len(enumerate_scored_boxes(integral_image(np.ones((2, 2))))) == 9
    sb = enumerate_scored_boxes(integral_image(np.random.default_rng(5).random((32, 32))))
    assert len(sb) == 278784
    assert sb.scores.min() >= 0 and sb.scores.max() <= 1
    assert len({tuple(b) for b in sb.boxes.tolist()}) == 278784


# -- NMS -----------------------------------------------------------------------------

def test_nms_examples():
    assert nms_sample([ScoredBox((1, 1, 4, 4), 0.3)], n=5) == [ScoredBox((1, 1, 4, 4), 0.3)]
    out = nms_sample([ScoredBox((1, 1, 4, 4), 0.8), ScoredBox((1, 1, 4, 4), 0.9)], 5, 0.5)
    assert out == [ScoredBox((1, 1, 4, 4), 0.9)]
    with pytest.raises(ValueError):
        nms_sample([], 5)


def test_nms_matches_greedy_oracle():
    rng = np.random.default_rng(6)
    for trial in range(150):
        k = int(rng.integers(1, 30))
        boxes = random_boxes(rng, k)
        # coarse scores force plenty of ties
        scores = rng.integers(0, 4, k) / 4.0 if trial % 2 else rng.random(k)
        thr = float(rng.choice([0.3, 0.5, 0.7, 1.0]))
        n = int(rng.integers(1, 8))
        got = greedy_nms(boxes, scores, n, thr)
        assert got == greedy_oracle(boxes.tolist(), scores.tolist(), n, thr)


def test_nms_invariants_and_prefix():
    rng = np.random.default_rng(7)
    for _ in range(40):
        k = int(rng.integers(5, 40))
        boxes = random_boxes(rng, k)
        scores = rng.random(k)
        thr = 0.5
        full = greedy_nms(boxes, scores, k, thr)
        assert (np.diff(scores[full]) <= 0).all()
        for i in set(range(k)) - set(full):
            assert any(_iou(boxes[i], boxes[j]) > thr for j in full)
        for n in range(1, 6):
            assert greedy_nms(boxes, scores, n, thr) == full[:n]
        short = greedy_nms(boxes, scores, 3, thr)
        for i in set(range(k)) - set(short):
            assert scores[i] <= scores[short[-1]] or any(_iou(boxes[i], boxes[j]) > thr for j in short)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_nms_property_prefix(seed):
    rng = np.random.default_rng(seed)
    boxes = random_boxes(rng, 15)
    scores = rng.integers(0, 3, 15) / 2.0
    a = greedy_nms(boxes, scores, 3, 0.6)
    b = greedy_nms(boxes, scores, 6, 0.6)
    assert b[:len(a)] == a


# -- projection ------------------------------------------------------------------

def test_project_examples():
    assert project_box((0, 0, 31, 31), 320, 320) == Box(0, 0, 320, 320)
    assert project_box((3, 5, 3, 5), 64, 64) == Box(6, 10, 8, 12)
    with pytest.raises(ValueError):
        project_box((0, 0, 32, 1), 64, 64)


def test_project_round_trip():
    rng = np.random.default_rng(8)
    for h, w in [(64, 64), (240, 320), (33, 100), (224, 224)]:
        for _ in range(50):
            x1, x2 = sorted(rng.integers(0, 32, 2))
            y1, y2 = sorted(rng.integers(0, 32, 2))
            b = (int(x1), int(y1), int(x2), int(y2))
            assert unproject_box(project_box(b, h, w), h, w) == b


# -- full procedure -------------------------------------------------------------------

def test_argmax_plateau_region():
    """On a 0/1 region map the top proposal overlaps the region at least as well as any box."""
    rng = np.random.default_rng(9)
    for _ in range(20):
        x1, x2 = sorted(rng.integers(0, 32, 2))
        y1, y2 = sorted(rng.integers(0, 32, 2))
        m = np.zeros((32, 32))
        m[y1:y2 + 1, x1:x2 + 1] = 1.0
        region = (x1, y1, x2 + 1, y2 + 1)
        for levels in (None, 1, 255):
            (top, score), *_ = generate_proposals(m, n=1, levels=levels)
            assert score == 1.0
            assert iou(top, region) == 1.0


def test_generate_proposals_scores_and_projection():
    rng = np.random.default_rng(10)
    m = rng.random((64, 64))
    props = generate_proposals(m, n=5, levels=None)
    assert len(props) == 5
    scores = [s for _, s in props]
    assert scores == sorted(scores, reverse=True)
    for b, _ in props:
        assert 0 <= b.x1 < b.x2 <= 64 and 0 <= b.y1 < b.y2 <= 64
    scaled = generate_proposals(m, n=5, image_size=(128, 128), levels=None)
    assert [b.x2 for b, _ in scaled] == [2 * b.x2 for b, _ in props]


def test_generate_proposals_deterministic():
    m = np.random.default_rng(11).random((40, 40))
    assert generate_proposals(m) == generate_proposals(m)


def test_scored_boxes_container():
    sb = ScoredBoxes.from_list([ScoredBox((0, 0, 1, 1), 0.5), ScoredBox((1, 1, 2, 2), 0.25)])
    assert len(sb) == 2 and sb[1] == ScoredBox((1, 1, 2, 2), 0.25)
    assert list(sb)[0].score == 0.5
    assert len(ScoredBoxes.from_list([])) == 0
    with pytest.raises(ValueError):
        ScoredBoxes(np.zeros((2, 4)), np.zeros(3))
