"""Action proposals from actionness maps.

The map is resized to a 32x32 lattice, every lattice box is scored by
its mean actionness through an integral image, and boxes are picked
greedily by score while suppressing heavy overlaps with earlier picks.

Lattice boxes are inclusive cell ranges ``(x1, y1, x2, y2)``; pixel boxes
are half-open (see :mod:`hfcn.boxes`).
"""
import functools
import math
from typing import NamedTuple

import numpy as np

from . import ops
from .boxes import Box, iou_one_to_many

LATTICE = 32
DEFAULT_SUPPRESS_IOU = 0.7
DEFAULT_COUNT = 5
SCORE_LEVELS = 1


class ScoredBox(NamedTuple):
    box: tuple
    score: float


class ScoredBoxes:
    """Struct-of-arrays box list: ``boxes`` is ``(K, 4)``, ``scores`` is ``(K,)``."""

    def __init__(self, boxes, scores):
        self.boxes = np.asarray(boxes).reshape(-1, 4)
        self.scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        if len(self.boxes) != len(self.scores):
            raise ValueError("boxes and scores differ in length")

    def __len__(self):
        return len(self.scores)

    def __getitem__(self, i):
        return ScoredBox(tuple(int(c) for c in self.boxes[i]), float(self.scores[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_list(cls, items):
        items = list(items)
        if not items:
            return cls(np.zeros((0, 4)), np.zeros(0))
        return cls([sb.box for sb in items], [sb.score for sb in items])


def resize_map_to_lattice(amap, size=LATTICE):
    amap = np.asarray(amap, dtype=np.float64)
    if amap.size == 0:
        raise ValueError("empty actionness map")
    out = ops.bilinear_resize(amap, size, size)
    return np.clip(out, amap.min(), amap.max())


def integral_image(amap):
    """Summed-area table with a zero first row and column."""
    amap = np.asarray(amap, dtype=np.float64)
    ii = np.zeros((amap.shape[0] + 1, amap.shape[1] + 1))
    ii[1:, 1:] = amap.cumsum(axis=0).cumsum(axis=1)
    return ii


def _box_sums(ii, x1, y1, x2, y2):
    return ii[y2 + 1, x2 + 1] - ii[y1, x2 + 1] - ii[y2 + 1, x1] + ii[y1, x1]


def box_mean_score(ii, box):
    """Mean map value over the inclusive lattice box."""
    x1, y1, x2, y2 = (int(c) for c in box)
    h, w = ii.shape[0] - 1, ii.shape[1] - 1
    if not (0 <= x1 <= x2 < w and 0 <= y1 <= y2 < h):
        raise ValueError(f"box {box} outside {w}x{h} lattice")
    area = (x2 - x1 + 1) * (y2 - y1 + 1)
    return float(_box_sums(ii, x1, y1, x2, y2) / area)


@functools.lru_cache(maxsize=8)
def _lattice_boxes(h, w):
    ya, yb = np.triu_indices(h)
    xa, xb = np.triu_indices(w)
    ny, nx = len(ya), len(xa)
    y1, y2 = np.repeat(ya, nx), np.repeat(yb, nx)
    x1, x2 = np.tile(xa, ny), np.tile(xb, ny)
    order = np.lexsort((x2, y2, x1, y1))
    boxes = np.stack([x1[order], y1[order], x2[order], y2[order]], axis=1)
    boxes.setflags(write=False)
    halfopen = _lattice_to_halfopen(boxes)
    halfopen.setflags(write=False)
    rank = tie_rank(halfopen)
    rank.setflags(write=False)
    return boxes, halfopen, rank


def enumerate_scored_boxes(ii):
    """Score every box with ``x1 <= x2`` and ``y1 <= y2`` on the lattice.

    A 32x32 lattice yields ``C(33, 2)**2 = 278784`` boxes.  Boxes come out
    ordered by ``(y1, x1, y2, x2)``.
    """
    h, w = ii.shape[0] - 1, ii.shape[1] - 1
    boxes, _, _ = _lattice_boxes(h, w)
    x1, y1, x2, y2 = boxes.T
    area = (x2 - x1 + 1) * (y2 - y1 + 1)
    scores = _box_sums(ii, x1, y1, x2, y2) / area
    return ScoredBoxes(boxes, scores)


def tie_rank(coords):
    """Rank for breaking score ties: larger area first, then ``(y1, x1, y2, x2)``.

    Preferring area makes a flat plateau yield the box covering the whole
    plateau rather than one of its single cells.
    """
    c = np.asarray(coords)
    area = (c[:, 2] - c[:, 0]) * (c[:, 3] - c[:, 1])
    order = np.lexsort((c[:, 2], c[:, 3], c[:, 0], c[:, 1], -area))
    rank = np.empty(len(c), dtype=np.intp)
    rank[order] = np.arange(len(c))
    return rank


def greedy_nms(coords, scores, n, suppress_iou, rank=None):
    """Indices picked by greedy suppression over half-open ``coords``.

    Candidates are visited by descending score (ties via :func:`tie_rank`);
    one is dropped when its IoU with any earlier pick exceeds
    ``suppress_iou``.  Returns at most ``n`` indices in pick order.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    if len(coords) == 0 or n <= 0:
        return []
    if rank is None:
        rank = tie_rank(coords)
    masked = scores.copy()
    picked = []
    while len(picked) < n:
        best = masked.max()
        if best == -np.inf:
            break
        cands = np.flatnonzero(masked == best)
        i = int(cands[np.argmin(rank[cands])])
        picked.append(i)
        masked[iou_one_to_many(coords[i], coords) > suppress_iou] = -np.inf
        masked[i] = -np.inf
    return picked


def _lattice_to_halfopen(boxes):
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    b[:, 2:] += 1
    return b


def nms_sample(boxes, n=DEFAULT_COUNT, suppress_iou=DEFAULT_SUPPRESS_IOU):
    """Greedy NMS sampling over inclusive lattice boxes."""
    if not isinstance(boxes, ScoredBoxes):
        boxes = ScoredBoxes.from_list(boxes)
    if len(boxes) == 0:
        raise ValueError("no candidate boxes")
    h, w = int(boxes.boxes[:, 3].max()) + 1, int(boxes.boxes[:, 2].max()) + 1
    cached, halfopen, rank = _lattice_boxes(h, w)
    if boxes.boxes.shape == cached.shape and np.array_equal(boxes.boxes, cached):
        idx = greedy_nms(halfopen, boxes.scores, n, suppress_iou, rank)
    else:
        idx = greedy_nms(_lattice_to_halfopen(boxes.boxes), boxes.scores, n, suppress_iou)
    return [boxes[i] for i in idx]


def _round(x):
    return int(math.floor(x + 0.5))


def project_box(box, height, width, lattice=LATTICE):
    """Map an inclusive lattice box to a half-open pixel box."""
    x1, y1, x2, y2 = box
    if not (0 <= x1 <= x2 < lattice and 0 <= y1 <= y2 < lattice):
        raise ValueError(f"box {box} outside the {lattice}x{lattice} lattice")
    sx, sy = width / lattice, height / lattice
    return Box(_round(x1 * sx), _round(y1 * sy), _round((x2 + 1) * sx), _round((y2 + 1) * sy))


def unproject_box(box, height, width, lattice=LATTICE):
    """Inverse of :func:`project_box` (exact for images at least lattice-sized)."""
    sx, sy = lattice / width, lattice / height
    return (_round(box[0] * sx), _round(box[1] * sy),
            _round(box[2] * sx) - 1, _round(box[3] * sy) - 1)


def generate_proposals(amap, n=DEFAULT_COUNT, suppress_iou=DEFAULT_SUPPRESS_IOU,
                       image_size=None, lattice=LATTICE, levels=SCORE_LEVELS):
    """Full map-to-proposals procedure; returns ``(pixel Box, score)`` pairs.

    The lattice map is rounded to ``levels`` steps and scored in integer
    units, so saturated regions form plateaus of exactly equal box scores
    (resolved by :func:`tie_rank`).  ``levels=None`` scores raw values.
    """
    amap = np.asarray(amap)
    height, width = image_size or amap.shape[:2]
    grid = resize_map_to_lattice(amap, lattice)
    if levels:
        grid = np.round(grid * levels)
    scored = enumerate_scored_boxes(integral_image(grid))
    if levels:
        scored.scores /= levels
    picks = nms_sample(scored, n, suppress_iou)
    return [(project_box(sb.box, height, width, lattice), sb.score) for sb in picks]
