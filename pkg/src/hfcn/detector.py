"""Per-frame detection over proposals and dynamic-programming tube linking.

A classifier has ``|A| + 1`` softmax outputs; index ``|A|`` is background
and is never emitted as a detection.
"""
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .boxes import Box, iou, iou_matrix
from .model import Network
from .proposals import greedy_nms

NEGATIVE_IOU = 0.25


@dataclass
class Detection:
    frame: int
    box: Box
    label: int
    score: float
    video: str = ""

    @property
    def key(self):
        return (self.video, self.frame)


@dataclass
class Tube:
    label: int
    start: int
    boxes: list  # one Box per frame from ``start``
    score: float = 1.0
    video: str = ""
    frame_scores: list = field(default_factory=list)

    def __post_init__(self):
        if not self.boxes:
            raise ValueError("a tube needs at least one box")

    @property
    def frames(self):
        return range(self.start, self.start + len(self.boxes))

    @property
    def by_frame(self):
        return dict(zip(self.frames, self.boxes))


@dataclass(frozen=True)
class LinkConfig:
    """``overlap_weight`` is the lambda on consecutive-box IoU."""
    overlap_weight: float = 1.0
    score_mode: str = "mean"  # or "sum"
    max_tubes: int = 1
    min_tube_score: float = 0.0

    def __post_init__(self):
        if not self.overlap_weight >= 0:
            raise ValueError("overlap_weight must be non-negative")
        if self.score_mode not in ("mean", "sum"):
            raise ValueError(f"unknown score mode {self.score_mode!r}")
        if self.max_tubes < 1:
            raise ValueError("max_tubes must be >= 1")


# -- classification --------------------------------------------------------

def crop_and_resize(frame, box, out_height, out_width):
    """Bilinear resample of the frame region under ``box`` (clamped to the frame)."""
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    x1, y1, x2, y2 = (int(round(c)) for c in box)
    x1, y1, x2, y2 = max(x1, 0), max(y1, 0), min(x2, w), min(y2, h)
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"box {tuple(box)} does not intersect the {w}x{h} frame")
    return ops.bilinear_resize(frame[y1:y2, x1:x2], out_height, out_width)


def select_training_examples(proposals, gt_boxes, negative_iou=NEGATIVE_IOU):
    """Positives are the ground-truth boxes; negatives are proposals with max IoU < ``negative_iou``."""
    gt = list(gt_boxes)
    props = list(proposals)
    if not props:
        return gt, []
    if not gt:
        return gt, props
    best = iou_matrix(props, gt).max(axis=1)
    return gt, [p for p, o in zip(props, best) if o < negative_iou]


def classify_proposals(classifier: Network, crops):
    """Softmax score vectors ``(K, |A|+1)`` for crops at the classifier input size."""
    if len(crops) == 0:
        return np.zeros((0, classifier.spec.head_channels))
    x = np.stack([np.asarray(c, dtype=np.float32) for c in crops])
    size = classifier.spec.input_size
    if size is not None and tuple(x.shape[1:3]) != tuple(size):
        raise ValueError(f"crops are {x.shape[1]}x{x.shape[2]}, classifier expects {size[0]}x{size[1]}")
    out = classifier.forward(x)
    if out.shape[1:3] != (1, 1):
        raise ValueError(f"classifier output is {out.shape[1]}x{out.shape[2]}, expected 1x1")
    return out[:, 0, 0, :].astype(np.float64)


def fuse_streams(spatial_scores, temporal_scores):
    s = np.asarray(spatial_scores, dtype=np.float64)
    t = np.asarray(temporal_scores, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"score shapes differ: {s.shape} vs {t.shape}")
    return (s + t) / 2


def detect_frame(proposals, fused_scores, class_count, frame=0, video="", nms_iou=None):
    """One detection per (proposal, non-background class), optionally NMS'd per class."""
    if len(fused_scores) != len(proposals):
        raise ValueError(f"{len(proposals)} proposals but {len(fused_scores)} score vectors")
    scores = np.asarray(fused_scores, dtype=np.float64).reshape(len(proposals), -1) \
        if len(proposals) else np.zeros((0, class_count + 1))
    if scores.shape[1] != class_count + 1:
        raise ValueError(f"score vectors have {scores.shape[1]} entries, expected {class_count + 1}")
    dets = []
    for k in range(class_count):
        keep = range(len(proposals))
        if nms_iou is not None and len(proposals):
            keep = greedy_nms([tuple(p) for p in proposals], scores[:, k], len(proposals), nms_iou)
        dets.extend(Detection(frame, Box(*proposals[i]), k, float(scores[i, k]), video) for i in keep)
    return dets


# -- linking ---------------------------------------------------------------

def _path_value(scores, boxes, path, weight):
    """Objective of one path, accumulated in the same order as the DP."""
    total = scores[0][path[0]]
    for t in range(1, len(path)):
        total = scores[t][path[t]] + (total + weight * iou(boxes[t - 1][path[t - 1]], boxes[t][path[t]]))
    return total


def best_path(scores, boxes, weight=1.0):
    """Maximise ``sum score + weight * sum IoU(consecutive)`` over one box per frame.

    Ties go to the lower box index, scanning from the last frame back, so the
    result is the reverse-lexicographically smallest optimal path.
    Returns ``(path, value)``.
    """
    if not scores:
        raise ValueError("empty frame list")
    for t, s in enumerate(scores):
        if len(s) == 0:
            raise ValueError(f"frame {t} has no candidates")
    value = np.asarray(scores[0], dtype=np.float64)
    back = []
    for t in range(1, len(scores)):
        ov = iou_matrix(boxes[t - 1], boxes[t])
        cand = value[:, None] + weight * ov  # (prev, cur)
        arg = np.argmax(cand, axis=0)
        back.append(arg)
        value = np.asarray(scores[t], dtype=np.float64) + cand[arg, np.arange(cand.shape[1])]
    j = int(np.argmax(value))
    best = float(value[j])
    path = [j]
    for arg in reversed(back):
        j = int(arg[j])
        path.append(j)
    return path[::-1], best


def link_tube(detections_per_frame, config=LinkConfig(), start=0):
    """Best tube through per-frame detection lists of one class."""
    return _link(detections_per_frame, config, start)[0]


def _link(detections_per_frame, config, start):
    if not detections_per_frame:
        raise ValueError("empty frame list")
    scores = [[d.score for d in dets] for dets in detections_per_frame]
    boxes = [[tuple(d.box) for d in dets] for dets in detections_per_frame]
    path, _ = best_path(scores, boxes, config.overlap_weight)
    chosen = [dets[i] for dets, i in zip(detections_per_frame, path)]
    fs = [d.score for d in chosen]
    score = float(np.mean(fs)) if config.score_mode == "mean" else float(np.sum(fs))
    first = chosen[0]
    return Tube(first.label, start, [Box(*d.box) for d in chosen], score, first.video, fs), path


def link_tubes(detections_per_frame, config=LinkConfig(), start=0):
    """Repeatedly extract the best tube and remove its boxes.

    Stops after ``config.max_tubes`` tubes, when a frame runs out of
    candidates, or when a tube scores below ``config.min_tube_score``.
    """
    remaining = [list(d) for d in detections_per_frame]
    tubes = []
    while len(tubes) < config.max_tubes and remaining and all(remaining):
        tube, path = _link(remaining, config, start)
        if tube.score < config.min_tube_score:
            break
        tubes.append(tube)
        for dets, i in zip(remaining, path):
            del dets[i]
    return tubes


def link_video(detections, num_frames, class_count, config=LinkConfig(), video=""):
    """Tubes for every class of one video from a flat detection list."""
    tubes = []
    for k in range(class_count):
        per_frame = [[] for _ in range(num_frames)]
        for d in detections:
            if d.label == k:
                per_frame[d.frame].append(d)
        if all(per_frame):
            for tube in link_tubes(per_frame, config):
                tube.video = video
                tubes.append(tube)
    return tubes
