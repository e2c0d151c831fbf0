"""Evaluation protocols: grid actionness AP, proposal recall, frame-AP and video-AP.

Average precision is the non-interpolated area under the PR curve.
Detections are ranked by descending score with a stable sort; items with
equal scores share one operating point, so a constant score vector gets
AP equal to the positive fraction.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .boxes import iou, iou_matrix


class UndefinedAPError(ValueError):
    """Raised when AP is requested with no positives."""


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    positive_count: int
    true_positives: np.ndarray = field(default=None, repr=False)  # cumulative, per point
    ranks: np.ndarray = field(default=None, repr=False)

    def points(self):
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def pr_curve(scores, labels, positive_count=None):
    """Precision/recall at each distinct score threshold.

    ``positive_count`` defaults to the number of positive labels; detection
    protocols pass the ground-truth count so missed objects lower recall.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).astype(bool).reshape(-1)
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    npos = int(labels.sum()) if positive_count is None else int(positive_count)
    if npos < labels.sum():
        raise ValueError("positive_count is smaller than the number of positive labels")
    if len(scores) == 0:
        return PRCurve(np.zeros(0), np.zeros(0), npos, np.zeros(0, int), np.zeros(0, int))
    order = np.argsort(-scores, kind="stable")
    s, lab = scores[order], labels[order]
    tp = np.cumsum(lab)
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    ranks = ends + 1
    precision = tp[ends] / ranks
    recall = tp[ends] / npos if npos else np.zeros(len(ends))
    return PRCurve(recall, precision, npos, tp[ends], ranks)


def average_precision(curve):
    """Sum of precision times recall increment over the curve's points.

    Evaluated in exact rational arithmetic from the integer counts, so
    hand-computed values such as 5/6 come out correctly rounded.
    """
    if curve.positive_count == 0:
        raise UndefinedAPError("average precision is undefined without positives")
    if curve.true_positives is None:
        prev = np.concatenate([[0.0], curve.recall[:-1]])
        return float(np.sum((curve.recall - prev) * curve.precision))
    total, prev = Fraction(0), 0
    for tp, rank in zip(curve.true_positives.tolist(), curve.ranks.tolist()):
        if tp != prev:
            total += Fraction((tp - prev) * tp, rank)
            prev = tp
    return float(total / curve.positive_count)


def ap_from_scores(scores, labels, positive_count=None):
    return average_precision(pr_curve(scores, labels, positive_count))


# -- grid protocol -----------------------------------------------------------

@dataclass(frozen=True)
class GridProtocolConfig:
    grid_x: int = 16
    grid_y: int = 16
    temporal_bins: int = 4
    positive_threshold: float = 0.5
    criterion: str = "coverage"  # or "literal-iou"

    def __post_init__(self):
        if not 0 < self.positive_threshold <= 1:
            raise ValueError("positive_threshold must lie in (0, 1]")
        if self.criterion not in ("coverage", "literal-iou"):
            raise ValueError(f"unknown criterion {self.criterion!r}")


def partition_edges(n, parts):
    """Equal split of ``range(n)`` into ``parts``; the last part takes the remainder."""
    if n < parts:
        raise ValueError(f"cannot split {n} into {parts} parts")
    step = n // parts
    return [i * step for i in range(parts)] + [n]


def _cell_labels_image(edges_y, edges_x, boxes, h, w, cfg):
    gy, gx = len(edges_y) - 1, len(edges_x) - 1
    if cfg.criterion == "coverage":
        mask = np.zeros((h, w), dtype=np.float64)
        for x1, y1, x2, y2 in boxes:
            mask[max(0, int(y1)):int(y2), max(0, int(x1)):int(x2)] = 1
        cov = np.array([[mask[edges_y[i]:edges_y[i + 1], edges_x[j]:edges_x[j + 1]].mean()
                         for j in range(gx)] for i in range(gy)])
        return cov
    cells = [(edges_x[j], edges_y[i], edges_x[j + 1], edges_y[i + 1])
             for i in range(gy) for j in range(gx)]
    m = iou_matrix(cells, boxes).max(axis=1) if len(boxes) else np.zeros(len(cells))
    return m.reshape(gy, gx)


def _cell_means(amap, edges_y, edges_x):
    gy, gx = len(edges_y) - 1, len(edges_x) - 1
    return np.array([[amap[..., edges_y[i]:edges_y[i + 1], edges_x[j]:edges_x[j + 1]].mean()
                      for j in range(gx)] for i in range(gy)])


def grid_cells(amap, gt_boxes, config=GridProtocolConfig()):
    """Cell scores and overlap values for one image ``(H, W)`` or video ``(T, H, W)``.

    For a video ``gt_boxes`` is a per-frame list of box lists, and boxes at
    the same list position across frames are treated as one instance for
    the literal-IoU criterion.
    """
    amap = np.asarray(amap, dtype=np.float64)
    if amap.ndim == 2:
        if not len(gt_boxes):
            raise ValueError("no ground-truth boxes")
        h, w = amap.shape
        ey, ex = partition_edges(h, config.grid_y), partition_edges(w, config.grid_x)
        scores = _cell_means(amap, ey, ex)
        overlap = _cell_labels_image(ey, ex, gt_boxes, h, w, config)
        return scores.ravel(), overlap.ravel()
    if amap.ndim != 3:
        raise ValueError(f"expected a map or map sequence, got shape {amap.shape}")
    t, h, w = amap.shape
    if len(gt_boxes) != t:
        raise ValueError(f"{t} maps but {len(gt_boxes)} ground-truth frames")
    if not any(len(b) for b in gt_boxes):
        raise ValueError("no ground-truth boxes")
    et = partition_edges(t, config.temporal_bins)
    ey, ex = partition_edges(h, config.grid_y), partition_edges(w, config.grid_x)
    scores, overlaps = [], []
    for b in range(config.temporal_bins):
        frames = range(et[b], et[b + 1])
        scores.append(_cell_means(amap[et[b]:et[b + 1]], ey, ex))
        if config.criterion == "coverage":
            cov = np.mean([_cell_labels_image(ey, ex, gt_boxes[f], h, w, config) for f in frames],
                          axis=0)
            overlaps.append(cov)
        else:
            overlaps.append(_cuboid_iou(ey, ex, [gt_boxes[f] for f in frames]))
    return np.concatenate([s.ravel() for s in scores]), np.concatenate([o.ravel() for o in overlaps])


def _cuboid_iou(ey, ex, frame_boxes):
    gy, gx = len(ey) - 1, len(ex) - 1
    n_inst = max((len(b) for b in frame_boxes), default=0)
    best = np.zeros((gy, gx))
    for k in range(n_inst):
        inter = np.zeros((gy, gx))
        union = np.zeros((gy, gx))
        for boxes in frame_boxes:
            for i in range(gy):
                for j in range(gx):
                    cell = (ex[j], ey[i], ex[j + 1], ey[i + 1])
                    area = (ex[j + 1] - ex[j]) * (ey[i + 1] - ey[i])
                    if k < len(boxes):
                        g = boxes[k]
                        iw = min(cell[2], g[2]) - max(cell[0], g[0])
                        ih = min(cell[3], g[3]) - max(cell[1], g[1])
                        it = max(iw, 0) * max(ih, 0)
                        inter[i, j] += it
                        union[i, j] += area + (g[2] - g[0]) * (g[3] - g[1]) - it
                    else:
                        union[i, j] += area
        best = np.maximum(best, inter / union)
    return best


def grid_actionness_ap(amap, gt_boxes, config=GridProtocolConfig()):
    """AP of one sample: cells ranked by mean actionness, labelled by overlap."""
    scores, overlap = grid_cells(amap, gt_boxes, config)
    return ap_from_scores(scores, overlap > config.positive_threshold)


def mean_grid_ap(samples, config=GridProtocolConfig()):
    """mAP over ``(map, gt_boxes)`` samples; samples without positive cells are skipped.

    Returns ``(mAP, per-sample APs, skipped count)``.
    """
    aps, skipped = [], 0
    for amap, gt in samples:
        try:
            aps.append(grid_actionness_ap(amap, gt, config))
        except UndefinedAPError:
            skipped += 1
    if not aps:
        raise UndefinedAPError("no sample has positive cells")
    return float(np.mean(aps)), aps, skipped


# -- proposal recall -------------------------------------------------------

def _best_overlaps(proposals_per_image, gt_per_image, n):
    if len(proposals_per_image) != len(gt_per_image):
        raise ValueError("proposal and ground-truth lists differ in length")
    best = []
    for props, gts in zip(proposals_per_image, gt_per_image):
        props = list(props)[:n] if n is not None else list(props)
        for g in gts:
            best.append(max((iou(p, g) for p in props), default=0.0))
    if not best:
        raise ValueError("empty ground-truth set")
    return np.asarray(best)


def proposal_recall(proposals_per_image, gt_per_image, iou_threshold=0.5, n=None):
    """Fraction of ground-truth boxes hit (IoU >= threshold) by the first ``n`` proposals."""
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    best = _best_overlaps(proposals_per_image, gt_per_image, n)
    return float(np.mean(best >= iou_threshold))


def recall_vs_count(proposals_per_image, gt_per_image, iou_threshold=0.5, counts=range(1, 11)):
    return [(int(n), proposal_recall(proposals_per_image, gt_per_image, iou_threshold, n))
            for n in counts]


def recall_vs_iou(proposals_per_image, gt_per_image, n=10, thresholds=None):
    if thresholds is None:
        thresholds = np.round(np.arange(0.05, 1.0001, 0.05), 2)
    best = _best_overlaps(proposals_per_image, gt_per_image, n)
    return [(float(t), float(np.mean(best >= t))) for t in thresholds]


# -- detection AP --------------------------------------------------------

@dataclass
class APResult:
    per_class: dict
    mean: float


def _match_ap(dets, gts_by_key, overlap_fn, threshold):
    """PASCAL-style greedy matching; ``dets`` are ``(key, region, score)``."""
    n_gt = sum(len(v) for v in gts_by_key.values())
    order = sorted(range(len(dets)), key=lambda i: -dets[i][2])  # stable
    matched = {k: [False] * len(v) for k, v in gts_by_key.items()}
    scores, labels = [], []
    for i in order:
        key, region, score = dets[i]
        cands = gts_by_key.get(key, [])
        hit = False
        if cands:
            ovs = [overlap_fn(region, g) for g in cands]
            j = int(np.argmax(ovs))
            if ovs[j] > threshold and not matched[key][j]:
                matched[key][j] = True
                hit = True
        scores.append(score)
        labels.append(hit)
    if n_gt == 0:
        return 0.0
    return ap_from_scores(scores, labels, n_gt)


def _per_class_ap(dets, gts, overlap_fn, threshold):
    dets_by_class, gts_by_class = defaultdict(list), defaultdict(lambda: defaultdict(list))
    for key, region, label, score in dets:
        dets_by_class[label].append((key, region, score))
    for key, region, label in gts:
        gts_by_class[label][key].append(region)
    classes = sorted(set(dets_by_class) | set(gts_by_class))
    per_class = {c: _match_ap(dets_by_class.get(c, []), gts_by_class.get(c, {}), overlap_fn,
                              threshold)
                 for c in classes}
    with_gt = [per_class[c] for c in classes if c in gts_by_class]
    return APResult(per_class, float(np.mean(with_gt)) if with_gt else float("nan"))


def frame_ap(detections, gt, iou_threshold=0.5):
    """Per-class frame-AP.

    ``detections`` have ``key`` (e.g. ``(video, frame)``), ``box``,
    ``label`` and ``score``; ``gt`` items are ``(key, box, label)``.  A
    detection is correct when IoU > threshold with an unmatched ground
    truth of the same class in the same frame.  Classes without ground
    truth score 0 and are left out of the mean.
    """
    dets = [(d.key, d.box, d.label, d.score) for d in detections]
    return _per_class_ap(dets, [tuple(g) for g in gt], iou, iou_threshold)


def tube_overlap(tube_boxes, gt_boxes):
    """Mean per-frame IoU over the union of frames; missing frames count as 0."""
    frames = set(tube_boxes) | set(gt_boxes)
    if not frames:
        return 0.0
    total = sum(iou(tube_boxes[f], gt_boxes[f]) for f in frames
                if f in tube_boxes and f in gt_boxes)
    return total / len(frames)


def video_ap(tubes, gt_tubes, threshold=0.5):
    """Per-class video-AP; a tube is correct when its mean per-frame IoU exceeds ``threshold``.

    Tubes and ground-truth tubes carry ``video``, ``label`` and
    ``by_frame`` (frame -> box); tubes also carry ``score``.
    """
    dets = [(t.video, t.by_frame, t.label, t.score) for t in tubes]
    gts = [(g.video, g.by_frame, g.label) for g in gt_tubes]
    return _per_class_ap(dets, gts, tube_overlap, threshold)
