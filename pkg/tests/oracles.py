"""Slow reference implementations written independently of the package code."""
import itertools
import math

import numpy as np


def conv2d_loops(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation of one (H, W, C) input."""
    h, wd, c = x.shape
    k, _, cin, cout = w.shape
    xp = np.zeros((h + 2 * pad, wd + 2 * pad, c), dtype=np.float64)
    xp[pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            for o in range(cout):
                acc = b[o]
                for di in range(k):
                    for dj in range(k):
                        for ci in range(cin):
                            acc += xp[i * stride + di, j * stride + dj, ci] * w[di, dj, ci, o]
                out[i, j, o] = acc
    return out


def maxpool_scan(x, k, s):
    h, w, c = x.shape
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    out = np.empty((ho, wo, c), dtype=x.dtype)
    for i in range(ho):
        for j in range(wo):
            for ch in range(c):
                best = -math.inf
                for di in range(k):
                    for dj in range(k):
                        best = max(best, x[i * s + di, j * s + dj, ch])
                out[i, j, ch] = best
    return out


def box_mean_naive(amap, x1, y1, x2, y2):
    """Mean over the inclusive cell range."""
    total, n = 0.0, 0
    for r in range(y1, y2 + 1):
        for c in range(x1, x2 + 1):
            total += amap[r, c]
            n += 1
    return total / n


def iou_pixels(a, b, size=64):
    """IoU by counting covered pixels on an integer grid."""
    ma = np.zeros((size, size), bool)
    mb = np.zeros((size, size), bool)
    ma[a[1]:a[3], a[0]:a[2]] = True
    mb[b[1]:b[3], b[0]:b[2]] = True
    union = (ma | mb).sum()
    return (ma & mb).sum() / union if union else 0.0


def _iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def greedy_oracle(boxes, scores, n, thr):
    """Plain-Python greedy suppression: sort all candidates once, then scan.

    Ties: larger area first, then (y1, x1, y2, x2) ascending.
    """
    def key(i):
        x1, y1, x2, y2 = boxes[i]
        return (-scores[i], -(x2 - x1) * (y2 - y1), y1, x1, y2, x2)

    picked = []
    for i in sorted(range(len(boxes)), key=key):
        if len(picked) == n:
            break
        if all(_iou(boxes[i], boxes[j]) <= thr for j in picked):
            picked.append(i)
    return picked


def best_path_oracle(scores, boxes, weight):
    """Exhaustive search; ties go to the reverse-lexicographically smallest path."""
    best, best_path = None, None
    for path in itertools.product(*[range(len(s)) for s in scores]):
        total = scores[0][path[0]]
        for t in range(1, len(path)):
            total = scores[t][path[t]] + (total + weight * _iou(boxes[t - 1][path[t - 1]], boxes[t][path[t]]))
        if best is None or total > best or (total == best and path[::-1] < best_path[::-1]):
            best, best_path = total, path
    return list(best_path), best


def bilinear_point(img, y, x):
    """Bilinear sample of a 2-D array at a real coordinate."""
    y0, x0 = int(math.floor(y)), int(math.floor(x))
    y1, x1 = min(y0 + 1, img.shape[0] - 1), min(x0 + 1, img.shape[1] - 1)
    fy, fx = y - y0, x - x0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def bilinear_oracle(img, h, w):
    """Corner-aligned resize by explicit per-pixel sampling."""
    hi, wi = img.shape[:2]
    out = np.zeros((h, w) + img.shape[2:])
    for i in range(h):
        for j in range(w):
            y = i * (hi - 1) / (h - 1) if h > 1 else 0.0
            x = j * (wi - 1) / (w - 1) if w > 1 else 0.0
            out[i, j] = bilinear_point(img, y, x)
    return out


def numeric_grad(f, x, step=1e-6):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (modified in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        fp = f()
        x[idx] = orig - step
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * step)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def ap_oracle(scores, labels):
    """Non-interpolated AP with tied scores sharing the precision at the end of their group."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    npos = sum(labels)
    total, tp = 0.0, 0
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        group_pos = sum(labels[order[m]] for m in range(i, j + 1))
        tp += group_pos
        total += group_pos * tp / (j + 1)
        i = j + 1
    return total / npos
