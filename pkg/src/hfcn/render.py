"""Heatmap and box-overlay images for quick inspection."""
import numpy as np

from . import ops

# Piecewise-linear false colour: black, blue, red, yellow, white.
_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
_COLOURS = np.array([[0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 1, 0], [1, 1, 1]], dtype=np.float64)


def grayscale(amap):
    """Map values clipped to [0, 1] as a 2-D intensity image."""
    return np.clip(np.asarray(amap, dtype=np.float64), 0, 1)


def false_colour(amap):
    a = grayscale(amap)
    return np.stack([np.interp(a, _STOPS, _COLOURS[:, c]) for c in range(3)], axis=-1)


def overlay_heatmap(frame, amap, alpha=0.5):
    """Blend a false-colour map (resized to the frame) over an RGB frame."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    heat = false_colour(ops.bilinear_resize(np.asarray(amap, dtype=np.float64), h, w))
    return (1 - alpha) * frame + alpha * heat


def draw_boxes(frame, boxes, colour=(0.0, 1.0, 0.0), thickness=1):
    """Copy of ``frame`` with half-open pixel boxes outlined; grayscale frames become RGB."""
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    img = img.copy()
    h, w = img.shape[:2]
    for box in boxes:
        x1, y1, x2, y2 = (int(round(c)) for c in box)
        x1, y1, x2, y2 = max(x1, 0), max(y1, 0), min(x2, w), min(y2, h)
        if x2 <= x1 or y2 <= y1:
            continue
        t = max(1, min(thickness, (x2 - x1 + 1) // 2, (y2 - y1 + 1) // 2))
        img[y1:y1 + t, x1:x2] = colour
        img[y2 - t:y2, x1:x2] = colour
        img[y1:y2, x1:x1 + t] = colour
        img[y1:y2, x2 - t:x2] = colour
    return img
