"""Synthetic datasets on disk.

Layout::

    <root>/annotations.txt          one record per frame
    <root>/<video>/frame_000.ppm    RGB frames
    <root>/<video>/flow_000.flo     flow from frame t to t + 1
"""
from pathlib import Path

import numpy as np

from . import fileio
from .flow import read_flow_file, write_flow_file
from .synth import SyntheticVideo


def write_dataset(root, videos, ids, prov=fileio.Provenance()):
    root = Path(root)
    records = []
    for vid, v in zip(ids, videos):
        d = root / vid
        d.mkdir(parents=True, exist_ok=True)
        for t, (frame, flow) in enumerate(zip(v.frames, v.flows)):
            fileio.write_pnm(d / f"frame_{t:03d}.ppm", frame, prov)
            write_flow_file(d / f"flow_{t:03d}.flo", flow)
            records.append((vid, t, list(zip(v.boxes[t], v.labels))))
    fileio.write_annotations(root / "annotations.txt", records, prov)


def read_dataset(root):
    """Returns ``(ids, videos)`` in annotation-file order."""
    root = Path(root)
    ann = root / "annotations.txt"
    if not ann.is_file():
        raise FileNotFoundError(f"annotation file not found: {ann}")
    records, _ = fileio.read_annotations(ann)
    by_video = {}
    for vid, t, items in records:
        by_video.setdefault(vid, {})[t] = items
    ids, videos = [], []
    for vid, frames in by_video.items():
        n = max(frames) + 1
        if sorted(frames) != list(range(n)):
            raise fileio.FormatError(ann, vid, "frame indices are not contiguous from 0")
        imgs, flows, boxes = [], [], []
        for t in range(n):
            path = root / vid / f"frame_{t:03d}.ppm"
            if not path.is_file():
                raise FileNotFoundError(f"frame not found: {path}")
            imgs.append(fileio.read_pnm(path))
            flows.append(read_flow_file(root / vid / f"flow_{t:03d}.flo"))
            boxes.append([b for b, _ in frames[t]])
        labels = [c for _, c in frames[0]]
        ids.append(vid)
        videos.append(SyntheticVideo(np.stack(imgs), flows, boxes, labels, labels[0] if labels else -1))
    return ids, videos
