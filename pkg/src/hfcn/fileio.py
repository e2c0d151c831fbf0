"""On-disk formats: actionness maps, weights, images and line-oriented records.

Every file carries a format version plus the seed and configuration hash
that produced it.  Text records use ``repr`` for floats so values survive
a round trip exactly.

Record layouts (whitespace separated, ``#`` lines are headers)::

    annotations  video frame count [x1 y1 x2 y2 class]*count
    proposals    video frame rank x1 y1 x2 y2 score
    detections   video frame class x1 y1 x2 y2 score
    tubes        tube video class frame x1 y1 x2 y2 frame_score tube_score
    curve        x y
    metrics      key value
"""
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import Box

FORMAT_VERSION = 1
AMAP_MAGIC = b"AMAP"
_AMAP_HEADER = struct.Struct("<4sIiiQ16s")
WEIGHTS_FORMAT = "hfcn-weights"


class FormatError(ValueError):
    """A file is malformed; the message names the path and the offending field."""

    def __init__(self, path, field, detail):
        super().__init__(f"{path}: {field}: {detail}")
        self.path, self.field = str(path), field


@dataclass(frozen=True)
class Provenance:
    seed: int = 0
    config: str = "0" * 16

    def __post_init__(self):
        if len(self.config) != 16 or not self.config.isalnum():
            raise ValueError(f"config hash must be 16 alphanumeric characters, got {self.config!r}")


def _write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


# -- actionness maps -----------------------------------------------------------

def write_amap(path, amap, prov=Provenance()):
    amap = np.asarray(amap)
    if amap.ndim != 2:
        raise ValueError(f"actionness map must be 2-D, got shape {amap.shape}")
    h, w = amap.shape
    head = _AMAP_HEADER.pack(AMAP_MAGIC, FORMAT_VERSION, h, w, prov.seed, prov.config.encode())
    _write_bytes(path, head + amap.astype("<f4").tobytes())


def read_amap(path, with_provenance=False):
    raw = Path(path).read_bytes()
    if len(raw) < _AMAP_HEADER.size:
        raise FormatError(path, "header", "truncated")
    magic, version, h, w, seed, cfg = _AMAP_HEADER.unpack_from(raw)
    if magic != AMAP_MAGIC:
        raise FormatError(path, "magic", f"expected {AMAP_MAGIC!r}, got {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(path, "version", f"expected {FORMAT_VERSION}, got {version}")
    if h < 1 or w < 1:
        raise FormatError(path, "size", f"invalid {h}x{w}")
    if len(raw) != _AMAP_HEADER.size + 4 * h * w:
        raise FormatError(path, "payload", f"expected {4 * h * w} bytes for {h}x{w}, "
                                           f"got {len(raw) - _AMAP_HEADER.size}")
    data = np.frombuffer(raw, dtype="<f4", offset=_AMAP_HEADER.size).reshape(h, w).astype(np.float32)
    if with_provenance:
        return data, Provenance(seed, cfg.decode())
    return data


# -- images --------------------------------------------------------------------

def _to_bytes(img):
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


def write_pnm(path, img, prov=Provenance()):
    """8-bit PGM (2-D input) or PPM (``(H, W, 3)`` input) of values in [0, 1]."""
    img = np.asarray(img)
    if img.ndim == 2:
        kind = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        kind = b"P6"
    else:
        raise ValueError(f"cannot write shape {img.shape} as PGM/PPM")
    h, w = img.shape[:2]
    head = b"%s\n# hfcn v%d seed=%d config=%s\n%d %d\n255\n" % (
        kind, FORMAT_VERSION, prov.seed, prov.config.encode(), w, h)
    _write_bytes(path, head + _to_bytes(img).tobytes())


def read_pnm(path):
    """Inverse of :func:`write_pnm`; returns floats in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise FormatError(path, "header", "truncated")
        tokens.append(raw[pos:end])
        pos = end
    pos += 1
    kind, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if kind not in (b"P5", b"P6") or maxval != 255:
        raise FormatError(path, "magic", f"unsupported {kind!r} with maxval {maxval}")
    ch = 1 if kind == b"P5" else 3
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos)
    if data.size != h * w * ch:
        raise FormatError(path, "payload", f"expected {h * w * ch} bytes, got {data.size}")
    shape = (h, w) if ch == 1 else (h, w, 3)
    return (data.reshape(shape) / 255.0).astype(np.float32)


# -- weights -------------------------------------------------------------------

def write_weights(path, net, prov=Provenance()):
    params = net.parameters()
    header = {
        "format": WEIGHTS_FORMAT,
        "version": FORMAT_VERSION,
        "spec": net.spec.name,
        "spec_hash": net.spec.hash(),
        "seed": prov.seed,
        "config": prov.config,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    blob = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in params.values())
    _write_bytes(path, json.dumps(header, sort_keys=True).encode() + b"\n" + blob)


def read_weights(path, spec=None):
    """Returns ``(params, header)``; checks the spec hash when ``spec`` is given."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(path, "header", "missing header line")
    try:
        header = json.loads(raw[:nl])
    except ValueError as exc:
        raise FormatError(path, "header", f"invalid JSON ({exc})") from None
    if header.get("format") != WEIGHTS_FORMAT:
        raise FormatError(path, "format", f"expected {WEIGHTS_FORMAT!r}, got {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(path, "version", f"expected {FORMAT_VERSION}, got {header.get('version')!r}")
    if spec is not None and header.get("spec_hash") != spec.hash():
        raise FormatError(path, "spec_hash", f"file has {header.get('spec_hash')}, "
                                             f"spec {spec.name!r} has {spec.hash()}")
    payload = raw[nl + 1:]
    sizes = [int(np.prod(t["shape"])) for t in header["tensors"]]
    if len(payload) != 4 * sum(sizes):
        raise FormatError(path, "payload", f"expected {4 * sum(sizes)} bytes, got {len(payload)}")
    params, off = {}, 0
    for t, n in zip(header["tensors"], sizes):
        params[t["name"]] = np.frombuffer(payload, "<f4", n, off).reshape(t["shape"]).astype(np.float32)
        off += 4 * n
    return params, header


def load_network(path, spec):
    from .model import build_network
    params, _ = read_weights(path, spec)
    net = build_network(spec)
    expected = net.parameters()
    if set(params) != set(expected):
        raise FormatError(path, "tensors", f"names do not match spec {spec.name!r}")
    for k, v in params.items():
        if v.shape != expected[k].shape:
            raise FormatError(path, k, f"shape {v.shape} does not match {expected[k].shape}")
    net.set_parameters(params)
    return net


# -- text records --------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(int(x)) if isinstance(x, (int, np.integer)) else str(x)


def _box_value(x):
    x = float(x)
    return int(x) if x.is_integer() else x


def write_records(path, kind, columns, rows, prov=Provenance()):
    lines = [f"# hfcn-{kind} v{FORMAT_VERSION} seed={prov.seed} config={prov.config}",
             "# " + " ".join(columns)]
    for row in rows:
        for v in row:
            if isinstance(v, str) and (not v or any(c.isspace() for c in v)):
                raise ValueError(f"field {v!r} is empty or contains whitespace")
        lines.append(" ".join(_fmt(v) for v in row))
    _write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_records(path, kind):
    """Returns ``(rows of string fields, Provenance)``."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# hfcn-"):
        raise FormatError(path, "header", "missing hfcn header line")
    parts = lines[0][2:].split()
    if parts[0] != f"hfcn-{kind}":
        raise FormatError(path, "kind", f"expected hfcn-{kind}, got {parts[0]}")
    if parts[1] != f"v{FORMAT_VERSION}":
        raise FormatError(path, "version", f"expected v{FORMAT_VERSION}, got {parts[1]}")
    meta = dict(p.split("=", 1) for p in parts[2:])
    prov = Provenance(int(meta.get("seed", 0)), meta.get("config", "0" * 16))
    rows = [ln.split() for ln in lines[1:] if ln and not ln.startswith("#")]
    return rows, prov


def _parse(path, kind, fn):
    rows, prov = read_records(path, kind)
    out = []
    for n, row in enumerate(rows, start=3):
        try:
            out.append(fn(row))
        except (ValueError, IndexError, TypeError) as exc:
            raise FormatError(path, f"line {n}", f"malformed record ({exc})") from None
    return out, prov


def _num(s):
    v = float(s)
    return int(v) if v.is_integer() and "." not in s and "e" not in s.lower() else v


def write_annotations(path, records, prov=Provenance()):
    """``records``: ``(video, frame, [(Box, class), ...])`` per frame."""
    rows = []
    for video, frame, items in records:
        row = [video, frame, len(items)]
        for box, cls in items:
            row += [_box_value(c) for c in box] + [cls]
        rows.append(row)
    write_records(path, "annotations", ["video", "frame", "count", "[x1 y1 x2 y2 class]*"], rows, prov)


def read_annotations(path):
    def parse(r):
        n = int(r[2])
        if len(r) != 3 + 5 * n:
            raise ValueError(f"expected {n} boxes")
        items = [(Box(*(_num(v) for v in r[3 + 5 * i:7 + 5 * i])), int(r[7 + 5 * i])) for i in range(n)]
        return r[0], int(r[1]), items
    return _parse(path, "annotations", parse)


def write_proposals(path, records, prov=Provenance()):
    """``records``: ``(video, frame, [(Box, score), ...])``."""
    rows = [[v, f, rank] + [_box_value(c) for c in box] + [float(score)]
            for v, f, props in records for rank, (box, score) in enumerate(props)]
    write_records(path, "proposals", ["video", "frame", "rank", "x1", "y1", "x2", "y2", "score"], rows, prov)


def read_proposals(path):
    rows, prov = _parse(path, "proposals",
                        lambda r: (r[0], int(r[1]), int(r[2]), Box(*(_num(v) for v in r[3:7])), float(r[7])))
    grouped = {}
    for video, frame, _, box, score in rows:
        grouped.setdefault((video, frame), []).append((box, score))
    return [(v, f, p) for (v, f), p in grouped.items()], prov


def write_detections(path, dets, prov=Provenance()):
    rows = [[d.video or "-", d.frame, d.label] + [_box_value(c) for c in d.box] + [float(d.score)]
            for d in dets]
    write_records(path, "detections", ["video", "frame", "class", "x1", "y1", "x2", "y2", "score"], rows, prov)


def read_detections(path):
    from .detector import Detection
    return _parse(path, "detections", lambda r: Detection(
        int(r[1]), Box(*(_num(v) for v in r[3:7])), int(r[2]), float(r[7]), "" if r[0] == "-" else r[0]))


def write_tubes(path, tubes, prov=Provenance()):
    rows = []
    for i, t in enumerate(tubes):
        scores = t.frame_scores or [t.score] * len(t.boxes)
        for f, box, s in zip(t.frames, t.boxes, scores):
            rows.append([i, t.video or "-", t.label, f] + [_box_value(c) for c in box] + [float(s), float(t.score)])
    write_records(path, "tubes", ["tube", "video", "class", "frame", "x1", "y1", "x2", "y2",
                                  "frame_score", "tube_score"], rows, prov)


def read_tubes(path):
    from .detector import Tube
    rows, prov = _parse(path, "tubes", lambda r: r)
    parts = {}
    for r in rows:
        tid = int(r[0])
        p = parts.setdefault(tid, {"label": int(r[2]), "start": int(r[3]), "score": float(r[9]),
                                   "video": "" if r[1] == "-" else r[1], "boxes": [], "scores": []})
        if int(r[3]) != p["start"] + len(p["boxes"]):
            raise FormatError(path, f"tube {tid}", "frames are not contiguous")
        p["boxes"].append(Box(*(_num(v) for v in r[4:8])))
        p["scores"].append(float(r[8]))
    tubes = [Tube(p["label"], p["start"], p["boxes"], p["score"], p["video"], p["scores"])
             for _, p in sorted(parts.items())]
    return tubes, prov


def write_curve(path, points, prov=Provenance(), columns=("x", "y")):
    write_records(path, "curve", list(columns), [[float(x), float(y)] for x, y in points], prov)


def read_curve(path):
    return _parse(path, "curve", lambda r: (float(r[0]), float(r[1])))


def write_metrics(path, metrics, prov=Provenance()):
    rows = [[k, v if isinstance(v, (int, float, np.integer, np.floating)) else str(v)]
            for k, v in metrics.items()]
    write_records(path, "metrics", ["key", "value"], rows, prov)


def read_metrics(path):
    rows, prov = _parse(path, "metrics", lambda r: (r[0], _num(r[1])))
    return dict(rows), prov
