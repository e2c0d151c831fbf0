"""Optical-flow handling for the motion stream.

Flow is stored like an image: each component is mapped linearly to an
integer in [0, 255] with zero displacement at 128 and +/-``bound`` pixels
at the ends, then two consecutive fields are stacked into a 4-channel
input.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FLO_MAGIC = 202021.25
DEFAULT_BOUND = 20.0


class FlowFormatError(ValueError):
    pass


def _as_float(a):
    a = np.asarray(a)
    return a if a.dtype in (np.float32, np.float64) else a.astype(np.float32)


@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = _as_float(self.u)
        self.v = _as_float(self.v)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError(f"u and v must be equal 2-D arrays, got {self.u.shape} and {self.v.shape}")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("flow contains non-finite values")

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width), np.float32), np.zeros((height, width), np.float32))


@dataclass
class QuantizedFlow:
    u: np.ndarray
    v: np.ndarray
    bound: float = DEFAULT_BOUND

    @property
    def shape(self):
        return self.u.shape


def _quantize(x, bound):
    return np.clip(np.round(x / bound * 128.0 + 128.0), 0, 255).astype(np.uint8)


def quantize_flow(flow, bound=DEFAULT_BOUND):
    """``q = clamp(round(x / bound * 128 + 128), 0, 255)`` per component.

    Rounding is numpy's half-to-even.
    """
    if bound <= 0:
        raise ValueError("bound must be positive")
    return QuantizedFlow(_quantize(flow.u, bound), _quantize(flow.v, bound), float(bound))


def dequantize_flow(q):
    scale = q.bound / 128.0
    return FlowField((q.u.astype(np.float32) - 128) * scale, (q.v.astype(np.float32) - 128) * scale)


def stack_flow_pair(flow_t, flow_t1):
    """4-channel motion input ``(u_t, v_t, u_t+1, v_t+1) / 255``."""
    if flow_t.shape != flow_t1.shape:
        raise ValueError(f"flow sizes differ: {flow_t.shape} vs {flow_t1.shape}")
    stack = np.stack([flow_t.u, flow_t.v, flow_t1.u, flow_t1.v], axis=-1)
    return stack.astype(np.float32) / 255.0


def motion_input(flows, t, bound=DEFAULT_BOUND):
    """Motion-stream tensor for frame ``t`` of a flow sequence.

    The last frame has no successor field and reuses its own.
    """
    nxt = min(t + 1, len(flows) - 1)
    return stack_flow_pair(quantize_flow(flows[t], bound), quantize_flow(flows[nxt], bound))


# -- Horn-Schunck ---------------------------------------------------------

def _gray(frame):
    a = np.asarray(frame, dtype=np.float64)
    if a.ndim == 3:
        a = a.mean(axis=-1) if a.shape[-1] > 1 else a[..., 0]
    return a


def _derivatives(a, b):
    avg = (a + b) / 2
    iy, ix = np.gradient(avg)
    return ix, iy, b - a


def _neighbour_sum(f):
    s = np.zeros_like(f)
    s[1:] += f[:-1]
    s[:-1] += f[1:]
    s[:, 1:] += f[:, :-1]
    s[:, :-1] += f[:, 1:]
    return s


def _neighbour_count(shape):
    return _neighbour_sum(np.ones(shape))


def flow_energy(frame_a, frame_b, flow, smoothness):
    """Brightness-constancy residual plus ``smoothness`` times squared 4-neighbour differences."""
    a, b = _gray(frame_a), _gray(frame_b)
    ix, iy, it = _derivatives(a, b)
    u, v = flow.u.astype(np.float64), flow.v.astype(np.float64)
    data = ((ix * u + iy * v + it) ** 2).sum()
    smooth = 0.0
    for f in (u, v):
        smooth += (np.diff(f, axis=0) ** 2).sum() + (np.diff(f, axis=1) ** 2).sum()
    return float(data + smoothness * smooth)


def estimate_flow_simple(frame_a, frame_b, iterations=200, smoothness=0.1):
    """Horn-Schunck flow by red-black Gauss-Seidel sweeps.

    Each half-sweep minimises the energy exactly over one colour class
    with the other held fixed, so the energy never increases with more
    iterations.
    """
    a, b = _gray(frame_a), _gray(frame_b)
    if a.shape != b.shape:
        raise ValueError(f"frame sizes differ: {a.shape} vs {b.shape}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if smoothness < 0:
        raise ValueError("smoothness must be non-negative")
    ix, iy, it = _derivatives(a, b)
    h, w = a.shape
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    count = _neighbour_count((h, w))
    reg = smoothness * count
    denom = reg + ix ** 2 + iy ** 2
    denom = np.where(denom > 0, denom, 1.0)
    yy, xx = np.mgrid[0:h, 0:w]
    colours = [(yy + xx) % 2 == 0, (yy + xx) % 2 == 1]
    for _ in range(iterations):
        for mask in colours:
            ubar = _neighbour_sum(u) / count
            vbar = _neighbour_sum(v) / count
            resid = ix * ubar + iy * vbar + it
            u = np.where(mask, ubar - ix * resid / denom, u)
            v = np.where(mask, vbar - iy * resid / denom, v)
    return FlowField(u, v)


# -- .flo files -----------------------------------------------------------

def write_flow_file(path, flow):
    h, w = flow.shape
    data = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(data.tobytes())


def read_flow_file(path):
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: truncated header")
    magic, w, h = struct.unpack("<fii", raw[:12])
    if magic != FLO_MAGIC:
        raise FlowFormatError(f"{path}: bad magic number {magic!r}")
    if w < 1 or h < 1:
        raise FlowFormatError(f"{path}: invalid dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(raw) != expected:
        raise FlowFormatError(
            f"{path}: header declares {w}x{h} ({expected} bytes) but file has {len(raw)} bytes"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    return FlowField(data[..., 0].copy(), data[..., 1].copy())
