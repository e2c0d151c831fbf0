"""Dense tensor operations on ``(H, W, C)`` arrays.

Every function also accepts a leading batch axis ``(N, H, W, C)``; the
result keeps whatever layout it was given.  Dtype follows the input so the
same code serves float32 training and float64 gradient checks.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ConvKernel",
    "as_batch",
    "conv2d",
    "conv2d_with_cols",
    "conv_output_size",
    "pool_output_size",
    "im2col",
    "maxpool",
    "avgpool",
    "relu",
    "channel_softmax",
    "LossResult",
    "pixel_cross_entropy",
    "softmax_cross_entropy_grad",
    "bilinear_resize",
    "nearest_resize",
    "EPS",
]

EPS = 1e-7


@dataclass
class ConvKernel:
    """Weights ``(k, k, in, out)`` plus per-output bias."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1

    def __post_init__(self):
        w = self.weights
        if w.ndim != 4 or w.shape[0] != w.shape[1]:
            raise ValueError(f"kernel weights must be (k, k, in, out), got {w.shape}")
        if self.bias.shape != (w.shape[3],):
            raise ValueError(f"bias shape {self.bias.shape} does not match {w.shape[3]} outputs")
        if self.stride < 1:
            raise ValueError("stride must be positive")

    @property
    def size(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[2]

    @property
    def out_channels(self):
        return self.weights.shape[3]


def as_batch(x):
    """Return ``(x4, squeeze)`` where x4 has a batch axis."""
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (H, W, C) or (N, H, W, C) array, got shape {x.shape}")


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


def conv_output_size(dim, k, s, padding=0):
    return (dim + 2 * padding - k) // s + 1


def pool_output_size(dim, k, s):
    return (dim - k) // s + 1


def im2col(x, k, s, padding):
    """Unfold ``(N, H, W, C)`` into ``(N, Ho, Wo, k*k*C)`` patches ordered (ki, kj, c)."""
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    # (N, H', W', C, k, k) -> strided -> (N, Ho, Wo, k, k, C)
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    n, ho, wo = win.shape[:3]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n, ho, wo, -1)


def conv2d(x, kernel, padding=0):
    """Zero-padded strided convolution (cross-correlation) plus bias."""
    x4, squeeze = as_batch(x)
    y, _ = conv2d_with_cols(x4, kernel, padding)
    return _unbatch(y, squeeze)


def conv2d_with_cols(x4, kernel, padding=0):
    """Batched conv2d that also returns the unfolded patches for backprop."""
    k, s = kernel.size, kernel.stride
    if x4.shape[3] != kernel.in_channels:
        raise ValueError(
            f"channel mismatch: input has {x4.shape[3]}, kernel expects {kernel.in_channels}"
        )
    if padding < 0:
        raise ValueError("padding must be non-negative")
    ho = conv_output_size(x4.shape[1], k, s, padding)
    wo = conv_output_size(x4.shape[2], k, s, padding)
    if ho < 1 or wo < 1:
        raise ValueError(
            f"input {x4.shape[1]}x{x4.shape[2]} with padding {padding} is smaller than kernel {k}"
        )
    cols = im2col(x4, k, s, padding)
    wmat = kernel.weights.reshape(-1, kernel.out_channels).astype(x4.dtype, copy=False)
    y = cols @ wmat + kernel.bias.astype(x4.dtype, copy=False)
    return y, cols


def _pool_windows(x4, k, s):
    if k < 1 or s < 1:
        raise ValueError("pool window and stride must be positive")
    if x4.shape[1] < k or x4.shape[2] < k:
        raise ValueError(f"pool window {k} larger than input {x4.shape[1]}x{x4.shape[2]}")
    # (N, Ho, Wo, C, k, k)
    return sliding_window_view(x4, (k, k), axis=(1, 2))[:, ::s, ::s]


def maxpool(x, k, s):
    x4, squeeze = as_batch(x)
    return _unbatch(_pool_windows(x4, k, s).max(axis=(4, 5)), squeeze)


def avgpool(x, k, s):
    x4, squeeze = as_batch(x)
    return _unbatch(_pool_windows(x4, k, s).mean(axis=(4, 5)), squeeze)


def relu(x):
    return np.maximum(x, 0)


def channel_softmax(x):
    """Softmax over the last (channel) axis, max-subtracted."""
    x = np.asarray(x)
    if x.shape[-1] < 2:
        raise ValueError("channel_softmax needs at least 2 channels")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LossResult:
    loss: float
    gradient: np.ndarray


def _check_binary(target):
    target = np.asarray(target)
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("target map must be binary (0/1)")
    return target.astype(np.intp)


def pixel_cross_entropy(pred, target, eps=EPS):
    """Summed per-pixel cross-entropy of 2-channel probabilities.

    ``pred`` is ``(H, W, 2)`` (or batched) softmax output, ``target`` a 0/1
    map of matching spatial shape.  The returned gradient is taken with
    respect to the pre-softmax logits, i.e. ``softmax - onehot``.
    """
    pred = np.asarray(pred)
    if pred.shape[-1] != 2:
        raise ValueError(f"prediction must have 2 channels, got {pred.shape[-1]}")
    t = _check_binary(target)
    if t.shape != pred.shape[:-1]:
        raise ValueError(f"target shape {t.shape} != prediction shape {pred.shape[:-1]}")
    p = np.clip(pred, eps, 1.0)
    picked = np.take_along_axis(p, t[..., None], axis=-1)[..., 0]
    loss = float(-np.log(picked.astype(np.float64)).sum())
    return LossResult(loss, softmax_cross_entropy_grad(pred, t))


def softmax_cross_entropy_grad(prob, target):
    onehot = np.zeros_like(prob)
    np.put_along_axis(onehot, np.asarray(target, dtype=np.intp)[..., None], 1, axis=-1)
    return prob - onehot


def _resize_coords(n_in, n_out):
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.clip(np.floor(pos).astype(np.intp), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    return i0, i1, frac


def bilinear_resize(x, height, width):
    """Corner-aligned bilinear resize of a 2-D map or ``(H, W, C)`` tensor.

    Output sample ``i`` maps to input coordinate ``i * (H_in - 1) / (H_out - 1)``,
    so the four corners coincide.  Same-size calls return an exact copy.
    """
    if height < 1 or width < 1:
        raise ValueError("target size must be positive")
    x = np.asarray(x)
    h_in, w_in = x.shape[0], x.shape[1]
    if (h_in, w_in) == (height, width):
        return x.copy()
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    r0, r1, fr = _resize_coords(h_in, height)
    c0, c1, fc = _resize_coords(w_in, width)
    extra = (1,) * (x.ndim - 2)
    fr = fr.reshape((-1, 1) + extra).astype(dtype)
    fc = fc.reshape((1, -1) + extra).astype(dtype)
    # a + (b - a) * t keeps constant maps exactly constant
    top = x[r0][:, c0] + (x[r0][:, c1] - x[r0][:, c0]) * fc
    bot = x[r1][:, c0] + (x[r1][:, c1] - x[r1][:, c0]) * fc
    out = top + (bot - top) * fr
    return out.astype(dtype, copy=False)


def nearest_resize(x, height, width):
    """Nearest-neighbour resize using cell-centre sampling."""
    x = np.asarray(x)
    h_in, w_in = x.shape[0], x.shape[1]
    rows = np.minimum(((np.arange(height) + 0.5) * h_in / height).astype(np.intp), h_in - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w_in / width).astype(np.intp), w_in - 1)
    return x[rows][:, cols]
