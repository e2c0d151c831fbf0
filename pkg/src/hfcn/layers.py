"""Differentiable layers with cached forward state.

Each layer works on batched ``(N, H, W, C)`` arrays.  ``forward`` stores
what ``backward`` needs; ``backward(dy)`` returns ``(dx, grads)`` where
``grads`` maps parameter names to arrays shaped like the parameters.
"""
import numpy as np

from . import ops


class BackwardError(RuntimeError):
    """Raised when backward is called before a matching forward."""


class Layer:
    kind = "layer"
    params = ()

    def __init__(self):
        self._cache = None

    def _take_cache(self):
        if self._cache is None:
            raise BackwardError(f"{self.kind}: backward called without a cached forward pass")
        cache, self._cache = self._cache, None
        return cache

    def output_shape(self, h, w, c):
        return h, w, c


class Conv(Layer):
    kind = "conv"
    params = ("weights", "bias")

    def __init__(self, weights, bias, stride=1, padding=0):
        super().__init__()
        self.kernel = ops.ConvKernel(weights, bias, stride)
        self.padding = padding

    @property
    def weights(self):
        return self.kernel.weights

    @weights.setter
    def weights(self, value):
        self.kernel.weights = value

    @property
    def bias(self):
        return self.kernel.bias

    @bias.setter
    def bias(self, value):
        self.kernel.bias = value

    def output_shape(self, h, w, c):
        k, s, p = self.kernel.size, self.kernel.stride, self.padding
        return (ops.conv_output_size(h, k, s, p), ops.conv_output_size(w, k, s, p),
                self.kernel.out_channels)

    def forward(self, x, cache=True):
        y, cols = ops.conv2d_with_cols(x, self.kernel, self.padding)
        if cache:
            self._cache = x.shape
            self._cols = cols
        return y

    def backward(self, dy, input_grad=True):
        in_shape = self._take_cache()
        cols, self._cols = self._cols, None
        k, s, p = self.kernel.size, self.kernel.stride, self.padding
        cin, cout = self.kernel.in_channels, self.kernel.out_channels
        n, ho, wo, _ = dy.shape
        dy2 = dy.reshape(-1, cout)
        dw = cols.reshape(-1, k * k * cin).T @ dy2
        db = dy2.sum(axis=0)
        grads = {"weights": dw.reshape(self.kernel.weights.shape), "bias": db}
        if not input_grad:
            return None, grads
        dcols = (dy2 @ self.kernel.weights.reshape(-1, cout).astype(dy.dtype).T)
        dcols = dcols.reshape(n, ho, wo, k, k, cin)
        hp, wp = in_shape[1] + 2 * p, in_shape[2] + 2 * p
        dxp = np.zeros((n, hp, wp, cin), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dcols[:, :, :, i, j, :]
        dx = dxp[:, p:hp - p, p:wp - p, :] if p else dxp
        return dx, grads


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, k, stride):
        super().__init__()
        self.k, self.stride = k, stride

    def output_shape(self, h, w, c):
        return (ops.pool_output_size(h, self.k, self.stride),
                ops.pool_output_size(w, self.k, self.stride), c)

    def forward(self, x, cache=True):
        ops._pool_windows(x, self.k, self.stride)  # validates geometry
        _, h, w, _ = x.shape
        k, s = self.k, self.stride
        ho, wo = ops.pool_output_size(h, k, s), ops.pool_output_size(w, k, s)
        y = None
        for i in range(k):
            for j in range(k):
                view = x[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
                y = view.copy() if y is None else np.maximum(y, view)
        if cache:
            self._cache = (x, y)
        return y

    def backward(self, dy, input_grad=True):
        x, y = self._take_cache()
        k, s = self.k, self.stride
        _, ho, wo, _ = dy.shape
        dx = np.zeros(x.shape, dtype=dy.dtype)
        taken = np.zeros(y.shape, dtype=bool)
        # first maximum in (ki, kj) scan order receives the whole gradient
        for i in range(k):
            for j in range(k):
                view = x[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
                hit = (view == y) & ~taken
                taken |= hit
                dx[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += np.where(hit, dy, 0)
        return dx, {}


class AvgPool(Layer):
    kind = "avgpool"

    def __init__(self, k, stride):
        super().__init__()
        self.k, self.stride = k, stride

    def output_shape(self, h, w, c):
        return (ops.pool_output_size(h, self.k, self.stride),
                ops.pool_output_size(w, self.k, self.stride), c)

    def forward(self, x, cache=True):
        y = ops.avgpool(x, self.k, self.stride)
        if cache:
            self._cache = x.shape
        return y

    def backward(self, dy, input_grad=True):
        in_shape = self._take_cache()
        k, s = self.k, self.stride
        _, ho, wo, _ = dy.shape
        dx = np.zeros(in_shape, dtype=dy.dtype)
        share = dy / (k * k)
        for i in range(k):
            for j in range(k):
                dx[:, i:i + s * ho:s, j:j + s * wo:s, :] += share
        return dx, {}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, cache=True):
        if cache:
            self._cache = x > 0
        return ops.relu(x)

    def backward(self, dy, input_grad=True):
        mask = self._take_cache()
        return dy * mask, {}


class SoftmaxHead(Layer):
    """Channel softmax; backward expects the loss gradient w.r.t. logits.

    Softmax and cross-entropy are differentiated jointly
    (``softmax - onehot``), so this layer passes the upstream gradient
    through unchanged.
    """

    kind = "softmax"

    def forward(self, x, cache=True):
        if cache:
            self._cache = True
        return ops.channel_softmax(x)

    def backward(self, dy, input_grad=True):
        self._take_cache()
        return dy, {}


def softmax_backward(prob, dprob):
    """Jacobian-vector product of channel softmax for an arbitrary upstream gradient."""
    dot = (prob * dprob).sum(axis=-1, keepdims=True)
    return prob * (dprob - dot)

