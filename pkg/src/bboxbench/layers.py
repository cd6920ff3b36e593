"""Neural-net layers with hand-written forward and backward passes.

Each layer implements forward(x) -> (out, cache) and backward(dout, cache)
-> (dx, grads). `grads` maps parameter names to arrays shaped like the
parameters, so the trainer can apply SGD without any framework. All math is
float64 and deterministic (max-pool ties go to the first window position).
"""

import numpy as np


class Affine:
    def __init__(self, weight, bias):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("Affine needs weight (d_in, d_out) and bias (d_out,)")

    tag = "affine"

    @property
    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def set_params(self, params):
        self.weight = np.asarray(params["weight"], dtype=np.float64)
        self.bias = np.asarray(params["bias"], dtype=np.float64)

    def config(self):
        return {}

    def forward(self, x):
        return x @ self.weight + self.bias, x

    def backward(self, dout, cache):
        x = cache
        dx = dout @ self.weight.T
        grads = {"weight": x.T @ dout, "bias": dout.sum(axis=0)}
        return dx, grads


class Conv2d:
    """Valid 2-D convolution (no padding), kernels shaped (c_out, c_in, kh, kw)."""

    def __init__(self, kernels, bias, stride=1):
        self.kernels = np.asarray(kernels, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.stride = int(stride)
        if self.kernels.ndim != 4:
            raise ValueError("Conv2d kernels must be (c_out, c_in, kh, kw)")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ValueError("Conv2d bias must be (c_out,)")

    tag = "conv2d"

    @property
    def params(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def set_params(self, params):
        self.kernels = np.asarray(params["kernels"], dtype=np.float64)
        self.bias = np.asarray(params["bias"], dtype=np.float64)

    def config(self):
        return {"stride": self.stride}

    def _out_hw(self, h, w):
        kh, kw = self.kernels.shape[2:]
        return (h - kh) // self.stride + 1, (w - kw) // self.stride + 1

    def forward(self, x):
        n, c_in, h, w = x.shape
        c_out, c_in_k, kh, kw = self.kernels.shape
        if c_in != c_in_k:
            raise ValueError(f"expected {c_in_k} input channels, got {c_in}")
        oh, ow = self._out_hw(h, w)
        s = self.stride
        # im2col via strided windows: (n, c_in, oh, ow, kh, kw)
        windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
        windows = windows[:, :, ::s, ::s, :, :]
        out = np.tensordot(windows, self.kernels, axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2) + self.bias[None, :, None, None]
        return out, (x, windows)

    def backward(self, dout, cache):
        x, windows = cache
        n, c_in, h, w = x.shape
        c_out, _, kh, kw = self.kernels.shape
        s = self.stride
        oh, ow = dout.shape[2:]
        # dout: (n, c_out, oh, ow); windows: (n, c_in, oh, ow, kh, kw)
        dk = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
        db = dout.sum(axis=(0, 2, 3))
        dx = np.zeros_like(x)
        # scatter each kernel offset's contribution back onto the input
        contrib = np.tensordot(dout, self.kernels, axes=([1], [0]))  # (n, oh, ow, c_in, kh, kw)
        contrib = contrib.transpose(0, 3, 4, 5, 1, 2)  # (n, c_in, kh, kw, oh, ow)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i : i + s * oh : s, j : j + s * ow : s] += contrib[:, :, i, j]
        return dx, {"kernels": dk, "bias": db}


class ReLU:
    tag = "relu"
    params = {}

    def set_params(self, params):
        pass

    def config(self):
        return {}

    def forward(self, x):
        return np.maximum(x, 0.0), x > 0.0

    def backward(self, dout, cache):
        return dout * cache, {}


class MaxPool2:
    """2x2 max pooling with stride 2; trailing odd rows/columns are dropped."""

    tag = "maxpool2"
    params = {}

    def set_params(self, params):
        pass

    def config(self):
        return {}

    def forward(self, x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        trimmed = x[:, :, : 2 * h2, : 2 * w2]
        blocks = trimmed.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = blocks.reshape(n, c, h2, w2, 4)
        idx = flat.argmax(axis=-1)  # ties resolve to the first position
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    def backward(self, dout, cache):
        (n, c, h, w), idx = cache
        h2, w2 = h // 2, w // 2
        flat = np.zeros((n, c, h2, w2, 4), dtype=np.float64)
        np.put_along_axis(flat, idx[..., None], dout[..., None], axis=-1)
        blocks = flat.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros((n, c, h, w), dtype=np.float64)
        dx[:, :, : 2 * h2, : 2 * w2] = blocks.reshape(n, c, 2 * h2, 2 * w2)
        return dx, {}


class Flatten:
    tag = "flatten"
    params = {}

    def set_params(self, params):
        pass

    def config(self):
        return {}

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache), {}


LAYER_TYPES = {cls.tag: cls for cls in (Affine, Conv2d, ReLU, MaxPool2, Flatten)}
