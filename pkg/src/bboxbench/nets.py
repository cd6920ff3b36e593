"""Small differentiable classifiers with an analytic backward pass.

The model zoo keeps three architecture families (linear softmax, 2x128 ReLU
MLP, small conv net). Two disjoint architectures exist for every input
shape, so surrogate ensembles never have to overlap with the target.
"""

import numpy as np

from .layers import Affine, Conv2d, Flatten, MaxPool2, ReLU
from .tensor import make_rng, validate_image_batch


class InvalidLabelError(ValueError):
    """A class label is outside [0, n_classes)."""


def stable_softmax(logits):
    """Row-wise softmax with the max-logit shift (no overflow)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class DifferentiableNet:
    """An ordered stack of layers with cached-activation backprop.

    forward() returns logits; forward_with_caches() additionally returns the
    per-layer caches that backward() consumes. grad_input() gives the exact
    gradient of a per-example loss with respect to the input pixels.
    """

    def __init__(self, layers, n_classes, label, input_shape):
        self.layers = list(layers)
        self.n_classes = int(n_classes)
        self.label = str(label)
        self.input_shape = tuple(int(d) for d in input_shape)  # (c, h, w)
        self.meta = {}

    def _check_input(self, x):
        x = validate_image_batch(x)
        if x.shape[1:] != self.input_shape:
            raise ValueError(
                f"net {self.label!r} expects input {self.input_shape}, got {x.shape[1:]}"
            )
        return x

    def forward_with_caches(self, x):
        out = self._check_input(x)
        caches = []
        for layer in self.layers:
            out, cache = layer.forward(out)
            caches.append(cache)
        return out, caches

    def forward(self, x):
        logits, _ = self.forward_with_caches(x)
        return logits

    def predict(self, x):
        """Hard labels; argmax ties break toward the lower class index."""
        return self.forward(x).argmax(axis=1)

    def backward(self, dlogits, caches):
        """Propagate dlogits back to the input; returns (dx, per-layer grads)."""
        grad = dlogits
        all_grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            grad, all_grads[i] = self.layers[i].backward(grad, caches[i])
        return grad, all_grads

    def loss_and_input_grad(self, x, labels, loss="cross-entropy"):
        """Per-example loss values and the exact dloss/dx for each example."""
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= self.n_classes:
            raise InvalidLabelError(f"labels must lie in [0, {self.n_classes})")
        logits, caches = self.forward_with_caches(x)
        losses, dlogits = _loss_backward(logits, labels, loss)
        dx, _ = self.backward(dlogits, caches)
        return losses, dx

    def grad_input(self, x, labels, loss="cross-entropy"):
        """Gradient of the given per-example loss w.r.t. the input pixels.

        `labels` is the true class for untargeted objectives or the intended
        class for targeted ones; callers choose the ascent/descent sign.
        """
        _, dx = self.loss_and_input_grad(x, labels, loss=loss)
        return dx

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                out.append((i, name, value))
        return out


def _loss_backward(logits, labels, loss):
    n = logits.shape[0]
    rows = np.arange(n)
    probs = stable_softmax(logits)
    if loss == "cross-entropy":
        losses = -np.log(np.maximum(probs[rows, labels], 1e-300))
        dlogits = probs.copy()
        dlogits[rows, labels] -= 1.0
        return losses, dlogits
    if loss == "margin":
        # probability-space margin: p(label) - best competing probability
        masked = probs.copy()
        masked[rows, labels] = -np.inf
        best_other = masked.argmax(axis=1)
        losses = probs[rows, labels] - probs[rows, best_other]
        # d p_i / d logits = diag(p) - p p^T, applied to (e_label - e_other)
        sel = probs[rows, labels] - probs[rows, best_other]
        dlogits = -probs * sel[:, None]
        dlogits[rows, labels] += probs[rows, labels]
        dlogits[rows, best_other] -= probs[rows, best_other]
        return losses, dlogits
    raise ValueError(f"unknown loss {loss!r}")


def softmax_cross_entropy_grad_logits(logits, labels):
    """dCE/dlogits = softmax(logits) - onehot(labels), one row per example."""
    probs = stable_softmax(logits)
    grad = probs.copy()
    grad[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] -= 1.0
    return grad


def _init_affine(rng, d_in, d_out):
    bound = np.sqrt(6.0 / d_in)
    w = rng.gen.uniform(-bound, bound, size=(d_in, d_out))
    return Affine(w, np.zeros(d_out))


def _init_conv(rng, c_in, c_out, k):
    fan_in = c_in * k * k
    bound = np.sqrt(6.0 / fan_in)
    kernels = rng.gen.uniform(-bound, bound, size=(c_out, c_in, k, k))
    return Conv2d(kernels, np.zeros(c_out))


def make_net(arch, input_shape, n_classes, seed=0):
    """Build a zoo architecture ("linear", "mlp", "conv") with seeded init."""
    c, h, w = input_shape
    d = c * h * w
    rng = make_rng(seed, 0, f"init/{arch}")
    if arch == "linear":
        layers = [Flatten(), _init_affine(rng, d, n_classes)]
    elif arch == "mlp":
        layers = [
            Flatten(),
            _init_affine(rng, d, 128),
            ReLU(),
            _init_affine(rng, 128, 128),
            ReLU(),
            _init_affine(rng, 128, n_classes),
        ]
    elif arch == "conv":
        if h < 6 or w < 6:
            raise ValueError("conv architecture needs at least 6x6 inputs")
        layers = [
            _init_conv(rng, c, 8, 3),
            ReLU(),
            _init_conv(rng, 8, 16, 3),
            ReLU(),
            MaxPool2(),
            Flatten(),
        ]
        probe = np.zeros((1, c, h, w))
        for layer in layers:
            probe, _ = layer.forward(probe)
        layers.append(_init_affine(rng, probe.shape[1], n_classes))
    else:
        raise ValueError(f"unknown architecture {arch!r} (zoo: linear, mlp, conv)")
    return DifferentiableNet(layers, n_classes, arch, input_shape)


ZOO_ARCHS = ("linear", "mlp", "conv")
