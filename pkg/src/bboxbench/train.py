"""Seed-deterministic training for the model zoo: SGD and PGD-adversarial.

Adversarial training is a desk-scale stand-in for externally trained robust
targets: each minibatch is replaced by PGD examples crafted with the net's
own analytic input gradients before the weight update.
"""

from dataclasses import dataclass, field

import numpy as np

from .nets import DifferentiableNet, softmax_cross_entropy_grad_logits, stable_softmax
from .tensor import make_rng, project_linf


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class AdversarialSpec:
    pgd_steps: int = 7
    pgd_epsilon: float = 16 / 255
    pgd_step_size: float | None = None  # defaults to epsilon / 4

    def __post_init__(self):
        if not 0.0 <= self.pgd_epsilon <= 1.0:
            raise ValueError("pgd_epsilon must lie in [0, 1]")
        if self.pgd_step_size is None:
            self.pgd_step_size = self.pgd_epsilon / 4.0


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.03
    optimizer: str = "sgd-momentum"  # "sgd" or "sgd-momentum"
    momentum: float = 0.9
    adversarial: AdversarialSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "sgd-momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def pgd_examples(net, x, labels, epsilon, steps, step_size, rng):
    """Untargeted PGD within the epsilon ball, random start, CE ascent."""
    start = x + rng.gen.uniform(-epsilon, epsilon, size=x.shape)
    adv = project_linf(start, x, epsilon)
    for _ in range(steps):
        grad = net.grad_input(adv, labels)
        adv = project_linf(adv + step_size * np.sign(grad), x, epsilon)
    return adv


def train(images, labels, net: DifferentiableNet, config: TrainConfig):
    """Train `net` in place and return it; epochs=0 leaves the init untouched.

    Records final train accuracy/loss in net.meta. Raises
    TrainingDivergedError on non-finite loss.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("dataset is empty")
    if labels.max() >= net.n_classes or labels.min() < 0:
        raise ValueError("labels must lie in [0, n_classes)")

    rng = make_rng(config.seed, 0, "train")
    velocity = {}
    n = len(images)
    for epoch in range(config.epochs):
        order = rng.gen.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = images[idx], labels[idx]
            if config.adversarial is not None:
                spec = config.adversarial
                xb = pgd_examples(
                    net, xb, yb, spec.pgd_epsilon, spec.pgd_steps, spec.pgd_step_size,
                    rng.split(f"pgd/{epoch}/{start}"),
                )
            logits, caches = net.forward_with_caches(xb)
            probs = stable_softmax(logits)
            batch_loss = -np.log(np.maximum(probs[np.arange(len(yb)), yb], 1e-300)).mean()
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {start}"
                )
            dlogits = softmax_cross_entropy_grad_logits(logits, yb) / len(yb)
            _, layer_grads = net.backward(dlogits, caches)
            for li, layer in enumerate(net.layers):
                for name in layer.params:
                    g = layer_grads[li][name]
                    if config.optimizer == "sgd-momentum":
                        key = (li, name)
                        v = velocity.get(key)
                        v = g if v is None else config.momentum * v + g
                        velocity[key] = v
                        g = v
                    layer.params[name] -= config.learning_rate * g

    preds = net.predict(images)
    net.meta["train_accuracy"] = float((preds == labels).mean())
    net.meta["train_config"] = {
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "optimizer": config.optimizer,
        "seed": config.seed,
        "adversarial": None
        if config.adversarial is None
        else {
            "pgd_steps": config.adversarial.pgd_steps,
            "pgd_epsilon": config.adversarial.pgd_epsilon,
            "pgd_step_size": config.adversarial.pgd_step_size,
        },
    }
    return net


def accuracy(net, images, labels):
    return float((net.predict(images) == np.asarray(labels)).mean())


def robust_accuracy(net, images, labels, epsilon, steps=7, step_size=None, seed=0):
    """Accuracy under the module's own untargeted PGD at the given epsilon."""
    if step_size is None:
        step_size = epsilon / 4.0
    adv = pgd_examples(
        net, np.asarray(images, dtype=np.float64), np.asarray(labels, dtype=np.int64),
        epsilon, steps, step_size, make_rng(seed, 0, "robust-eval"),
    )
    return accuracy(net, adv, labels)
