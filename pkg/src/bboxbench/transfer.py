"""Non-interactive transfer attacks: the iterative FGSM family.

Variants compose an input-augmentation rule (identity, random shifts,
resize-and-pad diversity, admix) with a gradient-stabilization rule
(momentum, Nesterov lookahead, variance tuning, sampled-point averaging).
All variants share one projected signed-step loop against a surrogate
ensemble; every emitted candidate satisfies the l-infinity budget and the
pixel range by construction.

Gradients flow through augmentations exactly: each transformed copy comes
with its adjoint, so averaged gradients are true input gradients.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .nets import DifferentiableNet
from .tensor import (
    PerturbationBudget,
    l1_normalize_per_example,
    make_rng,
    project_linf,
    validate_image_batch,
)

VARIANTS = ("i", "mi", "ni", "vmi", "vni", "emi", "smi", "smimi", "midi", "admix", "ods-aug")
_MOMENTUM_VARIANTS = {"mi", "ni", "vmi", "vni", "emi", "smimi", "midi"}
_LOOKAHEAD_VARIANTS = {"ni", "vni"}
_VARIANCE_VARIANTS = {"vmi", "vni"}


class NonFiniteLossError(RuntimeError):
    """The local objective became non-finite during the attack."""


@dataclass
class TransferConfig:
    epsilon: float = 16 / 255
    goal: str = "untargeted"  # "untargeted" or "targeted"
    iterations: int | None = None  # defaults: 10 untargeted, 40 targeted
    step_size: float | None = None  # defaults to epsilon / iterations
    variant: str = "i"
    mu: float = 1.0  # momentum decay
    vmi_samples: int = 20  # neighborhood draws for the variance term
    vmi_beta: float = 1.5  # neighborhood radius in units of epsilon
    emi_samples: int = 11  # points sampled along the previous direction
    emi_eta_factor: float = 7.0  # sampling span eta = factor * alpha
    smi_shifts: int = 8  # random shifted copies (plus identity)
    smi_shift_frac: float = 0.1  # max shift as a fraction of height
    di_prob: float = 0.5  # probability of applying the resize-pad transform
    di_max_scale: float = 1.1  # resize span; shrink down to h/di_max_scale
    admix_scales: int = 5  # dyadic scales 2^-i
    admix_mixes: int = 3  # admixed partners per example
    admix_eta: float = 0.2  # admix blend weight
    seed: int = 0

    def __post_init__(self):
        if self.goal not in ("untargeted", "targeted"):
            raise ValueError(f"goal must be untargeted or targeted, got {self.goal!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.iterations is None:
            self.iterations = 40 if self.goal == "targeted" else 10
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.step_size is None:
            self.step_size = self.epsilon / max(self.iterations, 1)
        if self.step_size <= 0 and self.iterations > 0:
            raise ValueError("step size must be positive")

    @property
    def budget(self):
        return PerturbationBudget(self.epsilon)


@dataclass
class TransferTraceRow:
    iteration: int
    elapsed_s: float
    local_loss: float
    local_asr: float


@dataclass
class TransferRun:
    candidates: list = field(default_factory=list)  # one (n,c,h,w) batch per iteration
    trace: list = field(default_factory=list)

    @property
    def final(self):
        return self.candidates[-1] if self.candidates else None


def ensemble_eval(surrogates, x, labels, goal="untargeted", targets=None):
    """Forward-only local metrics: per-model per-example loss and success."""
    labels = np.asarray(labels, dtype=np.int64)
    attack_labels = _attack_labels(labels, goal, targets)
    losses = np.empty((len(surrogates), len(labels)))
    success = np.empty((len(surrogates), len(labels)), dtype=bool)
    for m, net in enumerate(surrogates):
        model_losses, _ = _ce_forward(net, x, attack_labels)
        losses[m] = model_losses
        preds = net.predict(x)
        success[m] = preds == targets if goal == "targeted" else preds != labels
    return losses, success


def ensemble_gradient(surrogates, x, labels, goal="untargeted", targets=None):
    """Gradient of the mean per-model CE loss, plus local losses and success.

    The gradient is per example (each example's own loss); success means
    misclassified for untargeted goals and hitting the target class for
    targeted ones.
    """
    if len(surrogates) == 0:
        raise ValueError("need at least one surrogate")
    x = validate_image_batch(x)
    labels = np.asarray(labels, dtype=np.int64)
    attack_labels = _attack_labels(labels, goal, targets)
    grad = np.zeros_like(x)
    losses = np.empty((len(surrogates), len(labels)))
    success = np.empty((len(surrogates), len(labels)), dtype=bool)
    for m, net in enumerate(surrogates):
        model_losses, model_grad = net.loss_and_input_grad(x, attack_labels)
        grad += model_grad
        losses[m] = model_losses
        preds = net.predict(x)
        success[m] = preds == targets if goal == "targeted" else preds != labels
    grad /= len(surrogates)
    return grad, losses, success


def _attack_labels(labels, goal, targets):
    if goal == "targeted":
        if targets is None:
            raise ValueError("targeted attacks need target labels")
        return np.asarray(targets, dtype=np.int64)
    return labels


def _ce_forward(net: DifferentiableNet, x, labels):
    logits = net.forward(x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    losses = -logp[np.arange(len(labels)), labels]
    return losses, logits


def _ensemble_grad_at(surrogates, x, attack_labels):
    grad = np.zeros_like(x)
    for net in surrogates:
        grad += net.grad_input(x, attack_labels)
    return grad / len(surrogates)


# --- input augmentation -----------------------------------------------------


def _gather_hw(img, iy, ix):
    return img[:, iy[:, None], ix[None, :]]


def _scatter_hw(grad_out, iy, ix, h, w):
    c = grad_out.shape[0]
    out = np.zeros((c, h, w))
    cidx = np.arange(c)[:, None, None]
    np.add.at(out, (cidx, iy[None, :, None], ix[None, None, :]), grad_out)
    return out


def _resize_map(size_out, size_in):
    return np.minimum((np.arange(size_out) * size_in) // size_out, size_in - 1)


def di_transform(x, rngs, prob, max_scale):
    """Resize each example down (nearest neighbor) and zero-pad back randomly.

    Returns (transformed batch, pullback) where the pullback is the exact
    adjoint of the per-example index maps. prob=0 is the identity.
    """
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.empty_like(x)
    plans = []
    for e in range(n):
        gen = rngs[e].gen
        apply = gen.random() < prob
        if not apply:
            out[e] = x[e]
            plans.append(None)
            continue
        low = max(1, int(h / max_scale))
        rh = int(gen.integers(low, h + 1))
        rw = int(gen.integers(max(1, int(w / max_scale)), w + 1))
        iy, ix = _resize_map(rh, h), _resize_map(rw, w)
        top = int(gen.integers(0, h - rh + 1))
        left = int(gen.integers(0, w - rw + 1))
        resized = _gather_hw(x[e], iy, ix)
        canvas = np.zeros((c, h, w))
        canvas[:, top : top + rh, left : left + rw] = resized
        out[e] = canvas
        plans.append((iy, ix, top, left, rh, rw))

    def pullback(grad):
        gin = np.zeros_like(grad)
        for e, plan in enumerate(plans):
            if plan is None:
                gin[e] = grad[e]
            else:
                iy, ix, top, left, rh, rw = plan
                window = grad[e][:, top : top + rh, left : left + rw]
                gin[e] = _scatter_hw(window, iy, ix, h, w)
        return gin

    return out, pullback


def shift_transform(x, rngs, max_shift):
    """Random integer shift per example with edge padding; exact adjoint."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.empty_like(x)
    maps = []
    for e in range(n):
        gen = rngs[e].gen
        dy = int(gen.integers(-max_shift, max_shift + 1))
        dx = int(gen.integers(-max_shift, max_shift + 1))
        iy = np.clip(np.arange(h) - dy, 0, h - 1)
        ix = np.clip(np.arange(w) - dx, 0, w - 1)
        out[e] = _gather_hw(x[e], iy, ix)
        maps.append((iy, ix))

    def pullback(grad):
        gin = np.zeros_like(grad)
        for e, (iy, ix) in enumerate(maps):
            gin[e] = _scatter_hw(grad[e], iy, ix, h, w)
        return gin

    return out, pullback


def _admix_partners(labels, rngs, n_mixes):
    """Per-example partner indices drawn from other-label seeds in the batch.

    Falls back to any other example when the batch has a single label, and
    to no mixing (index -1) for a single-example batch.
    """
    labels = np.asarray(labels)
    n = len(labels)
    partners = np.full((n, n_mixes), -1, dtype=np.int64)
    for e in range(n):
        pool = np.flatnonzero(labels != labels[e])
        if len(pool) == 0:
            pool = np.array([j for j in range(n) if j != e], dtype=np.int64)
        if len(pool) == 0:
            continue
        gen = rngs[e].gen
        partners[e] = pool[gen.integers(0, len(pool), size=n_mixes)]
    return partners


def augment(variant, x, rngs, config: TransferConfig, labels=None):
    """Transformed copies for gradient evaluation, each with its adjoint.

    Returns a list of (batch, pullback) pairs; gradients of the attacked
    loss at each copy, mapped through the pullbacks and averaged, give the
    variant's raw gradient. The identity copy is always included for the
    identity-augmentation variants (i/mi/ni and the variance family).
    """
    identity = (x, lambda g: g)
    if variant in ("i", "mi", "ni", "vmi", "vni", "emi"):
        return [identity]
    if variant in ("smi", "smimi"):
        h = x.shape[2]
        max_shift = int(np.ceil(config.smi_shift_frac * h))
        copies = [identity]
        for _ in range(config.smi_shifts):
            copies.append(shift_transform(x, rngs, max_shift))
        return copies
    if variant == "midi":
        return [di_transform(x, rngs, config.di_prob, config.di_max_scale)]
    if variant == "admix":
        partners = _admix_partners(labels, rngs, config.admix_mixes)
        copies = []
        for j in range(config.admix_mixes):
            idx = partners[:, j]
            raw_mix = x.copy()
            usable = idx >= 0
            if config.admix_eta != 0.0:
                raw_mix[usable] = x[usable] + config.admix_eta * x[idx[usable]]
            mixed = np.clip(raw_mix, 0.0, 1.0)
            mask = (raw_mix >= 0.0) & (raw_mix <= 1.0)  # clip adjoint
            for i in range(config.admix_scales):
                scale = 2.0 ** (-i)
                copies.append((scale * mixed, _scaled_pullback(scale, mask)))
        return copies
    raise ValueError(f"variant {variant!r} has no augmentation rule")


def _scaled_pullback(scale, mask=None):
    if mask is None:
        return lambda g: scale * g
    return lambda g: scale * g * mask


# --- gradient stabilization --------------------------------------------------


@dataclass
class TransferState:
    """Cross-iteration attack state: momentum g, variance v, iteration t."""

    g: np.ndarray
    v: np.ndarray
    prev_dir: np.ndarray  # previous enhanced gradient (EMI sampling direction)
    t: int = 0


def stabilize(variant, raw_gradient, state: TransferState, mu):
    """One step of the variant's direction recurrence; advances the state."""
    if variant in ("i", "smi", "admix"):
        direction = raw_gradient
    elif variant in _MOMENTUM_VARIANTS:
        extra = state.v if variant in _VARIANCE_VARIANTS else 0.0
        state.g = mu * state.g + l1_normalize_per_example(raw_gradient + extra)
        direction = state.g
    else:
        raise ValueError(f"variant {variant!r} has no stabilization rule")
    state.t += 1
    return direction, state


# --- the attack loop ---------------------------------------------------------


def step(x, direction, seeds, config: TransferConfig):
    """x + s*alpha*sign(direction), projected; s flips for targeted goals."""
    s = -1.0 if config.goal == "targeted" else 1.0
    return project_linf(x + s * config.step_size * np.sign(direction), seeds, config.budget)


def iter_transfer_attack(config, surrogates, seeds, labels, targets=None, example_indices=None):
    """Yield (iteration, candidates, local_loss, local_asr) per iteration.

    Deterministic for a fixed config seed: every random draw comes from a
    per-example counter-based stream keyed by the example's index
    (`example_indices` lets a caller process slices of a larger seed set
    without changing any example's stream).
    """
    if config.variant == "ods-aug":
        raise ValueError(
            "ods-aug is a warm-start direction sampler, not a transfer attack; "
            "use ods_direction()"
        )
    seeds = validate_image_batch(seeds)
    labels = np.asarray(labels, dtype=np.int64)
    attack_labels = _attack_labels(labels, config.goal, targets)
    n = seeds.shape[0]
    if example_indices is None:
        example_indices = range(n)
    s = -1.0 if config.goal == "targeted" else 1.0
    eps = config.epsilon
    alpha = config.step_size

    # augmentation streams are keyed by purpose, not variant, so reduced
    # variants (smimi vs smi, midi vs mi) replay identical draws
    aug_rngs = [make_rng(config.seed, e, "transfer/aug") for e in example_indices]
    var_rngs = [make_rng(config.seed, e, "transfer/var") for e in example_indices]
    emi_rngs = [make_rng(config.seed, e, "transfer/emi") for e in example_indices]

    x = seeds.copy()
    state = TransferState(
        g=np.zeros_like(seeds), v=np.zeros_like(seeds), prev_dir=np.zeros_like(seeds)
    )

    for t in range(config.iterations):
        x_eval = x + s * alpha * config.mu * state.g if config.variant in _LOOKAHEAD_VARIANTS else x

        if config.variant == "emi":
            eta = config.emi_eta_factor * alpha
            raw = np.zeros_like(x)
            for _ in range(config.emi_samples):
                coeff = np.array([r.gen.uniform(-eta, eta) for r in emi_rngs])
                point = x_eval + coeff[:, None, None, None] * state.prev_dir
                raw += _ensemble_grad_at(surrogates, point, attack_labels)
            raw /= config.emi_samples
        else:
            copies = augment(config.variant, x_eval, aug_rngs, config, labels=labels)
            raw = np.zeros_like(x)
            for batch, pullback in copies:
                raw += pullback(_ensemble_grad_at(surrogates, batch, attack_labels))
            raw /= len(copies)

        if config.variant in _VARIANCE_VARIANTS and config.vmi_samples > 0:
            radius = config.vmi_beta * eps
            v_next = np.zeros_like(x)
            for _ in range(config.vmi_samples):
                offsets = np.stack(
                    [r.gen.uniform(-radius, radius, size=seeds.shape[1:]) for r in var_rngs]
                )
                v_next += _ensemble_grad_at(surrogates, x + offsets, attack_labels)
            v_next = v_next / config.vmi_samples - raw
        else:
            v_next = np.zeros_like(x)

        direction, state = stabilize(config.variant, raw, state, config.mu)
        state.v = v_next
        state.prev_dir = l1_normalize_per_example(raw)

        x = step(x, direction, seeds, config)

        losses, success = ensemble_eval(surrogates, x, labels, config.goal, targets)
        local_loss = float(losses.mean())
        if not np.isfinite(local_loss):
            raise NonFiniteLossError(f"non-finite local loss at iteration {t}")
        yield t, x.copy(), local_loss, float(success.mean())


def run_transfer_attack(
    config, surrogates, seeds, labels, targets=None, wallclock_s=None, clock=time.monotonic
):
    """Run the configured variant; returns per-iteration candidates and trace.

    With a wall-clock budget the loop checks remaining time before each
    iteration, so it overshoots by at most one iteration.
    """
    run = TransferRun()
    start = clock()
    for t, candidates, local_loss, local_asr in iter_transfer_attack(
        config, surrogates, seeds, labels, targets
    ):
        run.candidates.append(candidates)
        run.trace.append(TransferTraceRow(t, clock() - start, local_loss, local_asr))
        if wallclock_s is not None and clock() - start >= wallclock_s:
            break
    return run


def ods_direction(surrogates, x, rngs):
    """Output-diversified perturbation directions for warm starts.

    Samples a random weighting over the surrogate ensemble's logits per
    example and returns the l2-normalized input gradient of the weighted
    logit sum, which diversifies the models' outputs rather than any fixed
    loss.
    """
    x = validate_image_batch(x)
    n = x.shape[0]
    grad = np.zeros_like(x)
    for net in surrogates:
        logits, caches = net.forward_with_caches(x)
        weights = np.stack([r.gen.uniform(-1.0, 1.0, size=logits.shape[1]) for r in rngs])
        dx, _ = net.backward(weights, caches)
        grad += dx
    flat = grad.reshape(n, -1)
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return (flat / norms).reshape(x.shape)
