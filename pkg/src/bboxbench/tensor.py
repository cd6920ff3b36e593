"""Image-batch arithmetic, l-infinity geometry, and reproducible randomness.

Image batches are plain float64 numpy arrays of shape (n, c, h, w) with
values in [0, 1] (channel-major per example). Every attack in this package
is built on the operations here, so they are deliberately small and pure.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

LOSS_TIE_SLACK = 1e-12  # attacks compare losses at this slack (no platform-dependent ties)
LINF_SLACK = 1e-6  # tolerance used when asserting feasibility of emitted iterates


class ShapeMismatchError(ValueError):
    """Raised when two image batches that must be aligned are not."""


@dataclass(frozen=True)
class PerturbationBudget:
    """An l-infinity perturbation budget in intensity units."""

    epsilon: float
    norm: str = "linf"

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.norm != "linf":
            raise ValueError(f"only the linf norm is supported, got {self.norm!r}")


def validate_image_batch(x, name="batch"):
    """Check that `x` is a float (n, c, h, w) array; return it as float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeMismatchError(f"{name} must have shape (n, c, h, w), got {x.shape}")
    return x


def _require_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


def project_linf(candidate, origin, budget):
    """Clamp `candidate` into the epsilon-ball around `origin`, then into [0, 1].

    Idempotent; the result always satisfies ||result - origin||_inf <= epsilon
    and lies in the valid pixel range.
    """
    candidate = np.asarray(candidate, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    _require_same_shape(candidate, origin)
    eps = budget.epsilon if isinstance(budget, PerturbationBudget) else float(budget)
    out = np.clip(candidate, origin - eps, origin + eps)
    np.clip(out, 0.0, 1.0, out=out)
    return out


def sign(v):
    """Elementwise sign in {-1, 0, +1}. Exact zeros stay zero."""
    return np.sign(np.asarray(v, dtype=np.float64))


def l1_normalize(v):
    """Scale `v` to unit l1 norm; the zero vector maps to itself."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.abs(v).sum()
    if norm > 0.0:
        return v / norm
    return np.zeros_like(v)


def l1_normalize_per_example(v):
    """l1-normalize each example of an (n, ...) array independently.

    Per-example normalization keeps example results independent of how a
    batch is partitioned, which the attack engines rely on.
    """
    v = np.asarray(v, dtype=np.float64)
    flat = v.reshape(v.shape[0], -1)
    norms = np.abs(flat).sum(axis=1)
    out = np.zeros_like(flat)
    nonzero = norms > 0.0
    out[nonzero] = flat[nonzero] / norms[nonzero, None]
    return out.reshape(v.shape)


def linf_distance(a, b):
    """Per-example max-abs coordinate difference between two image batches."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_same_shape(a, b)
    return np.abs(a - b).reshape(a.shape[0], -1).max(axis=1)


def _stream_key(seed, example, purpose):
    # Philox takes a 2-word key; derive it from the triple with a stable hash
    # so distinct (example, purpose) pairs get statistically independent streams.
    h = hashlib.blake2s(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=True))
    h.update(int(example).to_bytes(8, "little", signed=True))
    h.update(purpose.encode("utf-8"))
    digest = h.digest()
    return np.frombuffer(digest, dtype=np.uint64)


@dataclass
class RngStream:
    """A counter-based random stream keyed by (seed, example index, purpose tag).

    Identical triples reproduce identical draw sequences regardless of
    scheduling; distinct triples are independent. Backed by Philox, so
    creating many per-example streams is cheap and order-free.
    """

    seed: int
    example: int
    purpose: str
    gen: np.random.Generator = field(repr=False, default=None)

    def __post_init__(self):
        if self.gen is None:
            bitgen = np.random.Philox(key=_stream_key(self.seed, self.example, self.purpose))
            self.gen = np.random.Generator(bitgen)

    def split(self, purpose_suffix):
        """Derive an independent stream for a sub-purpose of this one."""
        return make_rng(self.seed, self.example, f"{self.purpose}/{purpose_suffix}")


def make_rng(seed, example=0, purpose="default"):
    """Create the deterministic RngStream for (seed, example, purpose)."""
    return RngStream(seed=int(seed), example=int(example), purpose=str(purpose))
