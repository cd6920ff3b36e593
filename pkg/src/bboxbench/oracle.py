"""Black-box oracle layer: feedback granularities and query accounting.

An Oracle hides a DifferentiableNet behind an API that returns hard labels,
top-k confidence scores, or the full probability vector. Attack oracles
count every single-example evaluation; evaluation oracles (the
experimenter's measurement channel) never touch the counter, so measuring
ASR can never leak queries to the attacker's ledger.
"""

import threading
from dataclasses import dataclass

import numpy as np

from .nets import stable_softmax
from .tensor import validate_image_batch

ATTACK = "attack"
EVALUATION = "evaluation"


@dataclass(frozen=True)
class FeedbackMode:
    """API feedback granularity: hard-label, top-k(k), or full-scores."""

    kind: str
    k: int | None = None

    @classmethod
    def hard_label(cls):
        return cls("hard-label")

    @classmethod
    def top_k(cls, k):
        if k < 1:
            raise ValueError("top-k requires k >= 1")
        return cls("top-k", int(k))

    @classmethod
    def full_scores(cls):
        return cls("full-scores")

    def __post_init__(self):
        if self.kind not in ("hard-label", "top-k", "full-scores"):
            raise ValueError(f"unknown feedback kind {self.kind!r}")
        if self.kind == "top-k" and (self.k is None or self.k < 1):
            raise ValueError("top-k feedback requires k >= 1")


@dataclass(frozen=True)
class HardLabel:
    label: int


@dataclass(frozen=True)
class TopKScores:
    """Exactly k (class, probability) pairs, descending by probability."""

    entries: tuple


@dataclass(frozen=True)
class FullScores:
    probs: np.ndarray


def _descending_order(probs):
    # stable sort on -p: ties break toward the lower class index
    return np.argsort(-probs, kind="stable")


class Oracle:
    """Query interface over a hidden classifier.

    role="attack" increments the query counter by the batch size on every
    call; role="evaluation" never does. Counter updates take a lock so
    concurrent per-example attack instances account correctly.
    """

    def __init__(self, net, feedback=None, role=ATTACK):
        if role not in (ATTACK, EVALUATION):
            raise ValueError(f"role must be 'attack' or 'evaluation', got {role!r}")
        self.net = net
        self.feedback = feedback if feedback is not None else FeedbackMode.full_scores()
        self.role = role
        self._count = 0
        self._lock = threading.Lock()
        if self.feedback.kind == "top-k" and not (1 <= self.feedback.k < net.n_classes):
            raise ValueError("top-k oracle requires 1 <= k < n_classes")

    @property
    def n_classes(self):
        return self.net.n_classes

    def query_count(self):
        """Cumulative single-example attack evaluations so far."""
        return self._count

    def _account(self, n):
        if self.role == ATTACK:
            with self._lock:
                self._count += n

    def query(self, x):
        """One Feedback per example, at this oracle's granularity."""
        x = validate_image_batch(x)
        self._account(x.shape[0])
        probs = stable_softmax(self.net.forward(x))
        out = []
        if self.feedback.kind == "hard-label":
            for row in probs:
                out.append(HardLabel(int(row.argmax())))
        elif self.feedback.kind == "top-k":
            k = self.feedback.k
            for row in probs:
                order = _descending_order(row)[:k]
                out.append(TopKScores(tuple((int(j), float(row[j])) for j in order)))
        else:
            for row in probs:
                out.append(FullScores(row.copy()))
        return out

    def query_one(self, image):
        """Feedback for a single (c, h, w) image."""
        return self.query(np.asarray(image, dtype=np.float64)[None])[0]

    def predict_labels(self, x):
        """Hard predictions regardless of feedback mode (counts if attack role)."""
        x = validate_image_batch(x)
        self._account(x.shape[0])
        return self.net.predict(x)


def evaluation_oracle(net):
    """Experimenter-side oracle: full scores, never counted."""
    return Oracle(net, FeedbackMode.full_scores(), role=EVALUATION)
