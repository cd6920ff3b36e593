"""Shared machinery for interactive attacks: budgets, traces, losses, starts."""

import time
from dataclasses import dataclass, field

import numpy as np

from ..oracle import FullScores, HardLabel, TopKScores
from ..tensor import LOSS_TIE_SLACK


@dataclass(frozen=True)
class QueryBudget:
    max_queries: int
    wallclock_s: float | None = None

    def __post_init__(self):
        if self.max_queries < 1:
            raise ValueError("max_queries must be >= 1")


class StartNotFoundError(RuntimeError):
    """No goal-satisfying start image found within the bounded restart policy."""


@dataclass
class TraceRow:
    query: int
    elapsed_s: float
    best_loss: float | None
    linf_dist: float
    success: bool
    extra: dict = field(default_factory=dict)


@dataclass
class QueryResult:
    x_final: np.ndarray
    success: bool
    queries_used: int
    trace: list
    extras: dict = field(default_factory=dict)


class AttackLedger:
    """Per-instance query counting, wall-clock budget, and trace recording.

    `trace_every` thins routine rows; rows flagged forced (accepted states,
    the final state) are always kept so acceptance-rule monotonicity stays
    visible in every trace.
    """

    def __init__(self, qbudget: QueryBudget, clock=time.monotonic, trace_every=1):
        self.qbudget = qbudget
        self.clock = clock
        self.start = clock()
        self.queries = 0
        self.trace = []
        self.trace_every = max(1, int(trace_every))

    def elapsed(self):
        return self.clock() - self.start

    def can_spend(self, n=1):
        if self.queries + n > self.qbudget.max_queries:
            return False
        if self.qbudget.wallclock_s is not None and self.elapsed() >= self.qbudget.wallclock_s:
            return False
        return True

    def spend(self, n=1):
        self.queries += n

    def record(self, best_loss, linf_dist, success, forced=False, **extra):
        if not forced and self.queries % self.trace_every != 0:
            return
        loss = None if best_loss is None or not np.isfinite(best_loss) else float(best_loss)
        self.trace.append(
            TraceRow(self.queries, self.elapsed(), loss, float(linf_dist), bool(success), extra)
        )


def margin_loss(probs, label, target=None):
    """Probability-space margin the random-search attacks minimize.

    Untargeted: p(label) - best competing probability. Targeted: best
    competing probability - p(target). Negative means the goal holds.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if target is not None:
        others = np.delete(probs, target)
        return float(others.max() - probs[target])
    others = np.delete(probs, label)
    return float(probs[label] - others.max())


def full_scores_loss(feedback, label, target=None):
    if not isinstance(feedback, FullScores):
        raise TypeError("expected FullScores feedback")
    return margin_loss(feedback.probs, label, target)


def topk_observable_loss(feedback, target):
    """Targeted loss observable from top-k feedback.

    1 - p(target) when the target class is visible (lower is better, zero at
    full confidence); 1 + p(top) when it is not, so suppressing whatever
    class dominates still registers as progress. The initial scheduler
    threshold of 1.0 therefore separates "target visible" from "not".
    """
    if isinstance(feedback, TopKScores):
        for cls, p in feedback.entries:
            if cls == target:
                return 1.0 - p
        return 1.0 + feedback.entries[0][1]
    if isinstance(feedback, FullScores):
        # degenerate k=N case: every score is visible
        return 1.0 - float(feedback.probs[target])
    raise TypeError("expected TopKScores or FullScores feedback")


def target_in_topk(feedback, target):
    if isinstance(feedback, TopKScores):
        return any(cls == target for cls, _ in feedback.entries)
    if isinstance(feedback, FullScores):
        return True  # degenerate k=N case
    raise TypeError("expected TopKScores or FullScores feedback")


def hard_label_of(feedback):
    if isinstance(feedback, HardLabel):
        return feedback.label
    if isinstance(feedback, FullScores):
        return int(np.asarray(feedback.probs).argmax())
    if isinstance(feedback, TopKScores):
        return feedback.entries[0][0]
    raise TypeError(f"cannot take a hard label from {type(feedback).__name__}")


def goal_satisfied(pred, label, target=None):
    return pred == target if target is not None else pred != label


def improves(new_loss, best_loss):
    """Strict improvement at the package-wide tie slack."""
    return new_loss < best_loss - LOSS_TIE_SLACK


def find_adversarial_start(
    oracle, ledger, accept, shape, rng, start_pool=None, pool_draws=10, noise_restarts=100
):
    """Bounded restart policy for attacks that need a goal-satisfying start.

    Tries up to `pool_draws` images from the auxiliary pool, then up to
    `noise_restarts` uniform-noise images; every check costs one query.
    Returns (image, feedback) or raises StartNotFoundError.
    """
    candidates = []
    if start_pool is not None and len(start_pool) > 0:
        order = rng.gen.permutation(len(start_pool))[:pool_draws]
        candidates.extend(np.asarray(start_pool[i], dtype=np.float64) for i in order)
    for _ in range(noise_restarts):
        candidates.append(None)  # drawn lazily so unused restarts cost no rng state
    for cand in candidates:
        if not ledger.can_spend(1):
            raise StartNotFoundError("query budget exhausted while searching for a start")
        if cand is None:
            cand = rng.gen.random(shape)
        fb = oracle.query_one(cand)
        ledger.spend(1)
        if accept(fb):
            return cand, fb
    raise StartNotFoundError(
        f"no goal-satisfying start within {pool_draws} pool draws and "
        f"{noise_restarts} noise restarts"
    )
