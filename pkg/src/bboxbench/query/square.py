"""Random-search square attacks: full-score and the top-k adaptation.

The full-score attack is a random search over square window refills,
accepting proposals only on strict margin-loss improvement. The top-k
variant starts from an image the API places the target class in its top-k
for, then alternates score-improving refills with distance-reducing convex
steps toward the seed; a dynamic threshold scheduler (initially 1.0, halved
after 10 consecutive rejected reduction proposals) gates when reduced-size
perturbations count as useful.
"""

import time
from dataclasses import dataclass

import numpy as np

from ..tensor import linf_distance, project_linf
from .common import (
    AttackLedger,
    QueryResult,
    find_adversarial_start,
    full_scores_loss,
    improves,
    target_in_topk,
    topk_observable_loss,
)

# window fraction starts at 0.1 of the pixels and halves at these fractions
# of the query budget
WINDOW_HALVING_POINTS = (0.02, 0.10, 0.25, 0.50, 0.80)


def window_fraction(queries_used, max_queries, p_init=0.1):
    frac = queries_used / max_queries
    halvings = sum(frac >= point for point in WINDOW_HALVING_POINTS)
    return p_init * (0.5 ** halvings)


def _window(rng, h, w, p):
    side = max(1, int(round(np.sqrt(p * h * w))))
    side = min(side, h, w)
    top = int(rng.gen.integers(0, h - side + 1))
    left = int(rng.gen.integers(0, w - side + 1))
    return top, left, side


@dataclass
class ThresholdScheduler:
    """Halve the usefulness threshold after `patience` consecutive failures."""

    threshold: float = 1.0
    patience: int = 10
    halving_factor: float = 0.5
    consecutive_failures: int = 0

    def record_accept(self):
        self.consecutive_failures = 0

    def record_failure(self):
        self.consecutive_failures += 1
        if self.consecutive_failures >= self.patience:
            self.threshold *= self.halving_factor
            self.consecutive_failures = 0


def square_attack(
    oracle,
    seed_image,
    label,
    *,
    target=None,
    budget,
    qbudget,
    rng,
    warm_start=None,
    clock=time.monotonic,
    trace_every=1,
):
    """Square attack against a full-scores oracle.

    Initializes with +-epsilon vertical stripes (or a caller-provided warm
    start, whose evaluation is then query 1), proposes random square window
    refills at +-epsilon per channel, and accepts only strict margin
    improvements. Stops at success (negative margin) or budget exhaustion.
    """
    if oracle.feedback.kind != "full-scores":
        raise ValueError("square_attack needs a full-scores oracle")
    x0 = np.asarray(seed_image, dtype=np.float64)
    c, h, w = x0.shape
    eps = budget.epsilon
    ledger = AttackLedger(qbudget, clock, trace_every)

    if warm_start is None:
        stripes = eps * rng.gen.choice([-1.0, 1.0], size=(c, 1, w))
        x_best = project_linf((x0 + stripes)[None], x0[None], budget)[0]
    else:
        x_best = project_linf(np.asarray(warm_start, dtype=np.float64)[None], x0[None], budget)[0]

    ledger.spend(1)
    best_loss = full_scores_loss(oracle.query_one(x_best), label, target)
    success = best_loss < 0.0
    first_success = ledger.queries if success else None
    ledger.record(best_loss, linf_distance(x_best[None], x0[None])[0], success, forced=True)

    while not success and ledger.can_spend(1):
        p = window_fraction(ledger.queries, qbudget.max_queries)
        top, left, side = _window(rng, h, w, p)
        signs = rng.gen.choice([-1.0, 1.0], size=(c, 1, 1))
        candidate = x_best.copy()
        window = x0[:, top : top + side, left : left + side] + eps * signs
        candidate[:, top : top + side, left : left + side] = np.clip(window, 0.0, 1.0)
        ledger.spend(1)
        loss = full_scores_loss(oracle.query_one(candidate), label, target)
        accepted = improves(loss, best_loss)
        if accepted:
            x_best, best_loss = candidate, loss
            if best_loss < 0.0:
                success = True
                first_success = ledger.queries
        ledger.record(
            best_loss,
            linf_distance(x_best[None], x0[None])[0],
            success,
            forced=accepted or success,
            accepted=accepted,
        )

    ledger.record(best_loss, linf_distance(x_best[None], x0[None])[0], success, forced=True)
    return QueryResult(
        x_best, success, ledger.queries, ledger.trace,
        extras={"first_success_query": first_success, "best_loss": best_loss},
    )


def square_topk(
    oracle,
    seed_image,
    target,
    *,
    budget,
    qbudget,
    rng,
    scheduler=None,
    start_pool=None,
    reduction_factor=0.05,
    reduction_window_frac=None,
    score_refill_factor=0.95,
    clock=time.monotonic,
    trace_every=1,
    record_states=False,
):
    """Targeted square attack under top-k feedback.

    Every accepted state keeps the target class inside the returned top-k;
    accepted steps never increase l-infinity distance to the seed. Succeeds
    when the distance reaches the budget with the target class still in the
    top-k. Raises StartNotFoundError when no valid start exists within the
    bounded restart policy.
    """
    if oracle.feedback.kind not in ("top-k", "full-scores"):
        raise ValueError("square_topk needs a top-k (or degenerate full-scores) oracle")
    x0 = np.asarray(seed_image, dtype=np.float64)
    c, h, w = x0.shape
    eps = budget.epsilon
    sched = scheduler if scheduler is not None else ThresholdScheduler()
    ledger = AttackLedger(qbudget, clock, trace_every)

    z, fb = find_adversarial_start(
        oracle, ledger, lambda f: target_in_topk(f, target), x0.shape,
        rng.split("start"), start_pool,
    )
    cur_loss = topk_observable_loss(fb, target)
    best_loss = cur_loss
    dist = float(linf_distance(z[None], x0[None])[0])
    success = dist <= eps
    first_success = ledger.queries if success else None
    accepted_states = [(ledger.queries, z.copy())] if record_states else None
    threshold_log = [(ledger.queries, sched.threshold)]
    ledger.record(best_loss, dist, success, forced=True, phase="init", threshold=sched.threshold)

    next_phase = "score"
    while not success and ledger.can_spend(1):
        phase = next_phase
        if phase == "distance" and cur_loss >= sched.threshold:
            # the reduction trigger is not armed: rebuild confidence first;
            # unattempted reductions do not count as scheduler failures
            phase = "score"
        if phase == "score":
            p = window_fraction(ledger.queries, qbudget.max_queries)
            top, left, side = _window(rng, h, w, p)
            signs = rng.gen.choice([-1.0, 1.0], size=(c, 1, 1))
            candidate = z.copy()
            # refills sit slightly inside the current distance so accepted
            # score proposals never undo the reduction phase's progress
            window = x0[:, top : top + side, left : left + side] + (
                score_refill_factor * dist
            ) * signs
            candidate[:, top : top + side, left : left + side] = np.clip(window, 0.0, 1.0)
            ledger.spend(1)
            cand_fb = oracle.query_one(candidate)
            cand_loss = topk_observable_loss(cand_fb, target)
            accepted = target_in_topk(cand_fb, target) and improves(cand_loss, cur_loss)
            if accepted:
                z, cur_loss = candidate, cand_loss
                best_loss = min(best_loss, cur_loss)
                dist = float(linf_distance(z[None], x0[None])[0])
            next_phase = "distance"
        else:
            # distance-adaptive reduction windows: wide while far from the
            # budget (bulk contraction), shrinking to single pixels as the
            # distance approaches epsilon so that shaving a critical
            # coordinate can survive near the decision boundary
            frac = reduction_window_frac
            if frac is None:
                frac = min(0.5, max(1.0 / (h * w), 0.125 * (dist / eps - 1.0)))
            top, left, side = _window(rng, h, w, frac)
            candidate = z.copy()
            block = candidate[:, top : top + side, left : left + side]
            seed_block = x0[:, top : top + side, left : left + side]
            candidate[:, top : top + side, left : left + side] = (
                block + reduction_factor * (seed_block - block)
            )
            ledger.spend(1)
            cand_fb = oracle.query_one(candidate)
            cand_loss = topk_observable_loss(cand_fb, target)
            # the threshold armed this attempt (current loss below it); the
            # proposal itself is kept iff the target class survives in the
            # top-k, mirroring the trigger-then-backtrack rule this scheduler
            # makes dynamic
            accepted = target_in_topk(cand_fb, target)
            if accepted:
                z, cur_loss = candidate, cand_loss
                best_loss = min(best_loss, cur_loss)
                dist = float(linf_distance(z[None], x0[None])[0])
                sched.record_accept()
            else:
                before = sched.threshold
                sched.record_failure()
                if sched.threshold != before:
                    threshold_log.append((ledger.queries, sched.threshold))
            next_phase = "score"

        if accepted:
            if record_states:
                accepted_states.append((ledger.queries, z.copy()))
            if dist <= eps:
                success = True
                first_success = ledger.queries
        ledger.record(
            best_loss, dist, success, forced=accepted or success, phase=phase,
            accepted=accepted, threshold=sched.threshold, current_loss=cur_loss,
        )

    ledger.record(
        best_loss, dist, success, forced=True, threshold=sched.threshold, current_loss=cur_loss
    )
    extras = {
        "first_success_query": first_success,
        "threshold_log": threshold_log,
        "final_threshold": sched.threshold,
    }
    if record_states:
        extras["accepted_states"] = accepted_states
    return QueryResult(z, success, ledger.queries, ledger.trace, extras=extras)
