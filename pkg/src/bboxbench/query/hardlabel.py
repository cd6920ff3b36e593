"""Hard-label attacks: RayS-style radius search and the sign-flip attack.

Both consume only the predicted label. RayS keeps a sign direction and the
smallest radius certified adversarial along it, accepting hierarchical
block sign-flips only when a binary search certifies a strictly smaller
radius. SignFlip keeps a goal-satisfying iterate at all times, alternating
epsilon-shrinking projections with random coordinate sign flips.
"""

import time

import numpy as np

from ..tensor import linf_distance
from .common import (
    AttackLedger,
    QueryResult,
    find_adversarial_start,
    goal_satisfied,
    hard_label_of,
)


def rays_attack(
    oracle,
    seed_image,
    label,
    *,
    budget,
    qbudget,
    rng=None,
    tol=1e-3,
    clock=time.monotonic,
    trace_every=1,
):
    """Untargeted RayS-style hard-label attack.

    The best radius series is non-increasing: a new sign direction is
    adopted only when binary search certifies a strictly smaller
    adversarial radius along it. Succeeds when the certified radius reaches
    the budget. `rng` is unused (the search is deterministic) but accepted
    for interface uniformity.
    """
    if oracle.feedback.kind != "hard-label":
        raise ValueError("rays_attack needs a hard-label oracle")
    x0 = np.asarray(seed_image, dtype=np.float64)
    dim = x0.size
    eps = budget.epsilon
    ledger = AttackLedger(qbudget, clock, trace_every)

    def is_adversarial(img):
        ledger.spend(1)
        return hard_label_of(oracle.query_one(img)) != label

    def candidate(radius, sgn):
        return np.clip(x0 + radius * sgn, 0.0, 1.0)

    sgn = np.ones_like(x0)
    r_best = np.inf
    x_best = None
    success = False
    first_success = None

    def try_direction(attempt):
        """Binary-search certify `attempt`; returns (radius, image) or None."""
        nonlocal success, first_success
        probe = min(r_best, 1.0)
        if not ledger.can_spend(1):
            return None
        if not is_adversarial(candidate(probe, attempt)):
            return None
        lo, hi = 0.0, probe
        while hi - lo > tol and ledger.can_spend(1):
            mid = (lo + hi) / 2.0
            if is_adversarial(candidate(mid, attempt)):
                hi = mid
            else:
                lo = mid
        return hi, candidate(hi, attempt)

    def accept_if_better(attempt):
        nonlocal sgn, r_best, x_best, success, first_success
        out = try_direction(attempt)
        accepted = out is not None and out[0] < r_best
        if accepted:
            r_best, x_best = out[0], out[1]
            sgn = attempt
            if r_best <= eps:
                success = True
                first_success = ledger.queries
        dist = linf_distance(x_best[None], x0[None])[0] if x_best is not None else 1.0
        ledger.record(
            None if not np.isfinite(r_best) else r_best, dist, success,
            forced=accepted or success, accepted=accepted,
        )
        return accepted

    accept_if_better(sgn.copy())  # certify the initial all-ones direction

    level = 0
    while not success and ledger.can_spend(1):
        block_num = 2 ** level
        block_size = int(np.ceil(dim / block_num))
        n_blocks = int(np.ceil(dim / block_size))
        for block in range(n_blocks):
            if success or not ledger.can_spend(1):
                break
            attempt = sgn.reshape(-1).copy()
            attempt[block * block_size : (block + 1) * block_size] *= -1.0
            accept_if_better(attempt.reshape(x0.shape))
        level += 1
        if block_size == 1 and not success:
            level = 0  # restart the hierarchy once single coordinates are reached

    dist = linf_distance(x_best[None], x0[None])[0] if x_best is not None else 1.0
    ledger.record(None if not np.isfinite(r_best) else r_best, dist, success, forced=True)
    final = x_best if x_best is not None else x0
    return QueryResult(
        final, success, ledger.queries, ledger.trace,
        extras={
            "first_success_query": first_success,
            "radius": None if not np.isfinite(r_best) else float(r_best),
            "direction": sgn,
        },
    )


def signflip_attack(
    oracle,
    seed_image,
    label,
    *,
    target=None,
    budget,
    qbudget,
    rng,
    start_pool=None,
    shrink_frac=0.05,
    flip_frac=0.1,
    clock=time.monotonic,
    trace_every=1,
    record_states=False,
):
    """Hard-label sign-flip attack; the iterate stays goal-satisfying throughout.

    Alternates projections of the perturbation onto a shrunken infinity
    ball with random coordinate sign flips, accepting only proposals whose
    prediction still satisfies the goal. Succeeds when the current ball
    radius reaches the budget. Raises StartNotFoundError if no
    goal-satisfying start is found.
    """
    if oracle.feedback.kind != "hard-label":
        raise ValueError("signflip_attack needs a hard-label oracle")
    x0 = np.asarray(seed_image, dtype=np.float64)
    eps = budget.epsilon
    ledger = AttackLedger(qbudget, clock, trace_every)

    def ok(feedback):
        return goal_satisfied(hard_label_of(feedback), label, target)

    z, _ = find_adversarial_start(
        oracle, ledger, ok, x0.shape, rng.split("start"), start_pool
    )
    delta = z - x0
    d = float(np.abs(delta).max())
    success = d <= eps
    first_success = ledger.queries if success else None
    accepted_states = [(ledger.queries, z.copy())] if record_states else None
    ledger.record(d, d, success, forced=True, phase="init")

    next_phase = "project"
    while not success and ledger.can_spend(1):
        phase = next_phase
        if phase == "project":
            d_try = d * (1.0 - shrink_frac)
            z_try = np.clip(x0 + np.clip(delta, -d_try, d_try), 0.0, 1.0)
            next_phase = "flip"
        else:
            mask = rng.gen.random(x0.shape) < flip_frac
            flipped = np.where(mask, -delta, delta)
            z_try = np.clip(x0 + flipped, 0.0, 1.0)
            next_phase = "project"
        ledger.spend(1)
        accepted = ok(oracle.query_one(z_try))
        if accepted:
            z = z_try
            delta = z - x0
            d = float(np.abs(delta).max())
            if record_states:
                accepted_states.append((ledger.queries, z.copy()))
            if d <= eps:
                success = True
                first_success = ledger.queries
        ledger.record(d, d, success, forced=accepted or success, phase=phase, accepted=accepted)

    ledger.record(d, d, success, forced=True)
    extras = {"first_success_query": first_success, "final_radius": d}
    if record_states:
        extras["accepted_states"] = accepted_states
    return QueryResult(z, success, ledger.queries, ledger.trace, extras=extras)
