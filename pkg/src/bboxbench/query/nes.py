"""NES gradient estimation and the full-score / top-k NES attacks.

The estimator averages antithetic central differences along unit Gaussian
directions, so on a linear loss each pair returns the exact directional
derivative (and in one dimension the exact gradient). The top-k attack is
the fixed-threshold baseline the dynamic-scheduler square adaptation
improves on: it starts from a target-class image and shrinks the distance
ball in fixed steps whenever the observable loss clears threshold 1.0.
"""

import time

import numpy as np

from ..tensor import linf_distance, project_linf
from .common import (
    AttackLedger,
    QueryResult,
    find_adversarial_start,
    full_scores_loss,
    target_in_topk,
    topk_observable_loss,
)


def nes_gradient_estimate(loss_at, x, sigma, n, rng):
    """Estimate the gradient of loss_at around x from n point evaluations.

    Uses n/2 antithetic pairs along unit-normalized Gaussian directions:
    mean over pairs of [(L(x+sigma*u) - L(x-sigma*u)) / (2*sigma)] * u.
    Scale is dimension-normalized (attacks consume only the sign), and on
    linear losses the central difference is exact for any sigma.
    """
    if n < 2 or n % 2 != 0:
        raise ValueError("n must be a positive even number (antithetic pairs)")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for _ in range(n // 2):
        u = rng.gen.standard_normal(x.shape)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            continue
        u /= norm
        diff = loss_at(x + sigma * u) - loss_at(x - sigma * u)
        grad += (diff / (2.0 * sigma)) * u
    return grad / (n // 2)


def nes_gradient(oracle, x, sigma, n, rng, label, target=None):
    """Estimated gradient of the full-scores margin loss; consumes exactly n queries."""
    if oracle.feedback.kind != "full-scores":
        raise ValueError("nes_gradient needs a full-scores oracle")

    def loss_at(point):
        return full_scores_loss(oracle.query_one(np.clip(point, 0.0, 1.0)), label, target)

    return nes_gradient_estimate(loss_at, x, sigma, n, rng)


def nes_attack(
    oracle,
    seed_image,
    label,
    *,
    target=None,
    variant="full",
    budget,
    qbudget,
    rng,
    sigma=0.01,
    samples=50,
    step_size=None,
    shrink_step_frac=0.005,
    trigger_threshold=1.0,
    start_pool=None,
    clock=time.monotonic,
    trace_every=1,
):
    """NES attack; variant "full" needs full scores, "topk" needs top-k.

    full: projected signed descent on the estimated margin-loss gradient
    inside the epsilon ball around the seed.
    topk (targeted only): start from an image whose top-k contains the
    target class, alternate estimated-gradient score steps with stepwise
    ball shrinks of shrink_step_frac*epsilon, triggered whenever the
    observable loss is below the fixed threshold.
    """
    if variant not in ("full", "topk"):
        raise ValueError(f"unknown NES variant {variant!r}")
    if variant == "full":
        return _nes_full(
            oracle, seed_image, label, target, budget, qbudget, rng,
            sigma, samples, step_size, clock, trace_every,
        )
    if target is None:
        raise ValueError("the top-k NES variant is a targeted attack")
    return _nes_topk(
        oracle, seed_image, label, target, budget, qbudget, rng, sigma, samples,
        step_size, shrink_step_frac, trigger_threshold, start_pool, clock, trace_every,
    )


def _nes_full(
    oracle, seed_image, label, target, budget, qbudget, rng, sigma, samples,
    step_size, clock, trace_every,
):
    if oracle.feedback.kind != "full-scores":
        raise ValueError("NES full variant needs a full-scores oracle")
    x0 = np.asarray(seed_image, dtype=np.float64)
    eps = budget.epsilon
    step = eps / 10.0 if step_size is None else step_size
    ledger = AttackLedger(qbudget, clock, trace_every)

    x = x0.copy()
    ledger.spend(1)
    best_loss = full_scores_loss(oracle.query_one(x), label, target)
    success = best_loss < 0.0
    first_success = ledger.queries if success else None
    ledger.record(best_loss, 0.0, success, forced=True)

    def loss_at(point):
        ledger.spend(1)
        return full_scores_loss(oracle.query_one(np.clip(point, 0.0, 1.0)), label, target)

    while not success and ledger.can_spend(samples + 1):
        grad = nes_gradient_estimate(loss_at, x, sigma, samples, rng)
        x = project_linf((x - step * np.sign(grad))[None], x0[None], budget)[0]
        ledger.spend(1)
        loss = full_scores_loss(oracle.query_one(x), label, target)
        best_loss = min(best_loss, loss)
        if loss < 0.0:
            success = True
            first_success = ledger.queries
        ledger.record(
            best_loss, linf_distance(x[None], x0[None])[0], success, forced=True,
            current_loss=loss,
        )

    return QueryResult(
        x, success, ledger.queries, ledger.trace,
        extras={"first_success_query": first_success, "best_loss": best_loss},
    )


def _nes_topk(
    oracle, seed_image, label, target, budget, qbudget, rng, sigma, samples,
    step_size, shrink_step_frac, trigger_threshold, start_pool, clock, trace_every,
):
    if oracle.feedback.kind not in ("top-k", "full-scores"):
        raise ValueError("NES top-k variant needs a top-k oracle")
    x0 = np.asarray(seed_image, dtype=np.float64)
    eps = budget.epsilon
    step = eps / 10.0 if step_size is None else step_size
    shrink = shrink_step_frac * eps
    ledger = AttackLedger(qbudget, clock, trace_every)

    z, fb = find_adversarial_start(
        oracle, ledger, lambda f: target_in_topk(f, target), x0.shape,
        rng.split("start"), start_pool,
    )
    cur_loss = topk_observable_loss(fb, target)
    best_loss = cur_loss
    d = float(linf_distance(z[None], x0[None])[0])
    success = d <= eps
    first_success = ledger.queries if success else None
    ledger.record(best_loss, d, success, forced=True, radius=d)

    def observable(point):
        ledger.spend(1)
        fb = oracle.query_one(np.clip(point, 0.0, 1.0))
        return topk_observable_loss(fb, target), target_in_topk(fb, target)

    while not success and ledger.can_spend(1):
        # stepwise ball shrink while the fixed trigger allows it
        shrank = False
        while cur_loss < trigger_threshold and d > eps and ledger.can_spend(1):
            d_try = max(eps, d - shrink)
            z_try = np.clip(z, x0 - d_try, x0 + d_try)
            loss_try, ok = observable(z_try)
            if ok:
                z, d, cur_loss = z_try, d_try, loss_try
                best_loss = min(best_loss, cur_loss)
                shrank = True
                if d <= eps:
                    success = True
                    first_success = ledger.queries
                    break
            else:
                break
        ledger.record(
            best_loss, float(linf_distance(z[None], x0[None])[0]), success,
            forced=shrank or success, radius=d, current_loss=cur_loss,
        )
        if success or not ledger.can_spend(samples + 1):
            break

        # score-improvement step on the estimated observable-loss gradient
        def loss_only(point):
            loss, _ = observable(point)
            return loss

        grad = nes_gradient_estimate(loss_only, z, sigma, samples, rng)
        z_try = np.clip(np.clip(z - step * np.sign(grad), x0 - d, x0 + d), 0.0, 1.0)
        loss_try, ok = observable(z_try)
        if ok:
            z, cur_loss = z_try, loss_try
            best_loss = min(best_loss, cur_loss)
        ledger.record(
            best_loss, float(linf_distance(z[None], x0[None])[0]), success,
            forced=ok, radius=d, current_loss=cur_loss,
        )

    extras = {"first_success_query": first_success, "final_radius": d}
    return QueryResult(z, success, ledger.queries, ledger.trace, extras=extras)
