"""Hybrid-Square: surrogate transfer candidates warm-start the Square attack.

Per example: run the configured transfer attack locally (no target
queries), spend exactly one query checking the final candidate on the
target, and only if that fails continue with square proposals from the
candidate (the stripe initialization is skipped). Direct transfers
therefore cost exactly one query.
"""

import time

import numpy as np

from ..tensor import make_rng
from ..transfer import run_transfer_attack
from .square import square_attack


def hybrid_square(
    oracle,
    surrogates,
    seeds,
    labels,
    *,
    targets=None,
    transfer_config,
    budget,
    qbudget,
    master_seed=0,
    clock=time.monotonic,
    trace_every=1,
):
    """Run the hybrid attack; returns one QueryResult per example."""
    if oracle.feedback.kind != "full-scores":
        raise ValueError("hybrid_square needs a full-scores oracle")
    if abs(transfer_config.epsilon - budget.epsilon) > 1e-12:
        raise ValueError("transfer config epsilon must match the attack budget")
    seeds = np.asarray(seeds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)

    run = run_transfer_attack(transfer_config, surrogates, seeds, labels, targets, clock=clock)
    candidates = run.final if run.final is not None else seeds

    results = []
    for e in range(seeds.shape[0]):
        result = square_attack(
            oracle,
            seeds[e],
            int(labels[e]),
            target=None if targets is None else int(targets[e]),
            budget=budget,
            qbudget=qbudget[e] if isinstance(qbudget, list) else qbudget,
            rng=make_rng(master_seed, e, "hybrid/square"),
            warm_start=candidates[e],
            clock=clock,
            trace_every=trace_every,
        )
        result.extras["warm_start"] = True
        result.extras["transferred_directly"] = result.success and result.queries_used == 1
        results.append(result)
    return results
