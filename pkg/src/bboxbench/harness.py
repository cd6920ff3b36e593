"""Benchmark harness: budgeted attack execution and two-axis ASR analysis.

Runs attack plans under iteration, wall-clock, or query budgets; evaluates
every iteration's candidates against an evaluation oracle (which never
touches attacker query counters); and summarizes attack success both
iteration-indexed and time-indexed, since those two orderings can disagree
when per-iteration costs differ.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .nets import DifferentiableNet
from .oracle import Oracle, evaluation_oracle
from .query import QueryBudget, hybrid_square, nes_attack, rays_attack, signflip_attack
from .query.square import square_attack, square_topk
from .taxonomy import classify_cell, profile_for, validate
from .tensor import PerturbationBudget, make_rng
from .transfer import TransferConfig, iter_transfer_attack

TRANSFER_ATTACKS = (
    "i-fgsm", "mi-fgsm", "ni-fgsm", "vmi-fgsm", "vni-fgsm",
    "emi-fgsm", "smi-fgsm", "smimi-fgsm", "midi-fgsm", "admix-fgsm",
)
QUERY_ATTACKS = ("square", "square-topk", "nes", "nes-topk", "rays", "signflip", "hybrid-square")
_UNBOUNDED_QUERIES = 10 ** 9


class PlanValidationError(RuntimeError):
    """The plan pairs an attack with a threat model it cannot run under."""


@dataclass(frozen=True)
class Budget:
    kind: str  # "iterations" | "wallclock" | "queries"
    value: float

    def __post_init__(self):
        if self.kind not in ("iterations", "wallclock", "queries"):
            raise ValueError(f"unknown budget kind {self.kind!r}")
        if self.value <= 0:
            raise ValueError("budget value must be positive")


@dataclass
class PlanEntry:
    attack_id: str
    threat_model: object
    params: dict = field(default_factory=dict)


@dataclass
class HarnessRow:
    index: int  # iteration or query index
    elapsed_s: float
    local_loss: float | None
    local_asr: float | None
    target_asr: float
    cumulative_queries: int


@dataclass
class AttackTrace:
    attack_id: str
    rows: list
    metadata: dict = field(default_factory=dict)


@dataclass
class BenchmarkPlan:
    plan_id: str
    entries: list
    target: DifferentiableNet
    surrogates: list
    seeds: np.ndarray
    labels: np.ndarray
    goal: str = "untargeted"
    epsilon: float = 16 / 255
    budget: Budget = Budget("iterations", 10)
    targets: np.ndarray | None = None
    representative_iteration: int | None = None  # default: 40 targeted, 10 untargeted
    master_seed: int = 0
    override_threat_model: bool = False
    batch_size: int = 5
    start_pool_images: np.ndarray | None = None
    start_pool_labels: np.ndarray | None = None
    trace_every: int = 1
    record_states: bool = False
    clock: object = time.monotonic
    threads: int = 1  # worker count for per-example query attacks
    custom_attacks: dict = field(default_factory=dict)  # id -> (profile, iterate_fn)
    realized_iterations: dict | None = None  # replay mode: attack_id -> count
    config_hash: str | None = None

    def __post_init__(self):
        if self.goal not in ("untargeted", "targeted"):
            raise ValueError("goal must be untargeted or targeted")
        if self.goal == "targeted" and self.targets is None:
            raise ValueError("targeted plans need target labels")
        if self.representative_iteration is None:
            self.representative_iteration = 40 if self.goal == "targeted" else 10


def offset_targets(labels, n_classes, offset=1):
    """Deterministic target labels: (label + offset) mod classes."""
    return (np.asarray(labels, dtype=np.int64) + offset) % n_classes


def eval_asr(candidates, eval_oracle, labels, goal="untargeted", targets=None):
    """Fraction of examples whose hard prediction satisfies the goal.

    Uses the evaluation oracle's predictions only; attacker counters are
    untouched because evaluation oracles never count.
    """
    preds = eval_oracle.predict_labels(candidates)
    labels = np.asarray(labels, dtype=np.int64)
    if goal == "targeted":
        return float((preds == np.asarray(targets, dtype=np.int64)).mean())
    return float((preds != labels).mean())


def filter_correct_seeds(eval_oracle, seeds, labels):
    """Indices of seeds the target classifies correctly (benchmark precondition)."""
    preds = eval_oracle.predict_labels(seeds)
    return np.flatnonzero(preds == np.asarray(labels, dtype=np.int64))


def run_benchmark(plan: BenchmarkPlan):
    """Execute every plan entry under the shared budget; returns (Report, traces).

    Traces is {attack_id: AttackTrace}; query attacks additionally stash
    per-example QueryResults in trace metadata. Raises PlanValidationError
    when an entry fails taxonomy validation and no override is set;
    overrides are logged in the report.
    """
    eval_oracle = evaluation_oracle(plan.target)
    overrides = []
    for entry in plan.entries:
        profile = _profile(plan, entry.attack_id)
        violations = validate(profile, entry.threat_model)
        if violations:
            lines = "; ".join(f"{v.axis}: {v.reason}" for v in violations)
            if not plan.override_threat_model:
                raise PlanValidationError(
                    f"attack {entry.attack_id!r} violates its threat model ({lines}); "
                    "set the override flag to run anyway"
                )
            overrides.append({"attack": entry.attack_id, "violations": lines})

    keep = filter_correct_seeds(eval_oracle, plan.seeds, plan.labels)
    filtered = {"total": int(len(plan.labels)), "kept": int(len(keep))}
    seeds = plan.seeds[keep]
    labels = plan.labels[keep]
    targets = None if plan.targets is None else plan.targets[keep]
    if len(seeds) == 0:
        raise PlanValidationError("no seeds are correctly classified by the target")

    traces = {}
    for entry in plan.entries:
        if entry.attack_id in plan.custom_attacks or entry.attack_id in TRANSFER_ATTACKS:
            trace = _run_iterative(plan, entry, eval_oracle, seeds, labels, targets)
        elif entry.attack_id in QUERY_ATTACKS:
            trace = _run_query(plan, entry, eval_oracle, seeds, labels, targets)
        else:
            raise PlanValidationError(f"unknown attack id {entry.attack_id!r}")
        trace.metadata["threat_cell"] = classify_cell(entry.threat_model)
        trace.metadata["master_seed"] = plan.master_seed
        if plan.config_hash is not None:
            trace.metadata["config_hash"] = plan.config_hash
        traces[entry.attack_id] = trace

    report = summarize(plan, traces)
    report.seed_filtering = filtered
    report.overrides = overrides
    return report, traces


def _profile(plan, attack_id):
    if attack_id in plan.custom_attacks:
        return plan.custom_attacks[attack_id][0]
    return profile_for(attack_id)


def _realized(plan, entry):
    if plan.realized_iterations:
        return plan.realized_iterations.get(entry.attack_id)
    return None


def _iteration_limit(plan, entry):
    if _realized(plan, entry) is not None:
        counts = _realized(plan, entry)
        return max(counts) if isinstance(counts, list) else int(counts), None
    if plan.budget.kind == "iterations":
        return int(plan.budget.value), None
    if plan.budget.kind == "wallclock":
        return None, float(plan.budget.value)
    # under a query budget, non-interactive attacks run their configured iterations
    return None, None


_WALLCLOCK_ITER_CAP = 100_000


def _transfer_config(plan, entry):
    params = dict(entry.params)
    variant = entry.attack_id.removesuffix("-fgsm")
    limit, wallclock = _iteration_limit(plan, entry)
    explicit = params.pop("iterations", None)
    # the step size follows the protocol count (40 targeted / 10 untargeted,
    # or an explicitly configured count) even when the budget allows running
    # more iterations than that
    protocol_t = explicit if explicit is not None else (40 if plan.goal == "targeted" else 10)
    step_size = params.pop("step_size", None)
    if step_size is None:
        step_size = plan.epsilon / protocol_t
    if limit is not None:
        iterations = limit
    elif wallclock is not None:
        iterations = _WALLCLOCK_ITER_CAP
    else:
        iterations = explicit
    return TransferConfig(
        epsilon=plan.epsilon,
        goal=plan.goal,
        iterations=iterations,
        step_size=step_size,
        variant=variant,
        seed=plan.master_seed,
        **params,
    )


def _run_iterative(plan, entry, eval_oracle, seeds, labels, targets):
    """Run a transfer or custom attack per batch and merge rows by iteration.

    WallClock budgets apply per batch (checked before each iteration, so a
    batch overshoots by at most one iteration); realized per-batch counts
    go into the metadata so a replay can pin them.
    """
    clock = plan.clock
    limit, wallclock = _iteration_limit(plan, entry)
    realized = _realized(plan, entry)

    if entry.attack_id in plan.custom_attacks:
        chunks = [np.arange(len(labels))]  # custom adapters run unchunked
    else:
        chunks = [
            np.arange(i, min(i + plan.batch_size, len(labels)))
            for i in range(0, len(labels), plan.batch_size)
        ]

    per_chunk = []
    for ci, chunk in enumerate(chunks):
        chunk_limit = limit
        if isinstance(realized, list):
            chunk_limit = int(realized[ci])
        csub, lsub = seeds[chunk], labels[chunk]
        tsub = None if targets is None else targets[chunk]
        if entry.attack_id in plan.custom_attacks:
            iterator = plan.custom_attacks[entry.attack_id][1](plan, csub, lsub, tsub)
        else:
            config = _transfer_config(plan, entry)
            iterator = (
                (cand, loss, asr)
                for _, cand, loss, asr in iter_transfer_attack(
                    config, plan.surrogates, csub, lsub, tsub, example_indices=chunk
                )
            )
            if chunk_limit is None:
                chunk_limit = config.iterations
        flags, losses, asrs, times = [], [], [], []
        start = clock()
        count = 0
        for candidates, local_loss, local_asr in iterator:
            preds = eval_oracle.predict_labels(candidates)
            ok = preds == tsub if targets is not None else preds != lsub
            flags.append(ok)
            losses.append(local_loss)
            asrs.append(local_asr)
            times.append(clock() - start)
            count += 1
            if chunk_limit is not None and count >= chunk_limit:
                break
            if wallclock is not None and clock() - start >= wallclock:
                break  # budget checked before the next iteration begins
        per_chunk.append({"flags": flags, "losses": losses, "asrs": asrs, "times": times})

    rows = []
    max_t = max((len(c["flags"]) for c in per_chunk), default=0)
    total = len(labels)
    for t in range(max_t):
        n_success = 0.0
        loss_sum, asr_sum, weight = 0.0, 0.0, 0
        elapsed = []
        for chunk, res in zip(chunks, per_chunk):
            if not res["flags"]:
                continue
            i = min(t, len(res["flags"]) - 1)
            n_success += res["flags"][i].sum()
            if res["losses"][i] is not None:
                loss_sum += res["losses"][i] * len(chunk)
                weight += len(chunk)
            if res["asrs"][i] is not None:
                asr_sum += res["asrs"][i] * len(chunk)
            elapsed.append(res["times"][i])
        rows.append(
            HarnessRow(
                t,
                float(np.mean(elapsed)) if elapsed else 0.0,
                float(loss_sum / weight) if weight else None,
                float(asr_sum / total) if weight else None,
                float(n_success / total),
                0,
            )
        )

    metadata = {
        "kind": "iterative",
        "realized_iterations": [len(c["flags"]) for c in per_chunk],
        "warmup_elapsed_s": rows[0].elapsed_s if rows else None,
    }
    return AttackTrace(entry.attack_id, rows, metadata)


def _query_budget(plan, entry, deadline=None, share=1, example=None):
    params = entry.params
    realized = _realized(plan, entry)
    if realized is not None:
        if isinstance(realized, list):
            cap = int(realized[example]) if example is not None else max(realized)
        else:
            cap = int(realized)
        return QueryBudget(max(1, cap))
    if plan.budget.kind == "queries":
        return QueryBudget(int(plan.budget.value))
    if plan.budget.kind == "iterations":
        # one interaction per proposal: iterations map directly onto queries
        return QueryBudget(int(plan.budget.value))
    remaining = None
    if deadline is not None:
        remaining = max(0.001, (deadline - plan.clock()) / max(1, share))
    return QueryBudget(int(params.get("max_queries", _UNBOUNDED_QUERIES)), remaining)


def _oracle_feedback(entry, tm_feedback):
    if entry.attack_id in ("rays", "signflip"):
        from .oracle import FeedbackMode

        return FeedbackMode.hard_label()
    if entry.attack_id in ("square-topk", "nes-topk"):
        return tm_feedback
    from .oracle import FeedbackMode

    return FeedbackMode.full_scores()


def _start_pool_for(plan, seeds, labels, example_idx, target):
    if plan.start_pool_images is not None:
        pool_labels = plan.start_pool_labels
        if target is not None and pool_labels is not None:
            return plan.start_pool_images[np.asarray(pool_labels) == target]
        return plan.start_pool_images
    if target is not None:
        mask = labels == target
        mask[example_idx] = False
        return seeds[mask]
    mask = np.ones(len(labels), dtype=bool)
    mask[example_idx] = False
    return seeds[mask]


def _run_query(plan, entry, eval_oracle, seeds, labels, targets):
    clock = plan.clock
    budget = PerturbationBudget(plan.epsilon)
    oracle = Oracle(plan.target, _oracle_feedback(entry, entry.threat_model.feedback))
    params = dict(entry.params)
    params.pop("max_queries", None)
    deadline = None
    if plan.budget.kind == "wallclock":
        deadline = clock() + float(plan.budget.value)

    if entry.attack_id == "hybrid-square":
        realized = _realized(plan, entry)
        if isinstance(realized, list):
            qbudget = [_query_budget(plan, entry, example=e) for e in range(len(seeds))]
        else:
            qbudget = _query_budget(plan, entry, deadline, share=len(seeds))
        results = hybrid_square(
            oracle, plan.surrogates, seeds, labels,
            targets=targets,
            transfer_config=_hybrid_transfer_config(plan, params),
            budget=budget,
            qbudget=qbudget,
            master_seed=plan.master_seed,
            clock=clock,
            trace_every=plan.trace_every,
        )
    else:

        def run_one(e):
            target_e = None if targets is None else int(targets[e])
            rng = make_rng(plan.master_seed, e, f"attack/{entry.attack_id}")
            qbudget = _query_budget(plan, entry, deadline, example=e)
            common = dict(
                budget=budget, qbudget=qbudget, rng=rng,
                clock=clock, trace_every=plan.trace_every,
            )
            if entry.attack_id == "square":
                return square_attack(
                    oracle, seeds[e], int(labels[e]), target=target_e, **common, **params
                )
            if entry.attack_id == "square-topk":
                return square_topk(
                    oracle, seeds[e], target_e,
                    start_pool=_start_pool_for(plan, seeds, labels, e, target_e),
                    record_states=plan.record_states, **common, **params,
                )
            if entry.attack_id == "nes":
                return nes_attack(
                    oracle, seeds[e], int(labels[e]), target=target_e,
                    variant="full", **common, **params,
                )
            if entry.attack_id == "nes-topk":
                return nes_attack(
                    oracle, seeds[e], int(labels[e]), target=target_e, variant="topk",
                    start_pool=_start_pool_for(plan, seeds, labels, e, target_e),
                    **common, **params,
                )
            if entry.attack_id == "rays":
                return rays_attack(oracle, seeds[e], int(labels[e]), **common, **params)
            if entry.attack_id == "signflip":
                return signflip_attack(
                    oracle, seeds[e], int(labels[e]), target=target_e,
                    start_pool=_start_pool_for(plan, seeds, labels, e, target_e),
                    record_states=plan.record_states, **common, **params,
                )
            raise PlanValidationError(f"unhandled query attack {entry.attack_id!r}")

        if plan.threads > 1:
            # per-example results are partition-independent (counter-based
            # streams); only timing columns vary across worker counts
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=plan.threads) as pool:
                results = list(pool.map(run_one, range(len(seeds))))
        else:
            results = [run_one(e) for e in range(len(seeds))]

    rows, stats = _query_rows(plan, results, eval_oracle, seeds, labels, targets)
    metadata = {
        "kind": "query",
        "results": results,
        "oracle_query_count": oracle.query_count(),
        "queries_mean": stats["mean"],
        "queries_median": stats["median"],
        "asr": stats["asr"],
        "realized_iterations": [r.queries_used for r in results],
    }
    return AttackTrace(entry.attack_id, rows, metadata)


def _hybrid_transfer_config(plan, params):
    transfer_params = dict(params.pop("transfer", {}))
    variant = transfer_params.pop("variant", "mi")
    iterations = transfer_params.pop("iterations", None)
    return TransferConfig(
        epsilon=plan.epsilon, goal=plan.goal, iterations=iterations,
        variant=variant, seed=plan.master_seed, **transfer_params,
    )


def _query_rows(plan, results, eval_oracle, seeds, labels, targets):
    """Merge per-example query traces into query-indexed harness rows.

    Success per example is re-verified through the evaluation oracle at the
    final image; first_success_query gives the exact query index at which
    each example's state became (and stayed) successful.
    """
    n = len(results)
    verified = np.zeros(n, dtype=bool)
    finals = np.stack([r.x_final for r in results])
    preds = eval_oracle.predict_labels(finals)
    for e, res in enumerate(results):
        if res.success:
            goal_ok = (
                preds[e] == targets[e] if targets is not None else preds[e] != labels[e]
            )
            verified[e] = bool(goal_ok)
            res.extras["verified"] = bool(goal_ok)
    first_success = np.array(
        [
            res.extras.get("first_success_query") if verified[e] else None
            for e, res in enumerate(results)
        ],
        dtype=object,
    )

    grid = sorted(
        {row.query for res in results for row in res.trace}
        | {fs for fs in first_success if fs is not None}
    )
    if len(grid) > 600:
        stride = len(grid) // 500
        kept = set(grid[::stride]) | {grid[-1]}
        kept |= {fs for fs in first_success if fs is not None}
        grid = sorted(kept)

    rows = []
    max_q = max((res.queries_used for res in results), default=0)
    for q in grid:
        asr = float(np.mean([fs is not None and fs <= q for fs in first_success]))
        elapsed, losses, queries = [], [], 0
        for res in results:
            prior = [row for row in res.trace if row.query <= q]
            if prior:
                elapsed.append(prior[-1].elapsed_s)
                if prior[-1].best_loss is not None:
                    losses.append(prior[-1].best_loss)
            queries += min(q, res.queries_used)
        rows.append(
            HarnessRow(
                int(q),
                float(np.mean(elapsed)) if elapsed else 0.0,
                float(np.mean(losses)) if losses else None,
                None,
                asr,
                int(queries),
            )
        )
    stats = {
        "mean": float(np.mean([r.queries_used for r in results])),
        "median": float(np.median([r.queries_used for r in results])),
        "asr": float(verified.mean()),
        "max_queries": int(max_q),
    }
    return rows, stats


# --- summaries ---------------------------------------------------------------


@dataclass
class AttackSeries:
    attack_id: str
    index: list
    raw_asr: list
    best_so_far: list
    elapsed_s: list
    local_loss: list
    local_asr: list
    final_asr: float
    representative_asr: float | None
    threat_cell: str
    kind: str
    queries_mean: float | None = None
    queries_median: float | None = None
    warnings: list = field(default_factory=list)


@dataclass
class Report:
    plan_id: str
    master_seed: int
    goal: str
    epsilon: float
    budget: Budget
    representative_iteration: int
    series: list
    iteration_ranking: list
    time_ranking: list
    time_grid: list
    time_table: dict  # attack_id -> step-function ASR on time_grid (None before start)
    seed_filtering: dict = field(default_factory=dict)
    overrides: list = field(default_factory=list)


def summarize(plan, traces):
    """Build the Report: raw and best-so-far series, both ranking tables.

    The raw per-iteration series is the paper's headline quantity (it may
    fluctuate); best-so-far is the auxiliary monotone series. Ranking ties
    break by plan order, which is what lets equal-ASR attacks with unequal
    costs swap order between the two indexings.
    """
    series = []
    plan_order = {entry.attack_id: i for i, entry in enumerate(plan.entries)}
    for entry in plan.entries:
        trace = traces[entry.attack_id]
        rows = trace.rows
        raw = [r.target_asr for r in rows]
        best, cur = [], -np.inf
        for v in raw:
            cur = max(cur, v)
            best.append(cur)
        rep_asr, warnings = None, []
        if trace.metadata.get("kind") == "iterative":
            rep = plan.representative_iteration
            if rep - 1 < len(rows):
                rep_asr = raw[rep - 1]
            else:
                warnings.append(f"representative iteration {rep} not reached; marker omitted")
        series.append(
            AttackSeries(
                attack_id=entry.attack_id,
                index=[r.index for r in rows],
                raw_asr=raw,
                best_so_far=best,
                elapsed_s=[r.elapsed_s for r in rows],
                local_loss=[r.local_loss for r in rows],
                local_asr=[r.local_asr for r in rows],
                final_asr=raw[-1] if raw else 0.0,
                representative_asr=rep_asr,
                threat_cell=trace.metadata.get("threat_cell", ""),
                kind=trace.metadata.get("kind", ""),
                queries_mean=trace.metadata.get("queries_mean"),
                queries_median=trace.metadata.get("queries_median"),
                warnings=warnings,
            )
        )

    def iteration_key(s):
        score = s.representative_asr if s.representative_asr is not None else s.final_asr
        return (-score, plan_order[s.attack_id])

    def time_key(s):
        return (-s.final_asr, plan_order[s.attack_id])

    iteration_ranking = [
        (s.attack_id, s.representative_asr if s.representative_asr is not None else s.final_asr)
        for s in sorted(series, key=iteration_key)
    ]
    time_ranking = [(s.attack_id, s.final_asr) for s in sorted(series, key=time_key)]

    time_grid = sorted({t for s in series for t in s.elapsed_s})
    time_table = {}
    for s in series:
        values, j, cur = [], 0, None
        for t in time_grid:
            while j < len(s.elapsed_s) and s.elapsed_s[j] <= t:
                cur = s.raw_asr[j]
                j += 1
            values.append(cur)
        time_table[s.attack_id] = values

    return Report(
        plan_id=plan.plan_id,
        master_seed=plan.master_seed,
        goal=plan.goal,
        epsilon=plan.epsilon,
        budget=plan.budget,
        representative_iteration=plan.representative_iteration,
        series=series,
        iteration_ranking=iteration_ranking,
        time_ranking=time_ranking,
        time_grid=time_grid,
        time_table=time_table,
    )


# --- plot data ----------------------------------------------------------------


def _csv_cell(value):
    if value is None:
        return ""
    return repr(float(value))


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_csv_cell(v) if i else str(v) for i, v in enumerate(row)) + "\n")


def emit_plot_data(report: Report, outdir):
    """Write one CSV per figure panel; column order follows the plan order.

    Panels: raw ASR vs iteration, best-so-far ASR vs iteration, local loss
    vs iteration, and ASR vs elapsed seconds on the shared time grid. Values
    round-trip exactly (repr floats; empty cell = no sample yet).
    """
    import os

    os.makedirs(outdir, exist_ok=True)
    attacks = [s.attack_id for s in report.series]
    by_id = {s.attack_id: s for s in report.series}
    max_len = max((len(s.index) for s in report.series), default=0)

    def iter_rows(value_of):
        for i in range(max_len):
            row = [i]
            for a in attacks:
                s = by_id[a]
                row.append(value_of(s, i) if i < len(s.index) else None)
            yield row

    paths = {}
    for name, getter in (
        ("asr_vs_iteration", lambda s, i: s.raw_asr[i]),
        ("asr_best_vs_iteration", lambda s, i: s.best_so_far[i]),
        ("local_loss_vs_iteration", lambda s, i: s.local_loss[i]),
    ):
        path = os.path.join(outdir, f"{name}.csv")
        _write_csv(path, ["index"] + attacks, iter_rows(getter))
        paths[name] = path

    time_rows = []
    for j, t in enumerate(report.time_grid):
        time_rows.append([repr(float(t))] + [report.time_table[a][j] for a in attacks])
    path = os.path.join(outdir, "asr_vs_time.csv")
    _write_csv(path, ["elapsed_s"] + attacks, time_rows)
    paths["asr_vs_time"] = path
    return paths
