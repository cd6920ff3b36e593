"""Command-line frontend: train, attack, bench, and report subcommands.

Every run writes a manifest sufficient to replay it: `bench --config
<outdir>/manifest.json` re-runs with the recorded iteration/query counts
pinned, which makes report.json byte-identical even for wall-clock budgets
(timing-dependent series live in timing.json, next to it).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    budget_from_config,
    canonical_json,
    config_hash,
    normalize_config,
    paper_protocol,
    threat_model_from_config,
)
from .data import Dataset, DatasetError, ingest_idx, synth_dataset
from .harness import (
    BenchmarkPlan,
    PlanEntry,
    PlanValidationError,
    Report,
    offset_targets,
    run_benchmark,
)
from .harness import AttackSeries, Budget, emit_plot_data
from .nets import make_net
from .query import StartNotFoundError
from .taxonomy import profile_for, validate
from .train import AdversarialSpec, TrainConfig, train
from .transfer import NonFiniteLossError
from .weights_io import load_net, save_net


class RunFailure(RuntimeError):
    """A runtime (non-usage) failure; maps to exit status 1."""


def load_config(spec):
    """Load a config by path or builtin name; detect replay manifests."""
    if spec == "paper-protocol":
        return paper_protocol(), None
    try:
        with open(spec, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise RunFailure(f"cannot read config {spec!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise RunFailure(f"config {spec!r} is not valid JSON: {e}") from e
    if isinstance(doc, dict) and "config" in doc and "realized" in doc:
        return normalize_config(doc["config"]), doc  # replay manifest
    return normalize_config(doc), None


def _build_dataset(cfg) -> Dataset:
    d = cfg["dataset"]
    if d["source"] == "synthetic":
        return synth_dataset(
            d["generator"], d["n"], shape=tuple(d["shape"]), n_classes=d["classes"],
            seed=d["seed"], **d["params"],
        )
    return ingest_idx(d["images"], d["labels"])


def _train_config(tc):
    adv = tc["adversarial"]
    return TrainConfig(
        epochs=tc["epochs"], batch_size=tc["batch_size"],
        learning_rate=tc["learning_rate"], optimizer=tc["optimizer"],
        momentum=tc["momentum"], seed=tc["seed"],
        adversarial=None if adv is None else AdversarialSpec(
            pgd_steps=adv["pgd_steps"], pgd_epsilon=adv["pgd_epsilon"],
            pgd_step_size=adv["pgd_step_size"],
        ),
    )


def _resolve_model(mcfg, dataset, train_images, train_labels):
    if mcfg["path"] is not None:
        return load_net(mcfg["path"])
    net = make_net(mcfg["arch"], dataset.images.shape[1:], dataset.n_classes,
                   seed=mcfg["train"]["seed"])
    return train(train_images, train_labels, net, _train_config(mcfg["train"]))


def _split_dataset(cfg, dataset):
    n = len(dataset)
    seeds_n = cfg["seeds_per_run"]
    train_n = cfg["dataset"].get("train_n", n - seeds_n)
    if train_n <= 0 or train_n + seeds_n > n:
        raise RunFailure(
            f"dataset of {n} cannot supply {train_n} training and {seeds_n} seed examples"
        )
    return (
        dataset.images[:train_n], dataset.labels[:train_n],
        dataset.images[train_n : train_n + seeds_n],
        dataset.labels[train_n : train_n + seeds_n],
    )


class ResolvedRun:
    """Trained models, data splits, and per-setting plans for one config."""

    def __init__(self, cfg, realized=None):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.dataset = _build_dataset(cfg)
        if realized is not None:
            recorded = realized.get("dataset_checksum")
            if recorded is not None and recorded != self.dataset.manifest.checksum:
                raise RunFailure(
                    "replay dataset checksum mismatch: the manifest was produced "
                    "from different data"
                )
        (self.train_images, self.train_labels,
         self.seed_images, self.seed_labels) = _split_dataset(cfg, self.dataset)
        self.target = _resolve_model(
            cfg["models"]["target"], self.dataset, self.train_images, self.train_labels
        )
        self.adv_target = None
        if cfg["models"]["adversarial_target"] is not None:
            self.adv_target = _resolve_model(
                cfg["models"]["adversarial_target"], self.dataset,
                self.train_images, self.train_labels,
            )
        self.surrogates = [
            _resolve_model(m, self.dataset, self.train_images, self.train_labels)
            for m in cfg["models"]["surrogates"]
        ]
        self.realized = realized["realized"] if realized else None

    def plan_for(self, setting):
        cfg = self.cfg
        target = self.adv_target if setting["target_model"] == "adversarial" else self.target
        targets = None
        if setting["goal"] == "targeted":
            targets = offset_targets(
                self.seed_labels, self.dataset.n_classes, setting["target_offset"]
            )
        default_tm = threat_model_from_config(cfg["threat_model"])
        entries = []
        for att in cfg["attacks"]:
            tm = (
                threat_model_from_config(att["threat_model"])
                if att["threat_model"] is not None
                else default_tm
            )
            entries.append(PlanEntry(att["id"], tm, dict(att["params"])))
        realized = None
        if self.realized is not None:
            realized = self.realized.get(setting["name"])
        return BenchmarkPlan(
            plan_id=cfg["plan_id"],
            entries=entries,
            target=target,
            surrogates=self.surrogates,
            seeds=self.seed_images,
            labels=self.seed_labels,
            goal=setting["goal"],
            epsilon=setting["epsilon"],
            budget=budget_from_config(cfg["budget"]),
            targets=targets,
            representative_iteration=cfg["representative_iteration"],
            master_seed=cfg["master_seed"],
            override_threat_model=cfg["override_threat_model"],
            batch_size=cfg["batch_size"],
            start_pool_images=self.train_images,
            start_pool_labels=self.train_labels,
            trace_every=cfg["trace_every"],
            threads=cfg["threads"],
            realized_iterations=realized,
            config_hash=self.hash,
        )


# --- persistence ---------------------------------------------------------------


def _series_core(s: AttackSeries):
    return {
        "attack_id": s.attack_id,
        "threat_cell": s.threat_cell,
        "kind": s.kind,
        "index": s.index,
        "raw_asr": s.raw_asr,
        "best_so_far": s.best_so_far,
        "local_loss": s.local_loss,
        "local_asr": s.local_asr,
        "final_asr": s.final_asr,
        "representative_asr": s.representative_asr,
        "queries_mean": s.queries_mean,
        "queries_median": s.queries_median,
        "warnings": s.warnings,
    }


def _report_core(report: Report):
    return {
        "goal": report.goal,
        "epsilon": report.epsilon,
        "budget": {"kind": report.budget.kind, "value": report.budget.value},
        "representative_iteration": report.representative_iteration,
        "seed_filtering": report.seed_filtering,
        "overrides": report.overrides,
        "iteration_ranking": [[a, v] for a, v in report.iteration_ranking],
        "time_ranking": [[a, v] for a, v in report.time_ranking],
        "series": [_series_core(s) for s in report.series],
    }


def _report_timing(report: Report, traces):
    return {
        "elapsed_s": {s.attack_id: s.elapsed_s for s in report.series},
        "time_grid": report.time_grid,
        "time_table": report.time_table,
        "warmup_elapsed_s": {
            a: t.metadata.get("warmup_elapsed_s") for a, t in traces.items()
        },
        "runtime_summary": {
            s.attack_id: (s.elapsed_s[-1] if s.elapsed_s else 0.0) for s in report.series
        },
    }


def _trace_lines(trace):
    lines = []
    if trace.metadata.get("kind") == "query":
        for e, result in enumerate(trace.metadata["results"]):
            for row in result.trace:
                payload = {
                    "example": e, "index": row.query, "elapsed_s": row.elapsed_s,
                    "best_loss": row.best_loss, "linf_dist": row.linf_dist,
                    "success": row.success,
                }
                payload.update(row.extra)
                lines.append(payload)
    else:
        for row in trace.rows:
            lines.append({
                "index": row.index, "elapsed_s": row.elapsed_s,
                "local_loss": row.local_loss, "local_asr": row.local_asr,
                "target_asr": row.target_asr, "cumulative_queries": row.cumulative_queries,
            })
    return lines


def write_results(outdir, run: ResolvedRun, results, force=False):
    """Write report.json, timing.json, summary.csv, traces, and manifest.json.

    `results` maps setting name -> (Report, traces). Refuses a non-empty
    output directory unless force is set.
    """
    if os.path.exists(outdir) and os.listdir(outdir) and not force:
        raise RunFailure(f"output directory {outdir!r} is not empty (use --force)")
    os.makedirs(outdir, exist_ok=True)

    cfg = run.cfg
    single = len(results) == 1
    report_doc = {
        "plan_id": cfg["plan_id"],
        "master_seed": cfg["master_seed"],
        "config_hash": run.hash,
        "settings": {name: _report_core(report) for name, (report, _) in results.items()},
    }
    with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8") as f:
        f.write(canonical_json(report_doc))

    timing_doc = {
        "settings": {
            name: _report_timing(report, traces) for name, (report, traces) in results.items()
        },
        "threads": cfg["threads"],
    }
    with open(os.path.join(outdir, "timing.json"), "w", encoding="utf-8") as f:
        f.write(canonical_json(timing_doc))

    with open(os.path.join(outdir, "summary.csv"), "w", encoding="utf-8") as f:
        f.write(
            "setting,attack,threat_cell,final_asr,representative_asr,"
            "queries_mean,queries_median\n"
        )
        for name, (report, _) in results.items():
            for s in report.series:
                rep = "" if s.representative_asr is None else repr(s.representative_asr)
                qm = "" if s.queries_mean is None else repr(s.queries_mean)
                qd = "" if s.queries_median is None else repr(s.queries_median)
                f.write(
                    f"{name},{s.attack_id},{s.threat_cell},{s.final_asr!r},{rep},{qm},{qd}\n"
                )

    realized = {
        name: {a: t.metadata.get("realized_iterations") for a, t in traces.items()}
        for name, (_, traces) in results.items()
    }
    model_info = {"target": _model_info(run.target)}
    if run.adv_target is not None:
        model_info["adversarial_target"] = _model_info(run.adv_target)
    model_info["surrogates"] = [_model_info(m) for m in run.surrogates]
    # surrogate/target similarity is recorded, not measured: training-data
    # overlap is complete by construction, so only architecture identity and
    # the accuracy gap are reported
    gaps = [
        abs(m.meta.get("train_accuracy", 0.0) - run.target.meta.get("train_accuracy", 0.0))
        for m in run.surrogates
        if m.meta
    ]
    manifest = {
        "config": cfg,
        "config_hash": run.hash,
        "realized": realized,
        "dataset_checksum": run.dataset.manifest.checksum,
        "dataset_manifest": run.dataset.manifest.to_dict(),
        "models": model_info,
        "surrogate_accuracy_gap": gaps,
        "versions": {
            "bboxbench": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as f:
        f.write(canonical_json(manifest))

    for name, (_, traces) in results.items():
        for attack_id, trace in traces.items():
            if single:
                tdir = os.path.join(outdir, cfg["plan_id"], attack_id)
            else:
                tdir = os.path.join(outdir, cfg["plan_id"], name, attack_id)
            os.makedirs(tdir, exist_ok=True)
            path = os.path.join(tdir, f"{cfg['master_seed']}.trace.jsonl")
            with open(path, "w", encoding="utf-8") as f:
                for line in _trace_lines(trace):
                    f.write(json.dumps(line, sort_keys=True, allow_nan=False) + "\n")


def _model_info(net):
    return {"arch": net.label, "n_classes": net.n_classes,
            "input_shape": list(net.input_shape), "meta": net.meta}


# --- subcommands ----------------------------------------------------------------


def _cmd_train(args):
    cfg, _ = load_config(args.config)
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    run_dir = args.out
    if os.path.exists(run_dir) and os.listdir(run_dir) and not args.force:
        raise RunFailure(f"output directory {run_dir!r} is not empty (use --force)")
    os.makedirs(run_dir, exist_ok=True)
    run = ResolvedRun(cfg)
    save_net(run.target, os.path.join(run_dir, "target.bbnw"))
    saved = {"target": "target.bbnw"}
    if run.adv_target is not None:
        save_net(run.adv_target, os.path.join(run_dir, "adversarial_target.bbnw"))
        saved["adversarial_target"] = "adversarial_target.bbnw"
    for i, net in enumerate(run.surrogates):
        save_net(net, os.path.join(run_dir, f"surrogate_{i}.bbnw"))
        saved[f"surrogate_{i}"] = f"surrogate_{i}.bbnw"
    manifest = {
        "config": cfg,
        "config_hash": run.hash,
        "dataset_checksum": run.dataset.manifest.checksum,
        "models": {"target": _model_info(run.target), "files": saved},
    }
    with open(os.path.join(run_dir, "train_manifest.json"), "w", encoding="utf-8") as f:
        f.write(canonical_json(manifest))
    print(f"trained {len(saved)} model(s) -> {run_dir}")
    print(f"target train accuracy: {run.target.meta.get('train_accuracy'):.4f}")
    return 0


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.override_threat_model:
        cfg["override_threat_model"] = True
    if args.budget_mode is not None or args.budget_value is not None:
        if args.budget_mode is None or args.budget_value is None:
            raise RunFailure("--budget-mode and --budget-value must be given together")
        cfg["budget"] = {"mode": args.budget_mode, "value": args.budget_value}
    threads = os.environ.get("BBOX_BENCH_THREADS")
    if threads is not None:
        cfg["threads"] = int(threads)
    return cfg


def _run_plans(cfg, manifest_doc, out, force):
    run = ResolvedRun(cfg, manifest_doc)
    results = {}
    for setting in cfg["settings"]:
        plan = run.plan_for(setting)
        report, traces = run_benchmark(plan)
        results[setting["name"]] = (report, traces)
    write_results(out, run, results, force=force)
    return run, results


def _cmd_bench(args):
    cfg, manifest_doc = load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    if not cfg["attacks"]:
        raise RunFailure("bench needs at least one attack in the config")
    _, results = _run_plans(cfg, manifest_doc, args.out, args.force)
    for name, (report, _) in results.items():
        for attack, asr in report.time_ranking:
            print(f"{name}: {attack}: final ASR {asr:.3f}")
    print(f"results written to {args.out}")
    return 0


def _cmd_attack(args):
    cfg, manifest_doc = load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    if len(cfg["attacks"]) != 1:
        raise RunFailure("the attack subcommand runs exactly one attack; use bench for suites")
    if len(cfg["settings"]) != 1:
        raise RunFailure("the attack subcommand runs exactly one setting; use bench for sweeps")
    # gate before any model training so violations fail fast
    att = cfg["attacks"][0]
    tm_cfg = att["threat_model"] if att["threat_model"] is not None else cfg["threat_model"]
    violations = validate(profile_for(att["id"]), threat_model_from_config(tm_cfg))
    if violations and not cfg["override_threat_model"]:
        for v in violations:
            print(f"threat-model violation [{v.axis}]: {v.reason}", file=sys.stderr)
        raise RunFailure(f"attack {att['id']!r} cannot run under the declared threat model")
    _, results = _run_plans(cfg, manifest_doc, args.out, args.force)
    (report, _), = results.values()
    for s in report.series:
        print(f"{s.attack_id}: final ASR {s.final_asr:.3f} (cell {s.threat_cell})")
    print(f"results written to {args.out}")
    return 0


def _cmd_report(args):
    rdir = args.out
    try:
        with open(os.path.join(rdir, "report.json"), "r", encoding="utf-8") as f:
            report_doc = json.load(f)
        with open(os.path.join(rdir, "timing.json"), "r", encoding="utf-8") as f:
            timing_doc = json.load(f)
    except OSError as e:
        raise RunFailure(f"cannot read results in {rdir!r}: {e}") from e
    for name, core in report_doc["settings"].items():
        report = _rebuild_report(report_doc, name, core, timing_doc["settings"][name])
        plot_dir = os.path.join(rdir, "plots", name)
        paths = emit_plot_data(report, plot_dir)
        for p in paths.values():
            print(p)
    return 0


def _rebuild_report(doc, name, core, timing):
    series = []
    for s in core["series"]:
        series.append(
            AttackSeries(
                attack_id=s["attack_id"],
                index=s["index"],
                raw_asr=s["raw_asr"],
                best_so_far=s["best_so_far"],
                elapsed_s=timing["elapsed_s"][s["attack_id"]],
                local_loss=s["local_loss"],
                local_asr=s["local_asr"],
                final_asr=s["final_asr"],
                representative_asr=s["representative_asr"],
                threat_cell=s["threat_cell"],
                kind=s["kind"],
                queries_mean=s["queries_mean"],
                queries_median=s["queries_median"],
                warnings=s["warnings"],
            )
        )
    return Report(
        plan_id=doc["plan_id"],
        master_seed=doc["master_seed"],
        goal=core["goal"],
        epsilon=core["epsilon"],
        budget=Budget(core["budget"]["kind"], core["budget"]["value"]),
        representative_iteration=core["representative_iteration"],
        series=series,
        iteration_ranking=[tuple(x) for x in core["iteration_ranking"]],
        time_ranking=[tuple(x) for x in core["time_ranking"]],
        time_grid=timing["time_grid"],
        time_table=timing["time_table"],
        seed_filtering=core["seed_filtering"],
        overrides=core["overrides"],
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bboxbench",
        description="Black-box adversarial attack benchmark (transfer + query attacks)",
    )
    parser.add_argument("--version", action="version", version=f"bboxbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True,
                       help="config JSON path, a replay manifest.json, or 'paper-protocol'")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true",
                       help="overwrite a non-empty output directory")

    p_train = sub.add_parser("train", help="train and save the configured model zoo")
    common(p_train)
    p_train.set_defaults(func=_cmd_train)

    for name, func, helptext in (
        ("attack", _cmd_attack, "run a single attack under a declared threat model"),
        ("bench", _cmd_bench, "run a benchmark plan (all attacks x settings)"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--override-threat-model", action="store_true",
                       help="run despite threat-model violations (logged in the report)")
        p.add_argument("--budget-mode", choices=["iters", "seconds", "queries"], default=None)
        p.add_argument("--budget-value", type=float, default=None)
        p.set_defaults(func=func)

    p_report = sub.add_parser("report", help="emit plot CSVs from a results directory")
    p_report.add_argument("--out", required=True, help="results directory to read")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (RunFailure, ConfigError, DatasetError, PlanValidationError,
            NonFiniteLossError, StartNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
