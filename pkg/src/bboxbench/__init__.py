"""bboxbench: black-box adversarial attacks and a time-normalized benchmark.

Transfer attacks (the iterative FGSM family) run against white-box
surrogate ensembles; query attacks (square, NES, RayS, sign-flip, and the
square top-k adaptation) run against oracles with hard-label, top-k, or
full-score feedback; a taxonomy layer validates attack capabilities against
declared threat models; and the harness evaluates everything under
iteration, query, or wall-clock budgets with both iteration-indexed and
time-indexed success curves.
"""

__version__ = "0.1.0"

from .data import Dataset, ingest_idx, synth_dataset
from .harness import (
    AttackTrace,
    BenchmarkPlan,
    Budget,
    PlanEntry,
    Report,
    emit_plot_data,
    eval_asr,
    offset_targets,
    run_benchmark,
    summarize,
)
from .nets import DifferentiableNet, make_net
from .oracle import FeedbackMode, Oracle, evaluation_oracle
from .query import (
    QueryBudget,
    ThresholdScheduler,
    hybrid_square,
    nes_attack,
    nes_gradient,
    rays_attack,
    signflip_attack,
    square_attack,
    square_topk,
)
from .taxonomy import (
    BUILTIN_PROFILES,
    CapabilityProfile,
    DataQuality,
    DataQuantity,
    Interactivity,
    ThreatModel,
    classify_cell,
    profile_for,
    validate,
)
from .tensor import (
    PerturbationBudget,
    RngStream,
    l1_normalize,
    linf_distance,
    make_rng,
    project_linf,
    sign,
)
from .train import AdversarialSpec, TrainConfig, train
from .transfer import (
    TransferConfig,
    ensemble_gradient,
    iter_transfer_attack,
    ods_direction,
    run_transfer_attack,
)
from .weights_io import load_net, load_tensor, save_net, save_tensor

__all__ = [
    "AdversarialSpec",
    "AttackTrace",
    "BUILTIN_PROFILES",
    "BenchmarkPlan",
    "Budget",
    "CapabilityProfile",
    "Dataset",
    "DataQuality",
    "DataQuantity",
    "DifferentiableNet",
    "FeedbackMode",
    "Interactivity",
    "Oracle",
    "PerturbationBudget",
    "PlanEntry",
    "QueryBudget",
    "Report",
    "RngStream",
    "ThreatModel",
    "ThresholdScheduler",
    "TrainConfig",
    "TransferConfig",
    "classify_cell",
    "emit_plot_data",
    "ensemble_gradient",
    "eval_asr",
    "evaluation_oracle",
    "hybrid_square",
    "ingest_idx",
    "iter_transfer_attack",
    "l1_normalize",
    "linf_distance",
    "load_net",
    "load_tensor",
    "make_net",
    "make_rng",
    "nes_attack",
    "nes_gradient",
    "ods_direction",
    "offset_targets",
    "profile_for",
    "project_linf",
    "rays_attack",
    "run_benchmark",
    "run_transfer_attack",
    "save_net",
    "save_tensor",
    "sign",
    "signflip_attack",
    "square_attack",
    "square_topk",
    "summarize",
    "synth_dataset",
    "train",
    "validate",
]
