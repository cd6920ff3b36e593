"""Interactive attacks against a black-box oracle."""

from .common import (
    AttackLedger,
    QueryBudget,
    QueryResult,
    StartNotFoundError,
    TraceRow,
    full_scores_loss,
    margin_loss,
    target_in_topk,
    topk_observable_loss,
)
from .hardlabel import rays_attack, signflip_attack
from .hybrid import hybrid_square
from .nes import nes_attack, nes_gradient, nes_gradient_estimate
from .square import ThresholdScheduler, square_attack, square_topk, window_fraction

__all__ = [
    "AttackLedger",
    "QueryBudget",
    "QueryResult",
    "StartNotFoundError",
    "ThresholdScheduler",
    "TraceRow",
    "full_scores_loss",
    "hybrid_square",
    "margin_loss",
    "nes_attack",
    "nes_gradient",
    "nes_gradient_estimate",
    "rays_attack",
    "signflip_attack",
    "square_attack",
    "square_topk",
    "target_in_topk",
    "topk_observable_loss",
    "window_fraction",
]
