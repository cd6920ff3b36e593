"""Executable threat-model taxonomy with capability validation.

Threat models declare what a target API exposes (interactive access,
feedback granularity) and what the attacker brings (auxiliary data quality
and quantity, pretrained surrogates). Every attack in this package carries
a CapabilityProfile; validate() decides whether an attack is runnable under
a declared threat model, so benchmarks only ever compare attacks inside the
same threat space.
"""

from dataclasses import dataclass
from enum import Enum

from .oracle import FeedbackMode


class Interactivity(Enum):
    NO_INTERACTIVE = "no-interactive"
    WITH_INTERACTIVE = "with-interactive"


class DataQuality(Enum):
    NO_OVERLAP = "none"
    PARTIAL_OVERLAP = "partial"
    COMPLETE_OVERLAP = "complete"


class DataQuantity(Enum):
    NOT_SUFFICIENT = "insufficient"
    SUFFICIENT = "sufficient"


@dataclass(frozen=True)
class ThreatModel:
    interactive: Interactivity
    feedback: FeedbackMode | None = None  # meaningful only when interactive
    data_quality: DataQuality = DataQuality.NO_OVERLAP
    data_quantity: DataQuantity = DataQuantity.NOT_SUFFICIENT
    pretrained_surrogate: bool = False

    def __post_init__(self):
        if self.interactive is Interactivity.NO_INTERACTIVE and self.feedback is not None:
            raise ValueError("a non-interactive threat model cannot declare feedback")
        if self.interactive is Interactivity.WITH_INTERACTIVE and self.feedback is None:
            raise ValueError("an interactive threat model must declare feedback")


@dataclass(frozen=True)
class Violation:
    axis: str
    reason: str


@dataclass(frozen=True)
class CapabilityProfile:
    """What an attack needs from the threat model to be runnable."""

    needs_interaction: bool
    min_feedback: FeedbackMode | None = None  # defined only if needs_interaction
    needs_surrogates: bool = False
    needs_aux_data: str = "none"  # "none" | "insufficient-ok" | "sufficient"

    def __post_init__(self):
        if self.needs_aux_data not in ("none", "insufficient-ok", "sufficient"):
            raise ValueError(f"bad needs_aux_data {self.needs_aux_data!r}")
        if self.needs_interaction and self.min_feedback is None:
            raise ValueError("an interactive profile must state its minimum feedback")
        if not self.needs_interaction and self.min_feedback is not None:
            raise ValueError("min_feedback is defined only for interactive profiles")


_FEEDBACK_RANK = {"hard-label": 0, "top-k": 1, "full-scores": 2}


def feedback_satisfies(available: FeedbackMode, required: FeedbackMode) -> bool:
    """Order hard-label < top-k < full-scores; TopK(k) is met by TopK(k'>=k)."""
    ra, rr = _FEEDBACK_RANK[available.kind], _FEEDBACK_RANK[required.kind]
    if ra != rr:
        return ra > rr
    if available.kind == "top-k":
        return available.k >= required.k
    return True


def validate(profile: CapabilityProfile, tm: ThreatModel) -> list[Violation]:
    """Empty list means Ok; otherwise one Violation per unmet axis."""
    violations = []
    if profile.needs_interaction:
        if tm.interactive is Interactivity.NO_INTERACTIVE:
            violations.append(
                Violation("interactive", "attack needs interactive query access")
            )
        elif not feedback_satisfies(tm.feedback, profile.min_feedback):
            violations.append(
                Violation(
                    "feedback",
                    f"attack needs at least {_mode_label(profile.min_feedback)}, "
                    f"API provides {_mode_label(tm.feedback)}",
                )
            )
    if profile.needs_surrogates:
        # sufficient auxiliary data lets the attacker train surrogates itself
        if not (tm.pretrained_surrogate or tm.data_quantity is DataQuantity.SUFFICIENT):
            violations.append(
                Violation(
                    "surrogates",
                    "attack needs surrogate models (pretrained or trainable from "
                    "sufficient auxiliary data)",
                )
            )
    if profile.needs_aux_data == "sufficient" and tm.data_quantity is not DataQuantity.SUFFICIENT:
        violations.append(
            Violation("data-quantity", "attack needs a sufficient quantity of auxiliary data")
        )
    return violations


def _mode_label(mode: FeedbackMode) -> str:
    if mode.kind == "top-k":
        return f"top-k(k={mode.k})"
    return mode.kind


def classify_cell(tm: ThreatModel) -> str:
    """Stable quality/quantity/access cell label for reports."""
    if tm.interactive is Interactivity.NO_INTERACTIVE:
        access = "no-interactive"
    else:
        access = tm.feedback.kind
    return f"{tm.data_quality.value}/{tm.data_quantity.value}/{access}"


# Built-in profiles for every attack shipped in this package. Transfer
# attacks need surrogates and no interaction; the query attacks need the
# feedback level their acceptance rule reads; Hybrid-Square needs both.
_TRANSFER = CapabilityProfile(needs_interaction=False, needs_surrogates=True)

BUILTIN_PROFILES = {
    "i-fgsm": _TRANSFER,
    "mi-fgsm": _TRANSFER,
    "ni-fgsm": _TRANSFER,
    "vmi-fgsm": _TRANSFER,
    "vni-fgsm": _TRANSFER,
    "emi-fgsm": _TRANSFER,
    "smi-fgsm": _TRANSFER,
    "smimi-fgsm": _TRANSFER,
    "midi-fgsm": _TRANSFER,
    "admix-fgsm": _TRANSFER,
    "square": CapabilityProfile(True, FeedbackMode.full_scores()),
    "square-topk": CapabilityProfile(True, FeedbackMode.top_k(1)),
    "nes": CapabilityProfile(True, FeedbackMode.full_scores()),
    "nes-topk": CapabilityProfile(True, FeedbackMode.top_k(1)),
    "rays": CapabilityProfile(True, FeedbackMode.hard_label()),
    "signflip": CapabilityProfile(True, FeedbackMode.hard_label()),
    "hybrid-square": CapabilityProfile(
        True, FeedbackMode.full_scores(), needs_surrogates=True
    ),
}


def profile_for(attack_id: str) -> CapabilityProfile:
    try:
        return BUILTIN_PROFILES[attack_id]
    except KeyError:
        raise KeyError(f"no built-in capability profile for attack {attack_id!r}") from None
