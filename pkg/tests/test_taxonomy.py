import itertools

import pytest

from bboxbench.oracle import FeedbackMode
from bboxbench.taxonomy import (
    BUILTIN_PROFILES,
    CapabilityProfile,
    DataQuality,
    DataQuantity,
    Interactivity,
    ThreatModel,
    classify_cell,
    feedback_satisfies,
    profile_for,
    validate,
)


def tm(interactive, feedback=None, quality=DataQuality.NO_OVERLAP,
       quantity=DataQuantity.NOT_SUFFICIENT, pretrained=False):
    return ThreatModel(interactive, feedback, quality, quantity, pretrained)


HARD = tm(Interactivity.WITH_INTERACTIVE, FeedbackMode.hard_label())
FULL = tm(Interactivity.WITH_INTERACTIVE, FeedbackMode.full_scores())
TOP1 = tm(Interactivity.WITH_INTERACTIVE, FeedbackMode.top_k(1))


class TestValidate:
    def test_full_score_attack_rejected_under_hard_label(self):
        violations = validate(profile_for("nes"), HARD)
        assert [v.axis for v in violations] == ["feedback"]

    def test_square_topk_ok_under_top1(self):
        assert validate(profile_for("square-topk"), TOP1) == []

    def test_transfer_ok_without_interaction_given_pretrained_surrogates(self):
        model = tm(Interactivity.NO_INTERACTIVE, pretrained=True)
        assert validate(profile_for("i-fgsm"), model) == []

    def test_transfer_needs_surrogates(self):
        model = tm(Interactivity.NO_INTERACTIVE, pretrained=False)
        violations = validate(profile_for("mi-fgsm"), model)
        assert [v.axis for v in violations] == ["surrogates"]

    def test_sufficient_data_substitutes_for_pretrained_surrogates(self):
        model = tm(Interactivity.NO_INTERACTIVE, quantity=DataQuantity.SUFFICIENT)
        assert validate(profile_for("mi-fgsm"), model) == []

    def test_interactive_attack_rejected_without_interaction(self):
        model = tm(Interactivity.NO_INTERACTIVE, pretrained=True)
        violations = validate(profile_for("square"), model)
        assert [v.axis for v in violations] == ["interactive"]

    def test_hybrid_needs_both(self):
        violations = validate(profile_for("hybrid-square"), HARD)
        assert {v.axis for v in violations} == {"feedback", "surrogates"}
        assert validate(
            profile_for("hybrid-square"),
            tm(Interactivity.WITH_INTERACTIVE, FeedbackMode.full_scores(), pretrained=True),
        ) == []

    def test_aux_data_requirement(self):
        profile = CapabilityProfile(False, needs_aux_data="sufficient")
        assert validate(profile, tm(Interactivity.NO_INTERACTIVE)) != []
        assert validate(
            profile, tm(Interactivity.NO_INTERACTIVE, quantity=DataQuantity.SUFFICIENT)
        ) == []

    def test_insufficient_ok_accepts_any_quantity(self):
        profile = CapabilityProfile(False, needs_aux_data="insufficient-ok")
        for quantity in DataQuantity:
            assert validate(profile, tm(Interactivity.NO_INTERACTIVE, quantity=quantity)) == []


class TestFeedbackOrdering:
    def test_total_order(self):
        hard, top2, full = (
            FeedbackMode.hard_label(), FeedbackMode.top_k(2), FeedbackMode.full_scores()
        )
        assert feedback_satisfies(full, hard) and feedback_satisfies(full, top2)
        assert feedback_satisfies(top2, hard)
        assert not feedback_satisfies(hard, top2)
        assert not feedback_satisfies(top2, full)

    def test_topk_k_monotone(self):
        assert feedback_satisfies(FeedbackMode.top_k(3), FeedbackMode.top_k(2))
        assert feedback_satisfies(FeedbackMode.top_k(2), FeedbackMode.top_k(2))
        assert not feedback_satisfies(FeedbackMode.top_k(1), FeedbackMode.top_k(2))


def all_threat_models():
    feedbacks = [FeedbackMode.hard_label(), FeedbackMode.top_k(1),
                 FeedbackMode.top_k(2), FeedbackMode.full_scores()]
    models = []
    for quality, quantity, pretrained in itertools.product(
        DataQuality, DataQuantity, (False, True)
    ):
        models.append(tm(Interactivity.NO_INTERACTIVE, None, quality, quantity, pretrained))
        for feedback in feedbacks:
            models.append(
                tm(Interactivity.WITH_INTERACTIVE, feedback, quality, quantity, pretrained)
            )
    return models


def relaxations(model):
    """Every single-axis relaxation of a threat model (more attacker power)."""
    out = []
    if model.interactive is Interactivity.NO_INTERACTIVE:
        for fb in (FeedbackMode.hard_label(), FeedbackMode.full_scores()):
            out.append(tm(Interactivity.WITH_INTERACTIVE, fb, model.data_quality,
                          model.data_quantity, model.pretrained_surrogate))
    else:
        rank = {"hard-label": 0, "top-k": 1, "full-scores": 2}[model.feedback.kind]
        better = []
        if rank == 0:
            better = [FeedbackMode.top_k(1), FeedbackMode.full_scores()]
        elif rank == 1:
            better = [FeedbackMode.top_k(model.feedback.k + 1), FeedbackMode.full_scores()]
        for fb in better:
            out.append(tm(model.interactive, fb, model.data_quality,
                          model.data_quantity, model.pretrained_surrogate))
    qualities = list(DataQuality)
    qi = qualities.index(model.data_quality)
    for q in qualities[qi + 1 :]:
        out.append(tm(model.interactive, model.feedback, q, model.data_quantity,
                      model.pretrained_surrogate))
    if model.data_quantity is DataQuantity.NOT_SUFFICIENT:
        out.append(tm(model.interactive, model.feedback, model.data_quality,
                      DataQuantity.SUFFICIENT, model.pretrained_surrogate))
    if not model.pretrained_surrogate:
        out.append(tm(model.interactive, model.feedback, model.data_quality,
                      model.data_quantity, True))
    return out


def test_validate_is_monotone_under_relaxation():
    profiles = list(BUILTIN_PROFILES.values()) + [
        CapabilityProfile(False, needs_aux_data="sufficient"),
        CapabilityProfile(True, FeedbackMode.top_k(2), needs_surrogates=True,
                          needs_aux_data="insufficient-ok"),
    ]
    for profile in profiles:
        for model in all_threat_models():
            if validate(profile, model):
                continue
            for relaxed in relaxations(model):
                assert validate(profile, relaxed) == [], (profile, model, relaxed)


class TestClassifyCell:
    def test_full_scores_cell(self):
        model = tm(Interactivity.WITH_INTERACTIVE, FeedbackMode.full_scores(),
                   DataQuality.NO_OVERLAP, DataQuantity.NOT_SUFFICIENT)
        assert classify_cell(model) == "none/insufficient/full-scores"

    def test_no_interactive_cell(self):
        model = tm(Interactivity.NO_INTERACTIVE, None,
                   DataQuality.COMPLETE_OVERLAP, DataQuantity.SUFFICIENT)
        assert classify_cell(model) == "complete/sufficient/no-interactive"

    def test_equal_models_equal_labels(self):
        a = tm(Interactivity.WITH_INTERACTIVE, FeedbackMode.top_k(2),
               DataQuality.PARTIAL_OVERLAP, DataQuantity.SUFFICIENT, True)
        b = tm(Interactivity.WITH_INTERACTIVE, FeedbackMode.top_k(2),
               DataQuality.PARTIAL_OVERLAP, DataQuantity.SUFFICIENT, True)
        assert classify_cell(a) == classify_cell(b) == "partial/sufficient/top-k"

    def test_cell_labels_distinct_across_space(self):
        labels = [classify_cell(m) for m in all_threat_models()]
        # pretrained flag and k do not enter the cell name; everything else does
        assert len(set(labels)) == 3 * 2 * 4


class TestThreatModelInvariants:
    def test_non_interactive_cannot_declare_feedback(self):
        with pytest.raises(ValueError):
            tm(Interactivity.NO_INTERACTIVE, FeedbackMode.hard_label())

    def test_interactive_requires_feedback(self):
        with pytest.raises(ValueError):
            tm(Interactivity.WITH_INTERACTIVE, None)

    def test_every_shipped_attack_has_a_profile(self):
        from bboxbench.harness import QUERY_ATTACKS, TRANSFER_ATTACKS

        for attack in TRANSFER_ATTACKS + QUERY_ATTACKS:
            assert profile_for(attack) is not None

    def test_unknown_attack_profile_raises(self):
        with pytest.raises(KeyError):
            profile_for("warp-drive")
