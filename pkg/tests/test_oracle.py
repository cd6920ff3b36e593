import threading

import numpy as np
import numpy.testing as npt
import pytest

from bboxbench.layers import Affine, Flatten
from bboxbench.nets import DifferentiableNet
from bboxbench.oracle import (
    FeedbackMode,
    FullScores,
    HardLabel,
    Oracle,
    TopKScores,
    evaluation_oracle,
)


def bias_net(bias):
    """Every input maps to the given logits; handy for exact feedback checks."""
    bias = np.asarray(bias, dtype=np.float64)
    n = len(bias)
    return DifferentiableNet(
        [Flatten(), Affine(np.zeros((2, n)), bias)], n, "bias", (1, 1, 2)
    )


X = np.zeros((1, 1, 1, 2))


def softmax_oracle(logits):
    e = np.exp(np.asarray(logits, dtype=np.float64))
    return e / e.sum()


class TestFeedback:
    def test_full_scores_example(self):
        oracle = Oracle(bias_net([2.0, 1.0, 0.0]), FeedbackMode.full_scores())
        (fb,) = oracle.query(X)
        npt.assert_allclose(fb.probs, softmax_oracle([2.0, 1.0, 0.0]), rtol=1e-12)
        npt.assert_allclose(fb.probs, [0.6652, 0.2447, 0.0900], atol=5e-5)

    def test_topk_example(self):
        oracle = Oracle(bias_net([2.0, 1.0, 0.0]), FeedbackMode.top_k(2))
        (fb,) = oracle.query(X)
        assert isinstance(fb, TopKScores)
        assert [cls for cls, _ in fb.entries] == [0, 1]
        npt.assert_allclose(
            [p for _, p in fb.entries], softmax_oracle([2.0, 1.0, 0.0])[:2], rtol=1e-12
        )

    def test_hard_label_example(self):
        oracle = Oracle(bias_net([2.0, 1.0, 0.0]), FeedbackMode.hard_label())
        (fb,) = oracle.query(X)
        assert fb == HardLabel(0)

    def test_ties_break_to_lower_class(self):
        oracle = Oracle(bias_net([1.0, 1.0, 0.0]), FeedbackMode.top_k(2))
        (fb,) = oracle.query(X)
        assert [cls for cls, _ in fb.entries] == [0, 1]
        hard = Oracle(bias_net([1.0, 1.0, 0.0]), FeedbackMode.hard_label())
        assert hard.query(X)[0].label == 0

    def test_hard_label_equals_argmax_of_full_scores(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            bias = rng.standard_normal(5) * 3
            hard = Oracle(bias_net(bias), FeedbackMode.hard_label()).query(X)[0]
            full = Oracle(bias_net(bias), FeedbackMode.full_scores()).query(X)[0]
            assert hard.label == int(np.argmax(full.probs))

    def test_topk_plus_residual_reconstructs_full_scores(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            bias = rng.standard_normal(4) * 2
            full = Oracle(bias_net(bias), FeedbackMode.full_scores()).query(X)[0]
            topk = Oracle(bias_net(bias), FeedbackMode.top_k(3)).query(X)[0]
            residual = 1.0 - sum(p for _, p in topk.entries)
            rebuilt = np.empty(4)
            seen = set()
            for cls, p in topk.entries:
                rebuilt[cls] = p
                seen.add(cls)
            (missing,) = set(range(4)) - seen
            rebuilt[missing] = residual
            npt.assert_allclose(rebuilt, full.probs, atol=1e-9)

    def test_full_scores_sum_to_one(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            fb = Oracle(bias_net(rng.standard_normal(6) * 5), FeedbackMode.full_scores())
            (row,) = fb.query(X)
            assert row.probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert (row.probs >= 0).all() and (row.probs <= 1).all()

    def test_topk_k_bounds(self):
        with pytest.raises(ValueError):
            Oracle(bias_net([0.0, 1.0, 2.0]), FeedbackMode.top_k(3))
        with pytest.raises(ValueError):
            FeedbackMode.top_k(0)


class TestQueryCounting:
    def test_fresh_oracle_zero(self):
        assert Oracle(bias_net([0.0, 1.0]), FeedbackMode.full_scores()).query_count() == 0

    def test_batch_of_five(self):
        oracle = Oracle(bias_net([0.0, 1.0]), FeedbackMode.full_scores())
        oracle.query(np.zeros((5, 1, 1, 2)))
        assert oracle.query_count() == 5

    def test_evaluation_oracle_never_counts(self):
        oracle = evaluation_oracle(bias_net([0.0, 1.0]))
        oracle.query(np.zeros((7, 1, 1, 2)))
        oracle.predict_labels(np.zeros((7, 1, 1, 2)))
        assert oracle.query_count() == 0

    def test_concurrent_counting_is_exact(self):
        oracle = Oracle(bias_net([0.0, 1.0]), FeedbackMode.full_scores())

        def work():
            for _ in range(50):
                oracle.query(np.zeros((2, 1, 1, 2)))

        threads = [threading.Thread(target=work) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert oracle.query_count() == 4 * 50 * 2

    def test_feedback_values_match_across_roles(self):
        attack = Oracle(bias_net([0.3, -0.2, 1.0]), FeedbackMode.full_scores())
        evaln = evaluation_oracle(bias_net([0.3, -0.2, 1.0]))
        npt.assert_array_equal(attack.query(X)[0].probs, evaln.query(X)[0].probs)
        assert isinstance(attack.query(X)[0], FullScores)
