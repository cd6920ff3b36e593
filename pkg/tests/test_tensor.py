import numpy as np
import numpy.testing as npt
import pytest

from bboxbench.tensor import (
    PerturbationBudget,
    ShapeMismatchError,
    l1_normalize,
    l1_normalize_per_example,
    linf_distance,
    make_rng,
    project_linf,
    sign,
)


def batch(value, shape=(1, 1, 2, 2)):
    return np.full(shape, value, dtype=np.float64)


class TestProjectLinf:
    def test_clamp_forced(self):
        out = project_linf(batch(0.9), batch(0.5), PerturbationBudget(0.2))
        npt.assert_allclose(out, 0.7)

    def test_zero_budget_identity(self):
        x = np.random.default_rng(0).random((2, 1, 3, 3))
        npt.assert_array_equal(project_linf(x, x, PerturbationBudget(0.0)), x)

    def test_valid_range_clamp_dominates(self):
        out = project_linf(batch(-0.3), batch(0.05), PerturbationBudget(0.2))
        npt.assert_allclose(out, 0.0)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        cand = rng.random((3, 2, 4, 4)) * 2 - 0.5
        orig = rng.random((3, 2, 4, 4))
        once = project_linf(cand, orig, PerturbationBudget(0.1))
        npt.assert_array_equal(project_linf(once, orig, PerturbationBudget(0.1)), once)

    def test_result_feasible(self):
        rng = np.random.default_rng(2)
        cand = rng.random((4, 1, 5, 5)) * 3 - 1
        orig = rng.random((4, 1, 5, 5))
        out = project_linf(cand, orig, PerturbationBudget(0.07))
        assert np.abs(out - orig).max() <= 0.07 + 1e-15
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            project_linf(batch(0.5), batch(0.5, (1, 1, 3, 3)), PerturbationBudget(0.1))


class TestSign:
    def test_examples(self):
        npt.assert_array_equal(sign([-2.5, 0.0, 3.0]), [-1.0, 0.0, 1.0])

    def test_all_zero(self):
        npt.assert_array_equal(sign(np.zeros(5)), np.zeros(5))

    def test_idempotent_on_random(self):
        v = np.random.default_rng(3).standard_normal(1000)
        npt.assert_array_equal(sign(sign(v)), sign(v))


class TestL1Normalize:
    def test_example(self):
        npt.assert_allclose(l1_normalize([0.5, -0.25]), [2 / 3, -1 / 3])

    def test_zero_vector(self):
        npt.assert_array_equal(l1_normalize(np.zeros(4)), np.zeros(4))

    def test_unit_norm_on_random(self):
        for seed in range(20):
            v = np.random.default_rng(seed).standard_normal(64)
            assert abs(np.abs(l1_normalize(v)).sum() - 1.0) <= 1e-9

    def test_per_example_independent(self):
        v = np.random.default_rng(9).standard_normal((3, 1, 2, 2))
        out = l1_normalize_per_example(v)
        for e in range(3):
            npt.assert_allclose(out[e].ravel(), l1_normalize(v[e].ravel()))


class TestLinfDistance:
    def test_equal_is_zero(self):
        x = np.random.default_rng(4).random((2, 1, 3, 3))
        npt.assert_array_equal(linf_distance(x, x), [0.0, 0.0])

    def test_single_coordinate(self):
        a = batch(0.5)
        b = a.copy()
        b[0, 0, 1, 1] += 0.3
        npt.assert_allclose(linf_distance(a, b), [0.3])

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(5)
        a = rng.random((4, 2, 3, 5))
        b = rng.random((4, 2, 3, 5))
        got = linf_distance(a, b)
        for e in range(4):
            best = 0.0
            for c in range(2):
                for i in range(3):
                    for j in range(5):
                        best = max(best, abs(a[e, c, i, j] - b[e, c, i, j]))
            assert got[e] == pytest.approx(best, abs=0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            linf_distance(batch(0.1), batch(0.1, (1, 1, 3, 3)))


class TestRngStreams:
    def test_same_triple_identical(self):
        a = make_rng(42, 3, "square").gen.random(100)
        b = make_rng(42, 3, "square").gen.random(100)
        npt.assert_array_equal(a, b)

    def test_example_index_separates(self):
        a = make_rng(42, 0, "square").gen.random(20)
        b = make_rng(42, 1, "square").gen.random(20)
        assert not np.array_equal(a, b)

    def test_purpose_separates(self):
        a = make_rng(42, 0, "square").gen.random(20)
        b = make_rng(42, 0, "nes").gen.random(20)
        assert not np.array_equal(a, b)

    def test_order_independent(self):
        first = [make_rng(7, e, "p").gen.random(10) for e in range(4)]
        second = [make_rng(7, e, "p").gen.random(10) for e in reversed(range(4))]
        for e in range(4):
            npt.assert_array_equal(first[e], second[3 - e])

    def test_uniform_mean(self):
        draws = make_rng(11, 0, "mc").gen.random(100_000)
        assert abs(draws.mean() - 0.5) <= 0.02

    def test_split_derives_new_stream(self):
        base = make_rng(1, 2, "a")
        child = base.split("b")
        assert not np.array_equal(base.gen.random(10), child.gen.random(10))
        again = make_rng(1, 2, "a").split("b")
        npt.assert_array_equal(child.gen.random(5), again.gen.random(15)[10:])
