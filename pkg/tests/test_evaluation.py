import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from sandshaper.evaluation import (mann_whitney_u, metric_changed,
                                   metric_execution, metric_height_diff,
                                   results_to_csv, run_benchmark,
                                   significance_stars, summarize)
from sandshaper.goals import GoalSpec, gen_goal
from sandshaper.heightfield import HeightMap

H0 = 0.06


def uniform_goal(depth=0.01) -> GoalSpec:
    heights = np.full((32, 32), H0)
    heights[10:16, 10:16] = H0 - depth
    return GoalSpec(HeightMap(heights, 0.01), heights != H0, "rectangle", "t", H0)


class TestHeightDiff:
    def test_perfect_shaping_is_zero(self):
        g = uniform_goal()
        assert metric_height_diff(g.goal_map, g) == 0.0

    def test_untouched_bed_equals_goal_depth(self):
        g = uniform_goal(depth=0.01)
        flat = HeightMap.flat(32, 32, H0, 0.01)
        assert metric_height_diff(flat, g) == pytest.approx(0.01, rel=1e-9)


class TestChanged:
    def test_untouched_is_zero(self):
        g = uniform_goal()
        assert metric_changed(HeightMap.flat(32, 32, H0, 0.01), g) == 0.0

    def test_all_lowered_is_hundred(self):
        g = uniform_goal()
        h = np.full((32, 32), H0)
        h[g.goal_mask] -= 0.001
        assert metric_changed(HeightMap(h, 0.01), g) == 100.0

    def test_monotone_in_threshold(self):
        g = uniform_goal()
        h = np.full((32, 32), H0)
        rng = np.random.default_rng(0)
        h[g.goal_mask] -= rng.uniform(0, 0.003, int(g.goal_mask.sum()))
        values = [metric_changed(HeightMap(h, 0.01), g, eps)
                  for eps in (1e-4, 5e-4, 1e-3, 2e-3)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestExecution:
    def test_never_enters_counts_zero(self):
        assert metric_execution([False] * 40) == 0

    def test_hand_trace(self):
        assert metric_execution([True, True, False, False, False, False]) == 2

    def test_no_exit_window_counts_full_length(self):
        flags = [True, False, False, True] * 10
        assert metric_execution(flags) == 40

    def test_leading_outs_before_entry_ignored(self):
        flags = [False] * 5 + [True] * 4 + [False] * 3
        assert metric_execution(flags) == 9

    def test_empty(self):
        assert metric_execution([]) == 0


class TestMannWhitney:
    def test_identical_samples(self):
        _, p = mann_whitney_u([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert p == 1.0

    def test_exact_enumeration_case(self):
        u, p = mann_whitney_u((1, 2, 3), (4, 5, 6))
        assert u == 0.0
        assert p == 0.1  # 2 * 1/20, exact

    def test_exact_symmetry(self):
        _, p1 = mann_whitney_u((1, 2, 3), (4, 5, 6))
        _, p2 = mann_whitney_u((4, 5, 6), (1, 2, 3))
        assert p1 == p2

    def test_stars(self):
        assert significance_stars(0.05) == ""
        assert significance_stars(0.005) == "**"
        assert significance_stars(0.0005) == "***"

    def test_degenerate_constant_sample(self):
        _, p = mann_whitney_u([2.0] * 30, [2.0] * 25)
        assert p == 1.0

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            mann_whitney_u([], [1.0])

    @given(st.lists(st.integers(0, 8), min_size=9, max_size=40),
           st.lists(st.integers(0, 8), min_size=9, max_size=40))
    @settings(max_examples=60)
    def test_matches_scipy_normal_approximation(self, a, b):
        u, p = mann_whitney_u(a, b)
        ref = scipy.stats.mannwhitneyu(a, b, alternative="two-sided",
                                       use_continuity=True, method="asymptotic")
        assert u == pytest.approx(ref.statistic, abs=1e-9)
        assert p == pytest.approx(ref.pvalue, rel=1e-9)

    @given(st.lists(st.floats(0, 10, allow_nan=False), min_size=9, max_size=30),
           st.lists(st.floats(0, 10, allow_nan=False), min_size=9, max_size=30))
    @settings(max_examples=60)
    def test_two_sided_symmetry_property(self, a, b):
        _, p1 = mann_whitney_u(a, b)
        _, p2 = mann_whitney_u(b, a)
        assert p1 == pytest.approx(p2, rel=1e-12)


@pytest.fixture(scope="module")
def small_goals():
    return [gen_goal("rectangle", seed=[70, i], goal_id=f"r{i}") for i in range(3)]


class TestRunBenchmark:

    def test_deterministic_csv(self, small_goals):
        r1, _ = run_benchmark("rand", small_goals, episodes=4, seed=5)
        r2, _ = run_benchmark("rand", small_goals, episodes=4, seed=5)
        assert results_to_csv(r1) == results_to_csv(r2)

    def test_summary_shape_and_goal_cycling(self, small_goals):
        results, traces = run_benchmark("rand", small_goals, episodes=4, seed=5)
        assert [r.goal_id for r in results] == ["r0", "r1", "r2", "r0"]
        summary = summarize(results)
        for key in ("height_diff_mm", "changed_pct", "execution_steps"):
            mean, std = summary[key]
            assert np.isfinite(mean) and np.isfinite(std)

    def test_execution_recomputable_from_trace(self, small_goals):
        results, traces = run_benchmark("bcpp", small_goals, episodes=3, seed=2)
        for res, trace in zip(results, traces):
            assert res.execution_steps == metric_execution(trace.in_medium_flags())
            assert res.changed_pct == 100.0

    def test_unknown_approach(self, small_goals):
        with pytest.raises(ValueError):
            run_benchmark("ppo", small_goals, episodes=1, seed=0)
