"""Statistics: F1, confidence intervals, Kruskal-Wallis, reward reports."""

from pathlib import Path

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_kruskal_h, midranks
from simforge.scene import NO_OBJECT
from simforge.stats import (
    CONDITION_ORDER,
    ConfusionCounts,
    RewardSummary,
    RunSample,
    aggregate_rewards,
    confusion_from_matches,
    f1,
    kruskal_wallis,
    mean_ci,
    render_report,
)

GOLDEN = Path(__file__).parent / "golden"


class TestF1:
    def test_reference_case_exact(self):
        assert f1(ConfusionCounts(tp=8, fp=1, fn=2)) == 16 / 19

    def test_zero_denominator(self):
        assert f1(ConfusionCounts()) == 0.0

    def test_perfect(self):
        assert f1(ConfusionCounts(tp=5)) == 1.0


class TestConfusion:
    def test_semantics(self):
        truth = {
            "c1": "food/banana",   # predicted right -> tp
            "c2": "food/banana",   # predicted wrong asset -> fp
            "c3": "kitchen/mug",   # predicted NO_OBJECT -> fn
            "c4": NO_OBJECT,        # both agree it is nothing -> no count
            "c5": NO_OBJECT,        # predicted an asset on a non-object -> fp
        }
        predictions = {
            "c1": "food/banana",
            "c2": "food/soup-can",
            "c3": NO_OBJECT,
            "c4": NO_OBJECT,
            "c5": "kitchen/mug",
        }
        counts = confusion_from_matches(predictions, truth)
        assert (counts.tp, counts.fp, counts.fn) == (1, 2, 1)

    def test_missing_predictions_skipped(self):
        counts = confusion_from_matches({}, {"c1": "a"})
        assert (counts.tp, counts.fp, counts.fn) == (0, 0, 0)

    def test_counts_add(self):
        total = ConfusionCounts(tp=1, fp=2, fn=3) + ConfusionCounts(tp=4, fp=5, fn=6)
        assert (total.tp, total.fp, total.fn) == (5, 7, 9)


class TestMeanCI:
    def test_frozen_three_point_case(self):
        # t(0.975, df=2) half-width 0.89567 would cross both bounds; clipped.
        mean, lo, hi = mean_ci([0.2, 0.4, 0.9])
        assert mean == pytest.approx(0.5)
        assert lo == 0.0
        assert hi == 1.0

    def test_single_value_is_point(self):
        assert mean_ci([0.7]) == (0.7, 0.7, 0.7)

    def test_matches_scipy_t_interval(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(2, 12))
            data = rng.uniform(0.3, 0.7, size=n).tolist()
            mean, lo, hi = mean_ci(data)
            ref_lo, ref_hi = scipy.stats.t.interval(
                0.95, n - 1, loc=np.mean(data), scale=scipy.stats.sem(data)
            )
            assert mean == pytest.approx(np.mean(data))
            assert lo == pytest.approx(max(0.0, ref_lo), abs=1e-12)
            assert hi == pytest.approx(min(1.0, ref_hi), abs=1e-12)

    def test_identical_values_zero_width(self):
        mean, lo, hi = mean_ci([0.5, 0.5, 0.5])
        assert mean == lo == hi == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_ci([])


class TestKruskalWallis:
    def test_reference_case(self):
        h, p = kruskal_wallis([[1, 2, 3], [4, 5, 6]])
        assert h == pytest.approx(27 / 7, abs=1e-3)
        assert p == pytest.approx(0.04953461343562649, abs=1e-9)

    def test_identical_groups(self):
        h, p = kruskal_wallis([[2, 2], [2, 2, 2]])
        assert h == 0.0
        assert p == 1.0

    def test_needs_two_groups(self):
        with pytest.raises(ValueError):
            kruskal_wallis([[1, 2, 3]])
        with pytest.raises(ValueError):
            kruskal_wallis([[1, 2], []])

    def test_midranks_average_ties(self):
        assert midranks([10, 20, 20, 30]) == [1.0, 2.5, 2.5, 4.0]

    def test_hundred_random_tie_cases_match_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            k = int(rng.integers(2, 5))
            groups = [
                rng.integers(0, 4, size=int(rng.integers(1, 7))).tolist() for _ in range(k)
            ]
            h, p = kruskal_wallis(groups)
            expected = brute_force_kruskal_h(groups)
            if expected is None:
                assert (h, p) == (0.0, 1.0)
            else:
                assert h == pytest.approx(expected, abs=1e-9)
                assert 0.0 <= p <= 1.0

    def test_matches_scipy_when_defined(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            groups = [rng.uniform(size=int(rng.integers(2, 8))).tolist() for _ in range(3)]
            h, p = kruskal_wallis(groups)
            ref = scipy.stats.kruskal(*groups)
            assert h == pytest.approx(ref.statistic, abs=1e-9)
            # scipy uses the same chi-square df = k - 1 survival function
            assert p == pytest.approx(ref.pvalue, abs=1e-9)


class TestAggregate:
    def sample(self, condition, reward, error=False, scene="s"):
        return RunSample(condition=condition, scene_id=scene, reward=reward, runtime_error=error)

    def test_canonical_order_then_alphabetical(self):
        samples = [
            self.sample("zeta", 0.5),
            self.sample("ours", 1.0),
            self.sample("llm_only", 0.2),
            self.sample("alpha", 0.4),
        ]
        summaries = aggregate_rewards(samples)
        assert [s.condition for s in summaries] == ["llm_only", "ours", "alpha", "zeta"]

    def test_runtime_errors_excluded_from_mean(self):
        samples = [
            self.sample("ours", 1.0),
            self.sample("ours", 0.5),
            self.sample("ours", 0.0, error=True),
        ]
        (summary,) = aggregate_rewards(samples)
        assert summary.n_runs == 2
        assert summary.n_excluded == 1
        assert summary.mean == pytest.approx(0.75)

    def test_all_errored_condition_reports_zero(self):
        samples = [self.sample("no_fix", 0.0, error=True)]
        (summary,) = aggregate_rewards(samples)
        assert summary.n_runs == 0
        assert summary.n_excluded == 1
        assert summary.mean == 0.0

    def test_condition_order_constant(self):
        assert CONDITION_ORDER == ("llm_only", "no_fix", "no_router", "ours")


class TestRenderReport:
    def golden_summaries(self):
        return [
            RewardSummary(condition="llm_only", n_runs=6, n_excluded=2, mean=0.31, ci_lo=0.1, ci_hi=0.52),
            RewardSummary(condition="no_fix", n_runs=8, n_excluded=0, mean=0.55, ci_lo=0.41, ci_hi=0.69),
            RewardSummary(condition="no_router", n_runs=8, n_excluded=0, mean=0.62, ci_lo=0.5, ci_hi=0.74),
            RewardSummary(condition="ours", n_runs=8, n_excluded=0, mean=0.71, ci_lo=0.6, ci_hi=0.82),
        ]

    def test_text_matches_golden_bytes(self):
        rep = render_report(self.golden_summaries(), title="Reward by condition")
        assert rep.text == (GOLDEN / "report.txt").read_text(encoding="utf-8")

    def test_csv_matches_golden_bytes(self):
        rep = render_report(self.golden_summaries(), title="Reward by condition")
        assert rep.csv == (GOLDEN / "report.csv").read_text(encoding="utf-8")

    def test_best_mean_starred(self):
        rep = render_report(self.golden_summaries())
        starred = [line for line in rep.text.splitlines() if " *" in line]
        assert len(starred) == 1
        assert starred[0].startswith("ours")

    def test_no_timestamps(self):
        rep = render_report(self.golden_summaries())
        import re

        assert not re.search(r"\d{4}-\d{2}-\d{2}", rep.text + rep.csv)

    @given(
        st.lists(
            st.floats(0.0, 1.0, allow_nan=False),
            min_size=1,
            max_size=6,
        )
    )
    @settings(max_examples=30, deadline=None)
    def test_star_always_on_max(self, means):
        summaries = [
            RewardSummary(condition=f"c{i}", n_runs=3, n_excluded=0, mean=m, ci_lo=m, ci_hi=m)
            for i, m in enumerate(means)
        ]
        rep = render_report(summaries)
        starred = {
            line.split()[0] for line in rep.text.splitlines() if " *" in line
        }
        best = max(means)
        expected = {f"c{i}" for i, m in enumerate(means) if m == best}
        assert starred == expected
