from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from iotforge.errors import InvalidInputError
from iotforge.metrics import (
    GroupReport,
    RunRecord,
    aggregate,
    functional_coverage,
    pass_at_k,
    pass_at_k_fraction,
    read_records,
    render_report_table,
    write_records,
    write_report,
)

from oracles import monte_carlo_pass_at_k, population_std


class TestPassAtK:
    def test_all_usable(self):
        assert pass_at_k(30, 30, 1) == 1.0

    def test_none_usable(self):
        assert pass_at_k(30, 0, 1) == 0.0

    def test_k1_is_c_over_n(self):
        assert pass_at_k(10, 5, 1) == 0.5

    def test_k1_exact_rational_for_all_c(self):
        n = 30
        for c in range(n + 1):
            assert pass_at_k_fraction(n, c, 1) == Fraction(c, n)

    def test_monte_carlo_oracle_cross_check(self):
        # DERIVED: 10^5 samples here (the acceptance suite runs 10^6).
        estimate = monte_carlo_pass_at_k(20, 7, 3, samples=100_000, seed=5)
        assert abs(pass_at_k(20, 7, 3) - estimate) < 5e-3

    def test_not_enough_failures_to_fill_k(self):
        assert pass_at_k(10, 9, 2) == 1.0

    @pytest.mark.parametrize("n,c,k", [(5, 6, 1), (5, -1, 1), (5, 3, 0), (5, 3, 6)])
    def test_argument_violations(self, n, c, k):
        with pytest.raises(InvalidInputError):
            pass_at_k(n, c, k)

    @given(st.integers(min_value=2, max_value=50), st.data())
    def test_nondecreasing_in_c_and_k(self, n, data):
        c = data.draw(st.integers(min_value=0, max_value=n - 1))
        k = data.draw(st.integers(min_value=1, max_value=n - 1))
        assert pass_at_k_fraction(n, c + 1, k) >= pass_at_k_fraction(n, c, k)
        assert pass_at_k_fraction(n, c, k + 1) >= pass_at_k_fraction(n, c, k)

    @given(st.integers(min_value=1, max_value=60))
    def test_edges(self, n):
        assert pass_at_k_fraction(n, n, 1) == 1
        if n >= 2:
            assert pass_at_k_fraction(n, 0, n - 1) == 0


class TestFunctionalCoverage:
    @pytest.mark.parametrize("correct,total,expected", [
        (8, 8, 1.0), (6, 8, 0.75), (0, 11, 0.0),
    ])
    def test_examples(self, correct, total, expected):
        assert functional_coverage(correct, total) == expected

    def test_zero_total_rejected(self):
        with pytest.raises(InvalidInputError):
            functional_coverage(0, 0)


def _record(task="t1", platform="toyhome", run_index=0, usable=True, total=2,
            correct=2, no_fb=0):
    return RunRecord(
        task_fingerprint=task, platform_id=platform, run_index=run_index, usable=usable,
        functions_total=total, functions_correct=correct if usable else None,
        no_feedback_total=no_fb, ledger_total_tokens=100,
        retrieved_knowledge_tokens=10, wall_time=1.0)


class TestRunRecord:
    def test_unusable_runs_cannot_report_coverage(self):
        with pytest.raises(InvalidInputError):
            RunRecord("t", "p", 0, False, 2, 1, 0, 0, 0, 0.0)

    def test_usable_runs_must_report_coverage(self):
        with pytest.raises(InvalidInputError):
            RunRecord("t", "p", 0, True, 2, None, 0, 0, 0, 0.0)

    def test_roundtrip_jsonl(self, tmp_path):
        records = [_record(run_index=i, usable=i % 2 == 0, correct=2) for i in range(4)]
        path = tmp_path / "records.jsonl"
        write_records(records, path)
        assert read_records(path) == records


class TestAggregate:
    def test_single_task_pass_rate(self):
        records = [_record(run_index=i, usable=i < 27) for i in range(30)]
        report = aggregate(records)[0]
        assert report.pass_at_1 == pytest.approx(0.9)
        assert report.runs == 30

    def test_unweighted_task_mean(self):
        records = ([_record(task="a", run_index=i, usable=True) for i in range(10)]
                   + [_record(task="b", run_index=i, usable=i < 8) for i in range(10)])
        report = aggregate(records)[0]
        assert report.pass_at_1 == pytest.approx((1.0 + 0.8) / 2)
        assert report.tasks == 2

    def test_no_feedback_population_std(self):
        # DERIVED: oracle = direct formula over {0, 1, 2}
        values = [0, 1, 2]
        records = [_record(run_index=i, no_fb=v) for i, v in enumerate(values)]
        report = aggregate(records)[0]
        assert report.no_feedback_mean == pytest.approx(1.0)
        assert report.no_feedback_std == pytest.approx(population_std([0.0, 1.0, 2.0]))
        assert report.no_feedback_std == pytest.approx(0.816496580927726)

    def test_coverage_only_over_usable_runs(self):
        records = [
            _record(run_index=0, usable=True, total=4, correct=2),
            _record(run_index=1, usable=False, total=4, correct=None),
        ]
        report = aggregate(records)[0]
        assert report.mean_coverage == pytest.approx(0.5)  # the unusable run is excluded

    def test_groups_by_tier_and_platform(self):
        records = [
            _record(task="small", total=2, correct=2),
            _record(task="large", total=12, correct=12, platform="otherhub"),
        ]
        reports = aggregate(records)
        assert [(r.tier, r.platform_id) for r in reports] == [
            ("Tier1", "toyhome"), ("Tier3", "otherhub")]

    def test_empty_records_no_groups(self):
        assert aggregate([]) == []

    def test_report_files(self, tmp_path):
        records = [_record(run_index=i) for i in range(3)]
        reports = aggregate(records)
        write_report(reports, tmp_path / "report.json", tmp_path / "report.txt")
        import json

        payload = json.loads((tmp_path / "report.json").read_text())
        assert "pass_at_1" in payload["groups"][0]
        table = (tmp_path / "report.txt").read_text()
        assert "Pass@1" in table and "Tier1" in table

    def test_render_table_handles_missing_coverage(self):
        report = GroupReport("Tier1", "p", 1, 1, 0.0, None, 0.0, 0.0)
        assert "n/a" in render_report_table([report])
