"""Evaluation metrics over repeated pipeline runs.

Pass@k uses the unbiased estimator 1 - C(n-c,k)/C(n,k), computed as an
exact rational via the overflow-safe product form; k=1 reduces to c/n
exactly. Coverage is only ever aggregated over usable runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

from .errors import InvalidInputError
from .model import DeviceTier, classify_tier


def pass_at_k_fraction(n: int, c: int, k: int) -> Fraction:
    """Exact rational pass@k."""
    if not (0 <= c <= n):
        raise InvalidInputError(f"need 0 <= c <= n, got c={c} n={n}")
    if not (1 <= k <= n):
        raise InvalidInputError(f"need 1 <= k <= n, got k={k} n={n}")
    if n - c < k:
        return Fraction(1)
    # Product form of C(n-c,k)/C(n,k); never materializes factorials.
    miss = Fraction(1)
    for i in range(k):
        miss *= Fraction(n - c - i, n - i)
    return 1 - miss


def pass_at_k(n: int, c: int, k: int) -> float:
    return float(pass_at_k_fraction(n, c, k))


def functional_coverage(functions_correct: int, functions_total: int) -> float:
    """Fraction of device functions correctly integrated."""
    if functions_total < 1:
        raise InvalidInputError("functions_total must be >= 1")
    if not (0 <= functions_correct <= functions_total):
        raise InvalidInputError("need 0 <= correct <= total")
    return functions_correct / functions_total


@dataclass(frozen=True)
class RunRecord:
    """One pipeline run's outcome, as persisted for aggregation."""

    task_fingerprint: str
    platform_id: str
    run_index: int
    usable: bool
    functions_total: int
    functions_correct: int | None
    no_feedback_total: int
    ledger_total_tokens: int
    retrieved_knowledge_tokens: int
    wall_time: float

    def __post_init__(self) -> None:
        if self.usable:
            if self.functions_correct is None:
                raise InvalidInputError("usable runs must report functions_correct")
            if not (0 <= self.functions_correct <= self.functions_total):
                raise InvalidInputError("functions_correct out of range")
        elif self.functions_correct is not None:
            # Coverage is defined only for usable code.
            raise InvalidInputError("unusable runs must not report functions_correct")

    def tier(self) -> DeviceTier:
        return classify_tier(max(self.functions_total, 1))

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_fingerprint": self.task_fingerprint,
            "platform_id": self.platform_id,
            "run_index": self.run_index,
            "usable": self.usable,
            "functions_total": self.functions_total,
            "functions_correct": self.functions_correct,
            "no_feedback_total": self.no_feedback_total,
            "ledger_total_tokens": self.ledger_total_tokens,
            "retrieved_knowledge_tokens": self.retrieved_knowledge_tokens,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunRecord":
        return cls(
            task_fingerprint=data["task_fingerprint"],
            platform_id=data["platform_id"],
            run_index=data["run_index"],
            usable=data["usable"],
            functions_total=data["functions_total"],
            functions_correct=data.get("functions_correct"),
            no_feedback_total=data["no_feedback_total"],
            ledger_total_tokens=data.get("ledger_total_tokens", 0),
            retrieved_knowledge_tokens=data.get("retrieved_knowledge_tokens", 0),
            wall_time=data.get("wall_time", 0.0),
        )


def write_records(records: Iterable[RunRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict()) + "\n")


def read_records(path: str | Path) -> list[RunRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(RunRecord.from_dict(json.loads(line)))
    return records


def _population_std(values: list[float]) -> float:
    if not values:
        return 0.0
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


@dataclass(frozen=True)
class GroupReport:
    tier: str
    platform_id: str
    tasks: int
    runs: int
    pass_at_1: float
    mean_coverage: float | None
    no_feedback_mean: float
    no_feedback_std: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "tier": self.tier,
            "platform_id": self.platform_id,
            "tasks": self.tasks,
            "runs": self.runs,
            "pass_at_1": self.pass_at_1,
            "mean_coverage": self.mean_coverage,
            "no_feedback_mean": self.no_feedback_mean,
            "no_feedback_std": self.no_feedback_std,
        }


def aggregate(records: list[RunRecord]) -> list[GroupReport]:
    """Per (tier, platform) group: task-averaged Pass@1, coverage over
    usable runs, and population mean/std of "no" feedback counts.

    Pass@1 is computed per task (c/n over that task's runs) and then
    averaged unweighted across the group's tasks. Empty groups never
    appear: only observed (tier, platform) pairs are reported, in
    deterministic order.
    """
    groups: dict[tuple[str, str], dict[str, list[RunRecord]]] = {}
    for record in records:
        key = (record.tier().value, record.platform_id)
        groups.setdefault(key, {}).setdefault(record.task_fingerprint, []).append(record)

    reports = []
    for (tier, platform_id) in sorted(groups):
        by_task = groups[(tier, platform_id)]
        task_pass_rates = []
        coverages: list[float] = []
        no_counts: list[float] = []
        runs = 0
        for task_records in by_task.values():
            n = len(task_records)
            c = sum(1 for record in task_records if record.usable)
            task_pass_rates.append(float(pass_at_k_fraction(n, c, 1)))
            runs += n
            for record in task_records:
                no_counts.append(float(record.no_feedback_total))
                if record.usable and record.functions_correct is not None:
                    coverages.append(
                        functional_coverage(record.functions_correct, record.functions_total)
                    )
        reports.append(GroupReport(
            tier=tier,
            platform_id=platform_id,
            tasks=len(by_task),
            runs=runs,
            pass_at_1=sum(task_pass_rates) / len(task_pass_rates),
            mean_coverage=(sum(coverages) / len(coverages)) if coverages else None,
            no_feedback_mean=sum(no_counts) / len(no_counts) if no_counts else 0.0,
            no_feedback_std=_population_std(no_counts),
        ))
    return reports


def render_report_table(reports: list[GroupReport]) -> str:
    """Plain-text table, one row per tier/platform group."""
    header = f"{'Tier':<6} {'Platform':<16} {'Tasks':>5} {'Runs':>5} {'Pass@1':>8} {'Coverage':>9} {'No-fb mean/std':>16}"
    lines = [header, "-" * len(header)]
    for report in reports:
        coverage = f"{report.mean_coverage:.3f}" if report.mean_coverage is not None else "n/a"
        lines.append(
            f"{report.tier:<6} {report.platform_id:<16} {report.tasks:>5} {report.runs:>5} "
            f"{report.pass_at_1:>8.3f} {coverage:>9} "
            f"{report.no_feedback_mean:>8.3f}/{report.no_feedback_std:.3f}"
        )
    return "\n".join(lines)


def write_report(reports: list[GroupReport], json_path: str | Path,
                 text_path: str | Path | None = None) -> None:
    payload = {"groups": [report.to_dict() for report in reports]}
    Path(json_path).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    if text_path is not None:
        Path(text_path).write_text(render_report_table(reports) + "\n", encoding="utf-8")
