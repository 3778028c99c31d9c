"""Automated debugging: run the test pool in order, repair on failure.

Each failing test enters a bounded repair loop where the agent reads the
diagnostics, may query the knowledge tools, and rewrites whole files;
only the failed test is re-run. The agent may instead declare the test
itself defective, which skips it with an auditable justification.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Callable

from .codegen import execute_step, format_file_listing
from .errors import BudgetExceededError, ProviderError
from .harness import SandboxRunner, TestCase, TestResult, Verdict
from .knowledge import KnowledgeToolbox
from .llm import Gateway, Phase, system, user
from .model import (
    IntegrationArtifact,
    LayoutViolation,
    PlatformProfile,
    RevisionCause,
    validate_artifact_layout,
)
from .prompts import TemplateSet

logger = logging.getLogger(__name__)

EventCallback = Callable[[str, dict[str, Any]], None]

REPAIR_TOOLS = ("search_device_db", "search_platform_db", "web_search", "write_file")


class Classification(str, enum.Enum):
    FIXED = "fixed"
    ALREADY_PASSING = "already_passing"
    TEST_DEFECTIVE = "test_defective"
    UNFIXABLE = "unfixable"
    NOT_RUN = "not_run"  # provider/budget failure before this test ran


@dataclass
class TestOutcome:
    test_id: str
    attempts: int
    final_verdict: Verdict | None
    classification: Classification
    justification: str = ""
    executions: int = 0


@dataclass
class DebugReport:
    outcomes: list[TestOutcome] = field(default_factory=list)
    revisions_made: int = 0
    sandbox_executions: int = 0
    aborted_reason: str = ""

    def all_green(self) -> bool:
        return all(
            outcome.classification in (Classification.FIXED, Classification.ALREADY_PASSING,
                                       Classification.TEST_DEFECTIVE)
            for outcome in self.outcomes
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "revisions_made": self.revisions_made,
            "sandbox_executions": self.sandbox_executions,
            "aborted_reason": self.aborted_reason,
            "outcomes": [
                {
                    "test_id": outcome.test_id,
                    "attempts": outcome.attempts,
                    "final_verdict": outcome.final_verdict.value if outcome.final_verdict else None,
                    "classification": outcome.classification.value,
                    "justification": outcome.justification,
                    "executions": outcome.executions,
                }
                for outcome in self.outcomes
            ],
        }


@dataclass
class AutoDebugConfig:
    attempt_cap: int = 8
    repair_step_budget: int = 10
    # Off by default: the repair loop re-runs only the failed test, and a
    # final confirmation sweep would re-execute earlier tests.
    confirm_suite: bool = False


def apply_rewrite(artifact: IntegrationArtifact, rewrites: dict[str, str],
                  profile: PlatformProfile, cause: RevisionCause,
                  timestamp: float = 0.0, note: str = "") -> list[LayoutViolation]:
    """Apply whole-file rewrites as one revision, or reject them wholesale.

    Returns the violation list; empty means the rewrite was accepted and
    the revision counter advanced by exactly one. A rejected rewrite
    leaves the artifact untouched.
    """
    candidate = artifact.copy()
    candidate.files.update(rewrites)
    violations = validate_artifact_layout(candidate, profile)
    if violations:
        return violations
    artifact.bump(dict(rewrites), cause, timestamp=timestamp, note=note)
    return []


def _cites_failing_assertion(justification: str, test: TestCase, diagnostics: str) -> bool:
    """A defect verdict must quote the assertion it blames."""
    candidates = [line.strip() for line in test.body.splitlines() if "assert" in line]
    candidates += [line.strip() for line in diagnostics.splitlines() if "assert" in line.lower()]
    return any(candidate and candidate in justification for candidate in candidates)


def auto_debug(artifact: IntegrationArtifact, tests: list[TestCase], runner: SandboxRunner,
               gateway: Gateway | None, toolbox: KnowledgeToolbox, profile: PlatformProfile,
               templates: TemplateSet | None = None, config: AutoDebugConfig | None = None,
               on_event: EventCallback | None = None,
               clock: Any = None) -> tuple[IntegrationArtifact, DebugReport]:
    """Sequentially test and repair; terminates within |tests| x (cap+1) runs."""
    templates = templates or TemplateSet()
    config = config or AutoDebugConfig()
    report = DebugReport()
    now = clock.now if clock is not None else (lambda: 0.0)
    execution_budget = len(tests) * (config.attempt_cap + 1)
    last_run_revision: dict[str, int] = {}

    def emit(event: str, data: dict[str, Any]) -> None:
        if on_event is not None:
            on_event(event, data)

    def guarded_run(test: TestCase) -> TestResult | None:
        if report.sandbox_executions >= execution_budget:
            return None
        result = runner.run(artifact, test)
        report.sandbox_executions += 1
        last_run_revision[test.test_id] = artifact.revision
        emit("test_result", result.to_dict())
        return result

    if gateway is not None:
        toolbox.context.phase = Phase.AUTO_DEBUG

    position = 0
    for position, test in enumerate(tests):
        result = guarded_run(test)
        if result is None:
            report.aborted_reason = "sandbox execution budget exhausted"
            break
        if result.verdict is Verdict.PASSED:
            report.outcomes.append(TestOutcome(
                test.test_id, attempts=0, final_verdict=result.verdict,
                classification=Classification.ALREADY_PASSING, executions=1,
            ))
            continue

        outcome = _repair_loop(test, result, artifact, runner, gateway, toolbox, profile,
                               templates, config, report, guarded_run, now, emit)
        report.outcomes.append(outcome)
        if report.aborted_reason:
            break
    else:
        position = len(tests)

    # Tests never reached (provider or budget abort) are recorded, not dropped.
    for missing in tests[len(report.outcomes):]:
        report.outcomes.append(TestOutcome(
            missing.test_id, attempts=0, final_verdict=None,
            classification=Classification.NOT_RUN,
        ))

    if config.confirm_suite and not report.aborted_reason and report.revisions_made:
        _confirm_stale(tests, artifact, runner, gateway, toolbox, profile, templates,
                       config, report, last_run_revision, guarded_run, now, emit)

    return artifact, report


def _repair_loop(test: TestCase, first_failure: TestResult, artifact: IntegrationArtifact,
                 runner: SandboxRunner, gateway: Gateway | None, toolbox: KnowledgeToolbox,
                 profile: PlatformProfile, templates: TemplateSet, config: AutoDebugConfig,
                 report: DebugReport, guarded_run: Callable[[TestCase], TestResult | None],
                 now: Callable[[], float],
                 emit: Callable[[str, dict[str, Any]], None]) -> TestOutcome:
    diagnostics = first_failure.diagnostics
    verdict = first_failure.verdict
    executions = 1
    if gateway is None:
        return TestOutcome(test.test_id, attempts=0, final_verdict=verdict,
                           classification=Classification.UNFIXABLE,
                           justification="no provider available for repair", executions=executions)

    for attempt in range(1, config.attempt_cap + 1):
        transcript = [
            system(templates.render("auto_debug_system", platform_id=profile.platform_id,
                                    tool_list=", ".join(REPAIR_TOOLS + ("finish_repair",
                                                                        "declare_test_defective")))),
            user(templates.render("auto_debug_user", test_id=test.test_id, attempt=attempt,
                                  diagnostics=diagnostics,
                                  file_listing=format_file_listing(artifact.files))),
        ]
        staged: dict[str, str] = {}
        revised = False
        defect_justification: str | None = None
        try:
            for _ in range(config.repair_step_budget):
                action = execute_step(transcript, gateway, toolbox, REPAIR_TOOLS, staged,
                                      Phase.AUTO_DEBUG, finish_tool="finish_repair",
                                      extra_tools=("declare_test_defective",))
                if action.kind == "defect":
                    justification = action.justification or ""
                    if _cites_failing_assertion(justification, test, diagnostics):
                        defect_justification = justification
                        break
                    transcript.append(user(
                        "A defect verdict must cite the failing assertion line verbatim."
                    ))
                    continue
                if action.kind == "finish":
                    if staged:
                        violations = apply_rewrite(artifact, staged, profile,
                                                   RevisionCause.AUTO_DEBUG_FIX, timestamp=now(),
                                                   note=f"repair {test.test_id} attempt {attempt}")
                        if violations:
                            listing = "\n".join(str(v) for v in violations)
                            transcript.append(user(
                                f"Rewrite rejected, layout violations:\n{listing}"
                            ))
                            staged.clear()
                            continue
                        report.revisions_made += 1
                        revised = True
                        emit("revision", {"revision": artifact.revision, "test_id": test.test_id})
                    break
        except (ProviderError, BudgetExceededError) as exc:
            report.aborted_reason = f"provider failed during repair of {test.test_id}: {exc}"
            return TestOutcome(test.test_id, attempts=attempt, final_verdict=verdict,
                               classification=Classification.UNFIXABLE,
                               justification=str(exc), executions=executions)

        if defect_justification is not None:
            return TestOutcome(test.test_id, attempts=attempt, final_verdict=verdict,
                               classification=Classification.TEST_DEFECTIVE,
                               justification=defect_justification, executions=executions)

        if not revised:
            # No accepted rewrite: re-running would reproduce the failure.
            continue

        result = guarded_run(test)
        if result is None:
            report.aborted_reason = "sandbox execution budget exhausted"
            return TestOutcome(test.test_id, attempts=attempt, final_verdict=verdict,
                               classification=Classification.UNFIXABLE, executions=executions)
        executions += 1
        diagnostics = result.diagnostics
        verdict = result.verdict
        if result.verdict is Verdict.PASSED:
            return TestOutcome(test.test_id, attempts=attempt, final_verdict=result.verdict,
                               classification=Classification.FIXED, executions=executions)

    return TestOutcome(test.test_id, attempts=config.attempt_cap, final_verdict=verdict,
                       classification=Classification.UNFIXABLE, executions=executions)


def _confirm_stale(tests: list[TestCase], artifact: IntegrationArtifact, runner: SandboxRunner,
                   gateway: Gateway | None, toolbox: KnowledgeToolbox, profile: PlatformProfile,
                   templates: TemplateSet, config: AutoDebugConfig, report: DebugReport,
                   last_run_revision: dict[str, int],
                   guarded_run: Callable[[TestCase], TestResult | None],
                   now: Callable[[], float],
                   emit: Callable[[str, dict[str, Any]], None]) -> None:
    """Optional stage-end sweep: re-run passes that predate the last fix.

    A regression re-enters the repair loop once, at the regressed test.
    """
    outcomes = {outcome.test_id: outcome for outcome in report.outcomes}
    for test in tests:
        outcome = outcomes[test.test_id]
        if outcome.classification not in (Classification.ALREADY_PASSING, Classification.FIXED):
            continue
        if last_run_revision.get(test.test_id, artifact.revision) == artifact.revision:
            continue
        result = guarded_run(test)
        if result is None:
            report.aborted_reason = "sandbox execution budget exhausted during confirmation"
            return
        outcome.executions += 1
        outcome.final_verdict = result.verdict
        if result.verdict is not Verdict.PASSED:
            repaired = _repair_loop(test, result, artifact, runner, gateway, toolbox, profile,
                                    templates, config, report, guarded_run, now, emit)
            outcome.attempts += repaired.attempts
            outcome.final_verdict = repaired.final_verdict
            outcome.classification = repaired.classification
            outcome.justification = repaired.justification
            outcome.executions += repaired.executions - 1
