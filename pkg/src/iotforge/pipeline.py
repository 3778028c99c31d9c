"""Stage orchestration: ingest -> generate -> auto-debug -> HIL.

One Pipeline instance runs one task end to end, emitting ordered events
(stage transitions, trace lines, probes) that the CLI prints and the
service streams to clients. Offline runs are fully deterministic: a
scripted provider, the hash embedder, a fixed-step clock, and the
bundled toy-platform sandbox.
"""

from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .autodebug import AutoDebugConfig, Classification, DebugReport, TestOutcome, auto_debug
from .clocks import FixedStepClock, SystemClock
from .codegen import (
    GenerationConfig,
    GenerationOutcome,
    GenerationStatus,
    RetrievalMode,
    export_trace,
    run_generation,
)
from .config import RunConfig
from .errors import IotForgeError
from .fixtures import FixtureSet, ScriptedFeedback
from .harness import (
    SandboxRunner,
    TestCase,
    TestCategory,
    TestIdAllocator,
    Verdict,
    generate_basic_tests,
    generate_functionality_tests,
    summarize_function_list,
)
from .hil import HilConfig, HilSession, HilStatus, LoopbackAdapter, Probe, run_session, start_session
from .knowledge import KnowledgeStore, KnowledgeToolbox, ToolContext, ingest_platform_docs, ingest_device_sources
from .llm import Gateway, OpenAIChatProvider, ProviderBudget, TokenLedger
from .metrics import RunRecord
from .model import FunctionDescriptor, IntegrationArtifact, IntegrationTask, PlatformProfile
from .prompts import TemplateSet
from .virtualdevice import DummyValuePolicy, build_virtual_device, serve

logger = logging.getLogger(__name__)

EventCallback = Callable[[str, dict[str, Any]], None]
FeedbackSource = Callable[[Probe], str]


class Stage(str, enum.Enum):
    INGESTING = "ingesting"
    GENERATING_CONTROL = "generating_control"
    GENERATING_INTEGRATION = "generating_integration"
    AUTO_DEBUGGING = "auto_debugging"
    AWAITING_HIL = "awaiting_hil"
    HIL_RUNNING = "hil_running"
    DONE = "done"
    FAILED = "failed"

STAGE_ORDER = [stage.value for stage in Stage]


@dataclass
class PipelineResult:
    task: IntegrationTask
    stage: Stage
    usable: bool
    failure_reason: str = ""
    generation: GenerationOutcome | None = None
    artifact: IntegrationArtifact | None = None
    functions: list[FunctionDescriptor] = field(default_factory=list)
    tests: list[TestCase] = field(default_factory=list)
    debug_report: DebugReport | None = None
    hil_session: HilSession | None = None
    ledger_snapshot: dict[str, dict[str, int]] = field(default_factory=dict)
    wall_time: float = 0.0

    def functions_correct(self) -> int:
        """Functionality tests green after the automated stage, adjusted by
        HIL verification when it ran."""
        if self.debug_report is None:
            return 0
        functionality_ids = {
            test.test_id: test.target_function
            for test in self.tests if test.category is TestCategory.FUNCTIONALITY
        }
        correct = set()
        for outcome in self.debug_report.outcomes:
            if outcome.test_id in functionality_ids and outcome.final_verdict is Verdict.PASSED:
                correct.add(functionality_ids[outcome.test_id])
        if self.hil_session is not None:
            correct -= set(self.hil_session.failed_functions)
        return len(correct)

    def no_feedback_total(self) -> int:
        if self.hil_session is None:
            return 0
        return sum(self.hil_session.per_function_no_count.values())

    def to_run_record(self, run_index: int = 0) -> RunRecord:
        usable = self.usable
        return RunRecord(
            task_fingerprint=self.task.fingerprint(),
            platform_id=self.task.platform_id,
            run_index=run_index,
            usable=usable,
            functions_total=max(len(self.functions), 1),
            functions_correct=self.functions_correct() if usable else None,
            no_feedback_total=self.no_feedback_total(),
            ledger_total_tokens=self.ledger_snapshot.get("total", {}).get("all", 0),
            retrieved_knowledge_tokens=self.ledger_snapshot.get("total", {}).get(
                "retrieved_knowledge", 0),
            wall_time=self.wall_time,
        )


class Pipeline:
    """Runs one task: builds stores, generates, validates, repairs."""

    def __init__(self, config: RunConfig, on_event: EventCallback | None = None,
                 feedback: FeedbackSource | None = None):
        self.config = config
        self.on_event = on_event
        self.feedback = feedback
        self.fixtures = FixtureSet(config.fixtures_dir) if config.fixtures_dir else None
        self.templates = TemplateSet(config.template_dir)
        self.clock = FixedStepClock() if config.provider_mode == "scripted" else SystemClock()
        self._stage: Stage | None = None

    # -- helpers ---------------------------------------------------------

    def emit(self, event: str, data: dict[str, Any]) -> None:
        if self.on_event is not None:
            self.on_event(event, data)

    def set_stage(self, stage: Stage) -> None:
        if self._stage is not None:
            if STAGE_ORDER.index(stage.value) < STAGE_ORDER.index(self._stage.value):
                raise IotForgeError(f"stage order violation: {self._stage} -> {stage}")
        self._stage = stage
        self.emit("stage", {"stage": stage.value})

    def build_task(self) -> IntegrationTask:
        if self.fixtures is not None:
            return self.fixtures.task(**self.config.task_overrides())
        return IntegrationTask(
            device_brand=self.config.device_brand,
            device_model=self.config.device_model,
            platform_id=self.config.platform_id,
            serial_number=self.config.serial_number,
            device_key=self.config.device_key,
            function_description=self.config.function_description,
            seed=self.config.seed,
        )

    def build_provider(self):
        if self.config.provider_mode == "scripted":
            if self.fixtures is None:
                raise IotForgeError("scripted provider mode needs a fixtures directory")
            return self.fixtures.provider(self.config.provider_fixture)
        return OpenAIChatProvider()

    def build_profile(self) -> PlatformProfile:
        if self.fixtures is None:
            raise IotForgeError("no fixtures directory; cannot load the platform profile")
        return self.fixtures.profile()

    def build_stores(self, task: IntegrationTask) -> tuple[KnowledgeStore | None, KnowledgeStore | None]:
        if self.fixtures is None:
            raise IotForgeError("no fixtures directory; cannot ingest knowledge")
        denylist = self.fixtures.denylist()
        fetcher = self.fixtures.fetcher()
        device_store = None
        if self.config.device_kb_enabled:
            device_store = ingest_device_sources(task, fetcher, denylist)
            self.emit("ingested", {"store": "device", "chunks": device_store.chunk_count(),
                                   "excluded": len(device_store.exclusions)})
        platform_store = None
        if self.config.platform_kb_enabled:
            platform_store = ingest_platform_docs(self.build_profile(), self.fixtures.toc(), denylist)
            self.emit("ingested", {"store": "platform", "chunks": platform_store.chunk_count(),
                                   "excluded": len(platform_store.exclusions)})
        return device_store, platform_store

    # -- the run ---------------------------------------------------------

    def run(self) -> PipelineResult:
        started = time.monotonic()
        task = self.build_task()
        ledger = TokenLedger()
        result = PipelineResult(task=task, stage=Stage.FAILED, usable=False)
        try:
            return self._run(task, ledger, result)
        finally:
            result.wall_time = time.monotonic() - started

    def _run(self, task: IntegrationTask, ledger: TokenLedger,
             result: PipelineResult) -> PipelineResult:
        try:
            self.set_stage(Stage.INGESTING)
            device_store, platform_store = self.build_stores(task)
            profile = self.build_profile()
            denylist = self.fixtures.denylist() if self.fixtures else None

            context = ToolContext(
                ledger, on_retrieval=lambda entry: self.emit("retrieval", entry))
            toolbox = KnowledgeToolbox(
                context,
                device_store=device_store,
                platform_store=platform_store,
                web_fetcher=(self.fixtures.fetcher()
                             if (self.fixtures and self.config.web_enabled) else None),
                denylist=denylist,
            )
            gateway = Gateway(
                self.build_provider(), ledger,
                ProviderBudget(max_calls=self.config.max_calls,
                               max_total_tokens=self.config.max_total_tokens),
                retries=self.config.retries,
            )

            generation_config = GenerationConfig(
                step_budget=self.config.step_budget,
                format_repair_attempts=self.config.format_repair_attempts,
                retrieval_mode=RetrievalMode(self.config.retrieval_mode),
            )

            def on_generation_event(event: str, data: dict[str, Any]) -> None:
                if event == "phase":
                    self.set_stage(Stage.GENERATING_CONTROL
                                   if data["phase"] == "device_control"
                                   else Stage.GENERATING_INTEGRATION)
                else:
                    self.emit(event, data)

            outcome = run_generation(task, profile, toolbox, gateway, self.templates,
                                     generation_config, on_event=on_generation_event,
                                     clock=self.clock)
            result.generation = outcome
            result.ledger_snapshot = ledger.snapshot()
            if outcome.status is not GenerationStatus.SUCCEEDED or outcome.artifact is None:
                result.failure_reason = f"generation {outcome.status.value}: {outcome.failure_reason}"
                self.set_stage(Stage.FAILED)
                return result
            artifact = outcome.artifact
            result.artifact = artifact

            # Function list, virtual device, and the test pool.
            functions = summarize_function_list(task, toolbox, gateway, self.templates)
            result.functions = functions
            self.emit("functions", {"functions": [f.function_id for f in functions]})
            if not functions:
                result.failure_reason = "no device functions could be summarized"
                self.set_stage(Stage.FAILED)
                return result

            device = build_virtual_device(functions, DummyValuePolicy(), clock=self.clock.now)
            handle = serve(device)
            try:
                allocator = TestIdAllocator()
                basic = generate_basic_tests(profile, gateway, toolbox, self.templates,
                                             allocator, task=task)
                functionality = generate_functionality_tests(functions, gateway, toolbox,
                                                             profile, self.templates, allocator)
                tests = basic + functionality
                result.tests = tests
                self.emit("tests", {"count": len(tests),
                                    "ids": [test.test_id for test in tests]})

                self.set_stage(Stage.AUTO_DEBUGGING)
                runner = SandboxRunner(profile, handle.endpoint,
                                       timeout=self.config.sandbox_timeout)
                if self.config.auto_debug_enabled:
                    artifact, report = auto_debug(
                        artifact, tests, runner, gateway, toolbox, profile, self.templates,
                        AutoDebugConfig(attempt_cap=self.config.attempt_cap,
                                        confirm_suite=self.config.confirm_suite),
                        on_event=self.emit, clock=self.clock,
                    )
                else:
                    report = self._plain_run(artifact, tests, runner)
                result.artifact = artifact
                result.debug_report = report
                self.emit("debug_report", report.to_dict())

                suite_green = report.all_green() and not report.aborted_reason
                basic_green = self._basic_green(report, tests)
                result.usable = suite_green and basic_green

                if self.config.hil_enabled:
                    if not suite_green:
                        result.failure_reason = "test suite not green; skipping HIL"
                        self.set_stage(Stage.FAILED)
                        return result
                    self.set_stage(Stage.AWAITING_HIL)
                    session = start_session(
                        artifact, functions, LoopbackAdapter(device), gateway, toolbox,
                        profile, self.templates, HilConfig(),
                        checkpoint_path=self.config.hil_checkpoint, clock=self.clock,
                    )
                    session.on_event = self.emit
                    result.hil_session = session
                    if session.status is HilStatus.ABORTED:
                        result.failure_reason = "HIL adapter unreachable"
                        self.set_stage(Stage.FAILED)
                        return result
                    feedback = self.feedback or self._scripted_feedback()
                    first_probe = session.next_probe()
                    if first_probe is not None:
                        first_answer = feedback(first_probe)
                        self.set_stage(Stage.HIL_RUNNING)
                        session.submit_feedback(first_answer)
                        run_session(session, feedback)
                    # Usability is a no-human-feedback property; HIL outcomes
                    # are reported alongside, not folded into it.
            finally:
                handle.close()

            result.ledger_snapshot = ledger.snapshot()
            if result.usable:
                self.set_stage(Stage.DONE)
                result.stage = Stage.DONE
            else:
                result.failure_reason = result.failure_reason or "test suite not green"
                self.set_stage(Stage.FAILED)
                result.stage = Stage.FAILED
            self.emit("done", {"usable": result.usable, "stage": self._stage.value,
                               "failure_reason": result.failure_reason})
            return result
        except IotForgeError as exc:
            result.failure_reason = str(exc)
            result.ledger_snapshot = ledger.snapshot()
            if self._stage is not Stage.FAILED:
                self.set_stage(Stage.FAILED)
            self.emit("error", {"message": str(exc)})
            result.stage = Stage.FAILED
            return result

    def _plain_run(self, artifact: IntegrationArtifact, tests: list[TestCase],
                   runner: SandboxRunner) -> DebugReport:
        """Debugger-disabled arm: run everything once, repair nothing."""
        report = DebugReport()
        for test in tests:
            test_result = runner.run(artifact, test)
            report.sandbox_executions += 1
            self.emit("test_result", test_result.to_dict())
            classification = (Classification.ALREADY_PASSING
                              if test_result.verdict is Verdict.PASSED
                              else Classification.UNFIXABLE)
            report.outcomes.append(TestOutcome(
                test.test_id, attempts=0, final_verdict=test_result.verdict,
                classification=classification, executions=1,
            ))
        return report

    def _basic_green(self, report: DebugReport, tests: list[TestCase]) -> bool:
        basic_ids = {test.test_id for test in tests
                     if test.category is not TestCategory.FUNCTIONALITY}
        return all(
            outcome.final_verdict is Verdict.PASSED
            for outcome in report.outcomes if outcome.test_id in basic_ids
        )

    def _scripted_feedback(self) -> FeedbackSource:
        if self.config.hil_responses and self.fixtures is not None:
            return ScriptedFeedback(self.fixtures.hil_responses(self.config.hil_responses))
        return ScriptedFeedback(["yes"])


def write_outputs(result: PipelineResult, out_dir: str | Path) -> Path:
    """Persist the run: artifact tree plus structured sidecar records."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    if result.artifact is not None:
        result.artifact.export(root / "artifact")
    if result.generation is not None:
        export_trace(result.generation.trace, str(root / "trace.jsonl"))
    (root / "ledger.json").write_text(
        json.dumps(result.ledger_snapshot, indent=2), encoding="utf-8")
    (root / "functions.json").write_text(json.dumps([
        {"function_id": f.function_id, "name": f.name, "kind": f.kind.value,
         "description": f.description}
        for f in result.functions
    ], indent=2), encoding="utf-8")
    (root / "tests.json").write_text(json.dumps([
        {"test_id": t.test_id, "category": t.category.value, "origin": t.origin.value,
         "target_function": t.target_function, "body": t.body}
        for t in result.tests
    ], indent=2), encoding="utf-8")
    if result.debug_report is not None:
        (root / "debug_report.json").write_text(
            json.dumps(result.debug_report.to_dict(), indent=2), encoding="utf-8")
    summary = {
        "task": result.task.fingerprint(),
        "stage": result.stage.value,
        "usable": result.usable,
        "failure_reason": result.failure_reason,
        "revision": result.artifact.revision if result.artifact else None,
        "functions_total": len(result.functions),
        "functions_correct": result.functions_correct() if result.usable else None,
        "no_feedback_total": result.no_feedback_total(),
    }
    (root / "run.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return root


def load_functions(path: str | Path) -> list[FunctionDescriptor]:
    from .model import FunctionKind

    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        FunctionDescriptor(item["function_id"], item["name"], FunctionKind(item["kind"]),
                           item.get("description", ""))
        for item in payload
    ]


def load_artifact_dir(directory: str | Path, manifest_path: str = "manifest.json",
                      artifact_id: str = "imported") -> IntegrationArtifact:
    root = Path(directory)
    files = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            files[str(path.relative_to(root)).replace("\\", "/")] = path.read_text(encoding="utf-8")
    return IntegrationArtifact(artifact_id=artifact_id, files=files, manifest_path=manifest_path)
