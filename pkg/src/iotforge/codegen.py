"""Two-phase ReAct generation: device control code, then platform integration.

Phase one works from device knowledge only; phase two consumes the
phase-one files plus platform knowledge and must end with a
layout-valid artifact. In progressive mode the agent decides per step
whether and what to retrieve; in fixed one-time mode all retrieval
happens up front with a canned query set (the ablation arm).
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import BudgetExceededError, IotForgeError, PlatformKnowledgeError, StoreNotBuiltError
from .knowledge import KnowledgeToolbox, RetrievedChunk, WebResult
from .llm import (
    ChatMessage,
    Gateway,
    Phase,
    Role,
    ToolSchema,
    count_tokens,
    system,
    tool_result,
    user,
)
from .model import IntegrationArtifact, IntegrationTask, PlatformProfile, validate_artifact_layout
from .prompts import TemplateSet

logger = logging.getLogger(__name__)

EventCallback = Callable[[str, dict[str, Any]], None]


class RetrievalMode(str, enum.Enum):
    PROGRESSIVE = "progressive"
    FIXED_ONE_TIME = "fixed_one_time"


class GenPhase(str, enum.Enum):
    DEVICE_CONTROL = "device_control"
    INTEGRATION = "integration"


class GenerationStatus(str, enum.Enum):
    SUCCEEDED = "succeeded"
    BUDGET_EXHAUSTED = "budget_exhausted"
    PROVIDER_FAILED = "provider_failed"


TOOL_SCHEMAS: dict[str, ToolSchema] = {
    "search_device_db": ToolSchema(
        "search_device_db",
        "Search the device knowledge store",
        {"type": "object", "properties": {"query": {"type": "string"}, "k": {"type": "integer"}},
         "required": ["query"]},
    ),
    "search_platform_db": ToolSchema(
        "search_platform_db",
        "Search the platform knowledge store",
        {"type": "object", "properties": {"query": {"type": "string"}, "k": {"type": "integer"}},
         "required": ["query"]},
    ),
    "web_search": ToolSchema(
        "web_search",
        "Search the web for supplementary knowledge",
        {"type": "object", "properties": {"query": {"type": "string"}}, "required": ["query"]},
    ),
    "write_file": ToolSchema(
        "write_file",
        "Write one whole file of the working tree",
        {"type": "object", "properties": {"path": {"type": "string"}, "content": {"type": "string"}},
         "required": ["path", "content"]},
    ),
    "finish_phase": ToolSchema(
        "finish_phase", "Mark the current phase complete",
        {"type": "object", "properties": {"note": {"type": "string"}}},
    ),
    "finish_repair": ToolSchema(
        "finish_repair", "Mark the current repair ready to re-test",
        {"type": "object", "properties": {"note": {"type": "string"}}},
    ),
    "declare_test_defective": ToolSchema(
        "declare_test_defective",
        "Declare that the failing test itself is wrong; cite the failing assertion line",
        {"type": "object", "properties": {"justification": {"type": "string"}},
         "required": ["justification"]},
    ),
}

PHASE_TOOLS = {
    GenPhase.DEVICE_CONTROL: ("search_device_db", "web_search", "write_file", "finish_phase"),
    GenPhase.INTEGRATION: ("search_platform_db", "search_device_db", "web_search",
                           "write_file", "finish_phase"),
}

FIXED_MODE_TOOLS = ("write_file", "finish_phase")

# Canned query set for the fixed one-time retrieval ablation arm.
FIXED_DEVICE_QUERIES = (
    "{device} capabilities and functions",
    "{device} control protocol and commands",
    "{device} configuration and setup",
    "{device} usage examples",
)
FIXED_PLATFORM_QUERIES = (
    "{platform} entity kinds and base classes",
    "{platform} integration layout and manifest",
    "{platform} service invocation",
    "{platform} integration examples",
)


def schemas_for(names: tuple[str, ...] | list[str]) -> list[ToolSchema]:
    return [TOOL_SCHEMAS[name] for name in names]


def format_chunk_observation(tool: str, query: str, results: list[RetrievedChunk]) -> str:
    lines = [f"{tool} results for '{query}':"]
    if not results:
        lines.append("(no results)")
    for position, result in enumerate(results, 1):
        lines.append(f"[{position}] ({result.locator}, {result.token_count} tokens) {result.text}")
    return "\n".join(lines)


def format_web_observation(query: str, results: list[WebResult]) -> str:
    lines = [f"web_search results for '{query}':"]
    if not results:
        lines.append("(no results)")
    for position, result in enumerate(results, 1):
        lines.append(f"[{position}] {result.title} ({result.locator}) {result.snippet}")
    return "\n".join(lines)


def format_file_listing(files: dict[str, str]) -> str:
    if not files:
        return "(none)"
    sections = []
    for path in sorted(files):
        sections.append(f"--- {path} ---\n{files[path]}")
    return "\n".join(sections)


@dataclass
class StepAction:
    """What a single ReAct step did."""

    kind: str  # search | web | write | finish | defect | invalid
    tool: str | None = None
    observation: str = ""
    write_path: str | None = None
    justification: str | None = None


@dataclass
class ReactState:
    phase: GenPhase
    transcript: list[ChatMessage] = field(default_factory=list)
    steps_taken: int = 0
    step_budget: int = 20
    retrieval_mode: RetrievalMode = RetrievalMode.PROGRESSIVE
    working_files: dict[str, str] = field(default_factory=dict)

    def advance_phase(self) -> None:
        if self.phase is not GenPhase.DEVICE_CONTROL:
            raise IotForgeError("phase transitions only go device_control -> integration")
        self.phase = GenPhase.INTEGRATION
        self.steps_taken = 0  # the step budget applies per phase


@dataclass
class GenerationOutcome:
    status: GenerationStatus
    artifact: IntegrationArtifact | None
    trace: list[dict[str, Any]]
    ledger_snapshot: dict[str, dict[str, int]]
    failure_reason: str = ""


@dataclass
class GenerationConfig:
    step_budget: int = 20
    format_repair_attempts: int = 2
    retrieval_mode: RetrievalMode = RetrievalMode.PROGRESSIVE
    fixed_query_k: int = 5


def execute_step(transcript: list[ChatMessage], gateway: Gateway, toolbox: KnowledgeToolbox,
                 allowed: tuple[str, ...], working_files: dict[str, str],
                 ledger_phase: Phase, finish_tool: str = "finish_phase",
                 extra_tools: tuple[str, ...] = ()) -> StepAction:
    """Run one reason-act step: ask the provider, apply its single action.

    A disallowed or missing tool call is recorded as an error observation
    and still consumes the step; recovering is the agent's job.
    """
    tool_names = tuple(allowed) + tuple(extra_tools)
    if finish_tool not in tool_names:
        tool_names = tool_names + (finish_tool,)
    reply = gateway.complete(transcript, schemas_for(tool_names), phase=ledger_phase)
    transcript.append(reply)

    if reply.tool_call is None:
        observation = ("Expected exactly one tool call per step. Available tools: "
                       + ", ".join(tool_names))
        transcript.append(tool_result(observation))
        return StepAction(kind="invalid", observation=observation)

    call = reply.tool_call
    if call.name not in tool_names:
        observation = f"tool {call.name} not available in this phase"
        transcript.append(tool_result(observation))
        return StepAction(kind="invalid", tool=call.name, observation=observation)

    if call.name == "write_file":
        path = str(call.arguments.get("path", "")).strip()
        content = str(call.arguments.get("content", ""))
        if not path:
            observation = "write_file needs a non-empty path"
            transcript.append(tool_result(observation))
            return StepAction(kind="invalid", tool=call.name, observation=observation)
        working_files[path] = content
        observation = f"wrote {path} ({count_tokens(content)} tokens)"
        transcript.append(tool_result(observation))
        return StepAction(kind="write", tool=call.name, observation=observation, write_path=path)

    if call.name == finish_tool:
        observation = f"{finish_tool} acknowledged"
        transcript.append(tool_result(observation))
        return StepAction(kind="finish", tool=call.name, observation=observation)

    if call.name == "declare_test_defective":
        justification = str(call.arguments.get("justification", ""))
        observation = "test recorded as defective"
        transcript.append(tool_result(observation))
        return StepAction(kind="defect", tool=call.name, observation=observation,
                          justification=justification)

    query = str(call.arguments.get("query", ""))
    k = int(call.arguments.get("k", 5))
    try:
        if call.name == "search_device_db":
            observation = format_chunk_observation(call.name, query, toolbox.search_device_db(query, k))
        elif call.name == "search_platform_db":
            observation = format_chunk_observation(call.name, query, toolbox.search_platform_db(query, k))
        else:
            observation = format_web_observation(query, toolbox.web_search(query))
        kind = "web" if call.name == "web_search" else "search"
    except StoreNotBuiltError as exc:
        observation = f"tool {call.name} failed: {exc}"
        kind = "invalid"
    transcript.append(tool_result(observation))
    return StepAction(kind=kind, tool=call.name, observation=observation)


def react_step(state: ReactState, gateway: Gateway, toolbox: KnowledgeToolbox,
               ledger_phase: Phase) -> StepAction:
    """One step of the generation loop, honoring the per-phase tool set."""
    if state.steps_taken >= state.step_budget:
        raise BudgetExceededError(
            f"step budget {state.step_budget} exhausted in phase {state.phase.value}"
        )
    if state.retrieval_mode is RetrievalMode.FIXED_ONE_TIME:
        allowed = FIXED_MODE_TOOLS
    else:
        allowed = PHASE_TOOLS[state.phase]
    action = execute_step(state.transcript, gateway, toolbox, allowed,
                          state.working_files, ledger_phase)
    state.steps_taken += 1
    return action


def _fixed_context(toolbox: KnowledgeToolbox, queries: tuple[str, ...], *, device: str,
                   platform: str, k: int, use_platform: bool) -> str:
    blocks = ["Retrieved context (fixed one-time):"]
    for template in queries:
        query = template.format(device=device, platform=platform)
        results = (toolbox.search_platform_db(query, k) if use_platform
                   else toolbox.search_device_db(query, k))
        blocks.append(format_chunk_observation(
            "search_platform_db" if use_platform else "search_device_db", query, results))
    return "\n".join(blocks)


def run_generation(task: IntegrationTask, profile: PlatformProfile, toolbox: KnowledgeToolbox,
                   gateway: Gateway, templates: TemplateSet | None = None,
                   config: GenerationConfig | None = None,
                   on_event: EventCallback | None = None,
                   clock: Any = None) -> GenerationOutcome:
    """Drive both generation phases and return the (validated) artifact."""
    templates = templates or TemplateSet()
    config = config or GenerationConfig()
    if toolbox.platform_store is None or toolbox.platform_store.is_empty():
        raise PlatformKnowledgeError(
            "platform knowledge store is empty; generation cannot produce usable output"
        )

    trace: list[dict[str, Any]] = []
    now = clock.now if clock is not None else (lambda: 0.0)

    def emit(event: str, data: dict[str, Any]) -> None:
        if on_event is not None:
            on_event(event, data)

    def record(phase: GenPhase, action: StepAction, step: int) -> None:
        line = {
            "step": step,
            "phase": phase.value,
            "kind": action.kind,
            "tool": action.tool,
            "observation_tokens": count_tokens(action.observation),
        }
        if action.write_path:
            line["path"] = action.write_path
        trace.append(line)
        emit("trace", line)

    device_label = f"{task.device_brand} {task.device_model}"
    fixed = config.retrieval_mode is RetrievalMode.FIXED_ONE_TIME

    state = ReactState(
        phase=GenPhase.DEVICE_CONTROL,
        step_budget=config.step_budget,
        retrieval_mode=config.retrieval_mode,
    )

    def run_phase(phase: GenPhase, ledger_phase: Phase) -> str | None:
        """Run steps until finish_phase; returns a failure status string."""
        while True:
            if state.steps_taken >= state.step_budget:
                return GenerationStatus.BUDGET_EXHAUSTED.value
            action = react_step(state, gateway, toolbox, ledger_phase)
            record(phase, action, state.steps_taken)
            if action.kind == "finish":
                return None

    # Phase 1: device control code from device knowledge only.
    toolbox.context.phase = Phase.DEVICE_CONTROL_CODEGEN
    phase1_tools = FIXED_MODE_TOOLS if fixed else PHASE_TOOLS[GenPhase.DEVICE_CONTROL]
    context_block = ""
    if fixed:
        context_block = _fixed_context(
            toolbox, FIXED_DEVICE_QUERIES, device=device_label,
            platform=task.platform_id, k=config.fixed_query_k, use_platform=False)
    state.transcript.append(system(templates.render(
        "codegen_device_control_system",
        device_brand=task.device_brand, device_model=task.device_model,
        tool_list=", ".join(phase1_tools),
    )))
    state.transcript.append(user(templates.render(
        "codegen_device_control_user",
        device_brand=task.device_brand, device_model=task.device_model,
        function_description=task.function_description or "(none provided)",
        context_block=context_block,
    )))
    emit("phase", {"phase": GenPhase.DEVICE_CONTROL.value})

    try:
        failure = run_phase(GenPhase.DEVICE_CONTROL, Phase.DEVICE_CONTROL_CODEGEN)
        if failure:
            return GenerationOutcome(GenerationStatus(failure), None, trace,
                                     gateway.ledger.snapshot(), "device control phase ran out of steps")

        # Phase 2: integration code on top of the phase-1 files.
        state.advance_phase()
        toolbox.context.phase = Phase.INTEGRATION_CODEGEN
        phase2_tools = FIXED_MODE_TOOLS if fixed else PHASE_TOOLS[GenPhase.INTEGRATION]
        context_block = ""
        if fixed:
            context_block = _fixed_context(
                toolbox, FIXED_PLATFORM_QUERIES, device=device_label,
                platform=task.platform_id, k=config.fixed_query_k, use_platform=True)
        state.transcript.append(system(templates.render(
            "codegen_integration_system",
            platform_id=task.platform_id, manifest_path=profile.layout.manifest_path,
            tool_list=", ".join(phase2_tools),
        )))
        state.transcript.append(user(templates.render(
            "codegen_integration_user",
            device_brand=task.device_brand, device_model=task.device_model,
            platform_id=task.platform_id,
            file_listing=format_file_listing(state.working_files),
            context_block=context_block,
        )))
        emit("phase", {"phase": GenPhase.INTEGRATION.value})

        failure = run_phase(GenPhase.INTEGRATION, Phase.INTEGRATION_CODEGEN)
        if failure:
            return GenerationOutcome(GenerationStatus(failure), None, trace,
                                     gateway.ledger.snapshot(), "integration phase ran out of steps")

        # Layout gate, with bounded format-repair rounds.
        artifact = IntegrationArtifact.create(
            artifact_id=_artifact_id(task), files=state.working_files,
            manifest_path=profile.layout.manifest_path, timestamp=now(),
        )
        violations = validate_artifact_layout(artifact, profile)
        repairs = 0
        while violations and repairs < config.format_repair_attempts:
            repairs += 1
            listing = "\n".join(str(violation) for violation in violations)
            state.transcript.append(user(
                f"The artifact violates the platform layout rules:\n{listing}\n"
                "Fix the files and call finish_phase again."
            ))
            state.steps_taken = 0  # each repair round gets a fresh step budget
            failure = run_phase(GenPhase.INTEGRATION, Phase.INTEGRATION_CODEGEN)
            if failure:
                return GenerationOutcome(GenerationStatus(failure), None, trace,
                                         gateway.ledger.snapshot(), "format repair ran out of steps")
            artifact = IntegrationArtifact.create(
                artifact_id=_artifact_id(task), files=state.working_files,
                manifest_path=profile.layout.manifest_path, timestamp=now(),
            )
            violations = validate_artifact_layout(artifact, profile)
        if violations:
            listing = "; ".join(str(violation) for violation in violations)
            return GenerationOutcome(
                GenerationStatus.PROVIDER_FAILED, None, trace, gateway.ledger.snapshot(),
                f"layout still invalid after {config.format_repair_attempts} repair rounds: {listing}",
            )
    except BudgetExceededError as exc:
        return GenerationOutcome(GenerationStatus.BUDGET_EXHAUSTED, None, trace,
                                 gateway.ledger.snapshot(), str(exc))
    except (StoreNotBuiltError, PlatformKnowledgeError):
        raise
    except IotForgeError as exc:
        return GenerationOutcome(GenerationStatus.PROVIDER_FAILED, None, trace,
                                 gateway.ledger.snapshot(), str(exc))

    emit("generated", {"files": sorted(artifact.files), "revision": artifact.revision})
    return GenerationOutcome(GenerationStatus.SUCCEEDED, artifact, trace,
                             gateway.ledger.snapshot())


def _artifact_id(task: IntegrationTask) -> str:
    slug = f"{task.device_brand}-{task.device_model}-{task.platform_id}".lower()
    slug = "".join(ch if ch.isalnum() or ch == "-" else "-" for ch in slug)
    while "--" in slug:
        slug = slug.replace("--", "-")
    return f"{slug}-s{task.seed}"


def export_trace(trace: list[dict[str, Any]], path: str) -> None:
    """Newline-delimited structured trace records for audit and the UI."""
    with open(path, "w", encoding="utf-8") as handle:
        for line in trace:
            handle.write(json.dumps(line) + "\n")
