"""Hardware-in-the-loop verification with binary human feedback.

Per function: actuate the device through the adapter, ask the observer a
yes/no question, repair on "no", and re-probe the same function. Each
function absorbs at most 10 "no" answers; one more marks it failed and
the session moves on. A session therefore never issues more than
|functions| x 11 probes.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Protocol

from .autodebug import apply_rewrite
from .codegen import execute_step, format_file_listing
from .errors import (
    FeedbackProtocolError,
    InvalidInputError,
    ProviderError,
    TransportError,
)
from .knowledge import KnowledgeToolbox
from .llm import Gateway, Phase, system, user
from .model import (
    FunctionDescriptor,
    FunctionKind,
    IntegrationArtifact,
    PlatformProfile,
    RevisionCause,
)
from .prompts import TemplateSet
from .virtualdevice import VirtualDevice, device_request

logger = logging.getLogger(__name__)

NO_CAP = 10
REPAIR_TOOLS = ("search_device_db", "search_platform_db", "web_search", "write_file")


class HilStatus(str, enum.Enum):
    RUNNING = "running"
    AWAITING_FEEDBACK = "awaiting_feedback"
    COMPLETED_ALL_VERIFIED = "completed_all_verified"
    COMPLETED_WITH_FAILURES = "completed_with_failures"
    ABORTED = "aborted"


@dataclass(frozen=True)
class Probe:
    function_id: str
    actuation: str
    question: str


class DeviceAdapter(Protocol):
    """Transport to the physical (or simulated) device."""

    def check(self) -> None:
        ...  # pragma: no cover - interface

    def actuate(self, descriptor: FunctionDescriptor, arguments: dict[str, Any]) -> Any:
        ...  # pragma: no cover - interface


class LoopbackAdapter:
    """Routes actuations straight into an in-process virtual device."""

    def __init__(self, device: VirtualDevice):
        self.device = device

    def check(self) -> None:
        return None

    def actuate(self, descriptor: FunctionDescriptor, arguments: dict[str, Any]) -> Any:
        response = self.device.invoke(descriptor.function_id, arguments)
        if not response.get("ok"):
            raise TransportError(f"device rejected {descriptor.function_id}: {response}")
        return response.get("value")


class NetworkDeviceAdapter:
    """Speaks the device wire protocol to a served (real or virtual) device."""

    def __init__(self, endpoint: str, timeout: float = 5.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def check(self) -> None:
        try:
            device_request(self.endpoint, "__functions__", timeout=self.timeout)
        except Exception as exc:  # noqa: BLE001
            raise TransportError(f"device at {self.endpoint} unreachable: {exc}") from exc

    def actuate(self, descriptor: FunctionDescriptor, arguments: dict[str, Any]) -> Any:
        try:
            response = device_request(self.endpoint, descriptor.function_id, arguments,
                                      timeout=self.timeout)
        except Exception as exc:  # noqa: BLE001
            raise TransportError(f"actuation transport failed: {exc}") from exc
        if not response.get("ok"):
            raise TransportError(f"device rejected {descriptor.function_id}: {response}")
        return response.get("value")


def actuation_arguments(kind: FunctionKind) -> dict[str, Any]:
    if kind is FunctionKind.BINARY_TOGGLE:
        return {"on": True}
    if kind is FunctionKind.RANGED_SETTING:
        return {"value": 50.0}
    if kind is FunctionKind.ENUMERATED_MODE:
        return {"option": "auto"}
    return {}


@dataclass
class HilConfig:
    no_cap: int = NO_CAP
    repair_step_budget: int = 10


class HilSession:
    """Per-function verification state machine with bounded "no" feedback.

    The only reachable transitions are running -> awaiting_feedback (a
    probe), awaiting_feedback -> running (feedback), running ->
    completed_* (queue exhausted), and aborted at start when the adapter
    is unreachable. State is checkpointed after every transition.
    """

    def __init__(self, artifact: IntegrationArtifact, functions: list[FunctionDescriptor],
                 adapter: DeviceAdapter, gateway: Gateway | None = None,
                 toolbox: KnowledgeToolbox | None = None,
                 profile: PlatformProfile | None = None,
                 templates: TemplateSet | None = None,
                 config: HilConfig | None = None,
                 checkpoint_path: str | Path | None = None,
                 clock: Any = None,
                 session_id: str | None = None):
        if not functions:
            raise InvalidInputError("HIL session needs at least one function")
        self.session_id = session_id or uuid.uuid4().hex[:12]
        self.artifact = artifact
        self.function_queue = list(functions)
        self.current = 0
        self.per_function_no_count: dict[str, int] = {f.function_id: 0 for f in functions}
        self.failed_functions: list[str] = []
        self.status = HilStatus.RUNNING
        self.transcript: list[dict[str, Any]] = []
        self.outstanding_probe: Probe | None = None
        self.repairs_made = 0

        self.adapter = adapter
        self.gateway = gateway
        self.toolbox = toolbox
        self.profile = profile
        self.templates = templates or TemplateSet()
        self.config = config or HilConfig()
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self._now = clock.now if clock is not None else (lambda: 0.0)
        self.on_event: Callable[[str, dict[str, Any]], None] | None = None
        # feedback may arrive from a different thread than the probe issuer
        self._transition_lock = threading.Lock()

    # -- helpers ---------------------------------------------------------

    def _emit(self, event: str, data: dict[str, Any]) -> None:
        if self.on_event is not None:
            self.on_event(event, data)

    def _log(self, event: str, **data: Any) -> None:
        entry = {"event": event, "ts": self._now(), **data}
        self.transcript.append(entry)
        self._emit(f"hil_{event}", entry)
        self._checkpoint()

    def _checkpoint(self) -> None:
        if self.checkpoint_path is None:
            return
        self.checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
        self.checkpoint_path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    def current_function(self) -> FunctionDescriptor:
        return self.function_queue[self.current]

    def probe_count(self) -> int:
        return sum(1 for entry in self.transcript if entry["event"] == "probe")

    # -- state machine ---------------------------------------------------

    def next_probe(self) -> Probe | None:
        """Actuate the current function and raise the yes/no question.

        Transport failures count as implicit "no": the device visibly did
        nothing, so the repair loop runs with the transport diagnostics
        and the same function is retried, within the same cap. Returns
        None when the session has reached a terminal state.
        """
        with self._transition_lock:
            return self._next_probe_locked()

    def _next_probe_locked(self) -> Probe | None:
        if self.status is not HilStatus.RUNNING:
            raise FeedbackProtocolError(f"cannot probe while session is {self.status.value}")

        while self.status is HilStatus.RUNNING:
            descriptor = self.current_function()
            arguments = actuation_arguments(descriptor.kind)
            try:
                self.adapter.actuate(descriptor, arguments)
            except TransportError as exc:
                self._log("transport_failure", function_id=descriptor.function_id, error=str(exc))
                self._implicit_no(descriptor, str(exc))
                continue

            question = self._draft_question(descriptor)
            probe = Probe(
                function_id=descriptor.function_id,
                actuation=f"invoked {descriptor.function_id} with {json.dumps(arguments, sort_keys=True)}",
                question=question,
            )
            self.outstanding_probe = probe
            self.status = HilStatus.AWAITING_FEEDBACK
            self._log("probe", function_id=probe.function_id, question=probe.question,
                      no_count=self.per_function_no_count[probe.function_id])
            return probe
        return None

    def submit_feedback(self, answer: str) -> "HilSession":
        """Consume a yes/no answer; "no" triggers repair within the cap."""
        with self._transition_lock:
            return self._submit_feedback_locked(answer)

    def _submit_feedback_locked(self, answer: str) -> "HilSession":
        if self.status is not HilStatus.AWAITING_FEEDBACK or self.outstanding_probe is None:
            raise FeedbackProtocolError("no probe is awaiting feedback")
        answer = answer.strip().lower()
        if answer not in ("yes", "no"):
            raise InvalidInputError("feedback must be 'yes' or 'no'")

        probe = self.outstanding_probe
        self.outstanding_probe = None
        self.status = HilStatus.RUNNING
        descriptor = self.current_function()
        self._log("feedback", function_id=probe.function_id, answer=answer)

        if answer == "yes":
            self._advance()
        else:
            self._handle_no(descriptor, details=f"observer answered no to: {probe.question}")
        self._checkpoint()
        return self

    def _implicit_no(self, descriptor: FunctionDescriptor, details: str) -> None:
        self._handle_no(descriptor, details=f"transport failure: {details}")

    def _handle_no(self, descriptor: FunctionDescriptor, details: str) -> None:
        function_id = descriptor.function_id
        if self.per_function_no_count[function_id] >= self.config.no_cap:
            # The cap is spent; a further "no" marks the function failed.
            self.failed_functions.append(function_id)
            self._log("function_failed", function_id=function_id,
                      no_count=self.per_function_no_count[function_id])
            self._advance()
            return
        self.per_function_no_count[function_id] += 1
        self._log("no_counted", function_id=function_id,
                  no_count=self.per_function_no_count[function_id])
        self._run_repair(descriptor, details)
        # The same function is re-probed on the next next_probe() call.

    def _advance(self) -> None:
        self.current += 1
        if self.current >= len(self.function_queue):
            self.status = (HilStatus.COMPLETED_WITH_FAILURES if self.failed_functions
                           else HilStatus.COMPLETED_ALL_VERIFIED)
            self._log("completed", status=self.status.value,
                      failed_functions=list(self.failed_functions))

    def _draft_question(self, descriptor: FunctionDescriptor) -> str:
        fallback_template = (self.profile.question_template if self.profile is not None
                             else "Did the device's {function_name} behave correctly? (yes/no)")
        fallback = fallback_template.replace("{function_name}", descriptor.name)
        if self.gateway is None:
            return fallback
        try:
            reply = self.gateway.complete(
                [
                    system(self.templates.render("question_draft_system")),
                    user(self.templates.render(
                        "question_draft_user", function_id=descriptor.function_id,
                        function_name=descriptor.name, description=descriptor.description,
                    )),
                ],
                phase=Phase.HIL_DEBUG,
            )
            question = reply.content.strip()
            return question or fallback
        except ProviderError:
            return fallback

    def _run_repair(self, descriptor: FunctionDescriptor, details: str) -> bool:
        """Agent examines the code, may query tools, rewrites files."""
        if self.gateway is None or self.toolbox is None or self.profile is None:
            self._log("repair_skipped", function_id=descriptor.function_id,
                      reason="no provider/toolbox configured")
            return False
        self.toolbox.context.phase = Phase.HIL_DEBUG
        transcript = [
            system(self.templates.render(
                "hil_repair_system", platform_id=self.profile.platform_id,
                tool_list=", ".join(REPAIR_TOOLS + ("finish_repair",)),
            )),
            user(self.templates.render(
                "hil_repair_user", function_id=descriptor.function_id,
                function_name=descriptor.name, details=details,
                file_listing=format_file_listing(self.artifact.files),
            )),
        ]
        staged: dict[str, str] = {}
        revised = False
        try:
            for _ in range(self.config.repair_step_budget):
                action = execute_step(transcript, self.gateway, self.toolbox, REPAIR_TOOLS,
                                      staged, Phase.HIL_DEBUG, finish_tool="finish_repair")
                if action.kind != "finish":
                    continue
                if staged:
                    violations = apply_rewrite(self.artifact, staged, self.profile,
                                               RevisionCause.HIL_FIX, timestamp=self._now(),
                                               note=f"hil repair {descriptor.function_id}")
                    if violations:
                        listing = "\n".join(str(violation) for violation in violations)
                        transcript.append(user(f"Rewrite rejected, layout violations:\n{listing}"))
                        staged.clear()
                        continue
                    revised = True
                    self.repairs_made += 1
                break
        except ProviderError as exc:
            logger.warning("HIL repair for %s failed: %s", descriptor.function_id, exc)
        self._log("repair", function_id=descriptor.function_id, revised=revised,
                  revision=self.artifact.revision)
        return revised

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        """Checkpoint payload: full state minus the runtime handles."""
        return {
            "session_id": self.session_id,
            "status": self.status.value,
            "current": self.current,
            "function_queue": [
                {"function_id": f.function_id, "name": f.name, "kind": f.kind.value,
                 "description": f.description}
                for f in self.function_queue
            ],
            "per_function_no_count": dict(self.per_function_no_count),
            "failed_functions": list(self.failed_functions),
            "outstanding_probe": (
                {"function_id": self.outstanding_probe.function_id,
                 "actuation": self.outstanding_probe.actuation,
                 "question": self.outstanding_probe.question}
                if self.outstanding_probe else None
            ),
            "repairs_made": self.repairs_made,
            "transcript": list(self.transcript),
            "artifact": self.artifact.to_dict(),
        }

    @classmethod
    def restore(cls, payload: dict[str, Any], adapter: DeviceAdapter,
                gateway: Gateway | None = None, toolbox: KnowledgeToolbox | None = None,
                profile: PlatformProfile | None = None,
                templates: TemplateSet | None = None, config: HilConfig | None = None,
                checkpoint_path: str | Path | None = None, clock: Any = None) -> "HilSession":
        functions = [
            FunctionDescriptor(f["function_id"], f["name"], FunctionKind(f["kind"]),
                               f.get("description", ""))
            for f in payload["function_queue"]
        ]
        session = cls(IntegrationArtifact.from_dict(payload["artifact"]), functions, adapter,
                      gateway=gateway, toolbox=toolbox, profile=profile, templates=templates,
                      config=config, checkpoint_path=checkpoint_path, clock=clock,
                      session_id=payload["session_id"])
        session.status = HilStatus(payload["status"])
        session.current = payload["current"]
        session.per_function_no_count = dict(payload["per_function_no_count"])
        session.failed_functions = list(payload["failed_functions"])
        session.repairs_made = payload.get("repairs_made", 0)
        session.transcript = list(payload.get("transcript", []))
        probe = payload.get("outstanding_probe")
        if probe:
            session.outstanding_probe = Probe(probe["function_id"], probe["actuation"],
                                              probe["question"])
        return session

    @classmethod
    def load(cls, checkpoint_path: str | Path, adapter: DeviceAdapter, **deps: Any) -> "HilSession":
        payload = json.loads(Path(checkpoint_path).read_text(encoding="utf-8"))
        return cls.restore(payload, adapter, checkpoint_path=checkpoint_path, **deps)


def start_session(artifact: IntegrationArtifact, functions: list[FunctionDescriptor],
                  adapter: DeviceAdapter, gateway: Gateway | None = None,
                  toolbox: KnowledgeToolbox | None = None,
                  profile: PlatformProfile | None = None,
                  templates: TemplateSet | None = None, config: HilConfig | None = None,
                  checkpoint_path: str | Path | None = None, clock: Any = None) -> HilSession:
    """Open a session at the first function; abort if the device is down."""
    session = HilSession(artifact, functions, adapter, gateway=gateway, toolbox=toolbox,
                         profile=profile, templates=templates, config=config,
                         checkpoint_path=checkpoint_path, clock=clock)
    try:
        adapter.check()
    except TransportError as exc:
        session.status = HilStatus.ABORTED
        session._log("aborted", error=str(exc))
        return session
    session._log("started", functions=[f.function_id for f in functions])
    return session


def run_session(session: HilSession, feedback: Callable[[Probe], str]) -> HilSession:
    """Drive a session to completion using a feedback source (terminal,
    scripted file, or service queue)."""
    while session.status is HilStatus.RUNNING:
        probe = session.next_probe()
        if probe is None:
            break
        session.submit_feedback(feedback(probe))
    return session
