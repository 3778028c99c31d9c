"""Test generation and sandboxed execution against the artifact.

Two test categories exist: basic integration tests (registration,
service invocation, config entry handling) and per-function
functionality tests that assert the platform service actually drove the
device. Tests come from the provider when it cooperates and from the
platform profile's templates when it does not; both origins cover the
same categories.
"""

from __future__ import annotations

import enum
import logging
import re
import shlex
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import InvalidInputError, ProviderError
from .knowledge import KnowledgeToolbox
from .llm import Gateway, MalformedOutputError, Phase, parse_json_reply, system, user
from .model import FunctionDescriptor, FunctionKind, IntegrationArtifact, IntegrationTask, PlatformProfile
from .prompts import TemplateSet

logger = logging.getLogger(__name__)

BASIC_CATEGORIES = ("registration", "service_invocation", "config_entry")


class TestCategory(str, enum.Enum):
    REGISTRATION = "registration"
    SERVICE_INVOCATION = "service_invocation"
    CONFIG_ENTRY = "config_entry"
    FUNCTIONALITY = "functionality"


class TestOrigin(str, enum.Enum):
    TEMPLATE = "template"
    LLM_GENERATED = "llm_generated"


class Verdict(str, enum.Enum):
    PASSED = "passed"
    FAILED = "failed"
    ERRORED = "errored"
    TIMED_OUT = "timed_out"


@dataclass(frozen=True)
class TestCase:
    test_id: str
    category: TestCategory
    body: str
    origin: TestOrigin
    target_function: str | None = None

    def __post_init__(self) -> None:
        if self.category is TestCategory.FUNCTIONALITY and not self.target_function:
            raise InvalidInputError("functionality tests must name a target function")
        if self.category is not TestCategory.FUNCTIONALITY and self.target_function:
            raise InvalidInputError("only functionality tests carry a target function")


@dataclass(frozen=True)
class TestResult:
    test_id: str
    verdict: Verdict
    diagnostics: str
    duration: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "test_id": self.test_id,
            "verdict": self.verdict.value,
            "diagnostics": self.diagnostics,
            "duration": self.duration,
        }


class TestIdAllocator:
    """Session-scoped ids: unique across regenerations, stable per session."""

    def __init__(self) -> None:
        self._generation = 0

    def next_generation(self) -> int:
        self._generation += 1
        return self._generation

    def basic_id(self, category: str, generation: int) -> str:
        return f"basic_{category}_g{generation}"

    def functionality_id(self, function_id: str, generation: int) -> str:
        return f"func_{function_id}_g{generation}"


_KIND_HINTS: tuple[tuple[tuple[str, ...], FunctionKind], ...] = (
    (("on/off", "switch", "toggle", "power"), FunctionKind.BINARY_TOGGLE),
    (("stream", "video", "audio", "camera", "feed"), FunctionKind.CONTINUOUS_STREAM),
    (("sensor", "read", "reading", "temperature", "humidity", "measure", "monitor", "update"),
     FunctionKind.SENSOR_READOUT),
    (("mode", "preset", "profile", "scene"), FunctionKind.ENUMERATED_MODE),
    (("level", "speed", "brightness", "volume", "percent", "intensity"),
     FunctionKind.RANGED_SETTING),
)


def infer_kind(text: str) -> FunctionKind:
    lowered = text.lower()
    for needles, kind in _KIND_HINTS:
        if any(needle in lowered for needle in needles):
            return kind
    return FunctionKind.UNARY_COMMAND


def _slug(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")
    return slug or "function"


def parse_function_description(description: str) -> list[FunctionDescriptor]:
    """Description-only fallback: split phrases, infer kinds from keywords."""
    phrases = [p.strip() for p in re.split(r"[;,.]| and ", description) if p.strip()]
    descriptors: list[FunctionDescriptor] = []
    seen: set[str] = set()
    for phrase in phrases:
        function_id = _slug(phrase)
        if function_id in seen:
            continue
        seen.add(function_id)
        descriptors.append(FunctionDescriptor(
            function_id=function_id, name=phrase, kind=infer_kind(phrase), description=phrase,
        ))
    return descriptors


def summarize_function_list(task: IntegrationTask, toolbox: KnowledgeToolbox,
                            gateway: Gateway | None,
                            templates: TemplateSet | None = None) -> list[FunctionDescriptor]:
    """Build the device functionality list that tests are generated from.

    Prefers a provider summary over retrieved device knowledge; degrades
    to parsing the task's functional description. An empty result is
    allowed (with a warning), never an error.
    """
    templates = templates or TemplateSet()
    context_block = ""
    device_store = toolbox.device_store
    if device_store is not None and not device_store.is_empty():
        toolbox.context.phase = Phase.TEST_GEN
        chunks = toolbox.search_device_db(f"{task.device_brand} {task.device_model} functions", k=5)
        context_block = "\n".join(f"({c.locator}) {c.text}" for c in chunks)

    descriptors: list[FunctionDescriptor] = []
    if gateway is not None and context_block:
        try:
            reply = gateway.complete(
                [
                    system(templates.render("function_summary_system")),
                    user(templates.render(
                        "function_summary_user",
                        device_brand=task.device_brand, device_model=task.device_model,
                        context_block=context_block,
                    )),
                ],
                phase=Phase.TEST_GEN,
            )
            payload = parse_json_reply(reply.content)
            descriptors = _descriptors_from_payload(payload)
        except (ProviderError, MalformedOutputError, InvalidInputError) as exc:
            logger.warning("function summary via provider failed (%s); using description", exc)
            descriptors = []

    if not descriptors and task.function_description:
        descriptors = parse_function_description(task.function_description)
    if not descriptors:
        logger.warning("no device functions could be summarized for %s", task.fingerprint())

    deduped: list[FunctionDescriptor] = []
    seen: set[str] = set()
    for descriptor in descriptors:
        if descriptor.function_id in seen:
            continue
        seen.add(descriptor.function_id)
        deduped.append(descriptor)
    return deduped


def _descriptors_from_payload(payload: Any) -> list[FunctionDescriptor]:
    if not isinstance(payload, list):
        raise MalformedOutputError("function summary must be a JSON array")
    descriptors = []
    for item in payload:
        kind_text = str(item.get("kind", ""))
        try:
            kind = FunctionKind(kind_text)
        except ValueError:
            kind = infer_kind(f"{item.get('name', '')} {item.get('description', '')}")
        descriptors.append(FunctionDescriptor(
            function_id=_slug(str(item["function_id"])),
            name=str(item.get("name", item["function_id"])),
            kind=kind,
            description=str(item.get("description", "")),
        ))
    return descriptors


def generate_basic_tests(profile: PlatformProfile, gateway: Gateway | None,
                         toolbox: KnowledgeToolbox, templates: TemplateSet | None = None,
                         allocator: TestIdAllocator | None = None,
                         task: IntegrationTask | None = None) -> list[TestCase]:
    """At least one test per basic category; template fallback keeps coverage."""
    templates = templates or TemplateSet()
    allocator = allocator or TestIdAllocator()
    generation = allocator.next_generation()

    if gateway is not None:
        try:
            toolbox.context.phase = Phase.TEST_GEN
            chunks = toolbox.search_platform_db("integration testing registration config entries", k=5)
            context_block = "\n".join(f"({c.locator}) {c.text}" for c in chunks)
            reply = gateway.complete(
                [
                    system(templates.render("test_gen_basic_system", platform_id=profile.platform_id)),
                    user(templates.render(
                        "test_gen_basic_user",
                        device_brand=task.device_brand if task else "the device",
                        device_model=task.device_model if task else "",
                        platform_id=profile.platform_id,
                        context_block=context_block,
                    )),
                ],
                phase=Phase.TEST_GEN,
            )
            payload = parse_json_reply(reply.content)
            cases = _basic_cases_from_payload(payload, allocator, generation)
            if cases is not None:
                return cases
            logger.warning("provider basic tests missed a category; falling back to templates")
        except (ProviderError, MalformedOutputError) as exc:
            logger.warning("provider basic test generation failed (%s); using templates", exc)

    cases = []
    for category in BASIC_CATEGORIES:
        body = profile.test_templates.get(category)
        if body is None:
            raise InvalidInputError(
                f"profile {profile.platform_id} ships no template for category {category}"
            )
        cases.append(TestCase(
            test_id=allocator.basic_id(category, generation),
            category=TestCategory(category),
            body=body,
            origin=TestOrigin.TEMPLATE,
        ))
    return cases


def _basic_cases_from_payload(payload: Any, allocator: TestIdAllocator,
                              generation: int) -> list[TestCase] | None:
    if not isinstance(payload, list):
        raise MalformedOutputError("basic tests must be a JSON array")
    by_category: dict[str, list[str]] = {}
    for item in payload:
        category = str(item.get("category", ""))
        if category not in BASIC_CATEGORIES:
            raise MalformedOutputError(f"unknown basic category {category!r}")
        by_category.setdefault(category, []).append(str(item["body"]))
    if any(category not in by_category for category in BASIC_CATEGORIES):
        return None
    cases = []
    for category in BASIC_CATEGORIES:
        for index, body in enumerate(by_category[category]):
            suffix = "" if index == 0 else f"_{index + 1}"
            cases.append(TestCase(
                test_id=allocator.basic_id(category, generation) + suffix,
                category=TestCategory(category),
                body=body,
                origin=TestOrigin.LLM_GENERATED,
            ))
    return cases


def generate_functionality_tests(functions: list[FunctionDescriptor], gateway: Gateway | None,
                                 toolbox: KnowledgeToolbox, profile: PlatformProfile,
                                 templates: TemplateSet | None = None,
                                 allocator: TestIdAllocator | None = None) -> list[TestCase]:
    """Exactly one test per declared function, in declaration order."""
    templates = templates or TemplateSet()
    allocator = allocator or TestIdAllocator()
    generation = allocator.next_generation()

    bodies: dict[str, str] | None = None
    if gateway is not None:
        try:
            listing = "\n".join(
                f"- {f.function_id} ({f.kind.value}): {f.name}. {f.description}" for f in functions
            )
            reply = gateway.complete(
                [
                    system(templates.render("test_gen_functionality_system",
                                            platform_id=profile.platform_id)),
                    user(templates.render("test_gen_functionality_user",
                                          function_listing=listing)),
                ],
                phase=Phase.TEST_GEN,
            )
            payload = parse_json_reply(reply.content)
            if (isinstance(payload, dict)
                    and set(payload) == {f.function_id for f in functions}):
                bodies = {fid: str(body) for fid, body in payload.items()}
            else:
                logger.warning("provider functionality tests are not a bijection; using templates")
        except (ProviderError, MalformedOutputError) as exc:
            logger.warning("provider functionality test generation failed (%s); using templates", exc)

    template_body = profile.test_templates.get("functionality", "")
    cases = []
    for descriptor in functions:
        if bodies is not None:
            body = bodies[descriptor.function_id]
            origin = TestOrigin.LLM_GENERATED
        else:
            if not template_body:
                raise InvalidInputError(
                    f"profile {profile.platform_id} ships no functionality test template"
                )
            body = (template_body
                    .replace("{function_id}", descriptor.function_id)
                    .replace("{function_name}", descriptor.name)
                    .replace("{function_kind}", descriptor.kind.value))
            origin = TestOrigin.TEMPLATE
        cases.append(TestCase(
            test_id=allocator.functionality_id(descriptor.function_id, generation),
            category=TestCategory.FUNCTIONALITY,
            body=body,
            origin=origin,
            target_function=descriptor.function_id,
        ))
    return cases


class SandboxRunner:
    """Runs one test at a time in the platform sandbox subprocess.

    The sandbox is defined entirely by the profile's command template;
    exit code 0 means passed, nonzero failed, with stdout/stderr captured
    verbatim as diagnostics.
    """

    def __init__(self, profile: PlatformProfile, device_endpoint: str,
                 timeout: float = 60.0):
        self.profile = profile
        self.device_endpoint = device_endpoint
        self.timeout = timeout
        self.executions = 0

    def run(self, artifact: IntegrationArtifact, test: TestCase) -> TestResult:
        workdir = Path(tempfile.mkdtemp(prefix="iotforge-sandbox-"))
        try:
            artifact_dir = artifact.export(workdir / "artifact")
            test_file = workdir / f"{test.test_id}.py"
            test_file.write_text(test.body, encoding="utf-8")
            command_text = (self.profile.sandbox_command
                            .replace("{python}", sys.executable)
                            .replace("{artifact_dir}", str(artifact_dir))
                            .replace("{test_file}", str(test_file))
                            .replace("{device_endpoint}", self.device_endpoint))
            command = shlex.split(command_text)
            started = time.monotonic()
            try:
                completed = subprocess.run(
                    command, capture_output=True, text=True, timeout=self.timeout,
                )
            except subprocess.TimeoutExpired as exc:
                duration = time.monotonic() - started
                stdout = (exc.stdout or b"").decode("utf-8", "replace") if isinstance(exc.stdout, bytes) else (exc.stdout or "")
                stderr = (exc.stderr or b"").decode("utf-8", "replace") if isinstance(exc.stderr, bytes) else (exc.stderr or "")
                return TestResult(test.test_id, Verdict.TIMED_OUT,
                                  stdout + stderr + f"\n[timed out after {self.timeout}s]",
                                  max(duration, self.timeout))
            except FileNotFoundError as exc:
                return TestResult(test.test_id, Verdict.ERRORED,
                                  f"sandbox command not found: {exc}", 0.0)
            finally:
                self.executions += 1
            duration = time.monotonic() - started
            diagnostics = completed.stdout + completed.stderr
            verdict = Verdict.PASSED if completed.returncode == 0 else Verdict.FAILED
            return TestResult(test.test_id, verdict, diagnostics, duration)
        finally:
            shutil.rmtree(workdir, ignore_errors=True)


def run_test(artifact: IntegrationArtifact, test: TestCase, profile: PlatformProfile,
             device_endpoint: str, timeout: float = 60.0) -> TestResult:
    return SandboxRunner(profile, device_endpoint, timeout=timeout).run(artifact, test)
