"""Uniform chat interface with tool calling, plus offline scripted replay.

The surrogate tokenizer is deliberate: token totals only need to be a
consistent, platform-independent unit for comparing retrieval strategies,
not compatible with any specific model's tokenizer.
"""

from __future__ import annotations

import enum
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

import yaml

from .errors import (
    BudgetExceededError,
    FixtureExhaustedError,
    InvalidInputError,
    MalformedOutputError,
    ProviderError,
)


def count_tokens(text: str) -> int:
    """Surrogate tokenizer: whitespace-delimited runs plus line breaks.

    Deterministic across platforms; "turn on" counts 2, "" counts 0.
    """
    if not text:
        return 0
    return len(text.split()) + text.count("\n")


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


class Phase(str, enum.Enum):
    """Pipeline stages the token ledger attributes costs to."""

    DEVICE_CONTROL_CODEGEN = "device_control_codegen"
    INTEGRATION_CODEGEN = "integration_codegen"
    TEST_GEN = "test_gen"
    AUTO_DEBUG = "auto_debug"
    HIL_DEBUG = "hil_debug"


class LedgerKind(str, enum.Enum):
    RETRIEVED_KNOWLEDGE = "retrieved_knowledge"
    PROMPT = "prompt"
    COMPLETION = "completion"


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict[str, Any]
    call_id: str = ""


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str = ""
    parameters: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str = ""
    tool_call: ToolCall | None = None
    tool_result_for: str | None = None

    def __post_init__(self) -> None:
        if self.tool_call is not None and self.role is not Role.ASSISTANT:
            raise InvalidInputError("tool_call is only valid on assistant messages")
        if self.tool_result_for is not None and self.role is not Role.TOOL:
            raise InvalidInputError("tool_result_for is only valid on tool messages")


def system(content: str) -> ChatMessage:
    return ChatMessage(Role.SYSTEM, content)


def user(content: str) -> ChatMessage:
    return ChatMessage(Role.USER, content)


def tool_result(content: str, call_id: str = "") -> ChatMessage:
    return ChatMessage(Role.TOOL, content, tool_result_for=call_id or "call")


@dataclass(frozen=True)
class LedgerEntry:
    phase: Phase
    kind: LedgerKind
    token_count: int


class TokenLedger:
    """Append-only token accounting, grouped by phase and kind."""

    def __init__(self) -> None:
        self._entries: list[LedgerEntry] = []

    def add(self, phase: Phase, kind: LedgerKind, token_count: int) -> None:
        if token_count < 0:
            raise InvalidInputError("token_count must be non-negative")
        self._entries.append(LedgerEntry(phase, kind, token_count))

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def total(self, phase: Phase | None = None, kind: LedgerKind | None = None) -> int:
        return sum(
            entry.token_count
            for entry in self._entries
            if (phase is None or entry.phase is phase)
            and (kind is None or entry.kind is kind)
        )

    def snapshot(self) -> dict[str, dict[str, int]]:
        """Totals per phase per kind, plus overall sums."""
        table: dict[str, dict[str, int]] = {}
        for entry in self._entries:
            per_phase = table.setdefault(entry.phase.value, {})
            per_phase[entry.kind.value] = per_phase.get(entry.kind.value, 0) + entry.token_count
        table["total"] = {
            kind.value: self.total(kind=kind) for kind in LedgerKind
        }
        table["total"]["all"] = self.total()
        return table


@dataclass(frozen=True)
class ProviderBudget:
    max_calls: int = 200
    max_total_tokens: int = 2_000_000
    per_call_timeout: float = 120.0


class Provider(Protocol):
    def complete(self, messages: list[ChatMessage], tools: Iterable[ToolSchema]) -> ChatMessage:
        ...  # pragma: no cover - interface


def _latest_user_or_tool(messages: list[ChatMessage]) -> ChatMessage | None:
    for message in reversed(messages):
        if message.role in (Role.USER, Role.TOOL):
            return message
    return None


@dataclass(frozen=True)
class FixtureEntry:
    matcher: re.Pattern[str]
    response: ChatMessage


class ScriptedProvider:
    """Replays an ordered fixture of (pattern, canned response) entries.

    On each call the provider scans forward from its cursor for the first
    entry whose pattern matches the latest user/tool message, returns that
    entry's response, and moves the cursor past it (skipped entries are
    dead). A miss raises without consuming anything, so optional call
    sites with fallbacks leave the script intact.
    """

    def __init__(self, entries: Iterable[tuple[str, dict[str, Any]]]):
        self._entries: list[FixtureEntry] = []
        for pattern, response in entries:
            self._entries.append(FixtureEntry(re.compile(pattern, re.DOTALL), _parse_response(response)))
        self._cursor = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedProvider":
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, list):
            raise InvalidInputError(f"scripted fixture {path} must be a list of entries")
        return cls((item["match"], item) for item in raw)

    @property
    def remaining(self) -> int:
        return len(self._entries) - self._cursor

    def complete(self, messages: list[ChatMessage], tools: Iterable[ToolSchema]) -> ChatMessage:
        target = _latest_user_or_tool(messages)
        probe_text = target.content if target is not None else ""
        for index in range(self._cursor, len(self._entries)):
            entry = self._entries[index]
            if entry.matcher.search(probe_text):
                self._cursor = index + 1
                return entry.response
        raise FixtureExhaustedError(
            f"no fixture entry matches message: {probe_text[:200]!r}"
        )


def _parse_response(item: dict[str, Any]) -> ChatMessage:
    if "tool_call" in item and item["tool_call"] is not None:
        call = item["tool_call"]
        return ChatMessage(
            Role.ASSISTANT,
            content=item.get("text", "") or "",
            tool_call=ToolCall(name=call["name"], arguments=dict(call.get("arguments", {}))),
        )
    if "json" in item and item["json"] is not None:
        # Authoring convenience: a structured payload the agent would have
        # answered as JSON text.
        return ChatMessage(Role.ASSISTANT, content=json.dumps(item["json"]))
    if "text" in item and item["text"] is not None:
        return ChatMessage(Role.ASSISTANT, content=item["text"])
    raise InvalidInputError(f"fixture entry needs 'text', 'json', or 'tool_call': {item!r}")


def scripted_provider(fixture: Iterable[tuple[str, dict[str, Any]]]) -> ScriptedProvider:
    return ScriptedProvider(fixture)


class OpenAIChatProvider:
    """Adapter for an OpenAI-compatible chat-completions endpoint.

    Endpoint, model, and key come from the environment so credentials
    never end up in config files.
    """

    def __init__(self, endpoint: str | None = None, model: str | None = None,
                 api_key: str | None = None, timeout: float = 120.0):
        self.endpoint = endpoint or os.environ.get("IOTFORGE_LLM_ENDPOINT", "")
        self.model = model or os.environ.get("IOTFORGE_LLM_MODEL", "")
        self.api_key = api_key or os.environ.get("IOTFORGE_LLM_API_KEY", "")
        self.timeout = timeout
        if not self.endpoint or not self.model:
            raise InvalidInputError(
                "remote provider needs IOTFORGE_LLM_ENDPOINT and IOTFORGE_LLM_MODEL"
            )

    def complete(self, messages: list[ChatMessage], tools: Iterable[ToolSchema]) -> ChatMessage:
        import httpx  # deferred: offline paths never import it

        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [_wire_message(message) for message in messages],
        }
        tool_schemas = [
            {
                "type": "function",
                "function": {
                    "name": schema.name,
                    "description": schema.description,
                    "parameters": schema.parameters or {"type": "object", "properties": {}},
                },
            }
            for schema in tools
        ]
        if tool_schemas:
            payload["tools"] = tool_schemas
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            response = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
            response.raise_for_status()
            body = response.json()
        except Exception as exc:  # noqa: BLE001 - uniform transport error surface
            raise ProviderError(f"provider transport failure: {exc}") from exc
        return _parse_wire_choice(body)


def _wire_message(message: ChatMessage) -> dict[str, Any]:
    wire: dict[str, Any] = {"role": message.role.value, "content": message.content}
    if message.tool_call is not None:
        wire["tool_calls"] = [{
            "id": message.tool_call.call_id or "call_0",
            "type": "function",
            "function": {
                "name": message.tool_call.name,
                "arguments": json.dumps(message.tool_call.arguments),
            },
        }]
    if message.tool_result_for is not None:
        wire["tool_call_id"] = message.tool_result_for
    return wire


def _parse_wire_choice(body: dict[str, Any]) -> ChatMessage:
    try:
        message = body["choices"][0]["message"]
        calls = message.get("tool_calls") or []
        if calls:
            if len(calls) != 1:
                raise MalformedOutputError("expected exactly one tool call per turn")
            function = calls[0]["function"]
            return ChatMessage(
                Role.ASSISTANT,
                content=message.get("content") or "",
                tool_call=ToolCall(
                    name=function["name"],
                    arguments=json.loads(function.get("arguments") or "{}"),
                    call_id=calls[0].get("id", ""),
                ),
            )
        return ChatMessage(Role.ASSISTANT, content=message.get("content") or "")
    except MalformedOutputError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise MalformedOutputError(f"unparseable provider response: {exc}") from exc


class Gateway:
    """Budgeted front door to a provider; records tokens in the ledger."""

    def __init__(self, provider: Provider, ledger: TokenLedger,
                 budget: ProviderBudget | None = None, retries: int = 2):
        self.provider = provider
        self.ledger = ledger
        self.budget = budget or ProviderBudget()
        self.retries = retries
        self.calls_made = 0
        self.tokens_used = 0
        # transports honor the per-call timeout; scripted replay has none
        if hasattr(provider, "timeout"):
            provider.timeout = self.budget.per_call_timeout

    def complete(self, messages: list[ChatMessage], tools: Iterable[ToolSchema] = (),
                 phase: Phase = Phase.DEVICE_CONTROL_CODEGEN) -> ChatMessage:
        if not messages:
            raise InvalidInputError("messages must be non-empty")
        if messages[0].role is not Role.SYSTEM:
            raise InvalidInputError("first message must have the system role")
        if self.calls_made >= self.budget.max_calls:
            raise BudgetExceededError(
                f"provider call budget exhausted ({self.budget.max_calls} calls)"
            )

        tools = list(tools)
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                reply = self.provider.complete(messages, tools)
                _validate_reply(reply)
            except MalformedOutputError as exc:
                last_error = exc
                continue
            break
        else:
            raise MalformedOutputError(f"provider output malformed after {self.retries + 1} tries: {last_error}")

        self.calls_made += 1
        prompt_tokens = sum(count_tokens(message.content) for message in messages)
        completion_tokens = count_tokens(reply.content)
        if reply.tool_call is not None:
            completion_tokens += count_tokens(reply.tool_call.name)
            completion_tokens += count_tokens(json.dumps(reply.tool_call.arguments))
        self.ledger.add(phase, LedgerKind.PROMPT, prompt_tokens)
        self.ledger.add(phase, LedgerKind.COMPLETION, completion_tokens)
        self.tokens_used += prompt_tokens + completion_tokens
        if self.tokens_used > self.budget.max_total_tokens:
            raise BudgetExceededError(
                f"token budget exhausted ({self.budget.max_total_tokens} tokens)"
            )
        return reply


def _validate_reply(reply: ChatMessage) -> None:
    if reply.role is not Role.ASSISTANT:
        raise MalformedOutputError("provider must answer with an assistant message")
    if reply.tool_call is None and not reply.content:
        raise MalformedOutputError("assistant reply has neither content nor a tool call")


def parse_json_reply(text: str) -> Any:
    """Parse a JSON payload out of an assistant text reply.

    Tolerates Markdown code fences; raises MalformedOutputError otherwise.
    """
    stripped = text.strip()
    fence = re.match(r"^```(?:json)?\s*(.*?)\s*```$", stripped, re.DOTALL)
    if fence:
        stripped = fence.group(1)
    try:
        return json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise MalformedOutputError(f"reply is not valid JSON: {exc}") from exc


ProviderFactory = Callable[[], Provider]
