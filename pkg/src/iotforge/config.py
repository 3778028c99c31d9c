"""Layered run configuration: defaults < config file < flag overrides.

Environment variables carry provider credentials only (the provider
adapters read IOTFORGE_LLM_* / IOTFORGE_EMBED_* themselves); everything
that affects a run's behavior lives in the diffable config layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import InvalidInputError


@dataclass
class RunConfig:
    # task
    device_brand: str = ""
    device_model: str = ""
    platform_id: str = ""
    serial_number: str | None = None
    device_key: str | None = None
    function_description: str | None = None
    seed: int = 0
    # inputs / outputs
    fixtures_dir: str | None = None
    out_dir: str = "build"
    # provider
    provider_mode: str = "scripted"  # scripted | openai
    provider_fixture: str = "provider_progressive.yaml"
    max_calls: int = 200
    max_total_tokens: int = 2_000_000
    retries: int = 2
    # generation
    retrieval_mode: str = "progressive"  # progressive | fixed_one_time
    step_budget: int = 20
    format_repair_attempts: int = 2
    template_dir: str | None = None  # prompt-template overrides for granularity experiments
    # knowledge ablation toggles
    platform_kb_enabled: bool = True
    device_kb_enabled: bool = True
    web_enabled: bool = True
    # auto debug
    auto_debug_enabled: bool = True
    attempt_cap: int = 8
    confirm_suite: bool = False
    sandbox_timeout: float = 60.0
    # hil
    hil_enabled: bool = False
    hil_responses: str | None = None  # fixture file of scripted answers
    hil_checkpoint: str | None = None
    # bench
    bench_runs: int = 30
    extra: dict[str, Any] = field(default_factory=dict)

    def task_overrides(self) -> dict[str, Any]:
        return {
            "device_brand": self.device_brand or None,
            "device_model": self.device_model or None,
            "platform_id": self.platform_id or None,
            "serial_number": self.serial_number,
            "device_key": self.device_key,
            "function_description": self.function_description,
            "seed": self.seed,
        }


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def load_config(path: str | Path | None = None,
                overrides: dict[str, Any] | None = None) -> RunConfig:
    """Merge the layers into one RunConfig. Unknown file keys land in
    `extra` (they may belong to experiment-specific tooling); unknown
    override keys are rejected because flags are typo-prone."""
    merged: dict[str, Any] = {}
    extra: dict[str, Any] = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise InvalidInputError(f"config file {path} must hold a mapping")
        flattened = _flatten(raw)
        for key, value in flattened.items():
            if key in _FIELD_NAMES:
                merged[key] = value
            else:
                extra[key] = value
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_NAMES:
            raise InvalidInputError(f"unknown config override {key!r}")
        merged[key] = value
    config = RunConfig(**merged)
    config.extra = extra
    return config


_SECTION_ALIASES: dict[str, dict[str, str]] = {
    "task": {},
    "generation": {},
    "provider": {"mode": "provider_mode", "fixture": "provider_fixture"},
    "knowledge": {
        "platform_kb": "platform_kb_enabled",
        "device_kb": "device_kb_enabled",
        "web": "web_enabled",
    },
    "auto_debug": {"enabled": "auto_debug_enabled", "timeout": "sandbox_timeout"},
    "hil": {"enabled": "hil_enabled", "responses": "hil_responses", "checkpoint": "hil_checkpoint"},
    "bench": {"runs": "bench_runs"},
}


def _flatten(raw: dict[str, Any]) -> dict[str, Any]:
    """One level of nesting is allowed for readability (task:, provider:,
    ...); nested keys map onto the flat field names."""
    flat: dict[str, Any] = {}
    for key, value in raw.items():
        if isinstance(value, dict) and key in _SECTION_ALIASES:
            aliases = _SECTION_ALIASES[key]
            for inner_key, inner_value in value.items():
                flat[aliases.get(inner_key, inner_key)] = inner_value
        else:
            flat[key] = value
    return flat
