"""Domain types shared by every stage of the pipeline.

Holds the task description, the device function taxonomy, tier
classification, the versioned integration artifact, and the declarative
platform profile with its layout validator.
"""

from __future__ import annotations

import json
import posixpath
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import InvalidInputError


class FunctionKind(str, Enum):
    """Closed taxonomy of device functions; drives dummy values and tests."""

    UNARY_COMMAND = "unary_command"
    BINARY_TOGGLE = "binary_toggle"
    RANGED_SETTING = "ranged_setting"
    ENUMERATED_MODE = "enumerated_mode"
    CONTINUOUS_STREAM = "continuous_stream"
    SENSOR_READOUT = "sensor_readout"


class DeviceTier(str, Enum):
    TIER1 = "Tier1"
    TIER2 = "Tier2"
    TIER3 = "Tier3"


class RevisionCause(str, Enum):
    GENERATED = "generated"
    AUTO_DEBUG_FIX = "auto_debug_fix"
    HIL_FIX = "hil_fix"


@dataclass(frozen=True)
class IntegrationTask:
    """What the user asked for: device identity plus target platform."""

    device_brand: str
    device_model: str
    platform_id: str
    serial_number: str | None = None
    device_key: str | None = None
    function_description: str | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("device_brand", "device_model", "platform_id"):
            if not getattr(self, name).strip():
                raise InvalidInputError(f"{name} must be non-empty")
        if self.seed < 0:
            raise InvalidInputError("seed must be a non-negative integer")

    def fingerprint(self) -> str:
        return f"{self.device_brand}/{self.device_model}@{self.platform_id}#seed={self.seed}"


@dataclass(frozen=True)
class FunctionDescriptor:
    function_id: str
    name: str
    kind: FunctionKind
    description: str = ""

    def __post_init__(self) -> None:
        if not self.function_id.strip():
            raise InvalidInputError("function_id must be non-empty")
        if self.function_id.startswith("__"):
            # Double-underscore ids are reserved for device introspection.
            raise InvalidInputError("function_id must not start with '__'")


def classify_tier(function_count: int) -> DeviceTier:
    """Map a device's function count onto the three complexity tiers.

    1-6 functions is Tier 1, 7-10 is Tier 2, 11 or more is Tier 3.
    """
    if not isinstance(function_count, int) or isinstance(function_count, bool):
        raise InvalidInputError("function_count must be an integer")
    if function_count < 1:
        raise InvalidInputError("function_count must be >= 1")
    if function_count <= 6:
        return DeviceTier.TIER1
    if function_count <= 10:
        return DeviceTier.TIER2
    return DeviceTier.TIER3


@dataclass(frozen=True)
class RevisionRecord:
    cause: RevisionCause
    timestamp: float
    note: str = ""


def _is_safe_relative_path(path: str) -> bool:
    if not path or path.startswith("/") or path.startswith("\\"):
        return False
    if re.match(r"^[A-Za-z]:", path):
        return False
    normalized = posixpath.normpath(path)
    return not (normalized == ".." or normalized.startswith("../"))


@dataclass
class IntegrationArtifact:
    """Versioned file tree produced by generation and mutated by repairs.

    Stored as a flat path->content map; every repair is a whole-file
    rewrite, so revisions simply replace map entries and bump `revision`.
    """

    artifact_id: str
    files: dict[str, str]
    manifest_path: str = "manifest.json"
    revision: int = 0
    provenance: list[RevisionRecord] = field(default_factory=list)

    @classmethod
    def create(cls, artifact_id: str, files: dict[str, str], manifest_path: str,
               timestamp: float = 0.0) -> "IntegrationArtifact":
        artifact = cls(artifact_id=artifact_id, files=dict(files), manifest_path=manifest_path)
        artifact.provenance.append(RevisionRecord(RevisionCause.GENERATED, timestamp))
        return artifact

    def bump(self, rewrites: dict[str, str], cause: RevisionCause,
             timestamp: float = 0.0, note: str = "") -> None:
        """Apply whole-file rewrites as one new revision."""
        self.files.update(rewrites)
        self.revision += 1
        self.provenance.append(RevisionRecord(cause, timestamp, note))

    def copy(self) -> "IntegrationArtifact":
        clone = IntegrationArtifact(
            artifact_id=self.artifact_id,
            files=dict(self.files),
            manifest_path=self.manifest_path,
            revision=self.revision,
        )
        clone.provenance = list(self.provenance)
        return clone

    def export(self, target_dir: str | Path) -> Path:
        """Materialize the file map as a directory tree, byte-exact."""
        root = Path(target_dir)
        root.mkdir(parents=True, exist_ok=True)
        for rel_path in sorted(self.files):
            if not _is_safe_relative_path(rel_path):
                raise InvalidInputError(f"refusing to export unsafe path {rel_path!r}")
            destination = root / rel_path
            destination.parent.mkdir(parents=True, exist_ok=True)
            destination.write_text(self.files[rel_path], encoding="utf-8")
        return root

    def to_dict(self) -> dict[str, Any]:
        return {
            "artifact_id": self.artifact_id,
            "manifest_path": self.manifest_path,
            "revision": self.revision,
            "files": dict(self.files),
            "provenance": [
                {"cause": record.cause.value, "timestamp": record.timestamp, "note": record.note}
                for record in self.provenance
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "IntegrationArtifact":
        artifact = cls(
            artifact_id=payload["artifact_id"],
            files=dict(payload["files"]),
            manifest_path=payload["manifest_path"],
            revision=int(payload["revision"]),
        )
        artifact.provenance = [
            RevisionRecord(RevisionCause(rec["cause"]), rec["timestamp"], rec.get("note", ""))
            for rec in payload.get("provenance", [])
        ]
        return artifact


@dataclass(frozen=True)
class LayoutRules:
    """Machine-checkable artifact layout constraints for one platform."""

    manifest_path: str
    required_manifest_keys: tuple[str, ...]
    file_patterns: tuple[str, ...]

    def patterns(self) -> list[re.Pattern[str]]:
        return [re.compile(pattern) for pattern in self.file_patterns]


@dataclass(frozen=True)
class PlatformProfile:
    """Everything platform-specific, loaded from config rather than coded."""

    platform_id: str
    doc_root: str
    entity_kinds: tuple[str, ...]
    layout: LayoutRules
    sandbox_command: str
    test_templates: dict[str, str] = field(default_factory=dict)
    question_template: str = "Did the device's {function_name} behave correctly? (yes/no)"

    def __post_init__(self) -> None:
        if not self.entity_kinds:
            raise InvalidInputError("entity_kinds must be non-empty")

    @classmethod
    def from_mapping(cls, data: dict[str, Any], base_dir: str | Path | None = None) -> "PlatformProfile":
        """Build a profile from a parsed config document.

        `{fixture_dir}` inside the sandbox command expands to `base_dir`
        so bundled runtimes can be addressed relative to the profile file.
        """
        layout_data = data["artifact_layout"]
        command = data["sandbox_command"]
        if base_dir is not None:
            command = command.replace("{fixture_dir}", str(Path(base_dir)))
        return cls(
            platform_id=data["platform_id"],
            doc_root=data.get("doc_root", ""),
            entity_kinds=tuple(data["entity_kinds"]),
            layout=LayoutRules(
                manifest_path=layout_data["manifest_path"],
                required_manifest_keys=tuple(layout_data.get("required_manifest_keys", ())),
                file_patterns=tuple(layout_data.get("file_patterns", ())),
            ),
            sandbox_command=command,
            test_templates=dict(data.get("test_templates", {})),
            question_template=data.get(
                "question_template",
                "Did the device's {function_name} behave correctly? (yes/no)",
            ),
        )


@dataclass(frozen=True)
class LayoutViolation:
    code: str
    detail: str

    def __str__(self) -> str:  # pragma: no cover - display helper
        return f"{self.code}: {self.detail}"


def validate_artifact_layout(artifact: IntegrationArtifact,
                             profile: PlatformProfile) -> list[LayoutViolation]:
    """Check an artifact against the platform's layout rules.

    Violations are returned as data; an empty list means the layout is
    valid. The check is deterministic and has no side effects.
    """
    if not artifact.files:
        raise InvalidInputError("artifact has no files")

    violations: list[LayoutViolation] = []
    rules = profile.layout

    for rel_path in sorted(artifact.files):
        if not _is_safe_relative_path(rel_path):
            violations.append(LayoutViolation("path_escape", f"unsafe path {rel_path!r}"))

    if artifact.manifest_path != rules.manifest_path:
        violations.append(LayoutViolation(
            "manifest_path",
            f"manifest must be {rules.manifest_path!r}, artifact declares {artifact.manifest_path!r}",
        ))

    manifest_text = artifact.files.get(artifact.manifest_path)
    if manifest_text is None:
        violations.append(LayoutViolation("manifest_missing", "manifest missing from file map"))
    else:
        try:
            manifest = json.loads(manifest_text)
        except json.JSONDecodeError as exc:
            violations.append(LayoutViolation("manifest_unparseable", str(exc)))
        else:
            if not isinstance(manifest, dict):
                violations.append(LayoutViolation("manifest_unparseable", "manifest is not an object"))
            else:
                for key in rules.required_manifest_keys:
                    if key not in manifest:
                        violations.append(LayoutViolation("manifest_key_missing", f"missing key {key!r}"))

    patterns = rules.patterns()
    for rel_path in sorted(artifact.files):
        if rel_path == rules.manifest_path or not _is_safe_relative_path(rel_path):
            continue
        if not any(pattern.match(rel_path) for pattern in patterns):
            violations.append(LayoutViolation("file_unmatched", f"{rel_path!r} matches no layout rule"))

    return violations
