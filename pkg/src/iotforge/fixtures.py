"""Offline fixture loading: ranked sources, platform docs, scripted providers.

A fixture directory bundles everything one task needs to run with zero
network access:

    <root>/
      task.yaml                 defaults for the task fields
      denylist.yaml             leakage screening patterns
      provider_*.yaml           scripted provider fixtures
      responses_*.yaml          scripted HIL feedback
      sources/<source_kind>/    ranked documents (rank = filename order)
      sources/web/              canned web results
      platform/profile.yaml     PlatformProfile config
      platform/docs/toc.yaml    platform documentation ToC tree
      platform/runtime/         the sandbox runtime the profile points at
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml

from .errors import InvalidInputError
from .knowledge import ContentKind, LeakageDenylist, SourceDocument, SourceKind, TocNode, WebResult
from .llm import ScriptedProvider
from .model import IntegrationTask, PlatformProfile


class FixtureFetcher:
    """Serves ranked documents and web results from the fixture tree."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def fetch(self, source_kind: SourceKind, query: str) -> list[SourceDocument]:
        directory = self.root / "sources" / source_kind.value
        if not directory.is_dir():
            return []
        documents = []
        for path in sorted(directory.glob("*.yaml")):
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
            documents.append(SourceDocument(
                source_kind=source_kind,
                locator=data["locator"],
                title=data.get("title", path.stem),
                content=data["content"],
                content_kind=ContentKind(data.get("content_kind", "prose")),
            ))
        return documents

    def web(self, query: str) -> list[WebResult]:
        directory = self.root / "sources" / "web"
        if not directory.is_dir():
            return []
        results = []
        for path in sorted(directory.glob("*.yaml")):
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
            results.append(WebResult(
                title=data.get("title", path.stem),
                locator=data["locator"],
                snippet=data.get("snippet", ""),
            ))
        return results


class FixtureSet:
    """Resolves the pieces of one fixture directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise InvalidInputError(f"fixture directory {self.root} does not exist")

    def fetcher(self) -> FixtureFetcher:
        return FixtureFetcher(self.root)

    def profile(self) -> PlatformProfile:
        path = self.root / "platform" / "profile.yaml"
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
        return PlatformProfile.from_mapping(data, base_dir=self.root)

    def toc(self) -> TocNode:
        path = self.root / "platform" / "docs" / "toc.yaml"
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
        return TocNode.from_mapping(data)

    def denylist(self) -> LeakageDenylist:
        path = self.root / "denylist.yaml"
        if not path.exists():
            return LeakageDenylist()
        return LeakageDenylist.from_file(path)

    def provider(self, name: str = "provider_progressive.yaml") -> ScriptedProvider:
        path = self.root / name
        if not path.exists():
            raise InvalidInputError(f"scripted provider fixture {path} not found")
        return ScriptedProvider.from_file(path)

    def task_defaults(self) -> dict[str, Any]:
        path = self.root / "task.yaml"
        if not path.exists():
            return {}
        return yaml.safe_load(path.read_text(encoding="utf-8")) or {}

    def task(self, **overrides: Any) -> IntegrationTask:
        data = dict(self.task_defaults())
        data.update({k: v for k, v in overrides.items() if v is not None})
        return IntegrationTask(
            device_brand=data["device_brand"],
            device_model=data["device_model"],
            platform_id=data["platform_id"],
            serial_number=data.get("serial_number"),
            device_key=data.get("device_key"),
            function_description=data.get("function_description"),
            seed=int(data.get("seed", 0)),
        )

    def hil_responses(self, name: str) -> list[str]:
        path = self.root / name
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
        if isinstance(data, dict) and "answers" in data:
            data = data["answers"]
        if not isinstance(data, list):
            raise InvalidInputError(f"HIL responses fixture {path} must be a list of yes/no")
        return [str(item).lower() for item in data]


class ScriptedFeedback:
    """Feedback source replaying a fixed answer list; repeats the last
    answer when the list runs dry (so "always yes" is just ["yes"])."""

    def __init__(self, answers: list[str]):
        if not answers:
            raise InvalidInputError("scripted feedback needs at least one answer")
        self.answers = answers
        self.position = 0

    def __call__(self, probe: Any) -> str:
        if self.position < len(self.answers):
            answer = self.answers[self.position]
            self.position += 1
        else:
            answer = self.answers[-1]
        return answer
