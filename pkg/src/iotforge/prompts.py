"""Prompt template loading.

Templates are plain text files with named placeholders; the bundled set
lives under the package's templates/ directory, and a config may point
at an override directory for prompt-granularity experiments.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path


class TemplateSet:
    def __init__(self, override_dir: str | Path | None = None):
        self.override_dir = Path(override_dir) if override_dir else None

    def load(self, name: str) -> str:
        filename = f"{name}.txt"
        if self.override_dir is not None:
            candidate = self.override_dir / filename
            if candidate.exists():
                return candidate.read_text(encoding="utf-8")
        return resources.files("iotforge").joinpath("templates", filename).read_text(encoding="utf-8")

    def render(self, name: str, **values: object) -> str:
        text = self.load(name)
        for key, value in values.items():
            text = text.replace("{" + key + "}", str(value))
        return text
