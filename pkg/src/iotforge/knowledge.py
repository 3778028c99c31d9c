"""Device- and platform-specific knowledge stores with exact kNN search.

Two embedding spaces coexist per store (prose and code); a query is
embedded in the space matching its content kind and searched in the
corresponding sub-index. Search is exact flat squared-L2, never
approximate, with per-coordinate accumulation in index order so results
are bit-comparable to a brute-force reference.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    IngestionError,
    InvalidInputError,
    PlatformKnowledgeError,
    StoreNotBuiltError,
)
from .llm import LedgerKind, Phase, TokenLedger, count_tokens
from .model import PlatformProfile

logger = logging.getLogger(__name__)

PROSE_DIMENSION = 1536
CODE_DIMENSION = 768
CHUNK_BUDGET = 512
CHUNK_OVERLAP = 64
DEFAULT_TOOL_K = 5

DEVICE_SOURCE_KINDS = ("user_manual", "api_sdk_doc", "official_repo")
TOP_SOURCES_PER_KIND = 5


class SourceKind(str, enum.Enum):
    USER_MANUAL = "user_manual"
    API_SDK_DOC = "api_sdk_doc"
    OFFICIAL_REPO = "official_repo"
    PLATFORM_DOC = "platform_doc"
    WEB_RESULT = "web_result"


class ContentKind(str, enum.Enum):
    PROSE = "prose"
    CODE = "code"


@dataclass(frozen=True)
class SourceDocument:
    source_kind: SourceKind
    locator: str
    title: str
    content: str
    content_kind: ContentKind = ContentKind.PROSE

    def __post_init__(self) -> None:
        if not self.content:
            raise InvalidInputError(f"document {self.locator!r} has empty content")


@dataclass(frozen=True)
class WebResult:
    title: str
    locator: str
    snippet: str


@dataclass(frozen=True)
class KnowledgeChunk:
    chunk_id: str
    parent_locator: str
    text: str
    embedding: np.ndarray
    token_count: int


@dataclass(frozen=True)
class RetrievedChunk:
    chunk_id: str
    text: str
    locator: str
    token_count: int
    distance: float


class LeakageDenylist:
    """Patterns that disqualify a document before it is ever indexed.

    Patterns are regular expressions matched case-insensitively against
    both locator and content; plain substrings work unchanged.
    """

    def __init__(self, patterns: Iterable[str] = ()):
        self.patterns = [re.compile(p, re.IGNORECASE) for p in patterns]

    def matches(self, locator: str, content: str = "") -> str | None:
        """Return the offending pattern, or None if the item is clean."""
        for pattern in self.patterns:
            if pattern.search(locator) or (content and pattern.search(content)):
                return pattern.pattern
        return None

    @classmethod
    def from_file(cls, path: str | Path) -> "LeakageDenylist":
        import yaml

        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        return cls(data.get("patterns", []))


class Embedder(Protocol):
    dimension: int
    embedder_id: str

    def embed(self, text: str) -> np.ndarray:
        ...  # pragma: no cover - interface


class HashEmbedder:
    """Deterministic offline embedder: a stable vector from a content hash.

    Identical text always maps to an identical vector, so exact-text
    queries rank their chunk first with distance zero.
    """

    def __init__(self, dimension: int, space: str = "prose"):
        self.dimension = dimension
        self.space = space
        self.embedder_id = f"hash-{space}-{dimension}"

    def embed(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.space}\x00{text}".encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dimension).astype(np.float32)


class RemoteEmbedder:
    """OpenAI-compatible embeddings endpoint adapter (online builds only)."""

    def __init__(self, dimension: int, model: str | None = None,
                 endpoint: str | None = None, api_key: str | None = None):
        self.dimension = dimension
        self.model = model or os.environ.get("IOTFORGE_EMBED_MODEL", "")
        self.endpoint = endpoint or os.environ.get("IOTFORGE_EMBED_ENDPOINT", "")
        self.api_key = api_key or os.environ.get("IOTFORGE_EMBED_API_KEY", "")
        self.embedder_id = f"remote:{self.model}"
        if not self.endpoint or not self.model:
            raise InvalidInputError(
                "remote embedder needs IOTFORGE_EMBED_ENDPOINT and IOTFORGE_EMBED_MODEL"
            )

    def embed(self, text: str) -> np.ndarray:
        import httpx

        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        response = httpx.post(
            self.endpoint,
            json={"model": self.model, "input": text},
            headers=headers,
            timeout=60.0,
        )
        response.raise_for_status()
        vector = np.asarray(response.json()["data"][0]["embedding"], dtype=np.float32)
        if vector.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"remote embedder returned dim {vector.shape}, expected {self.dimension}"
            )
        return vector


def default_offline_embedders() -> dict[ContentKind, Embedder]:
    return {
        ContentKind.PROSE: HashEmbedder(PROSE_DIMENSION, "prose"),
        ContentKind.CODE: HashEmbedder(CODE_DIMENSION, "code"),
    }


def split_into_chunks(text: str, budget: int = CHUNK_BUDGET,
                      overlap: int = CHUNK_OVERLAP) -> list[str]:
    """Split text at line boundaries into chunks of at most `budget` tokens.

    Consecutive chunks share a trailing-line overlap of at most `overlap`
    tokens. A single line longer than the budget becomes its own chunk.
    Deterministic: same text and config, same boundaries.
    """
    if budget < 1 or overlap < 0 or overlap >= budget:
        raise InvalidInputError("need budget >= 1 and 0 <= overlap < budget")
    lines = text.splitlines()
    if not lines:
        return [text] if text else []

    def cost(line: str, first: bool) -> int:
        return count_tokens(line) + (0 if first else 1)

    chunks: list[str] = []
    start = 0
    total = len(lines)
    while True:
        end = start
        tokens = 0
        while end < total:
            added = cost(lines[end], first=end == start)
            if end > start and tokens + added > budget:
                break
            tokens += added
            end += 1
        chunks.append("\n".join(lines[start:end]))
        if end >= total:
            return chunks
        # Overlap: trailing lines of this chunk, at most `overlap` tokens.
        overlap_start = end
        overlap_tokens = 0
        while overlap_start > start + 1:
            added = cost(lines[overlap_start - 1], first=overlap_start - 1 == end - 1)
            if overlap_tokens + added > overlap:
                break
            overlap_tokens += added
            overlap_start -= 1
        start = max(overlap_start, start + 1)


class VectorIndex:
    """Exact flat squared-L2 index over knowledge chunks."""

    def __init__(self, dimension: int, embedder_id: str = ""):
        if dimension < 1:
            raise InvalidInputError("dimension must be positive")
        self.dimension = dimension
        self.embedder_id = embedder_id
        self.chunks: list[KnowledgeChunk] = []
        self._matrix_cache: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.chunks)

    def add(self, chunk: KnowledgeChunk) -> None:
        if chunk.embedding.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"chunk {chunk.chunk_id} has dim {chunk.embedding.shape}, index wants {self.dimension}"
            )
        self.chunks.append(chunk)
        self._matrix_cache = None

    def _matrix(self) -> np.ndarray:
        if self._matrix_cache is None:
            self._matrix_cache = np.stack(
                [chunk.embedding for chunk in self.chunks]
            ).astype(np.float64)
        return self._matrix_cache

    def knn(self, query_embedding: Sequence[float] | np.ndarray, k: int) -> list[tuple[str, float]]:
        """Exact k nearest chunks by squared L2 distance, ascending.

        Distances accumulate per coordinate in index order in float64,
        matching a naive double loop bit for bit. Ties break on chunk_id
        ascending. Returns fewer than k entries if the index is smaller.
        """
        if k < 1:
            raise InvalidInputError("k must be positive")
        query = np.asarray(query_embedding, dtype=np.float64).reshape(-1)
        if query.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"query dim {query.shape[0]} != index dim {self.dimension}"
            )
        if not self.chunks:
            return []
        matrix = self._matrix()
        distances = np.zeros(len(self.chunks), dtype=np.float64)
        for coordinate in range(self.dimension):
            diff = matrix[:, coordinate] - query[coordinate]
            distances += diff * diff
        ids = [chunk.chunk_id for chunk in self.chunks]
        order = sorted(range(len(ids)), key=lambda i: (distances[i], ids[i]))
        return [(ids[i], float(distances[i])) for i in order[:k]]

    def save(self, directory: str | Path, built_at: float = 0.0) -> None:
        """Snapshot: manifest.json + chunks.jsonl + vectors.bin (LE f32)."""
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        manifest = {
            "dimension": self.dimension,
            "embedder_id": self.embedder_id,
            "built_at": built_at,
            "chunk_count": len(self.chunks),
        }
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
        with (root / "chunks.jsonl").open("w", encoding="utf-8") as handle:
            for chunk in self.chunks:
                handle.write(json.dumps({
                    "chunk_id": chunk.chunk_id,
                    "parent_locator": chunk.parent_locator,
                    "text": chunk.text,
                    "token_count": chunk.token_count,
                }) + "\n")
        if self.chunks:
            matrix = np.stack([chunk.embedding for chunk in self.chunks]).astype("<f4")
        else:
            matrix = np.zeros((0, self.dimension), dtype="<f4")
        matrix.tofile(root / "vectors.bin")

    @classmethod
    def load(cls, directory: str | Path) -> "VectorIndex":
        root = Path(directory)
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        index = cls(manifest["dimension"], manifest.get("embedder_id", ""))
        records = []
        with (root / "chunks.jsonl").open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    records.append(json.loads(line))
        vectors = np.fromfile(root / "vectors.bin", dtype="<f4")
        vectors = vectors.reshape(len(records), manifest["dimension"]) if records else vectors
        for record, vector in zip(records, vectors):
            index.add(KnowledgeChunk(
                chunk_id=record["chunk_id"],
                parent_locator=record["parent_locator"],
                text=record["text"],
                embedding=np.ascontiguousarray(vector, dtype=np.float32),
                token_count=record["token_count"],
            ))
        return index


def knn(index: VectorIndex, query_embedding: Sequence[float] | np.ndarray,
        k: int) -> list[tuple[str, float]]:
    return index.knn(query_embedding, k)


@dataclass(frozen=True)
class ExclusionRecord:
    locator: str
    pattern: str


class KnowledgeStore:
    """One knowledge source (device or platform) over two embedding spaces."""

    def __init__(self, name: str, embedders: dict[ContentKind, Embedder] | None = None):
        self.name = name
        self.embedders = embedders or default_offline_embedders()
        self.indexes = {
            kind: VectorIndex(embedder.dimension, embedder.embedder_id)
            for kind, embedder in self.embedders.items()
        }
        self.exclusions: list[ExclusionRecord] = []

    def is_empty(self) -> bool:
        return all(len(index) == 0 for index in self.indexes.values())

    def chunk_count(self) -> int:
        return sum(len(index) for index in self.indexes.values())

    def add_document(self, doc: SourceDocument,
                     budget: int = CHUNK_BUDGET, overlap: int = CHUNK_OVERLAP) -> int:
        """Chunk, embed, and index one document; returns chunks added."""
        embedder = self.embedders[doc.content_kind]
        index = self.indexes[doc.content_kind]
        pieces = split_into_chunks(doc.content, budget=budget, overlap=overlap)
        added = 0
        for position, piece in enumerate(pieces):
            if not piece.strip():
                continue
            index.add(KnowledgeChunk(
                chunk_id=f"{doc.locator}#{position:03d}",
                parent_locator=doc.locator,
                text=piece,
                embedding=embedder.embed(piece),
                token_count=count_tokens(piece),
            ))
            added += 1
        return added

    def add_leaf(self, toc_path: str, content: str, content_kind: ContentKind = ContentKind.PROSE,
                 budget: int = CHUNK_BUDGET, overlap: int = CHUNK_OVERLAP) -> int:
        """Index one table-of-contents leaf (split only when over budget)."""
        embedder = self.embedders[content_kind]
        index = self.indexes[content_kind]
        pieces = ([content] if count_tokens(content) <= budget
                  else split_into_chunks(content, budget=budget, overlap=overlap))
        for position, piece in enumerate(pieces):
            index.add(KnowledgeChunk(
                chunk_id=f"{toc_path}#{position:03d}",
                parent_locator=toc_path,
                text=piece,
                embedding=embedder.embed(piece),
                token_count=count_tokens(piece),
            ))
        return len(pieces)

    def search(self, query: str, k: int = DEFAULT_TOOL_K,
               content_kind: ContentKind = ContentKind.PROSE) -> list[RetrievedChunk]:
        if self.is_empty():
            raise StoreNotBuiltError(f"{self.name} store has no chunks")
        index = self.indexes[content_kind]
        if len(index) == 0:
            # Two spaces coexist; fall back to the populated one.
            content_kind = next(kind for kind, idx in self.indexes.items() if len(idx) > 0)
            index = self.indexes[content_kind]
        query_vector = self.embedders[content_kind].embed(query)
        by_id = {chunk.chunk_id: chunk for chunk in index.chunks}
        results = []
        for chunk_id, distance in index.knn(query_vector, k):
            chunk = by_id[chunk_id]
            results.append(RetrievedChunk(
                chunk_id=chunk_id,
                text=chunk.text,
                locator=chunk.parent_locator,
                token_count=chunk.token_count,
                distance=distance,
            ))
        return results

    def save(self, directory: str | Path, built_at: float = 0.0) -> None:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        manifest = {
            "name": self.name,
            "built_at": built_at,
            "spaces": {
                kind.value: {
                    "dimension": index.dimension,
                    "embedder_id": index.embedder_id,
                    "chunk_count": len(index),
                }
                for kind, index in self.indexes.items()
            },
            "exclusions": [
                {"locator": record.locator, "pattern": record.pattern}
                for record in self.exclusions
            ],
        }
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
        for kind, index in self.indexes.items():
            index.save(root / kind.value, built_at=built_at)

    @classmethod
    def load(cls, directory: str | Path,
             embedders: dict[ContentKind, Embedder] | None = None) -> "KnowledgeStore":
        root = Path(directory)
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        store = cls(manifest["name"], embedders)
        for kind_value in manifest.get("spaces", {}):
            kind = ContentKind(kind_value)
            store.indexes[kind] = VectorIndex.load(root / kind_value)
        store.exclusions = [
            ExclusionRecord(rec["locator"], rec["pattern"])
            for rec in manifest.get("exclusions", [])
        ]
        return store


class SourceFetcher(Protocol):
    """Ranked document retrieval per source kind (live or fixture-backed)."""

    def fetch(self, source_kind: SourceKind, query: str) -> list[SourceDocument]:
        ...  # pragma: no cover - interface

    def web(self, query: str) -> list[WebResult]:
        ...  # pragma: no cover - interface


def ingest_device_sources(task: Any, fetcher: SourceFetcher, denylist: LeakageDenylist,
                          embedders: dict[ContentKind, Embedder] | None = None,
                          top_per_kind: int = TOP_SOURCES_PER_KIND) -> KnowledgeStore:
    """Build the device store from manuals, API/SDK docs, and repos.

    Keeps the top-ranked `top_per_kind` documents per source kind and
    drops (and logs) anything matching the leakage denylist.
    """
    store = KnowledgeStore("device", embedders)
    base_query = f"{task.device_brand} {task.device_model}"
    for kind_name in DEVICE_SOURCE_KINDS:
        kind = SourceKind(kind_name)
        query = f"{base_query} {kind_name.replace('_', ' ')}"
        try:
            ranked = fetcher.fetch(kind, query)
        except Exception as exc:  # noqa: BLE001 - wrap any transport failure
            raise IngestionError(f"fetcher failed for source kind {kind_name}: {exc}") from exc
        for doc in ranked[:top_per_kind]:
            pattern = denylist.matches(doc.locator, doc.content)
            if pattern is not None:
                store.exclusions.append(ExclusionRecord(doc.locator, pattern))
                logger.info("leakage screen excluded %s (pattern %s)", doc.locator, pattern)
                continue
            store.add_document(doc)
    if store.is_empty():
        logger.warning("device ingestion produced an empty store for %s", base_query)
    return store


@dataclass
class TocNode:
    """Table-of-contents tree; leaves carry document content."""

    title: str
    content: str | None = None
    children: list["TocNode"] = field(default_factory=list)

    def is_leaf(self) -> bool:
        return not self.children

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "TocNode":
        return cls(
            title=data["title"],
            content=data.get("content"),
            children=[cls.from_mapping(child) for child in data.get("children", [])],
        )

    def leaves(self, prefix: str = "") -> list[tuple[str, str]]:
        path = f"{prefix}/{self.title}" if prefix else self.title
        if self.is_leaf():
            return [(path, self.content or "")]
        collected: list[tuple[str, str]] = []
        for child in self.children:
            collected.extend(child.leaves(path))
        return collected


def ingest_platform_docs(profile: PlatformProfile, toc: TocNode, denylist: LeakageDenylist,
                         embedders: dict[ContentKind, Embedder] | None = None) -> KnowledgeStore:
    """Build the platform store, one chunk per ToC leaf.

    Platform knowledge is mandatory: an empty ToC is an error, because
    generation without the platform store cannot produce usable output.
    """
    leaves = [(path, content) for path, content in toc.leaves() if content.strip()]
    if not leaves:
        raise PlatformKnowledgeError(
            f"platform documentation for {profile.platform_id!r} has no content"
        )
    store = KnowledgeStore("platform", embedders)
    for path, content in leaves:
        pattern = denylist.matches(path, content)
        if pattern is not None:
            store.exclusions.append(ExclusionRecord(path, pattern))
            logger.info("leakage screen excluded platform leaf %s", path)
            continue
        store.add_leaf(path, content)
    if store.is_empty():
        raise PlatformKnowledgeError(
            f"all platform documentation for {profile.platform_id!r} was screened out"
        )
    return store


class ToolContext:
    """Mutable per-session scope tying tool calls to a ledger and phase."""

    def __init__(self, ledger: TokenLedger, phase: Phase = Phase.DEVICE_CONTROL_CODEGEN,
                 on_retrieval: Any = None):
        self.ledger = ledger
        self.phase = phase
        self.on_retrieval = on_retrieval  # callable(dict) for audit streams


class KnowledgeToolbox:
    """The retrieval tools handed to agents, with token accounting."""

    def __init__(self, context: ToolContext,
                 device_store: KnowledgeStore | None = None,
                 platform_store: KnowledgeStore | None = None,
                 web_fetcher: SourceFetcher | None = None,
                 denylist: LeakageDenylist | None = None):
        self.context = context
        self.device_store = device_store
        self.platform_store = platform_store
        self.web_fetcher = web_fetcher
        self.denylist = denylist or LeakageDenylist()
        self.audit: list[dict[str, Any]] = []

    def _record(self, tool: str, query: str, locators: list[str], texts: list[str]) -> None:
        entry = {"tool": tool, "query": query, "locators": locators, "texts": texts}
        self.audit.append(entry)
        if self.context.on_retrieval is not None:
            self.context.on_retrieval(entry)

    def _search(self, store: KnowledgeStore | None, label: str, query: str,
                k: int) -> list[RetrievedChunk]:
        if store is None or store.is_empty():
            raise StoreNotBuiltError(f"{label} store is not built")
        results = store.search(query, k=k)
        for result in results:
            self.context.ledger.add(
                self.context.phase, LedgerKind.RETRIEVED_KNOWLEDGE, result.token_count
            )
        self._record(f"search_{label}_db", query,
                     [r.locator for r in results], [r.text for r in results])
        return results

    def search_device_db(self, query: str, k: int = DEFAULT_TOOL_K) -> list[RetrievedChunk]:
        return self._search(self.device_store, "device", query, k)

    def search_platform_db(self, query: str, k: int = DEFAULT_TOOL_K) -> list[RetrievedChunk]:
        return self._search(self.platform_store, "platform", query, k)

    def web_search(self, query: str) -> list[WebResult]:
        if self.web_fetcher is None:
            raise StoreNotBuiltError("web search fetcher is not configured")
        results = [
            result for result in self.web_fetcher.web(query)
            if self.denylist.matches(result.locator, result.snippet) is None
        ]
        for result in results:
            self.context.ledger.add(
                self.context.phase, LedgerKind.RETRIEVED_KNOWLEDGE, count_tokens(result.snippet)
            )
        self._record("web_search", query,
                     [r.locator for r in results], [r.snippet for r in results])
        return results
