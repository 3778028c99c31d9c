"""Job execution and event fan-out for the service API.

Each job runs its pipeline on a worker thread and appends ordered,
gapless events to an in-memory log; any number of stream subscribers
read from their own cursor. HIL feedback crosses thread boundaries
through a small bridge that exposes at most one outstanding probe.
"""

from __future__ import annotations

import queue
import threading
import uuid
from dataclasses import dataclass
from typing import Any, Iterator

from ..config import RunConfig, load_config
from ..errors import InvalidInputError
from ..hil import Probe
from ..pipeline import Pipeline, PipelineResult


@dataclass(frozen=True)
class Event:
    seq: int
    event: str
    data: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"seq": self.seq, "event": self.event, "data": self.data}


class EventLog:
    """Append-only, sequence-numbered event history with blocking reads."""

    def __init__(self) -> None:
        self._events: list[Event] = []
        self._condition = threading.Condition()
        self._closed = False

    def append(self, event: str, data: dict[str, Any]) -> Event:
        with self._condition:
            record = Event(len(self._events) + 1, event, data)
            self._events.append(record)
            self._condition.notify_all()
            return record

    def close(self) -> None:
        with self._condition:
            self._closed = True
            self._condition.notify_all()

    @property
    def last_seq(self) -> int:
        with self._condition:
            return len(self._events)

    def snapshot(self, after: int = 0) -> list[Event]:
        with self._condition:
            return self._events[after:]

    def iter_from(self, after: int = 0, poll_timeout: float = 0.5) -> Iterator[Event]:
        """Yield events with seq > after; blocks for new ones until closed."""
        cursor = after
        while True:
            with self._condition:
                if cursor < len(self._events):
                    batch = self._events[cursor:]
                    cursor = len(self._events)
                else:
                    if self._closed:
                        return
                    self._condition.wait(timeout=poll_timeout)
                    continue
            for record in batch:
                yield record


class FeedbackBridge:
    """Hands yes/no answers from API calls to the blocked pipeline thread."""

    def __init__(self) -> None:
        self._queue: queue.Queue[str] = queue.Queue()
        self._lock = threading.Lock()
        self.outstanding: Probe | None = None

    def __call__(self, probe: Probe) -> str:
        with self._lock:
            self.outstanding = probe
        return self._queue.get()

    def answer(self, text: str) -> bool:
        """Accept one answer for the outstanding probe; False if none."""
        with self._lock:
            if self.outstanding is None:
                return False
            self.outstanding = None
        self._queue.put(text)
        return True


class Job:
    def __init__(self, config: RunConfig):
        self.job_id = uuid.uuid4().hex[:12]
        self.config = config
        self.events = EventLog()
        self.feedback = FeedbackBridge()
        self.stage = "created"
        self.result: PipelineResult | None = None
        self.error: str | None = None
        self._thread = threading.Thread(target=self._run, name=f"job-{self.job_id}", daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _on_event(self, event: str, data: dict[str, Any]) -> None:
        if event == "stage":
            self.stage = data["stage"]
        self.events.append(event, data)

    def _run(self) -> None:
        try:
            pipeline = Pipeline(self.config, on_event=self._on_event, feedback=self.feedback)
            self.result = pipeline.run()
            self.stage = self.result.stage.value
        except Exception as exc:  # noqa: BLE001 - job must always terminate its log
            self.error = str(exc)
            self.stage = "failed"
            self.events.append("error", {"message": str(exc)})
        finally:
            self.events.close()

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout)

    def is_running(self) -> bool:
        return self._thread.is_alive()


class JobManager:
    def __init__(self) -> None:
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def create(self, config: RunConfig) -> Job:
        job = Job(config)
        with self._lock:
            self._jobs[job.job_id] = job
        job.start()
        return job

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def list(self) -> list[Job]:
        with self._lock:
            return list(self._jobs.values())


def config_from_request(payload: dict[str, Any]) -> RunConfig:
    """Build a RunConfig from a create-job request body."""
    overrides = dict(payload.get("overrides") or {})
    for key in ("device_brand", "device_model", "platform_id", "serial_number",
                "device_key", "function_description", "seed", "fixtures_dir"):
        value = payload.get(key)
        if value is not None:
            overrides[key] = value
    config_path = payload.get("config_path")
    try:
        return load_config(config_path, overrides)
    except FileNotFoundError as exc:
        raise InvalidInputError(f"config file not found: {exc}") from exc
