"""Clock abstraction so offline runs are byte-reproducible."""

from __future__ import annotations

import time


class SystemClock:
    def now(self) -> float:
        return time.time()


class FixedStepClock:
    """Starts at `start` and advances by `step` per reading."""

    def __init__(self, start: float = 0.0, step: float = 1.0):
        self._next = start
        self._step = step

    def now(self) -> float:
        value = self._next
        self._next += self._step
        return value
