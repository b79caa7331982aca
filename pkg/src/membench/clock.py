"""Monotonic nanosecond clock, resolution estimation and a mock for tests.

All timestamps are integer nanoseconds from CLOCK_MONOTONIC, which is shared
by every core of the host, so ticks taken on different workers compare.
"""

from __future__ import annotations

import threading
import time
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from ._native import mono_ns
from .errors import ClockError

SOURCE = "CLOCK_MONOTONIC"


@dataclass(frozen=True)
class ClockInfo:
    frequency: int  # Hz; 0 for an opaque nanosecond clock
    resolution: int  # ns
    source: str

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ClockInfo":
        return cls(int(d["frequency"]), int(d["resolution"]), str(d["source"]))


class MonotonicClock:
    source = SOURCE

    def now_ns(self) -> int:
        return time.monotonic_ns()


class MockClock:
    """Deterministic clock: every read returns the current value, then advances by ``step``.

    Thread-safe so it can stand in for the host clock under concurrent workers.
    """

    source = "mock"

    def __init__(self, start: int = 0, step: int = 1):
        self._t = start
        self.step = step
        self._lock = threading.Lock()

    def now_ns(self) -> int:
        with self._lock:
            t = self._t
            self._t += self.step
            return t

    def advance(self, ns: int) -> None:
        with self._lock:
            self._t += ns

    def set(self, t: int) -> None:
        with self._lock:
            self._t = t


SYSTEM_CLOCK = MonotonicClock()


def now_ns() -> int:
    return time.monotonic_ns()


@njit(nogil=True, cache=True)
def _min_positive_delta(samples):
    best = np.int64(-1)
    prev = mono_ns()
    for _ in range(samples):
        t = mono_ns()
        d = t - prev
        if d > 0 and (best < 0 or d < best):
            best = d
        prev = t
    return best


def estimate_resolution(samples: int = 100_000, clock=None) -> ClockInfo:
    """Smallest positive delta between back-to-back reads.

    Without ``clock`` the reads run in compiled code against CLOCK_MONOTONIC;
    an injected clock is sampled through its ``now_ns`` method.
    """
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    if clock is None:
        best = int(_min_positive_delta(samples))
        source = SOURCE
    else:
        best = -1
        prev = clock.now_ns()
        for _ in range(samples):
            t = clock.now_ns()
            d = t - prev
            if d > 0 and (best < 0 or d < best):
                best = d
            prev = t
        source = getattr(clock, "source", type(clock).__name__)
    if best <= 0:
        raise ClockError(f"no positive delta observed in {samples} reads of {source}")
    return ClockInfo(frequency=0, resolution=best, source=source)
