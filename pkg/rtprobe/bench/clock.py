"""
Clock backends for the measurement loop.

Supports:
- MonotonicClock: CLOCK_MONOTONIC with absolute clock_nanosleep (live runs)
- SimulatedClock: plays back a trace of wake-up delays (deterministic runs)
"""

import ctypes
import ctypes.util
import errno
import logging
import os
import time
from abc import ABC, abstractmethod
from collections.abc import Sequence
from pathlib import Path

from rtprobe.errors import ConfigurationError
from rtprobe.timing import NS_PER_S, parse_duration

logger = logging.getLogger(__name__)

TIMER_ABSTIME = 1


class Clock(ABC):
    """A nanosecond clock that can sleep until an absolute instant."""

    name: str = "base"

    @abstractmethod
    def now(self) -> int:
        """Current time in ns."""
        pass

    @abstractmethod
    def sleep_until(self, deadline: int):
        """Block until the clock reads at least deadline."""
        pass


class _Timespec(ctypes.Structure):
    _fields_ = [("tv_sec", ctypes.c_long), ("tv_nsec", ctypes.c_long)]


class MonotonicClock(Clock):
    """CLOCK_MONOTONIC; sleeps with clock_nanosleep(TIMER_ABSTIME)."""

    name = "monotonic"

    def __init__(self):
        libc_name = ctypes.util.find_library("c") or "libc.so.6"
        try:
            libc = ctypes.CDLL(libc_name, use_errno=True)
            self._nanosleep = libc.clock_nanosleep
        except (OSError, AttributeError) as e:
            raise ConfigurationError(f"clock_nanosleep not available: {e}") from e
        self._nanosleep.argtypes = [
            ctypes.c_int,
            ctypes.c_int,
            ctypes.POINTER(_Timespec),
            ctypes.POINTER(_Timespec),
        ]
        self._nanosleep.restype = ctypes.c_int
        # Reused on every sleep so the loop does not build new ctypes objects
        self._request = _Timespec()
        self._request_ref = ctypes.byref(self._request)
        self._clock_id = time.CLOCK_MONOTONIC

        resolution = time.clock_getres(time.CLOCK_MONOTONIC)
        if resolution > 1e-4:
            logger.warning(f"High resolution timers not available (resolution {resolution}s)")

    def now(self) -> int:
        return time.clock_gettime_ns(self._clock_id)

    def sleep_until(self, deadline: int):
        self._request.tv_sec, self._request.tv_nsec = divmod(deadline, NS_PER_S)
        while True:
            result = self._nanosleep(self._clock_id, TIMER_ABSTIME, self._request_ref, None)
            if result == 0:
                return
            if result != errno.EINTR:
                raise OSError(result, os.strerror(result))


class SimulatedClock(Clock):
    """
    Deterministic clock replaying injected wake-up delays.

    Each sleep_until(d) wakes at max(now, d) + next delay. The trace repeats
    when exhausted; an empty trace means every wake-up is on time.
    """

    name = "simulated"

    def __init__(self, delays: Sequence[int] = (), start: int = 0):
        self._delays = list(delays)
        self._index = 0
        self._now = start

    def now(self) -> int:
        return self._now

    def sleep_until(self, deadline: int):
        delay = 0
        if self._delays:
            delay = self._delays[self._index % len(self._delays)]
            self._index += 1
        self._now = max(self._now, deadline) + delay


def load_trace(path: Path) -> list[int]:
    """Read a delay trace: one duration per line, '#' starts a comment."""
    delays = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigurationError(f"Cannot read trace file {path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            delays.append(parse_duration(text))
        except ConfigurationError as e:
            raise ConfigurationError(f"{path}:{lineno}: {e}") from e
    return delays
