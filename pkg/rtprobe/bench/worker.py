"""
The measurement loop.

Deadlines advance by absolute increments from t0, so the k-th deadline is
exactly t0 + k * interval no matter how late earlier wake-ups were.
"""

import time

import numpy as np

from rtprobe.timing import TimeNs, checked_ns

from .clock import Clock

# One on-disk/in-memory record: iteration index and firing latency.
RECORD_DTYPE = np.dtype([("seq", "<u8"), ("latency_ns", "<u8")])


def schedule_next(prev_deadline: TimeNs, interval: TimeNs) -> TimeNs:
    """Next absolute deadline."""
    return checked_ns(prev_deadline + interval)


def allocate_buffer(loops: int, first_seq: int = 0) -> np.ndarray:
    """Pre-allocate and pre-fault a record buffer for `loops` samples."""
    records = np.zeros(loops, dtype=RECORD_DTYPE)
    records["seq"] = np.arange(first_seq, first_seq + loops, dtype=np.uint64)
    return records


def worker_hot_loop(
    clock: Clock,
    t0: TimeNs,
    interval: TimeNs,
    latencies: np.ndarray,
    warmup: int = 0,
) -> TimeNs:
    """
    Sleep to each deadline and store its firing latency into `latencies`.

    The loop itself does no logging, locking or I/O; `latencies` must be
    pre-allocated with one slot per sample. Returns the last deadline.
    """
    # range check once; the loop repeats schedule_next's arithmetic inline
    checked_ns(t0 + (warmup + len(latencies)) * interval)

    now = clock.now
    sleep_until = clock.sleep_until
    deadline = t0
    for _ in range(warmup):
        deadline += interval
        sleep_until(deadline)
    for i in range(len(latencies)):
        deadline += interval
        sleep_until(deadline)
        latency = now() - deadline
        latencies[i] = latency if latency > 0 else 0
    return deadline


class _FreeRunningClock(Clock):
    name = "free-running"

    def now(self) -> int:
        return time.clock_gettime_ns(time.CLOCK_MONOTONIC)

    def sleep_until(self, deadline: int):
        pass


def measure_loop_overhead(iterations: int = 10_000) -> int:
    """Median cost of one loop iteration in ns, measured without sleeping."""
    stamps = np.zeros(iterations, dtype=np.uint64)
    # interval 0 from t0 0: every stored "latency" is the raw timestamp
    worker_hot_loop(_FreeRunningClock(), 0, 0, stamps)
    deltas = np.diff(stamps.astype(np.int64))
    if len(deltas) == 0:
        return 0
    return int(np.median(deltas))
