"""
Load worker bodies, one OS process each.

Every worker bumps its own slot in a shared counter array once per
iteration and exits as soon as the shared stop flag is set. Workers run
under SCHED_OTHER: load must compete with, never preempt, RT tasks.
"""

import math
import os
import random
from pathlib import Path

import numpy as np

PAGE_SIZE = os.sysconf("SC_PAGE_SIZE") if hasattr(os, "sysconf") else 4096
DISK_CHUNK = 1024 * 1024
CPU_BATCH = 10_000

WORKER_KINDS = ("cpu", "mem", "io", "hdd")


def _drop_priority():
    try:
        os.sched_setscheduler(0, os.SCHED_OTHER, os.sched_param(0))
    except (OSError, AttributeError):
        pass


def cpu_worker(slot: int, stop, counters):
    """sqrt spin on pseudo-random values, no syscalls."""
    rng = random.Random(slot)
    value = 0.0
    while not stop.value:
        for _ in range(CPU_BATCH):
            value = math.sqrt(rng.random() + value) % 1.0
        counters[slot] += 1


def mem_worker(slot: int, stop, counters, nbytes: int):
    """Allocate, touch every page, free."""
    while not stop.value:
        block = np.empty(nbytes, dtype=np.uint8)
        block[::PAGE_SIZE] = 1
        del block
        counters[slot] += 1


def io_worker(slot: int, stop, counters):
    """Flush dirty buffers in a loop."""
    while not stop.value:
        os.sync()
        counters[slot] += 1


def hdd_worker(slot: int, stop, counters, nbytes: int, scratch: str):
    """Write a file, fsync it and unlink it."""
    path = Path(scratch) / f"hdd-{slot}-{os.getpid()}.dat"
    chunk = os.urandom(min(DISK_CHUNK, nbytes))
    try:
        while not stop.value:
            with open(path, "wb") as f:
                written = 0
                while written < nbytes and not stop.value:
                    n = min(len(chunk), nbytes - written)
                    f.write(chunk[:n])
                    written += n
                f.flush()
                os.fsync(f.fileno())
            path.unlink()
            counters[slot] += 1
    finally:
        path.unlink(missing_ok=True)


def load_process(kind: str, slot: int, cpus: list[int], stop, counters, nbytes: int, scratch: str):
    """Entry point of a spawned load process."""
    os.sched_setaffinity(0, cpus)
    _drop_priority()
    if kind == "cpu":
        cpu_worker(slot, stop, counters)
    elif kind == "mem":
        mem_worker(slot, stop, counters, nbytes)
    elif kind == "io":
        io_worker(slot, stop, counters)
    elif kind == "hdd":
        hdd_worker(slot, stop, counters, nbytes, scratch)
    else:
        raise ValueError(f"Unknown load worker kind: {kind}")
