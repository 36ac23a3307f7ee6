"""
Real-time preparation of a measurement process.

Pins the process, requests SCHED_FIFO, locks memory and holds
/dev/cpu_dma_latency at zero for the lifetime of the process.
"""

import ctypes
import ctypes.util
import logging
import os
import struct

from rtprobe.errors import ConfigurationError, PrivilegeError

logger = logging.getLogger(__name__)

MCL_CURRENT = 1
MCL_FUTURE = 2

# Kept open: the latency request is dropped when the file is closed.
_latency_target = None


def check_priority(priority: int):
    """Reject priorities outside the platform's SCHED_FIFO range."""
    low = os.sched_get_priority_min(os.SCHED_FIFO)
    high = os.sched_get_priority_max(os.SCHED_FIFO)
    if not low <= priority <= high:
        raise ConfigurationError(f"priority {priority} outside SCHED_FIFO range {low}..{high}")


def pin_to_cpu(cpu: int):
    try:
        os.sched_setaffinity(0, {cpu})
    except OSError as e:
        raise ConfigurationError(f"Cannot pin to CPU {cpu}: {e}") from e


def set_fifo(priority: int) -> bool:
    """Switch to SCHED_FIFO. Returns False when the kernel refuses for lack of privileges."""
    try:
        os.sched_setscheduler(0, os.SCHED_FIFO, os.sched_param(priority))
        return True
    except PermissionError:
        return False


def lock_memory() -> bool:
    libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6", use_errno=True)
    if libc.mlockall(MCL_CURRENT | MCL_FUTURE) != 0:
        logger.debug(f"mlockall failed, errno={ctypes.get_errno()}")
        return False
    return True


def set_latency_target() -> bool:
    global _latency_target
    if _latency_target is not None:
        return True
    try:
        _latency_target = open("/dev/cpu_dma_latency", "wb", buffering=0)
        _latency_target.write(struct.pack("i", 0))
        return True
    except OSError as e:
        logger.debug(f"/dev/cpu_dma_latency not set: {e}")
        _latency_target = None
        return False


def prepare_realtime(cpu: int, priority: int, strict: bool) -> bool:
    """
    Pin, raise priority and lock memory for the calling process.

    Returns True when the process runs degraded (normal priority).
    Raises PrivilegeError instead of degrading when strict.
    """
    pin_to_cpu(cpu)
    if not set_fifo(priority):
        if strict:
            raise PrivilegeError(f"SCHED_FIFO priority {priority} denied (strict mode)")
        logger.warning(f"No RT privileges; CPU {cpu} measures at normal priority (degraded)")
        return True
    lock_memory()
    set_latency_target()
    return False
