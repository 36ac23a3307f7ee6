"""
Exception hierarchy for rtprobe.

Every error carries the process exit code the CLI should use for it.
"""


class RtprobeError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1


class ConfigurationError(RtprobeError):
    """Invalid configuration, plan, task spec or CPU selection."""

    exit_code = 3


class PrivilegeError(RtprobeError):
    """Missing privileges for RT scheduling, affinity or cgroup/IRQ writes."""

    exit_code = 2


class ArithmeticRangeError(RtprobeError, ArithmeticError):
    """A nanosecond value left the unsigned 64-bit range."""


class EmptySeriesError(RtprobeError, ValueError):
    """A statistic was requested over a series without samples."""


class DegradedSeriesError(RtprobeError):
    """A feasibility verdict was requested over a series captured without RT privileges."""

    exit_code = 4


class CorruptSampleFileError(RtprobeError):
    """A sample file failed its magic, length or checksum validation."""

    exit_code = 5


class PersistenceError(RtprobeError):
    """Writing experiment results to disk failed."""

    exit_code = 6
