"""
Background load generator.

start_load() spawns the requested workers and returns a LoadHandle;
stop_load() signals them, joins them, removes every scratch file and
returns a LoadReport with iteration counts and per-CPU utilisation.
"""

import ctypes
import logging
import multiprocessing
import shutil
import tempfile
import threading
import time
from datetime import UTC, datetime
from pathlib import Path

import psutil
from pydantic import BaseModel, ConfigDict, Field, model_validator

from rtprobe.config import Settings
from rtprobe.errors import ConfigurationError
from rtprobe.sysconfig.cpuset import CpuSet
from rtprobe.timing import NS_PER_S, DurationNs

from .workers import WORKER_KINDS, load_process

logger = logging.getLogger(__name__)

JOIN_TIMEOUT = 10.0


class LoadSpec(BaseModel):
    """Requested load: worker counts per kind, sizes, CPUs and duration."""

    model_config = ConfigDict(frozen=True)

    cpu_workers: int = Field(default=0, ge=0)
    mem_workers: int = Field(default=0, ge=0)
    mem_bytes: int = Field(default=256 * 1024 * 1024, gt=0)
    io_workers: int = Field(default=0, ge=0)
    disk_workers: int = Field(default=0, ge=0)
    disk_bytes: int = Field(default=1024 * 1024 * 1024, gt=0)
    cpu_set: CpuSet | None = None
    duration: DurationNs | None = Field(default=None, description="None: until stopped")
    scratch_dir: Path | None = None

    @model_validator(mode="after")
    def _check_workers(self) -> "LoadSpec":
        if self.total_workers() == 0:
            raise ValueError("at least one worker kind must be > 0")
        if self.cpu_set is not None and not self.cpu_set:
            raise ValueError("cpu_set must not be empty")
        return self

    def counts(self) -> dict[str, int]:
        return {
            "cpu": self.cpu_workers,
            "mem": self.mem_workers,
            "io": self.io_workers,
            "hdd": self.disk_workers,
        }

    def total_workers(self) -> int:
        return sum(self.counts().values())

    @classmethod
    def one_of_each_per_cpu(cls, cpus: CpuSet, settings: Settings | None = None, **kwargs) -> "LoadSpec":
        """One worker of every kind for each CPU in cpus."""
        n = len(cpus)
        sizes = {}
        if settings is not None:
            sizes = {
                "mem_bytes": settings.load.mem_bytes,
                "disk_bytes": settings.load.hdd_bytes,
                "scratch_dir": settings.load.scratch_dir,
            }
        return cls(
            cpu_workers=n,
            mem_workers=n,
            io_workers=n,
            disk_workers=n,
            cpu_set=cpus,
            **{**sizes, **kwargs},
        )


class LoadReport(BaseModel):
    """What the load actually did."""

    iterations: dict[str, list[int]] = Field(default_factory=dict)
    utilization: dict[int, float] = Field(default_factory=dict)
    target_cpus: CpuSet | None = None
    duration: int = 0
    started_at: datetime | None = None
    stopped_at: datetime | None = None

    def worker_counts(self) -> dict[str, int]:
        return {kind: len(counts) for kind, counts in self.iterations.items()}


def _busy_fraction(before, after) -> float:
    idle = (after.idle - before.idle) + (getattr(after, "iowait", 0) - getattr(before, "iowait", 0))
    total = sum(after) - sum(before)
    if total <= 0:
        return 0.0
    return min(1.0, max(0.0, (total - idle) / total))


class LoadHandle:
    """A running load. Stop it with stop_load() or handle.stop()."""

    def __init__(self, spec: LoadSpec):
        self.spec = spec
        self._ctx = multiprocessing.get_context("spawn")
        self._stop_flag = self._ctx.RawValue(ctypes.c_bool, False)
        self._counters = self._ctx.RawArray(ctypes.c_uint64, spec.total_workers())
        self._slots: list[tuple[str, int]] = []
        self._procs: list = []
        self._scratch: Path | None = None
        self._timer: threading.Timer | None = None
        self._report: LoadReport | None = None
        self._started_ns = 0
        self._started_at: datetime | None = None
        self._cpu_times_before = None

    @property
    def active(self) -> bool:
        return self._report is None

    @property
    def scratch(self) -> Path | None:
        return self._scratch

    def _signal_stop(self):
        self._stop_flag.value = True

    def _start(self):
        spec = self.spec
        target = spec.cpu_set if spec.cpu_set is not None else CpuSet.allowed()
        allowed = CpuSet.allowed()
        if not target.issubset(allowed):
            raise ConfigurationError(f"Load CPUs {target - allowed} are not in the allowed set {allowed}")
        cpus = list(target)

        if spec.disk_workers:
            base = spec.scratch_dir or Path(tempfile.gettempdir())
            try:
                self._scratch = Path(tempfile.mkdtemp(prefix="rtprobe-load-", dir=base))
            except OSError as e:
                raise ConfigurationError(f"Scratch directory {base} is not writable: {e}") from e

        self._cpu_times_before = psutil.cpu_times(percpu=True)
        self._started_ns = time.monotonic_ns()

        slot = 0
        for kind in WORKER_KINDS:
            for i in range(spec.counts()[kind]):
                # CPU hogs spread one per CPU; the rest float over the whole set
                placement = [cpus[i % len(cpus)]] if kind == "cpu" else cpus
                nbytes = spec.mem_bytes if kind == "mem" else spec.disk_bytes
                proc = self._ctx.Process(
                    target=load_process,
                    args=(
                        kind,
                        slot,
                        placement,
                        self._stop_flag,
                        self._counters,
                        nbytes,
                        str(self._scratch or ""),
                    ),
                    name=f"rtprobe-load-{kind}-{i}",
                    daemon=True,
                )
                proc.start()
                self._procs.append(proc)
                self._slots.append((kind, slot))
                slot += 1

        self._started_at = datetime.now(UTC)
        if spec.duration is not None:
            self._timer = threading.Timer(spec.duration / NS_PER_S, self._signal_stop)
            self._timer.daemon = True
            self._timer.start()
        logger.info(f"Load started: {spec.counts()} on CPUs {target}")

    def wait(self, timeout: float | None = None) -> bool:
        """Block until the configured duration elapses. Returns False on timeout."""
        if self._timer is None:
            if timeout is not None:
                time.sleep(timeout)
            return False
        self._timer.join(timeout)
        return not self._timer.is_alive()

    def stop(self) -> LoadReport:
        return stop_load(self)


def start_load(spec: LoadSpec) -> LoadHandle:
    """Start every worker requested by `spec`."""
    handle = LoadHandle(spec)
    try:
        handle._start()
    except Exception:
        stop_load(handle)
        raise
    return handle


def stop_load(handle: LoadHandle) -> LoadReport:
    """Stop, join and clean up. A second call returns the first report."""
    if handle._report is not None:
        return handle._report

    handle._signal_stop()
    if handle._timer is not None:
        handle._timer.cancel()
    try:
        for proc in handle._procs:
            proc.join(JOIN_TIMEOUT)
            if proc.is_alive():
                logger.warning(f"{proc.name} did not stop, terminating")
                proc.terminate()
                proc.join(JOIN_TIMEOUT)
        stopped_ns = time.monotonic_ns()

        utilization = {}
        if handle._cpu_times_before is not None:
            after = psutil.cpu_times(percpu=True)
            for cpu, (b, a) in enumerate(zip(handle._cpu_times_before, after, strict=False)):
                utilization[cpu] = _busy_fraction(b, a)

        iterations: dict[str, list[int]] = {kind: [] for kind in WORKER_KINDS}
        for kind, slot in handle._slots:
            iterations[kind].append(int(handle._counters[slot]))
        for kind, count in handle.spec.counts().items():
            # workers that never started still count, with zero iterations
            iterations[kind].extend([0] * (count - len(iterations[kind])))

        report = LoadReport(
            iterations=iterations,
            utilization=utilization,
            target_cpus=handle.spec.cpu_set,
            duration=max(0, stopped_ns - handle._started_ns) if handle._started_ns else 0,
            started_at=handle._started_at,
            stopped_at=datetime.now(UTC),
        )
    finally:
        if handle._scratch is not None:
            shutil.rmtree(handle._scratch, ignore_errors=True)

    handle._report = report
    logger.info(f"Load stopped after {report.duration / NS_PER_S:.1f}s: {report.iterations}")
    return report
