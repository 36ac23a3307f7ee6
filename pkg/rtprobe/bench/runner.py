"""
Cyclic benchmark coordinator.

Spawns one measurement process per worker, each pinned to its own CPU,
releases them together through a barrier and collects their record buffers
once every loop has finished. Buffers travel over a pipe only after the
measurement ends, so no I/O happens while sampling.

The simulated clock runs in-process: it needs no CPUs and is deterministic.
"""

import contextlib
import gc
import logging
import multiprocessing
import os
import threading
from collections.abc import Iterator
from datetime import UTC, datetime, timedelta
from pathlib import Path
from typing import Any, Literal

import numpy as np
import psutil
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from rtprobe import __version__
from rtprobe.config import Settings
from rtprobe.errors import ConfigurationError, PrivilegeError, RtprobeError
from rtprobe.sysconfig.cpuset import CpuSet
from rtprobe.sysconfig.environment import EnvReport
from rtprobe.timing import DurationNs, LatencySample, PositiveDurationNs

from .clock import MonotonicClock, SimulatedClock, load_trace
from .rt import check_priority, prepare_realtime
from .worker import RECORD_DTYPE, allocate_buffer, worker_hot_loop

logger = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1, tzinfo=UTC)
BARRIER_TIMEOUT = 60.0


class BenchConfig(BaseModel):
    """One cyclic benchmark run: cycle time, iteration count, CPUs and clock."""

    model_config = ConfigDict(frozen=True)

    interval: PositiveDurationNs = 1_000_000
    loops: int = Field(default=10_000_000, ge=0)
    workers: int | None = Field(default=None, ge=1, description="None: one per CPU in cpu_set")
    cpu_set: CpuSet | None = None
    priority: int = Field(default=98, ge=1, le=99)
    clock: Literal["monotonic", "simulated"] = "monotonic"
    trace: Path | None = Field(default=None, description="Delay trace for the simulated clock")
    distribute_offset: DurationNs = 0
    warmup: int = Field(default=0, ge=0)
    strict: bool = False

    @classmethod
    def from_settings(cls, settings: Settings, **overrides: Any) -> "BenchConfig":
        """Settings defaults, with any non-None override applied on top."""
        bench = settings.bench
        data = {
            "interval": bench.interval,
            "loops": bench.loops,
            "priority": bench.priority,
            "strict": bench.strict,
            "warmup": bench.warmup,
            "distribute_offset": bench.distribute_offset,
        }
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid bench configuration: {e}") from e

    def worker_cpus(self) -> list[int]:
        """CPU of each worker; workers beyond the CPU count wrap around."""
        cpus = list(self.cpu_set if self.cpu_set is not None else CpuSet.allowed())
        if not cpus:
            raise ConfigurationError("cpu_set is empty")
        count = self.workers or len(cpus)
        return [cpus[i % len(cpus)] for i in range(count)]


class SeriesMetadata(BaseModel):
    """Provenance stored alongside every series."""

    label: str = ""
    worker_id: int = 0
    cpu: int | None = None
    config: BenchConfig = Field(default_factory=BenchConfig)
    started_at: datetime = EPOCH
    ended_at: datetime = EPOCH
    degraded: bool = False
    clock: str = "monotonic"
    env: EnvReport | None = None
    plan_checksum: str | None = None
    toolkit_version: str = __version__
    extra: dict[str, Any] = Field(default_factory=dict)


class SampleSeries:
    """Firing latencies of one worker run, as a structured (seq, latency_ns) array."""

    def __init__(self, metadata: SeriesMetadata, records: np.ndarray | None = None):
        if records is None:
            records = np.zeros(0, dtype=RECORD_DTYPE)
        if records.dtype != RECORD_DTYPE:
            raise ValueError(f"records must have dtype {RECORD_DTYPE}, got {records.dtype}")
        self.metadata = metadata
        self.records = records

    @property
    def latencies(self) -> np.ndarray:
        return self.records["latency_ns"]

    @property
    def seqs(self) -> np.ndarray:
        return self.records["seq"]

    @property
    def label(self) -> str:
        return self.metadata.label

    @property
    def degraded(self) -> bool:
        return self.metadata.degraded

    def __len__(self) -> int:
        return len(self.records)

    def samples(self) -> Iterator[LatencySample]:
        for seq, latency in self.records.tolist():
            yield LatencySample(seq=seq, latency=latency)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SampleSeries):
            return NotImplemented
        return self.metadata == other.metadata and np.array_equal(self.records, other.records)

    def __repr__(self) -> str:
        return f"SampleSeries(label={self.label!r}, worker={self.metadata.worker_id}, n={len(self)})"


def _measurement_process(
    worker_id: int,
    cpu: int,
    config_json: str,
    barrier: threading.Barrier,
    conn: Any,
):
    """Body of one spawned measurement process."""
    config = BenchConfig.model_validate_json(config_json)
    try:
        degraded = prepare_realtime(cpu, config.priority, config.strict)
        records = allocate_buffer(config.loops, first_seq=config.warmup)
        latencies = records["latency_ns"]
        clock = MonotonicClock()
        barrier.wait(BARRIER_TIMEOUT)

        t0 = clock.now() + worker_id * config.distribute_offset
        started_at = datetime.now(UTC)
        gc.disable()
        try:
            worker_hot_loop(clock, t0, config.interval, latencies, warmup=config.warmup)
        finally:
            gc.enable()
        ended_at = datetime.now(UTC)

        conn.send(("ok", degraded, started_at, ended_at))
        conn.send_bytes(records.tobytes())
    except threading.BrokenBarrierError:
        conn.send(("error", "RtprobeError", "another worker failed before start"))
    except RtprobeError as e:
        barrier.abort()
        conn.send(("error", type(e).__name__, str(e)))
    except Exception as e:
        barrier.abort()
        conn.send(("error", "RtprobeError", f"{type(e).__name__}: {e}"))
    finally:
        conn.close()


def _run_simulated(
    config: BenchConfig, cpus: list[int], env: EnvReport | None, plan_checksum: str | None, label: str
) -> list[SampleSeries]:
    delays = load_trace(config.trace) if config.trace else []
    result = []
    for worker_id, cpu in enumerate(cpus):
        clock = SimulatedClock(delays)
        t0 = worker_id * config.distribute_offset
        records = allocate_buffer(config.loops, first_seq=config.warmup)
        worker_hot_loop(clock, t0, config.interval, records["latency_ns"], warmup=config.warmup)
        metadata = SeriesMetadata(
            label=label,
            worker_id=worker_id,
            cpu=cpu,
            config=config,
            started_at=EPOCH + timedelta(microseconds=t0 // 1000),
            ended_at=EPOCH + timedelta(microseconds=clock.now() // 1000),
            degraded=False,
            clock=clock.name,
            env=env,
            plan_checksum=plan_checksum,
        )
        result.append(SampleSeries(metadata, records))
    return result


def _process_threads() -> list[int]:
    return [thread.id for thread in psutil.Process().threads()]


def _pin_coordinator(measured: set[int]) -> dict[int, set[int]]:
    """Move every thread of this process off the measured CPUs. Returns each thread's previous affinity."""
    others = os.sched_getaffinity(0) - measured
    if not others:
        logger.warning("No CPU left for the coordinator; it shares the measured CPUs")
        return {}
    previous = {}
    for tid in _process_threads():
        try:
            previous[tid] = os.sched_getaffinity(tid)
            os.sched_setaffinity(tid, others)
        except ProcessLookupError:
            # thread exited meanwhile
            previous.pop(tid, None)
    return previous


def _unpin_coordinator(previous: dict[int, set[int]]):
    for tid, cpus in previous.items():
        with contextlib.suppress(ProcessLookupError):
            os.sched_setaffinity(tid, cpus)


def _run_processes(
    config: BenchConfig, cpus: list[int], env: EnvReport | None, plan_checksum: str | None, label: str
) -> list[SampleSeries]:
    allowed = CpuSet.allowed()
    outside = CpuSet(cpus) - allowed
    if outside:
        raise ConfigurationError(f"CPUs {outside} are not in the allowed set {allowed}")
    check_priority(config.priority)

    ctx = multiprocessing.get_context("spawn")
    barrier = ctx.Barrier(len(cpus) + 1)
    config_json = config.model_dump_json()
    previous_affinity = _pin_coordinator(set(cpus))

    procs = []
    try:
        for worker_id, cpu in enumerate(cpus):
            parent_conn, child_conn = ctx.Pipe(duplex=False)
            proc = ctx.Process(
                target=_measurement_process,
                args=(worker_id, cpu, config_json, barrier, child_conn),
                name=f"rtprobe-bench-{worker_id}",
                daemon=True,
            )
            proc.start()
            child_conn.close()
            procs.append((worker_id, cpu, proc, parent_conn))

        try:
            barrier.wait(BARRIER_TIMEOUT)
            logger.info(f"{len(procs)} workers started, {config.loops} loops each")
        except threading.BrokenBarrierError:
            logger.warning("Worker start aborted")

        result = []
        errors = []
        for worker_id, cpu, proc, conn in procs:
            try:
                status = conn.recv()
            except EOFError:
                errors.append(("RtprobeError", f"worker {worker_id} exited without result"))
                continue
            if status[0] != "ok":
                errors.append((status[1], f"worker {worker_id} (CPU {cpu}): {status[2]}"))
                continue
            _, degraded, started_at, ended_at = status
            records = np.frombuffer(conn.recv_bytes(), dtype=RECORD_DTYPE).copy()
            metadata = SeriesMetadata(
                label=label,
                worker_id=worker_id,
                cpu=cpu,
                config=config,
                started_at=started_at,
                ended_at=ended_at,
                degraded=degraded,
                clock=MonotonicClock.name,
                env=env,
                plan_checksum=plan_checksum,
            )
            result.append(SampleSeries(metadata, records))
    finally:
        for _, _, proc, conn in procs:
            proc.join(timeout=5)
            if proc.is_alive():
                proc.terminate()
            conn.close()
        _unpin_coordinator(previous_affinity)

    if errors:
        kinds = {kind for kind, _ in errors}
        message = "; ".join(msg for _, msg in errors)
        if "PrivilegeError" in kinds:
            raise PrivilegeError(message)
        if "ConfigurationError" in kinds:
            raise ConfigurationError(message)
        raise RtprobeError(message)
    return result


def run_cyclic(
    config: BenchConfig,
    env: EnvReport | None = None,
    plan_checksum: str | None = None,
    label: str = "",
) -> list[SampleSeries]:
    """
    Run the cyclic benchmark and return one SampleSeries per worker.

    Each sample is actual wake time minus scheduled wake time, with
    deadlines at t0 + k * interval. Without RT privileges the run degrades
    to normal priority (tagged in metadata) unless config.strict is set.
    """
    cpus = config.worker_cpus()
    logger.info(
        f"Cyclic bench: clock={config.clock} interval={config.interval}ns "
        f"loops={config.loops} cpus={CpuSet(cpus)}"
    )
    if config.clock == "simulated":
        return _run_simulated(config, cpus, env, plan_checksum, label)
    return _run_processes(config, cpus, env, plan_checksum, label)
