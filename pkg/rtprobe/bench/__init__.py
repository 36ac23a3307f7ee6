"""Cyclic firing-latency benchmark."""

from .clock import Clock, MonotonicClock, SimulatedClock, load_trace
from .runner import BenchConfig, SampleSeries, SeriesMetadata, run_cyclic
from .worker import RECORD_DTYPE, measure_loop_overhead, schedule_next, worker_hot_loop

__all__ = [
    "RECORD_DTYPE",
    "BenchConfig",
    "Clock",
    "MonotonicClock",
    "SampleSeries",
    "SeriesMetadata",
    "SimulatedClock",
    "load_trace",
    "measure_loop_overhead",
    "run_cyclic",
    "schedule_next",
    "worker_hot_loop",
]
