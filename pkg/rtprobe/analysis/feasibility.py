"""Deadline verdicts from measured series."""

import logging
import math
import re

from rtprobe.errors import ConfigurationError, DegradedSeriesError, EmptySeriesError
from rtprobe.timing import FeasibilityVerdict, TaskSpec, check_deadline

from .statistics import SeriesSource, exact_mean_ceil, latency_chunks, quantile

logger = logging.getLogger(__name__)

_QUANTILE_RE = re.compile(r"^[qp](\d+(?:\.\d+)?)$")


def parse_statistic(text: str) -> tuple[str, float | None]:
    """'max', 'mean' or a percentile such as 'q99.999' / 'p99.999'."""
    text = text.strip().lower()
    if text in ("max", "mean"):
        return text, None
    match = _QUANTILE_RE.match(text)
    if match:
        percent = float(match.group(1))
        if 0.0 <= percent <= 100.0:
            return "quantile", percent / 100.0
    raise ConfigurationError(f"Unknown statistic {text!r} (expected max, mean or q<percent>)")


def firing_latency(source: SeriesSource, statistic: str = "max") -> int:
    """The f used for a verdict: a whole number of ns, rounded up."""
    kind, q = parse_statistic(statistic)
    if kind == "max":
        peak = None
        for chunk in latency_chunks(source):
            if len(chunk):
                m = int(chunk.max())
                peak = m if peak is None else max(peak, m)
        if peak is None:
            raise EmptySeriesError("Cannot take the max of an empty series")
        return peak
    if kind == "mean":
        return exact_mean_ceil(source)
    return math.ceil(quantile(source, q))


def feasibility_report(
    source: SeriesSource,
    task: TaskSpec,
    statistic: str = "max",
    allow_degraded: bool = False,
) -> FeasibilityVerdict:
    """Check task against the chosen statistic of a measured series."""
    metadata = getattr(source, "metadata", None)
    if metadata is not None and metadata.degraded and not allow_degraded:
        raise DegradedSeriesError(
            f"Series {metadata.label or '(unlabelled)'} was measured without RT privileges; "
            "use --allow-degraded to judge it anyway"
        )
    f = firing_latency(source, statistic)
    verdict = check_deadline(task, f, statistic=statistic)
    logger.debug(f"{task.name}: f={f}ns c={verdict.completion_time}ns feasible={verdict.feasible}")
    return verdict
