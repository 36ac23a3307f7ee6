"""
Latency statistics over sample series.

Summary, overshoot and histogram stream over bounded chunks, so a
ten-million-sample file is never loaded whole. Quantiles (and therefore
boxplots) need the sorted latency column and load it.

sigma is the population standard deviation. Quantiles use linear
interpolation between order statistics (R-7).
"""

import logging
import math
from collections.abc import Iterable, Iterator, Sequence
from decimal import Decimal, localcontext

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from rtprobe.bench.runner import SampleSeries
from rtprobe.errors import ConfigurationError, EmptySeriesError
from rtprobe.experiment.samplefile import CHUNK_RECORDS, SampleFile

logger = logging.getLogger(__name__)

RATE_DIGITS = 5

type SeriesSource = SampleSeries | SampleFile | np.ndarray | Sequence[int]


def latency_chunks(source: SeriesSource, chunk: int = CHUNK_RECORDS) -> Iterator[np.ndarray]:
    """Latency values of any series-like source as uint64 chunks."""
    if isinstance(source, SampleFile):
        yield from source.latency_chunks(chunk)
        return
    if isinstance(source, SampleSeries):
        values = source.latencies
    else:
        values = np.asarray(source, dtype=np.uint64)
    for start in range(0, len(values), chunk):
        yield values[start : start + chunk]


def load_latencies(source: SeriesSource) -> np.ndarray:
    """The whole latency column in memory."""
    if isinstance(source, SampleFile):
        return np.array(source.records()["latency_ns"])
    if isinstance(source, SampleSeries):
        return source.latencies
    return np.asarray(source, dtype=np.uint64)


def source_label(source: SeriesSource, default: str = "") -> str:
    if isinstance(source, SampleSeries | SampleFile):
        return source.metadata.label or default
    return default


def _exact_sum(chunk: np.ndarray, chunk_max: int) -> int:
    if chunk_max * len(chunk) < 2**64:
        return int(chunk.sum(dtype=np.uint64))
    return sum(chunk.tolist())


class SummaryStats(BaseModel):
    """n, min, mean, sigma (population) and max of a series, in ns."""

    model_config = ConfigDict(frozen=True)

    label: str = ""
    n: int
    min: int
    max: int
    mean: float
    stddev: float


class StreamingSummary:
    """
    Single-pass n/min/max/sum plus Welford-class M2.

    Chunks are folded in with the pairwise update, so merging partial
    summaries gives the same result as summarising the concatenation.
    """

    def __init__(self):
        self.n = 0
        self.total = 0
        self.min: int | None = None
        self.max: int | None = None
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, chunk: np.ndarray) -> "StreamingSummary":
        k = len(chunk)
        if k == 0:
            return self
        other = StreamingSummary()
        other.n = k
        other.min = int(chunk.min())
        other.max = int(chunk.max())
        other.total = _exact_sum(chunk, other.max)
        other.mean = other.total / k
        deviations = chunk.astype(np.float64) - other.mean
        other.m2 = float(np.dot(deviations, deviations))
        return self.merge(other)

    def merge(self, other: "StreamingSummary") -> "StreamingSummary":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.total, self.mean, self.m2 = other.n, other.total, other.mean, other.m2
            self.min, self.max = other.min, other.max
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        self.n = n
        self.total += other.total
        self.mean = self.total / n
        self.min = min(self.min, other.min)
        self.max = max(self.max, other.max)
        return self

    def result(self, label: str = "") -> SummaryStats:
        if self.n == 0:
            raise EmptySeriesError("Cannot summarize an empty series")
        stddev = 0.0 if self.min == self.max else math.sqrt(max(self.m2, 0.0) / self.n)
        return SummaryStats(
            label=label, n=self.n, min=self.min, max=self.max, mean=self.mean, stddev=stddev
        )


def summarize(source: SeriesSource, label: str | None = None) -> SummaryStats:
    """Table-style statistics of one series. Raises EmptySeriesError when n = 0."""
    acc = StreamingSummary()
    for chunk in latency_chunks(source):
        acc.update(chunk)
    return acc.result(label if label is not None else source_label(source))


def exact_mean_ceil(source: SeriesSource) -> int:
    """Mean rounded up to a whole ns, computed from the exact integer sum."""
    acc = StreamingSummary()
    for chunk in latency_chunks(source):
        acc.update(chunk)
    if acc.n == 0:
        raise EmptySeriesError("Cannot average an empty series")
    return -(-acc.total // acc.n)


class OvershootReport(BaseModel):
    """Samples strictly above a threshold."""

    model_config = ConfigDict(frozen=True)

    label: str = ""
    threshold: int
    count: int
    n: int
    max_observed: int

    @property
    def rate(self) -> float:
        return self.count / self.n

    @property
    def rate_text(self) -> str:
        """Percentage to five significant digits, e.g. 96 of 10M -> "0.00096%"."""
        with localcontext() as ctx:
            ctx.prec = RATE_DIGITS
            percent = Decimal(self.count * 100) / Decimal(self.n)
        return f"{percent.normalize():f}%"


def overshoot(source: SeriesSource, threshold: int, label: str | None = None) -> OvershootReport:
    """Count samples with latency > threshold."""
    n = 0
    count = 0
    peak = 0
    for chunk in latency_chunks(source):
        if len(chunk) == 0:
            continue
        n += len(chunk)
        count += int(np.count_nonzero(chunk > threshold))
        peak = max(peak, int(chunk.max()))
    if n == 0:
        raise EmptySeriesError("Cannot compute overshoot of an empty series")
    return OvershootReport(
        label=label if label is not None else source_label(source),
        threshold=threshold,
        count=count,
        n=n,
        max_observed=peak,
    )


class Histogram(BaseModel):
    """Fixed-width latency buckets; samples at or beyond overflow_threshold land in overflow."""

    bucket_width: int
    counts: list[int] = Field(default_factory=list)
    overflow_threshold: int
    overflow: int = 0

    @property
    def n(self) -> int:
        return sum(self.counts) + self.overflow

    def bucket_range(self, index: int) -> tuple[int, int]:
        return index * self.bucket_width, (index + 1) * self.bucket_width


def histogram(source: SeriesSource, bucket_width: int = 1_000, buckets: int = 10_000) -> Histogram:
    """Bucket i counts latencies in [i*w, (i+1)*w)."""
    if bucket_width <= 0:
        raise ConfigurationError(f"bucket_width must be > 0 (got {bucket_width})")
    if buckets <= 0:
        raise ConfigurationError(f"buckets must be > 0 (got {buckets})")
    totals = np.zeros(buckets + 1, dtype=np.int64)
    for chunk in latency_chunks(source):
        index = np.minimum(chunk // np.uint64(bucket_width), np.uint64(buckets)).astype(np.int64)
        totals += np.bincount(index, minlength=buckets + 1)
    return Histogram(
        bucket_width=bucket_width,
        counts=totals[:buckets].tolist(),
        overflow_threshold=bucket_width * buckets,
        overflow=int(totals[buckets]),
    )


def quantile(source: SeriesSource, q: float) -> float:
    """R-7 quantile: linear interpolation between order statistics."""
    if not 0.0 <= q <= 1.0:
        raise ConfigurationError(f"quantile must be in [0, 1] (got {q})")
    values = load_latencies(source)
    if len(values) == 0:
        raise EmptySeriesError("Cannot take a quantile of an empty series")
    return float(np.quantile(values, q, method="linear"))


class BoxplotData(BaseModel):
    """One box of a latency boxplot."""

    model_config = ConfigDict(frozen=True)

    label: str
    n: int
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    mean: float
    outliers: int
    min_ns: int
    max_ns: int
    threshold: int | None = None
    overshoot: int | None = None


def _box(label: str, values: np.ndarray, threshold: int | None) -> BoxplotData:
    if len(values) == 0:
        raise EmptySeriesError(f"Cannot draw a box for empty series {label!r}")
    q1, median, q3 = (float(v) for v in np.quantile(values, [0.25, 0.5, 0.75], method="linear"))
    iqr = q3 - q1
    low_fence = q1 - 1.5 * iqr
    high_fence = q3 + 1.5 * iqr
    as_float = values.astype(np.float64)
    inside = as_float[(as_float >= low_fence) & (as_float <= high_fence)]
    whisker_low = min(float(inside.min()), q1) if len(inside) else q1
    whisker_high = max(float(inside.max()), q3) if len(inside) else q3
    outliers = int(np.count_nonzero((as_float < whisker_low) | (as_float > whisker_high)))
    stats = summarize(values)
    return BoxplotData(
        label=label,
        n=len(values),
        q1=q1,
        median=median,
        q3=q3,
        whisker_low=whisker_low,
        whisker_high=whisker_high,
        mean=stats.mean,
        outliers=outliers,
        min_ns=stats.min,
        max_ns=stats.max,
        threshold=threshold,
        overshoot=int(np.count_nonzero(values > threshold)) if threshold is not None else None,
    )


def boxplot_data(
    sources: Iterable[SeriesSource | tuple[str, SeriesSource]],
    threshold: int | None = None,
) -> list[BoxplotData]:
    """One BoxplotData per series, in input order. Sources may be (label, series) pairs."""
    boxes = []
    for i, item in enumerate(sources):
        if isinstance(item, tuple):
            label, source = item
        else:
            label, source = source_label(item, f"series-{i}"), item
        boxes.append(_box(label, load_latencies(source), threshold))
    return boxes
