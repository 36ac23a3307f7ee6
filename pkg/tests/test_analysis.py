import math

import numpy as np
import pytest

from rtprobe.analysis import (
    OvershootReport,
    StreamingSummary,
    boxplot_data,
    feasibility_report,
    firing_latency,
    histogram,
    overshoot,
    parse_statistic,
    quantile,
    summarize,
)
from rtprobe.analysis.statistics import exact_mean_ceil
from rtprobe.errors import ConfigurationError, DegradedSeriesError, EmptySeriesError
from rtprobe.experiment import open_samples, persist_samples
from rtprobe.timing import TaskSpec

from .conftest import make_series

US = 1_000
MS = 1_000_000


def _naive_stats(values: list[int]) -> tuple[int, int, float, float]:
    n = len(values)
    mean = sum(values) / n
    variance = sum((v - mean) ** 2 for v in values) / n
    return min(values), max(values), mean, math.sqrt(variance)


def _naive_quantile(ordered: list[int], q: float) -> float:
    h = (len(ordered) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(ordered) - 1)
    return ordered[lo] + (h - lo) * (ordered[hi] - ordered[lo])


# Summary


def test_summary_of_small_series():
    stats = summarize(make_series([1, 2, 3, 4], label="tiny"))
    assert stats.label == "tiny"
    assert (stats.n, stats.min, stats.max) == (4, 1, 4)
    assert stats.mean == 2.5
    assert stats.stddev == pytest.approx(math.sqrt(1.25))


def test_constant_series_has_zero_sigma():
    stats = summarize([7_000] * 5)
    assert stats.stddev == 0.0
    assert stats.mean == 7_000


def test_sum_is_exact_beyond_64_bits():
    values = [2**63, 2**63, 1]
    stats = summarize(values)
    assert stats.max == 2**63
    assert exact_mean_ceil(values) == -(-(2**64 + 1) // 3)


def test_merging_partial_summaries_matches_whole():
    rng = np.random.default_rng(3)
    values = rng.integers(0, 10 * MS, size=1_000, dtype=np.uint64)
    whole = StreamingSummary().update(values).result()
    left = StreamingSummary().update(values[:123])
    middle = StreamingSummary().update(values[123:700])
    right = StreamingSummary().update(values[700:])
    merged = left.merge(middle.merge(right)).result()
    assert (merged.n, merged.min, merged.max) == (whole.n, whole.min, whole.max)
    assert merged.mean == pytest.approx(whole.mean)
    assert merged.stddev == pytest.approx(whole.stddev, rel=1e-9)


def test_empty_series_raise():
    with pytest.raises(EmptySeriesError):
        summarize([])
    with pytest.raises(EmptySeriesError):
        overshoot([], 10)
    with pytest.raises(EmptySeriesError):
        quantile(make_series([]), 0.5)
    with pytest.raises(EmptySeriesError):
        boxplot_data([("empty", [])])
    with pytest.raises(EmptySeriesError):
        firing_latency([], "max")


# Overshoot


def test_overshoot_rate_text():
    report = OvershootReport(threshold=10 * MS, count=96, n=10_000_000, max_observed=49 * MS)
    assert report.rate_text == "0.00096%"
    assert report.rate == pytest.approx(9.6e-6)
    assert OvershootReport(threshold=1, count=1, n=3, max_observed=2).rate_text == "33.333%"
    assert OvershootReport(threshold=1, count=0, n=3, max_observed=1).rate_text == "0%"


def test_overshoot_counts_strictly_above():
    values = [5, 10, 10, 11, 400]
    assert overshoot(values, 10).count == 2
    assert overshoot(values, 4).count == 5
    assert overshoot(values, 400).count == 0
    assert overshoot(values, 10).max_observed == 400


def test_overshoot_is_monotone_in_threshold():
    rng = np.random.default_rng(11)
    values = rng.integers(0, 1_000, size=500, dtype=np.uint64)
    counts = [overshoot(values, t).count for t in range(0, 1_100, 50)]
    assert counts == sorted(counts, reverse=True)


@pytest.mark.slow
def test_overshoot_over_ten_million_samples():
    values = np.full(10_000_000, 5 * US, dtype=np.uint64)
    values[np.arange(96) * 100_000] = 11 * MS
    report = overshoot(values, 10 * MS)
    assert report.count == 96
    assert report.rate_text == "0.00096%"


# Histogram


def test_histogram_buckets_and_overflow():
    hist = histogram([0, 999, 1_000, 1_500, 2_999, 5_000], bucket_width=1_000, buckets=3)
    assert hist.counts == [2, 2, 1]
    assert hist.overflow == 1
    assert hist.overflow_threshold == 3_000
    assert hist.n == 6
    assert hist.bucket_range(1) == (1_000, 2_000)


def test_histogram_conserves_samples():
    rng = np.random.default_rng(5)
    values = rng.integers(0, 50 * US, size=2_000, dtype=np.uint64)
    hist = histogram(values, bucket_width=US, buckets=20)
    assert hist.n == len(values)
    assert hist.overflow == int(np.count_nonzero(values >= 20 * US))


def test_histogram_rejects_bad_shape():
    with pytest.raises(ConfigurationError):
        histogram([1], bucket_width=0)
    with pytest.raises(ConfigurationError):
        histogram([1], buckets=0)


# Quantiles and boxplots


def test_quantiles_interpolate_linearly():
    values = list(range(1, 101))
    assert quantile(values, 0.5) == 50.5
    assert quantile(values, 0.25) == 25.75
    assert quantile(values, 0.75) == 75.25
    assert quantile(values, 0.0) == 1
    assert quantile(values, 1.0) == 100
    with pytest.raises(ConfigurationError):
        quantile(values, 1.5)


def test_box_whiskers_and_outliers():
    [box] = boxplot_data([("tail", list(range(1, 101)) + [1_000])], threshold=100)
    assert (box.q1, box.median, box.q3) == (26.0, 51.0, 76.0)
    assert box.whisker_low == 1
    assert box.whisker_high == 100
    assert box.outliers == 1
    assert box.overshoot == 1
    assert box.max_ns == 1_000


def test_constant_box_is_degenerate():
    [box] = boxplot_data([("flat", [5, 5, 5])])
    assert box.q1 == box.median == box.q3 == box.whisker_low == box.whisker_high == 5
    assert box.outliers == 0
    assert box.overshoot is None


def test_boxes_keep_input_order_and_labels():
    boxes = boxplot_data([("a", [1, 2]), make_series([3], label="b"), [4]])
    assert [b.label for b in boxes] == ["a", "b", "series-2"]


def test_statistics_agree_with_naive_oracle():
    rng = np.random.default_rng(2024)
    sizes = [1, 2, 17, 1_000] + [int(s) for s in rng.integers(1, 64, size=1_000)]
    for size in sizes:
        values = rng.integers(0, 2**32, size=size, dtype=np.uint64)
        as_list = [int(v) for v in values]
        low, high, mean, sigma = _naive_stats(as_list)
        stats = summarize(values)
        assert (stats.min, stats.max) == (low, high)
        assert stats.mean == pytest.approx(mean, rel=1e-9)
        assert stats.stddev == pytest.approx(sigma, rel=1e-9, abs=1e-6)
        threshold = int(np.median(values))
        assert overshoot(values, threshold).count == sum(v > threshold for v in as_list)


def test_histogram_agrees_with_naive_buckets():
    rng = np.random.default_rng(77)
    for _ in range(200):
        width = int(rng.integers(1, 5_000))
        buckets = int(rng.integers(1, 40))
        values = [int(v) for v in rng.integers(0, width * buckets * 2, size=int(rng.integers(1, 300)))]
        expected = [0] * buckets
        overflow = 0
        for v in values:
            if v >= width * buckets:
                overflow += 1
            else:
                expected[v // width] += 1
        hist = histogram(values, bucket_width=width, buckets=buckets)
        assert hist.counts == expected
        assert hist.overflow == overflow


def test_boxes_agree_with_naive_quartiles_and_fences():
    rng = np.random.default_rng(31)
    for _ in range(200):
        values = [int(v) for v in rng.integers(0, 10 * MS, size=int(rng.integers(1, 120)))]
        if rng.random() < 0.5:
            values.append(int(rng.integers(50 * MS, 100 * MS)))
        ordered = sorted(values)
        q1, median, q3 = (_naive_quantile(ordered, q) for q in (0.25, 0.5, 0.75))
        [box] = boxplot_data([("r", values)])
        low_fence = box.q1 - 1.5 * (box.q3 - box.q1)
        high_fence = box.q3 + 1.5 * (box.q3 - box.q1)
        inside = [v for v in ordered if low_fence <= v <= high_fence]
        assert box.q1 == pytest.approx(q1, rel=1e-12, abs=1e-6)
        assert box.median == pytest.approx(median, rel=1e-12, abs=1e-6)
        assert box.q3 == pytest.approx(q3, rel=1e-12, abs=1e-6)
        assert box.whisker_low == (min(inside[0], box.q1) if inside else box.q1)
        assert box.whisker_high == (max(inside[-1], box.q3) if inside else box.q3)
        assert box.outliers == sum(v < box.whisker_low or v > box.whisker_high for v in ordered)
        assert (box.min_ns, box.max_ns) == (ordered[0], ordered[-1])


# Feasibility


@pytest.fixture
def task() -> TaskSpec:
    return TaskSpec(name="ctrl", period="1ms", runtime_budget="800us")


def test_verdict_uses_max_by_default(task):
    series = make_series([10 * US, 20 * US, 114 * US])
    verdict = feasibility_report(series, task)
    assert verdict.feasible
    assert verdict.firing_latency_used == 114 * US
    assert verdict.completion_time == 914 * US
    assert verdict.margin == 86 * US
    assert verdict.statistic == "max"


def test_verdict_with_mean_and_quantile(task):
    series = make_series([1, 2])
    assert feasibility_report(series, task, statistic="mean").firing_latency_used == 2
    wide = make_series([10 * US, 20 * US, 300 * US])
    assert feasibility_report(wide, task, statistic="q50").firing_latency_used == 20 * US
    assert not feasibility_report(wide, task).feasible


def test_verdict_is_consistent_with_completion(task):
    rng = np.random.default_rng(9)
    for _ in range(20):
        series = make_series(rng.integers(0, 400 * US, size=10, dtype=np.uint64))
        verdict = feasibility_report(series, task)
        assert verdict.feasible == (verdict.completion_time <= task.deadline)
        assert verdict.margin == task.deadline - verdict.completion_time


def test_degraded_series_needs_permission(task):
    series = make_series([5 * US], degraded=True)
    with pytest.raises(DegradedSeriesError):
        feasibility_report(series, task)
    assert feasibility_report(series, task, allow_degraded=True).feasible


def test_parse_statistic():
    assert parse_statistic("Max") == ("max", None)
    assert parse_statistic("mean") == ("mean", None)
    kind, q = parse_statistic("p99.999")
    assert kind == "quantile" and q == pytest.approx(0.99999)
    assert parse_statistic("q50") == ("quantile", 0.5)
    for text in ("q101", "median", ""):
        with pytest.raises(ConfigurationError):
            parse_statistic(text)


def test_sample_files_are_valid_sources(tmp_path, task):
    series = make_series([3 * US, 9 * US, 1 * MS, 40 * US], label="disk")
    opened = open_samples(persist_samples(series, tmp_path / "disk.rtfs"))
    assert summarize(opened) == summarize(series)
    assert summarize(opened).label == "disk"
    assert overshoot(opened, 100 * US).count == 1
    assert histogram(opened, US, 100).n == 4
    assert quantile(opened, 0.5) == quantile(series, 0.5)
    assert feasibility_report(opened, task) == feasibility_report(series, task)


def test_feasible_under_max_is_feasible_under_every_statistic(task):
    rng = np.random.default_rng(13)
    statistics = ["mean", "q50", "q90", "q99.9", "q1"]
    checked = 0
    for _ in range(300):
        series = make_series(rng.integers(0, 220 * US, size=int(rng.integers(1, 50)), dtype=np.uint64))
        if not feasibility_report(series, task).feasible:
            continue
        checked += 1
        for statistic in statistics:
            verdict = feasibility_report(series, task, statistic=statistic)
            assert verdict.feasible, statistic
            assert verdict.firing_latency_used <= int(series.latencies.max())
    assert checked > 20
