import random

import pytest
from pydantic import ValidationError

from rtprobe.errors import ArithmeticRangeError, ConfigurationError
from rtprobe.timing import (
    MAX_NS,
    TaskSpec,
    check_deadline,
    checked_ns,
    completion_time,
    deadline_threshold,
    format_duration,
    format_us,
    load_task,
    parse_duration,
)


def _task(period="1ms", deadline=None, runtime="800us") -> TaskSpec:
    return TaskSpec(period=period, deadline=deadline, runtime_budget=runtime)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("250000", 250_000),
        (250_000, 250_000),
        ("1ms", 1_000_000),
        ("100us", 100_000),
        ("100µs", 100_000),
        ("1.5ms", 1_500_000),
        ("2s", 2_000_000_000),
        (" 7 ns ", 7),
    ],
)
def test_parse_duration(text, expected):
    assert parse_duration(text) == expected


@pytest.mark.parametrize("text", ["", "ms", "-1ms", "1h", "0.5ns", True])
def test_parse_duration_rejects(text):
    with pytest.raises(ConfigurationError):
        parse_duration(text)


def test_format_duration_picks_exact_unit():
    assert format_duration(0) == "0ns"
    assert format_duration(10_000_000) == "10ms"
    assert format_duration(100_000) == "100µs"
    assert format_duration(1_500) == "1500ns"
    assert format_duration(3 * 10**9) == "3s"


def test_format_us_truncates():
    assert format_us(6_115_999) == "6115"
    assert format_us(1195.9 * 1000) == "1195"
    assert format_us(999) == "0"


def test_checked_ns_range():
    assert checked_ns(MAX_NS) == MAX_NS
    with pytest.raises(ArithmeticRangeError):
        checked_ns(MAX_NS + 1)
    with pytest.raises(ArithmeticRangeError):
        checked_ns(-1)
    with pytest.raises(ArithmeticRangeError):
        checked_ns(1.0)


def test_completion_time_overflow():
    with pytest.raises(ArithmeticRangeError):
        completion_time(MAX_NS, 1)
    assert completion_time(MAX_NS - 1, 1) == MAX_NS


def test_implicit_deadline_is_period():
    task = _task(period="100ms", runtime="50ms")
    assert task.deadline == 100_000_000


@pytest.mark.parametrize(
    "period, deadline, runtime, message",
    [
        ("1ms", "1ms", "2ms", "runtime_budget <= deadline"),
        ("1ms", "2ms", "500us", "deadline <= period"),
    ],
)
def test_task_bounds_name_violated_inequality(period, deadline, runtime, message):
    with pytest.raises(ValidationError, match=message):
        _task(period, deadline, runtime)


def test_zero_runtime_rejected():
    with pytest.raises(ValidationError):
        TaskSpec(period=1_000_000, runtime_budget=0)


def test_feasible_1ms_cycle():
    verdict = check_deadline(_task("1ms", "1ms", "800us"), 114_000)
    assert verdict.feasible
    assert verdict.completion_time == 914_000
    assert verdict.margin == 86_000


def test_49ms_peak_on_100ms_cycle():
    task = _task("100ms", "100ms", "50ms")
    # c = 99ms still meets d; the peak only fails the period/10 threshold rule
    verdict = check_deadline(task, 49_000_000)
    assert verdict.feasible
    assert verdict.margin == 1_000_000
    assert 49_000_000 > deadline_threshold(task.period)

    verdict = check_deadline(task, 51_000_000)
    assert not verdict.feasible
    assert verdict.margin == -1_000_000

    assert not check_deadline(_task("100ms", "100ms", "52ms"), 49_000_000).feasible


def test_verdict_flips_exactly_at_deadline_minus_runtime():
    task = _task("1ms", "900us", "800us")
    limit = task.deadline - task.runtime_budget
    assert check_deadline(task, limit).feasible
    assert not check_deadline(task, limit + 1).feasible


def test_zero_latency_needs_runtime_within_deadline():
    assert check_deadline(_task("1ms", "1ms", "1ms"), 0).feasible


def test_deadline_threshold():
    assert deadline_threshold(1_000_000) == 100_000
    assert deadline_threshold(100_000_000) == 10_000_000
    assert deadline_threshold(15) == 1
    with pytest.raises(ConfigurationError):
        deadline_threshold(0)


def test_completion_time_matches_exact_integer_sum():
    rng = random.Random(1)
    for _ in range(1_000):
        f = rng.randrange(MAX_NS + 1)
        r = rng.randrange(MAX_NS + 1)
        if f + r <= MAX_NS:
            assert completion_time(f, r) == f + r
        else:
            with pytest.raises(ArithmeticRangeError):
                completion_time(f, r)


def test_margin_shrinks_as_latency_grows():
    task = _task("1ms", "1ms", "500us")
    rng = random.Random(2)
    latencies = sorted(rng.randrange(2_000_000) for _ in range(200))
    verdicts = [check_deadline(task, f) for f in latencies]
    margins = [v.margin for v in verdicts]
    assert margins == sorted(margins, reverse=True)
    flips = [v.feasible for v in verdicts]
    assert flips == sorted(flips, reverse=True)
    for f, verdict in zip(latencies, verdicts, strict=True):
        assert verdict.completion_time == f + task.runtime_budget
        assert verdict.margin == task.deadline - f - task.runtime_budget


def test_threshold_is_a_tenth_of_whole_multiples():
    rng = random.Random(3)
    for _ in range(1_000):
        x = rng.randrange(1, MAX_NS // 10)
        assert deadline_threshold(10 * x) == x
        assert deadline_threshold(10 * x + 9) == x
    assert deadline_threshold(10) == 1
    assert deadline_threshold(9) == 0


def test_late_firing_on_1ms_cycle_misses_by_44us():
    verdict = check_deadline(_task("1ms", "1ms", "500us"), 544_000)
    assert not verdict.feasible
    assert verdict.completion_time == 1_044_000
    assert verdict.margin == -44_000


def test_load_task_yaml(tmp_path):
    path = tmp_path / "task.yaml"
    path.write_text("name: control\nperiod: 1ms\nruntime_budget: 800us\n", encoding="utf-8")
    task = load_task(path)
    assert task.name == "control"
    assert (task.period, task.deadline, task.runtime_budget) == (1_000_000, 1_000_000, 800_000)


def test_load_task_json_invalid(tmp_path):
    path = tmp_path / "task.json"
    path.write_text('{"period": "1ms", "deadline": "2ms", "runtime_budget": "1ms"}', encoding="utf-8")
    with pytest.raises(ConfigurationError, match="deadline <= period"):
        load_task(path)
