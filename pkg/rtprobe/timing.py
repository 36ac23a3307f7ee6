"""
Time representation and the periodic task deadline model.

All time inside the toolkit is integer nanoseconds (TimeNs). Microseconds
only appear when values are rendered for humans.

A periodic task i is described by its period p, relative deadline d and
runtime budget r. With a measured firing latency f, the task completes at
c = f + r after its period start and is feasible when f + r = c <= d <= p.
"""

import logging
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Annotated, Any

import yaml
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, model_validator

from .errors import ArithmeticRangeError, ConfigurationError

logger = logging.getLogger(__name__)

MAX_NS = 2**64 - 1

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

_UNIT_FACTORS = {
    "ns": 1,
    "us": NS_PER_US,
    "µs": NS_PER_US,
    "μs": NS_PER_US,
    "ms": NS_PER_MS,
    "s": NS_PER_S,
}

_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ns|us|µs|μs|ms|s)?\s*$")

# TimeNs is a plain int constrained to [0, MAX_NS].
type TimeNs = int


def checked_ns(value: int) -> TimeNs:
    """Return value if it fits the unsigned 64-bit nanosecond range."""
    if isinstance(value, bool) or not isinstance(value, int):
        raise ArithmeticRangeError(f"Not an integer nanosecond value: {value!r}")
    if value < 0 or value > MAX_NS:
        raise ArithmeticRangeError(f"Nanosecond value out of range [0, 2^64-1]: {value}")
    return value


def parse_duration(value: str | int) -> TimeNs:
    """
    Parse a duration into nanoseconds.

    Accepts integer nanoseconds or a number with a unit suffix:
    ns, us (or µs), ms, s. Fractions are allowed as long as the
    result is a whole number of nanoseconds ("1.5ms" is fine, "0.5ns" is not).
    """
    if isinstance(value, bool):
        raise ConfigurationError(f"Invalid duration: {value!r}")
    if isinstance(value, int):
        if value < 0:
            raise ConfigurationError(f"Duration must not be negative: {value}")
        return checked_ns(value)

    match = _DURATION_RE.match(str(value))
    if not match:
        raise ConfigurationError(f"Invalid duration: {value!r} (expected e.g. 1ms, 100us, 250000)")

    number, unit = match.groups()
    try:
        total = Decimal(number) * _UNIT_FACTORS[unit or "ns"]
    except InvalidOperation as e:
        raise ConfigurationError(f"Invalid duration: {value!r}") from e

    if total != total.to_integral_value():
        raise ConfigurationError(f"Duration {value!r} is not a whole number of nanoseconds")
    return checked_ns(int(total))


def format_duration(ns: TimeNs) -> str:
    """Render ns with the largest unit that represents it exactly."""
    if ns == 0:
        return "0ns"
    for unit, factor in (("s", NS_PER_S), ("ms", NS_PER_MS), ("µs", NS_PER_US)):
        if ns % factor == 0:
            return f"{ns // factor}{unit}"
    return f"{ns}ns"


def format_us(ns: int | float) -> str:
    """Render ns as whole microseconds, truncating toward zero."""
    return str(int(ns) // NS_PER_US)


def _coerce_duration(value: Any) -> Any:
    if isinstance(value, str | int) and not isinstance(value, bool):
        return parse_duration(value)
    return value


# Pydantic field types that accept "1ms"-style strings.
DurationNs = Annotated[int, BeforeValidator(_coerce_duration), Field(ge=0, le=MAX_NS)]
PositiveDurationNs = Annotated[int, BeforeValidator(_coerce_duration), Field(gt=0, le=MAX_NS)]


def validate_task_bounds(period: int, deadline: int, runtime_budget: int) -> None:
    """Raise ConfigurationError naming the first violated inequality of 0 < r <= d <= p."""
    if runtime_budget <= 0:
        raise ConfigurationError(f"0 < runtime_budget violated (runtime_budget={runtime_budget}ns)")
    if runtime_budget > deadline:
        raise ConfigurationError(
            f"runtime_budget <= deadline violated ({runtime_budget}ns > {deadline}ns)"
        )
    if deadline > period:
        raise ConfigurationError(f"deadline <= period violated ({deadline}ns > {period}ns)")


class TaskSpec(BaseModel):
    """A periodic task: period p, relative deadline d (defaults to p), runtime budget r."""

    model_config = ConfigDict(frozen=True)

    name: str = "task"
    period: PositiveDurationNs
    deadline: PositiveDurationNs
    runtime_budget: PositiveDurationNs

    @model_validator(mode="before")
    @classmethod
    def _implicit_deadline(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("deadline") is None and "period" in data:
            data = {**data, "deadline": data["period"]}
        return data

    @model_validator(mode="after")
    def _check_bounds(self) -> "TaskSpec":
        try:
            validate_task_bounds(self.period, self.deadline, self.runtime_budget)
        except ConfigurationError as e:
            raise ValueError(str(e)) from e
        return self


@dataclass(frozen=True, slots=True)
class LatencySample:
    """One firing-latency measurement: iteration index and latency in ns."""

    seq: int
    latency: TimeNs


class FeasibilityVerdict(BaseModel):
    """Result of checking c = f + r <= d for one task."""

    model_config = ConfigDict(frozen=True)

    task: TaskSpec
    firing_latency_used: int
    completion_time: int
    feasible: bool
    margin: int
    statistic: str = "max"


def completion_time(f: TimeNs, r: TimeNs) -> TimeNs:
    """c = f + r, exact; raises ArithmeticRangeError beyond 64 bits."""
    return checked_ns(checked_ns(f) + checked_ns(r))


def check_deadline(task: TaskSpec, f: TimeNs, statistic: str = "max") -> FeasibilityVerdict:
    """Check a task against a firing latency f. The margin d - c may be negative."""
    validate_task_bounds(task.period, task.deadline, task.runtime_budget)
    completion = completion_time(f, task.runtime_budget)
    return FeasibilityVerdict(
        task=task,
        firing_latency_used=f,
        completion_time=completion,
        feasible=completion <= task.deadline,
        margin=task.deadline - completion,
        statistic=statistic,
    )


def deadline_threshold(period: TimeNs) -> TimeNs:
    """One tenth of the cycle time, rounded toward zero."""
    if period <= 0:
        raise ConfigurationError(f"period must be > 0 (got {period})")
    return checked_ns(period) // 10


def load_task(path: Path) -> TaskSpec:
    """Load a TaskSpec from a JSON or YAML file."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8-sig"))
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Cannot read task spec {path}: {e}") from e
    try:
        return TaskSpec.model_validate(data or {})
    except ValidationError as e:
        raise ConfigurationError(f"Invalid task spec {path}: {e}") from e
