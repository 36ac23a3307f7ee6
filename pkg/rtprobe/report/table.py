"""
Tabular report output: text table, CSV and JSON.

All latencies are kept in ns; the text table renders whole microseconds,
truncated, the way published latency tables usually do.
"""

import csv
import io
import json
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator
from rich import box
from rich.console import Console
from rich.table import Table

from rtprobe import CSV_SCHEMA_VERSION, QUANTILE_METHOD, __version__
from rtprobe.analysis.statistics import OvershootReport, SeriesSource, SummaryStats, overshoot, summarize
from rtprobe.errors import ConfigurationError
from rtprobe.timing import NS_PER_MS, NS_PER_US, PositiveDurationNs, format_us

CSV_COLUMNS = [
    "label",
    "n",
    "min_ns",
    "mean_ns",
    "stddev_ns",
    "max_ns",
    "threshold_ns",
    "overshoot_count",
    "overshoot_rate",
]

DEFAULT_REFERENCE_LINES = [100 * NS_PER_US, 10 * NS_PER_MS]
TABLE_WIDTH = 120


class ReportRow(BaseModel):
    """Summary of one series plus its optional threshold overshoot."""

    model_config = ConfigDict(frozen=True)

    summary: SummaryStats
    threshold: int | None = None
    overshoot_count: int | None = None

    @property
    def label(self) -> str:
        return self.summary.label

    @property
    def overshoot_rate(self) -> float | None:
        if self.overshoot_count is None:
            return None
        return self.overshoot_count / self.summary.n

    def overshoot_report(self) -> OvershootReport | None:
        if self.threshold is None or self.overshoot_count is None:
            return None
        return OvershootReport(
            label=self.label,
            threshold=self.threshold,
            count=self.overshoot_count,
            n=self.summary.n,
            max_observed=self.summary.max,
        )


class ReportSpec(BaseModel):
    """What to report on and how."""

    inputs: list[Path] = Field(min_length=1)
    format: Literal["table", "csv", "json", "svg"] = "table"
    reference_lines: list[PositiveDurationNs] = Field(
        default_factory=lambda: list(DEFAULT_REFERENCE_LINES)
    )
    title: str = ""
    labels: list[str] | None = None

    @field_validator("labels")
    @classmethod
    def _labels_match(cls, value: list[str] | None, info) -> list[str] | None:
        inputs = info.data.get("inputs") or []
        if value is not None and len(value) != len(inputs):
            raise ValueError(f"{len(value)} labels given for {len(inputs)} inputs")
        return value


def make_row(source: SeriesSource, label: str | None = None, threshold: int | None = None) -> ReportRow:
    summary = summarize(source, label)
    count = None
    if threshold is not None:
        count = overshoot(source, threshold).count
    return ReportRow(summary=summary, threshold=threshold, overshoot_count=count)


def _rows(items: Iterable[ReportRow | SummaryStats]) -> list[ReportRow]:
    return [item if isinstance(item, ReportRow) else ReportRow(summary=item) for item in items]


def emit_table(items: Sequence[ReportRow | SummaryStats], title: str | None = None) -> str:
    """Fixed-width text table in µs; rows keep input order."""
    rows = _rows(items)
    with_overshoot = any(row.threshold is not None for row in rows)

    table = Table(title=title, box=box.SIMPLE_HEAD, header_style=None, title_style=None)
    table.add_column("Test", justify="right")
    table.add_column("Label")
    for name in ("Min", "Avg", "σ", "Max"):
        table.add_column(name, justify="right")
    if with_overshoot:
        table.add_column("Threshold", justify="right")
        table.add_column("Over", justify="right")
        table.add_column("Rate", justify="right")

    for i, row in enumerate(rows, 1):
        s = row.summary
        cells = [str(i), s.label, format_us(s.min), format_us(s.mean), format_us(s.stddev), format_us(s.max)]
        if with_overshoot:
            report = row.overshoot_report()
            if report is None:
                cells += ["", "", ""]
            else:
                cells += [format_us(report.threshold), str(report.count), report.rate_text]
        table.add_row(*cells)

    buffer = io.StringIO()
    console = Console(
        file=buffer,
        width=TABLE_WIDTH,
        color_system=None,
        force_terminal=False,
        legacy_windows=False,
        emoji=False,
        highlight=False,
    )
    console.print(table)
    console.print("values in µs (truncated), σ = population standard deviation")
    return buffer.getvalue()


def emit_csv(items: Sequence[ReportRow | SummaryStats]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in _rows(items):
        s = row.summary
        rate = row.overshoot_rate
        writer.writerow(
            [
                s.label,
                s.n,
                s.min,
                repr(s.mean),
                repr(s.stddev),
                s.max,
                "" if row.threshold is None else row.threshold,
                "" if row.overshoot_count is None else row.overshoot_count,
                "" if rate is None else repr(rate),
            ]
        )
    return buffer.getvalue()


def _optional_int(value: str) -> int | None:
    return int(value) if value != "" else None


def read_csv(source: str | Path) -> list[ReportRow]:
    """Parse CSV text (or a file) written by emit_csv."""
    text = Path(source).read_text(encoding="utf-8") if isinstance(source, Path) else source
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_COLUMNS:
        raise ConfigurationError(f"Unexpected CSV header {header}; expected {CSV_COLUMNS}")
    rows = []
    for lineno, record in enumerate(reader, 2):
        if not record:
            continue
        try:
            label, n, min_ns, mean_ns, stddev_ns, max_ns, threshold, count, _rate = record
            rows.append(
                ReportRow(
                    summary=SummaryStats(
                        label=label,
                        n=int(n),
                        min=int(min_ns),
                        max=int(max_ns),
                        mean=float(mean_ns),
                        stddev=float(stddev_ns),
                    ),
                    threshold=_optional_int(threshold),
                    overshoot_count=_optional_int(count),
                )
            )
        except ValueError as e:
            raise ConfigurationError(f"CSV line {lineno}: {e}") from e
    return rows


def emit_json(items: Sequence[ReportRow | SummaryStats]) -> str:
    rows = []
    for row in _rows(items):
        data = row.summary.model_dump(mode="json")
        data.update(
            threshold=row.threshold,
            overshoot_count=row.overshoot_count,
            overshoot_rate=row.overshoot_rate,
        )
        report = row.overshoot_report()
        data["overshoot_rate_text"] = report.rate_text if report else None
        rows.append(data)
    document = {
        "toolkit_version": __version__,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "quantile_method": QUANTILE_METHOD,
        "stddev": "population",
        "unit": "ns",
        "rows": rows,
    }
    return json.dumps(document, indent=2, ensure_ascii=False) + "\n"
