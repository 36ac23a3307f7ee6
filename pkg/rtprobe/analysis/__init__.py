"""Statistics, overshoot counts, boxplots and deadline verdicts."""

from .feasibility import feasibility_report, firing_latency, parse_statistic
from .statistics import (
    BoxplotData,
    Histogram,
    OvershootReport,
    StreamingSummary,
    SummaryStats,
    boxplot_data,
    histogram,
    overshoot,
    quantile,
    summarize,
)

__all__ = [
    "BoxplotData",
    "Histogram",
    "OvershootReport",
    "StreamingSummary",
    "SummaryStats",
    "boxplot_data",
    "feasibility_report",
    "firing_latency",
    "histogram",
    "overshoot",
    "parse_statistic",
    "quantile",
    "summarize",
]
