"""Report output: text tables, CSV, JSON and SVG boxplots."""

from .svg import emit_boxplot_svg, log_scale_y
from .table import (
    DEFAULT_REFERENCE_LINES,
    ReportRow,
    ReportSpec,
    emit_csv,
    emit_json,
    emit_table,
    make_row,
    read_csv,
)

__all__ = [
    "DEFAULT_REFERENCE_LINES",
    "ReportRow",
    "ReportSpec",
    "emit_boxplot_svg",
    "emit_csv",
    "emit_json",
    "emit_table",
    "log_scale_y",
    "make_row",
    "read_csv",
]
