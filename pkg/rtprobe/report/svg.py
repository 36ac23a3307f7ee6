"""
Boxplot SVG with a logarithmic latency axis.

Each box spans q1..q3 with the median as a line, whiskers at 1.5 IQR,
the mean as a blue dot and the maximum as a red cross annotated with the
outlier count (and threshold overshoot count, when known). Threshold
reference lines are dashed.
"""

import math
import xml.etree.ElementTree as ET
from collections.abc import Sequence

from rtprobe.analysis.statistics import BoxplotData
from rtprobe.timing import format_duration

SVG_NS = "http://www.w3.org/2000/svg"
XML_DECLARATION = '<?xml version="1.0" encoding="UTF-8"?>'

PLOT_TOP = 40
PLOT_BOTTOM = 440
MARGIN_LEFT = 90
MARGIN_RIGHT = 30
SLOT_WIDTH = 90
BOX_WIDTH = 40
LABEL_SPACE = 60

MEAN_COLOR = "blue"
MAX_COLOR = "red"


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def axis_range(boxes: Sequence[BoxplotData], reference_lines: Sequence[int]) -> tuple[int, int]:
    """Whole decades covering every drawn value (at least 1ns)."""
    values = [v for b in boxes for v in (b.min_ns, b.max_ns, b.whisker_low) if v > 0]
    values += [v for v in reference_lines if v > 0]
    if not values:
        return 1, 10
    low = 10 ** math.floor(math.log10(min(values)))
    high = 10 ** math.ceil(math.log10(max(values)))
    if high <= low:
        high = low * 10
    return int(low), int(high)


def log_scale_y(value: float, low: int, high: int, top: float = PLOT_TOP, bottom: float = PLOT_BOTTOM) -> float:
    """Map a latency (ns) to a y coordinate; values at or below `low` sit on the axis."""
    value = max(float(value), float(low))
    span = math.log10(high) - math.log10(low)
    fraction = (math.log10(value) - math.log10(low)) / span
    return bottom - fraction * (bottom - top)


def _el(parent: ET.Element, tag: str, text: str | None = None, **attrs: str) -> ET.Element:
    element = ET.SubElement(parent, tag, {k.rstrip("_").replace("_", "-"): v for k, v in attrs.items()})
    if text is not None:
        element.text = text
    return element


def emit_boxplot_svg(
    boxes: Sequence[BoxplotData],
    reference_lines: Sequence[int] = (),
    title: str = "",
) -> str:
    """Render boxes left to right in input order as an SVG 1.1 document."""
    if not boxes:
        raise ValueError("at least one series is required")

    low, high = axis_range(boxes, reference_lines)
    width = MARGIN_LEFT + SLOT_WIDTH * len(boxes) + MARGIN_RIGHT
    height = PLOT_BOTTOM + LABEL_SPACE
    plot_right = width - MARGIN_RIGHT

    svg = ET.Element(
        "svg",
        {
            "xmlns": SVG_NS,
            "version": "1.1",
            "width": str(width),
            "height": str(height),
            "viewBox": f"0 0 {width} {height}",
            "font-family": "sans-serif",
            "font-size": "11",
        },
    )
    if title:
        _el(svg, "title", title)
        _el(svg, "text", title, x=_fmt(width / 2), y="20", text_anchor="middle", font_size="14")

    axis = _el(svg, "g", id="axis")
    _el(axis, "line", x1=str(MARGIN_LEFT), y1=str(PLOT_TOP), x2=str(MARGIN_LEFT), y2=str(PLOT_BOTTOM), stroke="black")
    _el(axis, "line", x1=str(MARGIN_LEFT), y1=str(PLOT_BOTTOM), x2=str(plot_right), y2=str(PLOT_BOTTOM), stroke="black")
    decade = low
    while decade <= high:
        y = _fmt(log_scale_y(decade, low, high))
        _el(axis, "line", x1=str(MARGIN_LEFT - 5), y1=y, x2=str(MARGIN_LEFT), y2=y, stroke="black")
        _el(axis, "line", x1=str(MARGIN_LEFT), y1=y, x2=str(plot_right), y2=y, stroke="#dddddd")
        _el(axis, "text", format_duration(decade), x=str(MARGIN_LEFT - 8), y=y, text_anchor="end", dominant_baseline="middle")
        decade *= 10

    refs = _el(svg, "g", id="reference-lines")
    for ref in reference_lines:
        y = _fmt(log_scale_y(ref, low, high))
        _el(
            refs,
            "line",
            x1=str(MARGIN_LEFT),
            y1=y,
            x2=str(plot_right),
            y2=y,
            stroke="gray",
            stroke_dasharray="6,4",
            data_value=str(ref),
        )
        _el(refs, "text", format_duration(ref), x=str(plot_right), y=y, text_anchor="end", dy="-3", fill="gray")

    series = _el(svg, "g", id="series")
    for i, b in enumerate(boxes):
        cx = MARGIN_LEFT + SLOT_WIDTH * i + SLOT_WIDTH / 2
        left = cx - BOX_WIDTH / 2
        right = cx + BOX_WIDTH / 2

        def ypos(v: float) -> str:
            return _fmt(log_scale_y(v, low, high))

        g = _el(series, "g", data_label=b.label)
        _el(g, "line", x1=_fmt(cx), y1=ypos(b.whisker_low), x2=_fmt(cx), y2=ypos(b.q1), stroke="black")
        _el(g, "line", x1=_fmt(cx), y1=ypos(b.q3), x2=_fmt(cx), y2=ypos(b.whisker_high), stroke="black")
        for w in (b.whisker_low, b.whisker_high):
            _el(g, "line", x1=_fmt(cx - BOX_WIDTH / 4), y1=ypos(w), x2=_fmt(cx + BOX_WIDTH / 4), y2=ypos(w), stroke="black")
        top, bottom = log_scale_y(b.q3, low, high), log_scale_y(b.q1, low, high)
        _el(
            g,
            "rect",
            x=_fmt(left),
            y=_fmt(top),
            width=_fmt(BOX_WIDTH),
            height=_fmt(bottom - top),
            fill="#f0f0f0",
            stroke="black",
        )
        _el(g, "line", x1=_fmt(left), y1=ypos(b.median), x2=_fmt(right), y2=ypos(b.median), stroke="black", stroke_width="2")
        _el(g, "circle", cx=_fmt(cx), cy=ypos(b.mean), r="3.5", fill=MEAN_COLOR, class_="mean")

        max_y = ypos(b.max_ns)
        _el(g, "path", d=f"M{_fmt(cx - 4)},{max_y} l8,0 M{_fmt(cx)},{_fmt(float(max_y) - 4)} l0,8", stroke=MAX_COLOR, class_="max")
        note = f"{b.outliers} out"
        if b.overshoot is not None:
            note += f", {b.overshoot} > {format_duration(b.threshold)}"
        _el(g, "text", note, x=_fmt(cx), y=_fmt(float(max_y) - 8), text_anchor="middle", font_size="9", fill=MAX_COLOR)
        _el(g, "text", b.label, x=_fmt(cx), y=str(PLOT_BOTTOM + 18), text_anchor="middle")
        _el(g, "text", f"n={b.n}", x=_fmt(cx), y=str(PLOT_BOTTOM + 32), text_anchor="middle", font_size="9")

    ET.indent(svg)
    return f"{XML_DECLARATION}\n{ET.tostring(svg, encoding='unicode')}\n"
