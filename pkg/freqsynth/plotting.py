"""Self-contained SVG plots of closed-loop traces."""

from __future__ import annotations

import logging
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np
import svgwrite

from .artifacts import write_text
from .grid_model import Trace
from .spec_monitor import SpecConfig

logger = logging.getLogger(__name__)

SVG_WIDTH = 900
SVG_HEIGHT = 560
MARGIN_L = 70
MARGIN_R = 20
MARGIN_T = 40
PANEL_GAP = 50

PHASE_COLOURS = {
    "none": "#dbeafe",
    "c1": "#fef9c3",
    "c2": "#dcfce7",
    "fixed": "#ffffff",
}


class _Axis:
    def __init__(self, x0: float, y0: float, w: float, h: float, t_range: Tuple[float, float], y_range: Tuple[float, float]):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.t_lo, self.t_hi = t_range
        self.y_lo, self.y_hi = y_range

    def px(self, t: float) -> float:
        span = (self.t_hi - self.t_lo) or 1.0
        return self.x0 + (t - self.t_lo) / span * self.w

    def py(self, v: float) -> float:
        span = (self.y_hi - self.y_lo) or 1.0
        v = min(max(v, self.y_lo), self.y_hi)
        return self.y0 + self.h - (v - self.y_lo) / span * self.h


def _phase_spans(trace: Trace) -> List[Tuple[str, float, float]]:
    spans: List[Tuple[str, float, float]] = []
    if not len(trace):
        return spans
    start = 0
    for k in range(1, len(trace) + 1):
        if k == len(trace) or trace.phase[k] != trace.phase[start]:
            end_t = trace.t[k] if k < len(trace) else trace.t[-1]
            spans.append((trace.phase[start], float(trace.t[start]), float(end_t)))
            start = k
    return spans


def _polyline(dwg, ax: _Axis, t: np.ndarray, v: np.ndarray, colour: str, **extra):
    # thin long traces so the file stays small
    step = max(1, len(t) // 2000)
    points = [(round(ax.px(a), 2), round(ax.py(b), 2)) for a, b in zip(t[::step], v[::step])]
    if len(t) and (len(t) - 1) % step:
        points.append((round(ax.px(t[-1]), 2), round(ax.py(v[-1]), 2)))
    return dwg.polyline(points, fill="none", stroke=colour, stroke_width=1.5, **extra)


def _frame(dwg, ax: _Axis, label: str, ticks: Sequence[float]) -> None:
    dwg.add(dwg.rect((ax.x0, ax.y0), (ax.w, ax.h), fill="none", stroke="#333333"))
    dwg.add(dwg.text(label, insert=(8, ax.y0 - 8), font_size=12, font_family="sans-serif"))
    for v in ticks:
        y = ax.py(v)
        dwg.add(dwg.line(start=(ax.x0 - 4, y), end=(ax.x0, y), stroke="#333333"))
        dwg.add(dwg.text(f"{v:g}", insert=(8, y + 4), font_size=10, font_family="sans-serif"))


def render_trace_svg(
    trace: Trace,
    cfg: SpecConfig,
    title: str = "",
    comparison: Optional[Trace] = None,
    comparison_label: str = "baseline",
) -> str:
    """Frequency and participation panels with shaded I1/I2 bands and phase colouring.

    ``comparison`` is overlaid dashed on both panels; it keeps its own samples on the time axis of ``trace``.
    """
    dwg = svgwrite.Drawing(size=(SVG_WIDTH, SVG_HEIGHT))
    dwg.add(dwg.rect((0, 0), (SVG_WIDTH, SVG_HEIGHT), fill="white"))
    if title:
        dwg.add(dwg.text(title, insert=(MARGIN_L, 22), font_size=15, font_family="sans-serif"))

    t_range = (float(trace.t[0]), float(trace.t[-1])) if len(trace) else (0.0, 1.0)
    plot_w = SVG_WIDTH - MARGIN_L - MARGIN_R
    f_h = (SVG_HEIGHT - MARGIN_T - PANEL_GAP - 40) * 0.65
    u_h = (SVG_HEIGHT - MARGIN_T - PANEL_GAP - 40) * 0.35
    f_hz = trace.f_hz
    shown = [trace.f_hz] + ([comparison.f_hz] if comparison is not None and len(comparison) else [])
    f_lo = min([cfg.c_zone - 0.1] + [float(v.min()) - 0.05 for v in shown if v.size])
    f_hi = max([cfg.f_nom + 0.1] + [float(v.max()) + 0.05 for v in shown if v.size])
    fax = _Axis(MARGIN_L, MARGIN_T, plot_w, f_h, t_range, (f_lo, f_hi))
    uax = _Axis(MARGIN_L, MARGIN_T + f_h + PANEL_GAP, plot_w, u_h, t_range, (0.0, 1.0))

    for phase, a, b in _phase_spans(trace):
        colour = PHASE_COLOURS.get(phase, "#ffffff")
        for ax in (fax, uax):
            dwg.add(dwg.rect((ax.px(a), ax.y0), (max(ax.px(b) - ax.px(a), 0.5), ax.h), fill=colour, stroke="none"))

    for (lo, hi), colour in ((cfg.i1, "#93c5fd"), (cfg.i2, "#86efac")):
        top, bottom = fax.py(hi), fax.py(lo)
        dwg.add(dwg.rect((fax.x0, top), (fax.w, bottom - top), fill=colour, fill_opacity=0.25, stroke="none"))
    y_cz = fax.py(cfg.c_zone)
    dwg.add(dwg.line(start=(fax.x0, y_cz), end=(fax.x0 + fax.w, y_cz), stroke="#dc2626", stroke_dasharray="6,4"))
    dwg.add(dwg.text("containment", insert=(fax.x0 + fax.w - 80, y_cz - 4), font_size=10, fill="#dc2626", font_family="sans-serif"))
    for limit in cfg.stat_lim:
        if f_lo <= limit <= f_hi:
            y = fax.py(limit)
            dwg.add(dwg.line(start=(fax.x0, y), end=(fax.x0 + fax.w, y), stroke="#7c3aed", stroke_dasharray="2,3", class_="statutory"))
    if f_lo <= cfg.stat_lim[0] <= f_hi:
        y_st = fax.py(cfg.stat_lim[0])
        dwg.add(dwg.text("statutory", insert=(fax.x0 + fax.w - 80, y_st - 4), font_size=10, fill="#7c3aed", font_family="sans-serif"))

    if comparison is not None and len(comparison):
        dwg.add(_polyline(dwg, fax, comparison.t, comparison.f_hz, "#6b7280", stroke_dasharray="5,3", class_="comparison"))
        dwg.add(_polyline(dwg, uax, comparison.t, comparison.u, "#6b7280", stroke_dasharray="5,3", class_="comparison"))
        dwg.add(dwg.text(f"dashed: {comparison_label}", insert=(fax.x0 + 8, fax.y0 + 14), font_size=10, fill="#6b7280", font_family="sans-serif"))

    if len(trace):
        dwg.add(_polyline(dwg, fax, trace.t, f_hz, "#1d4ed8"))
        dwg.add(_polyline(dwg, uax, trace.t, trace.u, "#b45309"))

    f_ticks = [v for v in np.arange(np.ceil(f_lo * 10) / 10, f_hi, 0.2)]
    _frame(dwg, fax, "frequency [Hz]", f_ticks)
    _frame(dwg, uax, "participation", (0.0, 0.5, 1.0))
    for i in range(6):
        t = t_range[0] + (t_range[1] - t_range[0]) * i / 5
        x = uax.px(t)
        dwg.add(dwg.text(f"{t:.0f} s", insert=(x - 10, uax.y0 + uax.h + 16), font_size=10, font_family="sans-serif"))
    return dwg.tostring()


def write_trace_svg(
    path: str | os.PathLike,
    trace: Trace,
    cfg: SpecConfig,
    title: str = "",
    comparison: Optional[Trace] = None,
    comparison_label: str = "baseline",
):
    p = write_text(path, render_trace_svg(trace, cfg, title, comparison, comparison_label))
    logger.info("plot_written path=%s", p, extra={"path": str(p)})
    return p


__all__ = ["PHASE_COLOURS", "render_trace_svg", "write_trace_svg"]
