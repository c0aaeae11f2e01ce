"""
Plot rendering: static SVG figures for traces and convergence reports.
Uses the matplotlib Figure API directly, no pyplot state.
"""

import logging
import os
from typing import Union

import matplotlib
from matplotlib.figure import Figure
import numpy as np

from ..backend.errors import EmptyTrace, TraceIOError
from ..backend.report import VerificationReport
from ..backend.swimmer import SimulationTrace
from .theme import COLORS, FIGURE_SIZE, PLANES, SERIES_COLORS, plot_style


logger = logging.getLogger(__name__)

MAX_TRACE_LINES = 8


def _selected_frames(trace: SimulationTrace, max_lines: int):
    n = len(trace.frames)
    if n <= max_lines:
        return trace.frames
    picks = np.unique(np.linspace(0, n - 1, max_lines).round().astype(int))
    return [trace.frames[i] for i in picks]


def trace_figure(trace: SimulationTrace, plane: str = "xz",
                 max_lines: int = MAX_TRACE_LINES) -> Figure:
    """
    Centerline polylines at evenly spaced recorded times, projected on a plane.

    Raises:
        EmptyTrace: no frames to draw
    """
    if not trace.frames:
        raise EmptyTrace("cannot plot a trace without frames")
    if plane not in PLANES:
        raise ValueError(f"plane must be one of {sorted(PLANES)}")
    i, j = PLANES[plane]

    fig = Figure(figsize=FIGURE_SIZE)
    ax = fig.add_subplot()
    frames = _selected_frames(trace, max_lines)
    for k, frame in enumerate(frames):
        color = COLORS['initial'] if k == 0 and len(frames) > 1 else COLORS['centerline']
        ax.plot(frame.positions[:, i], frame.positions[:, j], color=color,
                label=f"t = {frame.time:.4g}")
    base = frames[-1].positions[0]
    ax.scatter([base[i]], [base[j]], color=COLORS['head'], zorder=3)
    ax.set_xlabel(plane[0])
    ax.set_ylabel(plane[1])
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(f"centerline ({trace.status})")
    return fig


def report_figure(report: VerificationReport) -> Figure:
    """
    Log-log error against spacing for every convergence series, with a
    reference line of the expected slope through the finest point.

    Raises:
        EmptyTrace: the report carries no convergence data
    """
    if not report.convergence:
        raise EmptyTrace("report has no convergence series to plot")

    fig = Figure(figsize=FIGURE_SIZE)
    ax = fig.add_subplot()
    for k, series in enumerate(report.convergence):
        ax.loglog(series.spacing, series.errors, marker="o",
                  color=SERIES_COLORS[k % len(SERIES_COLORS)],
                  label=f"{series.name} (order {series.observed_order():.2f})")

    first = report.convergence[0]
    h = np.asarray(first.spacing, dtype=float)
    anchor = int(np.argmin(h))
    ref = first.errors[anchor] * (h / h[anchor]) ** first.expected_order
    ax.loglog(h, ref, linestyle="--", color=COLORS['reference'])
    ax.annotate(f"slope {first.expected_order:g}", xy=(h[anchor], ref[anchor]),
                xytext=(4, -12), textcoords="offset points", color=COLORS['reference'])
    ax.set_xlabel("grid spacing")
    ax.set_ylabel("max residual")
    ax.legend(loc="upper left")
    return fig


def emit_plot(source: Union[SimulationTrace, VerificationReport], path: str,
              plane: str = "xz") -> str:
    """
    Write a self-contained SVG for a trace or a verification report.

    Args:
        source: SimulationTrace (centerlines) or VerificationReport (convergence)
        path: Output .svg path
        plane: Projection plane for traces

    Returns:
        The path written
    """
    with matplotlib.rc_context(plot_style()):
        if isinstance(source, SimulationTrace):
            fig = trace_figure(source, plane)
        else:
            fig = report_figure(source)
        try:
            parent = os.path.dirname(path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as e:
            raise TraceIOError(f"cannot write {path}: {e}") from e
    logger.info("wrote %s", path)
    return path
