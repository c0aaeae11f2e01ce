"""
Trace I/O: CSV read/write for trajectories and reports.
Every float goes out at 17 significant digits so read-back is lossless.
"""

import logging
import os
from typing import Dict, List

import numpy as np
import pandas as pd

from .errors import TraceIOError
from .report import StiffnessReport, VerificationReport
from .swimmer import SimulationTrace, SwimMetrics


logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["step", "time", "node", "x", "y", "z", "qx", "qy", "qz", "px", "py", "pz"]
REPORT_COLUMNS = ["check", "measured", "tolerance", "passed", "detail"]
FLOAT_FORMAT = "%.17g"


def trace_to_frame(trace: SimulationTrace) -> pd.DataFrame:
    """One row per (recorded step, node)."""
    if not trace.frames:
        return pd.DataFrame(columns=TRACE_COLUMNS)

    blocks = []
    for frame in trace.frames:
        n = frame.positions.shape[0]
        block = pd.DataFrame(np.hstack([frame.positions, frame.q, frame.p]),
                             columns=TRACE_COLUMNS[3:])
        block.insert(0, "node", np.arange(n))
        block.insert(0, "time", np.full(n, frame.time))
        block.insert(0, "step", np.full(n, frame.step))
        blocks.append(block)
    return pd.concat(blocks, ignore_index=True)


def write_table(df: pd.DataFrame, path: str) -> str:
    """
    Write a DataFrame as CSV, creating the parent directory.

    Raises:
        TraceIOError: the file could not be written
    """
    try:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise TraceIOError(f"cannot write {path}: {e}") from e
    logger.info("wrote %s (%d rows)", path, len(df))
    return path


def write_trace(trace: SimulationTrace, path: str) -> str:
    """
    Write a trace with header step,time,node,x,y,z,qx,qy,qz,px,py,pz.

    Args:
        trace: Simulation trace; an empty trace gives a header-only file
        path: Output CSV path

    Returns:
        The path written
    """
    return write_table(trace_to_frame(trace), path)


def read_trace(path: str) -> pd.DataFrame:
    """Load a trace CSV with exact float round trip."""
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise TraceIOError(f"cannot read {path}: {e}") from e


def trace_positions(df: pd.DataFrame) -> Dict[int, np.ndarray]:
    """Centerline positions per recorded step from a loaded trace."""
    return {int(step): group.sort_values("node")[["x", "y", "z"]].to_numpy()
            for step, group in df.groupby("step")}


def report_to_frame(report: VerificationReport) -> pd.DataFrame:
    rows: List[Dict] = [
        {"check": c.name, "measured": c.measured, "tolerance": c.tolerance,
         "passed": c.passed, "detail": c.detail}
        for c in report.checks
    ]
    rows.append({"check": "overall", "measured": float(len(report.failed_checks())),
                 "tolerance": 0.0, "passed": report.passed, "detail": report.status})
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_report(report: VerificationReport, path: str) -> str:
    """Verification report CSV; the last row carries the overall status."""
    return write_table(report_to_frame(report), path)


def write_metrics(metrics: SwimMetrics, status: str, path: str) -> str:
    """Single-row CSV of swim metrics plus the run status."""
    row = {
        "dx": metrics.displacement[0],
        "dy": metrics.displacement[1],
        "dz": metrics.displacement[2],
        "distance": metrics.distance,
        "duration": metrics.duration,
        "mean_speed": metrics.mean_speed,
        "base_roll_rate": metrics.base_roll_rate,
        "speed_per_torque": metrics.speed_per_torque,
        "axis_angle": metrics.axis_angle,
        "status": status,
    }
    return write_table(pd.DataFrame([row]), path)


def write_stiffness_report(report: StiffnessReport, path: str) -> str:
    """Both dt_max values and their ratio; throughput is logged, not written."""
    row = {
        "scenario": report.scenario,
        "dt_max_semi_analytical": report.dt_max["semi-analytical"],
        "dt_max_full_numeric": report.dt_max["full-numeric"],
        "ratio": report.ratio,
    }
    return write_table(pd.DataFrame([row]), path)
