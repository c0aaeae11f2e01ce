"""
Run command: simulate a swimmer scenario and write its trace, metrics and plot.
"""

import logging
import os
from typing import Tuple

from ..backend.swimmer import SimulationTrace, SwimMetrics, run_simulation, trace_metrics
from ..backend.trace_io import write_metrics, write_trace
from ..config import RunConfig, swimmer_config
from ..ui.plots import emit_plot


logger = logging.getLogger(__name__)


def cmd_run(config: RunConfig, output_dir: str) -> Tuple[SimulationTrace, SwimMetrics]:
    """
    Simulate the configured swimmer.

    Writes <scenario>_trace.csv, <scenario>_metrics.csv and
    <scenario>_centerline.svg into output_dir.

    Returns:
        (trace, metrics)
    """
    swimmer = swimmer_config(config)
    logger.info("run %s: %s mode, %d steps of %g", config.scenario, swimmer.mode,
                swimmer.n_steps, swimmer.dt)
    trace = run_simulation(swimmer)
    metrics = trace_metrics(trace)

    prefix = os.path.join(output_dir, config.scenario)
    write_trace(trace, f"{prefix}_trace.csv")
    write_metrics(metrics, trace.status, f"{prefix}_metrics.csv")
    emit_plot(trace, f"{prefix}_centerline.svg")
    return trace, metrics
