"""
Stiffness benchmark: largest stable explicit step of both steppers.
"""

import logging
import os
import time
from typing import Optional

from joblib import Parallel, delayed

from ..backend.rod_dynamics import (
    STEPPERS,
    StiffnessScenario,
    full_state_from_rod_state,
    reference_stiff_scenario,
    stable_step_search,
    step_full_numeric,
    step_semi_analytical,
)
from ..backend.report import StiffnessReport
from ..backend.trace_io import write_stiffness_report
from ..config import RunConfig, rod_parameters
from .verify import worker_count


logger = logging.getLogger(__name__)

THROUGHPUT_STEPS = 200
REQUIRED_STEP_RATIO = 1e3


def bench_scenario(config: RunConfig) -> StiffnessScenario:
    """The stiff rod described by a config."""
    scenario = reference_stiff_scenario(rod_parameters(config), n_nodes=config.n_nodes,
                                        length=config.length, amplitude=config.bench_amplitude,
                                        seed=config.seed)
    scenario.name = config.scenario
    return scenario


def throughput(stepper: str, scenario: StiffnessScenario, dt: float,
               n_steps: int = THROUGHPUT_STEPS) -> float:
    """Wall-clock steps per second at the given step."""
    if stepper == "semi-analytical":
        state, step = scenario.state.copy(), step_semi_analytical
    else:
        state, step = full_state_from_rod_state(scenario.state), step_full_numeric
    start = time.perf_counter()
    for _ in range(n_steps):
        state = step(state, scenario.loads, scenario.params, dt)
    return n_steps / max(time.perf_counter() - start, 1e-12)


def cmd_bench_stiffness(config: RunConfig, output_dir: Optional[str] = None,
                        n_jobs: Optional[int] = None) -> StiffnessReport:
    """
    Run stable_step_search for both steppers on the configured stiff rod.

    Args:
        config: Benchmark configuration (rod, dt_min/dt_max, stability_window)
        output_dir: When given, <scenario>_stiffness.csv goes here
        n_jobs: Worker count, default from COSSERAT_KIN_THREADS

    Returns:
        StiffnessReport with both dt_max values; throughput is logged only.
        report.passed is False when the ratio is below REQUIRED_STEP_RATIO.

    Raises:
        NoStableStep: propagated from the search
    """
    scenario = bench_scenario(config)
    n_jobs = min(worker_count() if n_jobs is None else n_jobs, len(STEPPERS))
    logger.info("bench-stiffness %s: %d nodes, window %d, range [%g, %g]", scenario.name,
                scenario.state.n_nodes, config.stability_window, config.dt_min, config.dt_max)

    found = Parallel(n_jobs=n_jobs)(
        delayed(stable_step_search)(stepper, scenario, (config.dt_min, config.dt_max),
                                    config.stability_window)
        for stepper in STEPPERS
    )
    report = StiffnessReport(scenario=scenario.name, dt_max=dict(zip(STEPPERS, found)),
                             required_ratio=REQUIRED_STEP_RATIO)

    for stepper in STEPPERS:
        rate = throughput(stepper, scenario, report.dt_max[stepper])
        report.steps_per_second[stepper] = rate
        logger.info("%s: dt_max %g, %.0f steps/s, %.4g simulated s per wall s",
                    stepper, report.dt_max[stepper], rate, rate * report.dt_max[stepper])
    logger.info("dt_max ratio %.4g", report.ratio)
    if not report.passed:
        logger.warning("dt_max ratio %.4g is below the required %g", report.ratio,
                       report.required_ratio)

    if output_dir is not None:
        write_stiffness_report(report, os.path.join(output_dir, f"{config.scenario}_stiffness.csv"))
    return report
