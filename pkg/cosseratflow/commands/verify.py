"""
Verify command: the property suite of every backend module.
Fixed seeds throughout; a failing check is a report entry, never an exception.
"""

import logging
import os
from typing import Callable, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from ..backend import kinematics, stokes_flow
from ..backend.errors import ConfigValidationError
from ..backend.report import CheckResult, ConvergenceSeries, VerificationReport
from ..backend.rod_dynamics import RodParameters
from ..backend.swimmer import SwimmerConfig, coupled_step, init_swimmer, rest_parameters
from ..backend.trace_io import write_report
from ..ui.plots import emit_plot


logger = logging.getLogger(__name__)

THREADS_ENV = "COSSERAT_KIN_THREADS"
SEED = 20240611
FD_STEP = 1e-6
RESIDUAL_GRIDS = (32, 64, 128)
KERNEL_RADII = (0.0, 0.1, 1.0, 2.0, 10.0, 1e3)     # in units of epsilon
EPSILON = 0.05


def worker_count() -> int:
    """Worker cap from the environment, default all cores."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        count = int(raw)
    except ValueError:
        count = 0
    if count < 1:
        raise ConfigValidationError(THREADS_ENV, "must be a positive integer")
    return count


def _relative(a: float, b: float) -> float:
    scale = max(abs(b), abs(a))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def check_jacobian_identity() -> CheckResult:
    """det of the finite-difference Jacobian of p_dot -> A(p) p_dot against the closed form."""
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        direction = rng.standard_normal(3)
        p = rng.uniform(0.1, 3.0) * direction / np.linalg.norm(direction)
        base = rng.standard_normal(3)
        f0 = kinematics.body_rate_from_p(p, base)
        jac = np.column_stack([
            (kinematics.body_rate_from_p(p, base + FD_STEP * e) - f0) / FD_STEP
            for e in np.eye(3)
        ])
        # det A(p) = 2(1 - cos|p|)/|p|^2, the magnitude of the closed form
        worst = max(worst, abs(np.linalg.det(jac) + float(kinematics.jacobian_det(p))))
    return CheckResult("jacobian-identity", worst, 1e-6, worst <= 1e-6)


def _field_pairs(n_pairs: int = 5) -> List[Tuple]:
    rng = np.random.default_rng(SEED + 1)
    return [(kinematics.TrigonometricField.random(rng, amplitude=0.3),
             kinematics.TrigonometricField.random(rng, amplitude=0.3)) for _ in range(n_pairs)]


def residual_convergence() -> Tuple[List[CheckResult], List[ConvergenceSeries]]:
    """Compatibility residuals of the general solution on refined grids."""
    pairs = _field_pairs()
    spacing, h1_max, h2_max = [], [], []
    for n in RESIDUAL_GRIDS:
        grid = kinematics.GridSpec(n_s=n, n_t=n)
        worst1 = worst2 = 0.0
        for p_field, q_field in pairs:
            fields = kinematics.fields_from_parameterization(p_field, q_field, grid)
            h1, h2 = kinematics.kinematic_residuals(fields, grid)
            worst1 = max(worst1, float(np.max(np.linalg.norm(h1, axis=-1))))
            worst2 = max(worst2, float(np.max(np.linalg.norm(h2, axis=-1))))
        spacing.append(grid.ds)
        h1_max.append(worst1)
        h2_max.append(worst2)

    series = [ConvergenceSeries("h1", np.array(spacing), np.array(h1_max)),
              ConvergenceSeries("h2", np.array(spacing), np.array(h2_max))]
    checks = []
    for s in series:
        order = s.observed_order()
        checks.append(CheckResult(f"residual-order-{s.name}", order, 0.3, abs(order - 2.0) <= 0.3))
        checks.append(CheckResult(f"residual-finest-{s.name}", float(s.errors[-1]), 1e-4,
                                  float(s.errors[-1]) < 1e-4))
    return checks, series


def check_recovery() -> CheckResult:
    """Fields from known (p, q) on a 50 x 50 grid are reproduced by the recovered pair."""
    rng = np.random.default_rng(SEED + 2)
    p_field = kinematics.TrigonometricField.random(rng, amplitude=0.3, offset=[0.2, -0.1, 0.3])
    q_field = kinematics.TrigonometricField.random(rng, amplitude=0.3)
    grid = kinematics.GridSpec(n_s=50, n_t=50)
    fields = kinematics.fields_from_parameterization(p_field, q_field, grid)
    result = kinematics.recover_parameterization(fields, grid, p_field.value(0.0, 0.0),
                                                 q_field.value(0.0, 0.0))
    return CheckResult("recovery-rms", result.rms_error, 1e-6, result.rms_error <= 1e-6,
                       detail=f"path gap {result.path_discrepancy:.3e}")


def check_blob_mass() -> CheckResult:
    error = abs(stokes_flow.blob_mass(EPSILON) - 1.0)
    return CheckResult("blob-mass", error, 1e-8, error <= 1e-8)


def check_kernel_fidelity() -> CheckResult:
    """Closed-form kernels against quadrature of their defining integrals."""
    worst = 0.0
    for x in KERNEL_RADII:
        closed = stokes_flow.blob_kernels(x * EPSILON, EPSILON)
        reference = stokes_flow.kernels_by_quadrature(x * EPSILON, EPSILON)
        for a, b in zip(closed, reference):
            worst = max(worst, _relative(float(a), float(b)))
    return CheckResult("kernel-fidelity", worst, 1e-10, worst <= 1e-10)


def check_far_field() -> CheckResult:
    """Regularized velocity at 1000 eps against the singular Stokeslet."""
    fp = stokes_flow.FluidParams(mu=1.0, epsilon=EPSILON)
    force = np.array([0.3, -0.5, 0.8])
    sources = stokes_flow.PointForceSet(np.zeros((1, 3)), force[None, :])
    x = 1e3 * EPSILON * np.array([0.6, 0.0, 0.8])
    r = np.linalg.norm(x)
    singular = (force / r + np.dot(force, x) * x / r ** 3) / (8.0 * np.pi * fp.mu)
    error = float(np.linalg.norm(stokes_flow.velocity_at(x, sources, fp) - singular)
                  / np.linalg.norm(singular))
    return CheckResult("far-field-stokeslet", error, 1e-3, error <= 1e-3)


def divergence_checks() -> List[CheckResult]:
    """Finite-difference divergence of a random five-Stokeslet field."""
    rng = np.random.default_rng(SEED + 3)
    fp = stokes_flow.FluidParams(mu=1.0, epsilon=EPSILON)
    sources = stokes_flow.PointForceSet(rng.uniform(-0.8, 0.8, size=(5, 3)),
                                        rng.standard_normal((5, 3)))
    box = stokes_flow.ProbeBox()
    steps = np.array([0.1, 0.05, 0.025]) * EPSILON
    values = np.array([stokes_flow.divergence_residual(sources, fp, box, h=h) for h in steps])
    order = float(np.polyfit(np.log(steps), np.log(values), 1)[0])
    fine = stokes_flow.divergence_residual(sources, fp, box)
    return [CheckResult("divergence-order", order, 0.3, abs(order - 2.0) <= 0.3),
            CheckResult("divergence", fine, 1e-6, fine <= 1e-6)]


def mobility_checks() -> List[CheckResult]:
    """Symmetry, positivity and solve round trip for 50 random points."""
    rng = np.random.default_rng(SEED + 4)
    fp = stokes_flow.FluidParams(mu=1.0, epsilon=EPSILON)
    points = rng.uniform(0.0, 1.0, size=(50, 3))
    mobility = stokes_flow.assemble_mobility(points, fp)
    norm = float(np.linalg.norm(mobility, 2))

    asym = float(np.max(np.abs(mobility - mobility.T))) / norm
    min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (mobility + mobility.T)))) / norm

    velocities = mobility @ rng.standard_normal(150)
    solve = stokes_flow.solve_forces_for_velocities(mobility, velocities)
    return [CheckResult("mobility-symmetry", asym, 1e-12, asym <= 1e-12),
            CheckResult("mobility-eigenvalues", min_eig, -1e-10, min_eig >= -1e-10),
            CheckResult("mobility-roundtrip", solve.residual, 1e-10, solve.residual <= 1e-10,
                        detail=solve.status)]


def _small_swimmer(**overrides) -> SwimmerConfig:
    values = dict(n_nodes=11, n_steps=0, dt=1e-4,
                  rod=RodParameters(rho=1.0, area=1e-2, inertia=[1e-4, 1e-4, 2e-4],
                                    bend_stiffness=[1.0, 1.0, 1.0],
                                    shear_stiffness=[100.0, 100.0, 100.0],
                                    boundary="free-free"),
                  fluid=stokes_flow.FluidParams(mu=1.0, epsilon=0.1))
    values.update(overrides)
    return SwimmerConfig(**values)


def check_swimmer_rest() -> CheckResult:
    """An unpowered swimmer at its rest shape does not move."""
    config = _small_swimmer(motor_torque=0.0)
    params = rest_parameters(config)
    state = init_swimmer(config)
    start = state.copy()
    for _ in range(5):
        state = coupled_step(state, config, params)
    drift = float(max(np.max(np.abs(state.p - start.p)), np.max(np.abs(state.q - start.q)),
                      np.max(np.abs(state.r0 - start.r0))))
    return CheckResult("swimmer-rest", drift, 1e-12, drift <= 1e-12)


def check_torque_reversal() -> CheckResult:
    """Reversing the motor torque reverses the roll of the base."""
    rolls = []
    for torque in (1.0, -1.0):
        config = _small_swimmer(motor_torque=torque, head_radius=0.2)
        state = coupled_step(init_swimmer(config), config)
        rolls.append(float(state.omega[0, 2]))
    passed = rolls[0] * rolls[1] < 0.0 and np.isclose(rolls[0], -rolls[1], rtol=1e-6)
    return CheckResult("torque-reversal", rolls[0] * rolls[1], 0.0, bool(passed),
                       detail=f"roll rates {rolls[0]:.6g} / {rolls[1]:.6g}")


def _run_check(check: Callable):
    try:
        return check()
    except Exception as e:      # a crash is a failed entry
        name = check.__name__.replace("check_", "").replace("_", "-")
        logger.warning("check %s raised %s: %s", name, type(e).__name__, e)
        return CheckResult(name, float("nan"), float("nan"), False,
                           detail=f"{type(e).__name__}: {e}")


CHECKS: Tuple[Callable, ...] = (
    check_jacobian_identity,
    residual_convergence,
    check_recovery,
    check_blob_mass,
    check_kernel_fidelity,
    check_far_field,
    divergence_checks,
    mobility_checks,
    check_swimmer_rest,
    check_torque_reversal,
)


def cmd_verify(output_dir: Optional[str] = None, n_jobs: Optional[int] = None) -> VerificationReport:
    """
    Run the full property suite.

    Args:
        output_dir: When given, verify_report.csv and verify_convergence.svg go here
        n_jobs: Worker count, default from COSSERAT_KIN_THREADS

    Returns:
        VerificationReport, checks in fixed order
    """
    n_jobs = worker_count() if n_jobs is None else n_jobs
    logger.info("verify: %d checks on %d worker(s)", len(CHECKS), n_jobs)
    outcomes = Parallel(n_jobs=n_jobs)(delayed(_run_check)(check) for check in CHECKS)

    report = VerificationReport()
    for outcome in outcomes:
        if isinstance(outcome, CheckResult):
            report.checks.append(outcome)
        elif isinstance(outcome, tuple):
            checks, series = outcome
            report.checks.extend(checks)
            report.convergence.extend(series)
        else:
            report.checks.extend(outcome)

    for check in report.checks:
        logger.info("%-24s %-4s measured %.6g (tol %.3g)", check.name,
                    "ok" if check.passed else "FAIL", check.measured, check.tolerance)

    if output_dir is not None:
        write_report(report, os.path.join(output_dir, "verify_report.csv"))
        if report.convergence:
            emit_plot(report, os.path.join(output_dir, "verify_convergence.svg"))
    return report
