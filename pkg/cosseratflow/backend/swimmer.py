"""
Swimmer simulation: flagellated microswimmer coupled to regularized Stokes flow.
Scenario construction, motor control, the coupled step and trajectory metrics.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import block_diag

from .errors import CosseratError, EmptyTrace, NumericalBlowup
from .kinematics import (
    dexp_matrix,
    log_rotation,
    phi_inverse,
    rebase_rotation_vector,
    rotation_from_p,
)
from .rod_dynamics import (
    ExternalLoads,
    RodParameters,
    RodState,
    BLOWUP_THRESHOLD,
    constitutive_forces,
    elastic_rate_operator,
    reconstruct_centerline,
    rod_state_from_frames,
    spatial_derivative,
    step_semi_analytical,
    strains,
)
from .stokes_flow import (
    FluidParams,
    PointForceSet,
    angular_velocity_at,
    assemble_load_mobility,
    assemble_mobility,
    rodlet_velocity_at,
    solve_forces_for_velocities,
    velocity_at,
)


logger = logging.getLogger(__name__)

MODES = ("overdamped", "inertial")
MAX_MOTOR_FACTOR = 2.0


def _default_rod() -> RodParameters:
    return RodParameters(rho=1.0, area=1e-2, inertia=[1e-4, 1e-4, 2e-4],
                         bend_stiffness=[1.0, 1.0, 1.0], shear_stiffness=[100.0, 100.0, 100.0],
                         boundary="free-free")


@dataclass
class SwimmerConfig:
    """Scenario for one flagellated swimmer."""
    length: float = 1.0
    n_nodes: int = 21
    rod: RodParameters = field(default_factory=_default_rod)
    helix_amplitude: float = 0.05
    helix_wavelength: float = 1.0
    fluid: FluidParams = field(default_factory=lambda: FluidParams(mu=1.0, epsilon=0.05))
    motor_torque: float = 2.0
    head_radius: float = 0.1
    mode: str = "overdamped"
    chemotaxis_gain: float = 0.0
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initial_noise: float = 0.0
    dt: float = 5e-5
    n_steps: int = 1000
    record_stride: int = 10
    seed: int = 0

    def __post_init__(self):
        self.gradient = np.asarray(self.gradient, dtype=float).reshape(3)
        self.base_rotation = np.asarray(self.base_rotation, dtype=float).reshape(3)
        if self.length <= 0 or self.dt <= 0:
            raise ValueError("length and dt must be > 0")
        if self.n_nodes < 3:
            raise ValueError("n_nodes must be >= 3")
        if self.n_steps < 0 or self.record_stride < 1:
            raise ValueError("n_steps must be >= 0 and record_stride >= 1")
        if self.helix_amplitude < 0 or self.helix_wavelength <= 0 or self.head_radius < 0:
            raise ValueError("helix amplitude and head radius must be >= 0, wavelength > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def ds(self) -> float:
        return self.length / (self.n_nodes - 1)

    @cached_property
    def rest_rod(self) -> RodParameters:
        """rest_parameters of this scenario, computed on first use."""
        return rest_parameters(self)


@dataclass
class TraceFrame:
    """One recorded step of a simulation."""
    step: int
    time: float
    positions: np.ndarray
    q: np.ndarray
    p: np.ndarray
    base_frame: np.ndarray
    base_omega: np.ndarray
    motor_torque: np.ndarray
    net_force: np.ndarray


@dataclass
class SimulationTrace:
    """Recorded frames of a run plus how the run ended."""
    frames: List[TraceFrame] = field(default_factory=list)
    stride: int = 1
    status: str = "completed"

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class SwimMetrics:
    """Summary of a trajectory."""
    displacement: np.ndarray
    distance: float
    duration: float
    mean_speed: float
    base_roll_rate: float
    speed_per_torque: float
    axis_angle: float = 0.0     # degrees between displacement and the initial end-to-end axis


def helix_strains(amplitude: float, wavelength: float) -> np.ndarray:
    """
    Constant body-frame Darboux vector (k, 0, tau) of a helix with the given
    radius and pitch; zero amplitude gives a straight rod.
    """
    if amplitude == 0.0:
        return np.zeros(3)
    b = wavelength / (2.0 * np.pi)
    denom = amplitude ** 2 + b ** 2
    return np.array([amplitude / denom, 0.0, b / denom])


def _constant_strain_curve(kappa_bar: np.ndarray, nu_bar: np.ndarray,
                           s: np.ndarray) -> np.ndarray:
    """Centerline of a rod with constant strains, r(s) = s A(s kappa)^T nu."""
    transposed = np.swapaxes(dexp_matrix(s[:, None] * kappa_bar), -1, -2)
    return s[:, None] * np.einsum("nij,j->ni", transposed, nu_bar)


def init_swimmer(config: SwimmerConfig) -> RodState:
    """
    Rod state realizing the intrinsic helix at rest.

    Frames follow R(s) = R_base exp(s [kappa_bar]) with rotation vectors kept
    at magnitude <= pi, and q reproduces the analytic helix centerline.
    """
    s = np.linspace(0.0, config.length, config.n_nodes)
    kappa_bar = helix_strains(config.helix_amplitude, config.helix_wavelength)
    base = rotation_from_p(config.base_rotation)

    frames = base @ rotation_from_p(s[:, None] * kappa_bar)
    p = log_rotation(frames)
    if config.initial_noise > 0:
        rng = np.random.default_rng(config.seed)
        p = rebase_rotation_vector(p + config.initial_noise * rng.standard_normal(p.shape))

    r = _constant_strain_curve(kappa_bar, config.rod.nu_ref, s) @ base.T
    return rod_state_from_frames(p, r, config.ds)


def rest_parameters(config: SwimmerConfig) -> RodParameters:
    """
    Rod parameters whose reference strains equal the discrete strains of the
    noise-free initial helix, so the unperturbed helix is exactly at rest.
    """
    relaxed = init_swimmer(replace(config, initial_noise=0.0))
    kappa, nu = strains(relaxed)
    return replace(config.rod, kappa_ref=kappa, nu_ref=nu)


def motor_torque(t: float, gradient: np.ndarray, config: SwimmerConfig,
                 base_frame: np.ndarray) -> np.ndarray:
    """
    Motor torque on the flagellum base, along the base director d3.

    The heading is -d3 (the head leads). With chemotaxis the magnitude is
    scaled by 1 + gain (grad c . heading), clamped to [0, 2] times nominal.
    The torque does not depend on t.
    """
    d3 = np.asarray(base_frame)[:, 2]
    factor = 1.0
    if config.chemotaxis_gain != 0.0:
        heading = -d3
        factor = 1.0 + config.chemotaxis_gain * float(np.dot(gradient, heading))
        factor = float(np.clip(factor, 0.0, MAX_MOTOR_FACTOR))
    return config.motor_torque * factor * d3


def elastic_loads(state: RodState, params: RodParameters) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Lab-frame elastic force and torque densities with free ends.

    Returns:
        (force, torque, frames)
    """
    kappa, nu = strains(state)
    m, n = constitutive_forces(kappa, nu, params)
    m[0] = m[-1] = 0.0
    n[0] = n[-1] = 0.0
    force = spatial_derivative(n, state.ds) + np.cross(kappa, n)
    torque = spatial_derivative(m, state.ds) + np.cross(kappa, m) + np.cross(nu, n)
    frames = rotation_from_p(state.p)
    return (np.einsum("nij,nj->ni", frames, force),
            np.einsum("nij,nj->ni", frames, torque),
            frames)


def fluid_sources(state: RodState, config: SwimmerConfig, params: RodParameters,
                  positions: np.ndarray) -> Tuple[PointForceSet, np.ndarray]:
    """
    Point forces and torques the swimmer exerts on the fluid.

    Nodes carry their elastic loads times ds; the base also carries the motor
    torque and the head blob at the base carries its reaction.

    Returns:
        (sources, motor torque)
    """
    force, torque, frames = elastic_loads(state, params)
    forces = force * state.ds
    torques = torque * state.ds
    motor = motor_torque(state.t, config.gradient, config, frames[0])
    torques[0] += motor

    radii = np.full(state.n_nodes, config.fluid.epsilon)
    points = positions
    if config.head_radius > 0:
        points = np.vstack([positions, positions[:1]])
        forces = np.vstack([forces, np.zeros((1, 3))])
        torques = np.vstack([torques, -motor[None, :]])
        radii = np.append(radii, config.head_radius)
    return PointForceSet(points, forces, torques, radii), motor


def node_velocities(sources: PointForceSet, positions: np.ndarray,
                    fluid: FluidParams) -> Tuple[np.ndarray, np.ndarray]:
    """Fluid velocity and rotation rate at the rod nodes."""
    u = velocity_at(positions, sources, fluid) + rodlet_velocity_at(positions, sources, fluid)
    w = angular_velocity_at(positions, sources, fluid)
    return u, w


def body_mobility(positions: np.ndarray, frames: np.ndarray, fluid: FluidParams,
                  ds: float) -> np.ndarray:
    """
    Mobility from body-frame torque and force densities on the rod nodes to
    the body-frame rates (omega, v) of the nodes, shape (6N, 6N).
    """
    rotate = block_diag(*frames, *frames)
    return ds * (rotate.T @ assemble_load_mobility(positions, fluid) @ rotate)


def _overdamped_step(state: RodState, config: SwimmerConfig,
                     params: RodParameters) -> Tuple[RodState, np.ndarray, np.ndarray]:
    positions, frames = reconstruct_centerline(state)
    sources, motor = fluid_sources(state, config, params, positions)
    u, w = node_velocities(sources, positions, config.fluid)
    explicit = np.concatenate([np.einsum("nji,nj->ni", frames, w).ravel(),
                               np.einsum("nji,nj->ni", frames, u).ravel()])

    # elastic loads at the end of the step, linearized in the new rates
    dt = config.dt
    kappa, nu = strains(state)
    stiffness = elastic_rate_operator(kappa, nu, frames, params, state.ds,
                                      boundary="free-free").toarray()
    mobility = body_mobility(positions, frames, config.fluid, state.ds)
    try:
        rates = np.linalg.solve(np.eye(explicit.size) - dt * (mobility @ stiffness), explicit)
    except np.linalg.LinAlgError as e:
        raise NumericalBlowup(f"singular overdamped system at t = {state.t:g}") from e

    n = state.n_nodes
    omega = rates[:3 * n].reshape(n, 3)
    v = rates[3 * n:].reshape(n, 3)
    p = rebase_rotation_vector(state.p + dt * phi_inverse(omega, state.p))
    q = state.q + dt * (np.cross(state.q, omega) - v)
    r0 = state.r0 + dt * (frames[0] @ v[0])
    for arr in (p, q, r0):
        if not np.all(np.isfinite(arr)) or np.max(np.abs(arr)) > BLOWUP_THRESHOLD:
            raise NumericalBlowup("swimmer state left the finite range")

    new_state = RodState(p=p, q=q, omega=omega, v=v, ds=state.ds, r0=r0, t=state.t + dt)
    return new_state, motor, sources.forces.sum(axis=0)


def _inertial_step(state: RodState, config: SwimmerConfig,
                   params: RodParameters) -> Tuple[RodState, np.ndarray, np.ndarray]:
    positions, frames = reconstruct_centerline(state)
    lab_v = np.einsum("nij,nj->ni", frames, state.v)
    mobility = assemble_mobility(positions, config.fluid)
    solve = solve_forces_for_velocities(mobility, lab_v)

    drag = -solve.forces
    loads = ExternalLoads(
        force=np.einsum("nji,nj->ni", frames, drag) / state.ds,
        torque=np.zeros_like(drag),
    )
    motor = motor_torque(state.t, config.gradient, config, frames[0])
    loads.torque[0] = frames[0].T @ motor / state.ds

    new_state = step_semi_analytical(state, loads, params, config.dt)
    return new_state, motor, drag.sum(axis=0)


def coupled_step(state: RodState, config: SwimmerConfig,
                 params: Optional[RodParameters] = None) -> RodState:
    """
    Advance the swimmer by one time step.

    Overdamped mode: elastic and motor loads are handed to the fluid, the
    resulting velocity and rotation rate at each node become the body rates
    (omega = D^T w, v = D^T u), and (p, q) advance with them. The elastic
    loads enter at the end of the step, linearized in the new rates, so the
    stiff elastic modes do not bound dt. Inertial mode: the semi-analytical
    rod step with fluid drag from a mobility solve.

    Args:
        state: Current rod state
        config: Scenario
        params: Rod parameters, default config.rest_rod (computed once per config)

    Raises:
        SingularParameterization, NoConvergence, NumericalBlowup: propagated
    """
    params = config.rest_rod if params is None else params
    return _advance(state, config, params)[0]


def _advance(state: RodState, config: SwimmerConfig,
             params: RodParameters) -> Tuple[RodState, np.ndarray, np.ndarray]:
    if config.mode == "overdamped":
        return _overdamped_step(state, config, params)
    return _inertial_step(state, config, params)


def _frame(step: int, state: RodState, motor: np.ndarray, net_force: np.ndarray) -> TraceFrame:
    positions, frames = reconstruct_centerline(state)
    return TraceFrame(step=step, time=state.t, positions=positions, q=state.q.copy(),
                      p=state.p.copy(), base_frame=frames[0].copy(),
                      base_omega=state.omega[0].copy(), motor_torque=np.asarray(motor, dtype=float),
                      net_force=np.asarray(net_force, dtype=float))


def run_simulation(config: SwimmerConfig) -> SimulationTrace:
    """
    Run n_steps coupled steps, recording every record_stride steps.

    A numerical failure truncates the trace; the status names the failure.
    """
    state = init_swimmer(config)
    params = config.rest_rod
    initial_motor = motor_torque(0.0, config.gradient, config, rotation_from_p(state.p[0]))
    trace = SimulationTrace(frames=[_frame(0, state, initial_motor, np.zeros(3))],
                            stride=config.record_stride)

    for step in range(1, config.n_steps + 1):
        try:
            state, motor, net_force = _advance(state, config, params)
        except CosseratError as e:
            trace.status = f"truncated at step {step}: {type(e).__name__}: {e}"
            logger.warning("simulation %s", trace.status)
            break
        if step % config.record_stride == 0:
            trace.frames.append(_frame(step, state, motor, net_force))

    logger.info("simulation finished: %d frames, status %s", len(trace), trace.status)
    return trace


def trace_metrics(trace: SimulationTrace) -> SwimMetrics:
    """
    Displacement of the centroid, mean speed, base roll rate, speed per unit
    torque and the angle between the displacement and the flagellum axis
    (the end-to-end direction of the first frame, taken as a line).

    Raises:
        EmptyTrace: the trace has no frames
    """
    if not trace.frames:
        raise EmptyTrace("trace has no frames")

    first, last = trace.frames[0], trace.frames[-1]
    displacement = last.positions.mean(axis=0) - first.positions.mean(axis=0)
    distance = float(np.linalg.norm(displacement))
    duration = last.time - first.time
    mean_speed = distance / duration if duration > 0 else 0.0

    moving = trace.frames[1:] or trace.frames
    roll_rate = float(np.mean([f.base_omega[2] for f in moving]))
    torque = float(np.mean([np.linalg.norm(f.motor_torque) for f in trace.frames]))
    speed_per_torque = mean_speed / torque if torque > 0 else 0.0

    axis = first.positions[-1] - first.positions[0]
    scale = distance * float(np.linalg.norm(axis))
    angle = 0.0
    if scale > 0:
        cosine = min(abs(float(displacement @ axis)) / scale, 1.0)
        angle = float(np.degrees(np.arccos(cosine)))
    return SwimMetrics(displacement=displacement, distance=distance, duration=duration,
                       mean_speed=mean_speed, base_roll_rate=roll_rate,
                       speed_per_torque=speed_per_torque, axis_angle=angle)
