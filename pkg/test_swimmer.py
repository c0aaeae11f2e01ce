"""
Tests for the swimmer simulation: scenario construction, motor control,
the coupled step and trajectory metrics.
"""

import os

import numpy as np
import pytest

from cosseratflow.backend import swimmer
from cosseratflow.backend.errors import EmptyTrace
from cosseratflow.backend.kinematics import rotation_from_p
from cosseratflow.backend.rod_dynamics import reconstruct_centerline, strains
from cosseratflow.backend.stokes_flow import FluidParams
from cosseratflow.backend.swimmer import (
    SimulationTrace,
    SwimmerConfig,
    TraceFrame,
    coupled_step,
    helix_strains,
    init_swimmer,
    motor_torque,
    rest_parameters,
    run_simulation,
    trace_metrics,
)
from cosseratflow.config import parse_config, swimmer_config

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")


def small_config(**overrides) -> SwimmerConfig:
    values = dict(n_nodes=11, fluid=FluidParams(mu=1.0, epsilon=0.1), head_radius=0.2,
                  motor_torque=1.0, dt=1e-4, n_steps=20, record_stride=5)
    values.update(overrides)
    return SwimmerConfig(**values)


def test_config_validates():
    with pytest.raises(ValueError):
        small_config(n_nodes=2)
    with pytest.raises(ValueError):
        small_config(mode="ballistic")
    with pytest.raises(ValueError):
        small_config(dt=0.0)


def test_helix_strains():
    np.testing.assert_array_equal(helix_strains(0.0, 1.0), np.zeros(3))
    kappa = helix_strains(0.1, 2.0 * np.pi * 0.1)
    np.testing.assert_allclose(kappa, [5.0, 0.0, 5.0])


def test_init_swimmer_starts_at_origin_with_base_orientation():
    rotation = np.array([0.2, -0.4, 0.3])
    state = init_swimmer(small_config(base_rotation=rotation))
    positions, frames = reconstruct_centerline(state)
    np.testing.assert_allclose(positions[0], 0.0, atol=1e-15)
    np.testing.assert_allclose(frames[0], rotation_from_p(rotation), atol=1e-12)
    assert np.all(np.linalg.norm(state.p, axis=-1) <= np.pi + 1e-9)


def test_init_swimmer_has_the_analytic_helix_radius():
    radius, wavelength = 0.05, 0.5
    kappa_bar = helix_strains(radius, wavelength)
    k, tau = kappa_bar[0], kappa_bar[2]
    assert k / (k ** 2 + tau ** 2) == pytest.approx(radius, rel=1e-12)

    errors, spacing = [], []
    for n in (21, 41, 81):
        config = small_config(n_nodes=n, helix_amplitude=radius, helix_wavelength=wavelength)
        positions, _ = reconstruct_centerline(init_swimmer(config))
        axis = kappa_bar / np.linalg.norm(kappa_bar)
        e1 = np.cross(axis, [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        x, y = positions @ e1, positions @ e2
        # circle through the projected points: x^2 + y^2 = 2 a x + 2 b y + c
        design = np.column_stack([2 * x, 2 * y, np.ones_like(x)])
        (a, b, c), *_ = np.linalg.lstsq(design, x ** 2 + y ** 2, rcond=None)
        errors.append(abs(np.sqrt(c + a ** 2 + b ** 2) - radius))
        spacing.append(config.ds)

    order, _ = np.polyfit(np.log(spacing), np.log(errors), 1)
    assert order == pytest.approx(2.0, abs=0.3)
    assert errors[-1] < 1e-2 * radius


def test_rest_parameters_hold_initial_strains():
    config = small_config()
    params = rest_parameters(config)
    kappa, nu = strains(init_swimmer(config))
    np.testing.assert_array_equal(params.kappa_ref, kappa)
    np.testing.assert_array_equal(params.nu_ref, nu)


def test_motor_torque_follows_base_director():
    config = small_config(motor_torque=2.5)
    frame = rotation_from_p(np.array([0.3, 0.1, -0.2]))
    np.testing.assert_allclose(motor_torque(0.0, np.zeros(3), config, frame), 2.5 * frame[:, 2])


def test_chemotaxis_scales_and_clamps_torque():
    config = small_config(motor_torque=1.0, chemotaxis_gain=10.0)
    frame = np.eye(3)                       # heading is -e3
    up_gradient = np.array([0.0, 0.0, -1.0])
    assert np.linalg.norm(motor_torque(0.0, up_gradient, config, frame)) == pytest.approx(2.0)
    assert np.linalg.norm(motor_torque(0.0, -up_gradient, config, frame)) == 0.0
    weak = small_config(motor_torque=1.0, chemotaxis_gain=0.5)
    assert np.linalg.norm(motor_torque(0.0, 0.2 * up_gradient, weak, frame)) == pytest.approx(1.1)


def test_rest_parameters_are_built_once_per_config(monkeypatch):
    calls = []
    build = swimmer.rest_parameters

    def counting(config):
        calls.append(config)
        return build(config)

    monkeypatch.setattr(swimmer, "rest_parameters", counting)
    config = small_config()
    state = init_swimmer(config)
    for _ in range(3):
        state = coupled_step(state, config)
    assert len(calls) == 1


def test_unpowered_swimmer_is_stationary():
    config = small_config(motor_torque=0.0, initial_noise=0.0)
    params = rest_parameters(config)
    start = init_swimmer(config)
    state = start
    for _ in range(5):
        state = coupled_step(state, config, params)
    np.testing.assert_allclose(state.p, start.p, atol=1e-12)
    np.testing.assert_allclose(state.q, start.q, atol=1e-12)
    np.testing.assert_allclose(state.r0, start.r0, atol=1e-12)


def test_reversing_torque_reverses_base_roll():
    forward = small_config(motor_torque=1.0)
    backward = small_config(motor_torque=-1.0)
    roll_forward = coupled_step(init_swimmer(forward), forward).omega[0, 2]
    roll_backward = coupled_step(init_swimmer(backward), backward).omega[0, 2]
    assert roll_forward > 0 > roll_backward
    assert roll_backward == pytest.approx(-roll_forward, rel=1e-12)


def test_first_step_is_frame_objective():
    rotation = np.array([0.5, -0.3, 0.9])
    turned = rotation_from_p(rotation)
    # the Euler update of p commutes with a rigid turn up to O((dt |omega|)^2)
    plain = small_config(helix_amplitude=0.0, dt=1e-6)
    rotated = small_config(helix_amplitude=0.0, dt=1e-6, base_rotation=rotation)

    a = coupled_step(init_swimmer(plain), plain)
    b = coupled_step(init_swimmer(rotated), rotated)

    np.testing.assert_allclose(rotation_from_p(b.p), turned @ rotation_from_p(a.p), atol=1e-7)
    positions_a, _ = reconstruct_centerline(a)
    positions_b, _ = reconstruct_centerline(b)
    np.testing.assert_allclose(positions_b, positions_a @ turned.T, atol=1e-7)
    np.testing.assert_allclose(b.omega, a.omega, atol=1e-9)


def test_doubling_viscosity_halves_the_speed():
    slow_fluid = FluidParams(mu=2.0, epsilon=0.1)
    fast = small_config(n_steps=10)
    slow = small_config(n_steps=10, fluid=slow_fluid, dt=2.0 * fast.dt)

    fast_trace = run_simulation(fast)
    slow_trace = run_simulation(slow)
    for f, s in zip(fast_trace.frames, slow_trace.frames):
        np.testing.assert_allclose(s.positions, f.positions, rtol=1e-12, atol=1e-14)
        assert s.time == pytest.approx(2.0 * f.time)

    state = init_swimmer(fast)
    omega_fast = coupled_step(state, fast).omega
    omega_slow = coupled_step(state, slow).omega
    np.testing.assert_allclose(omega_slow, 0.5 * omega_fast, rtol=1e-12, atol=1e-14)

    speed_fast = trace_metrics(fast_trace).mean_speed
    speed_slow = trace_metrics(slow_trace).mean_speed
    assert speed_slow == pytest.approx(0.5 * speed_fast, rel=1e-9, abs=1e-15)


def test_run_simulation_records_every_stride():
    trace = run_simulation(small_config(n_steps=20, record_stride=5))
    assert trace.status == "completed"
    assert [f.step for f in trace.frames] == [0, 5, 10, 15, 20]
    assert trace.frames[-1].time == pytest.approx(20 * 1e-4)
    assert all(np.all(np.isfinite(f.positions)) for f in trace.frames)


def test_run_simulation_is_deterministic():
    config = small_config(initial_noise=0.01, seed=11, n_steps=10)
    a, b = run_simulation(config), run_simulation(config)
    for fa, fb in zip(a.frames, b.frames):
        np.testing.assert_array_equal(fa.positions, fb.positions)


def test_blowup_truncates_the_trace(monkeypatch):
    calls = []
    fluid = swimmer.node_velocities

    def diverging(sources, positions, params):
        calls.append(1)
        u, w = fluid(sources, positions, params)
        if len(calls) >= 3:
            u = np.full_like(u, np.nan)
        return u, w

    monkeypatch.setattr(swimmer, "node_velocities", diverging)
    trace = run_simulation(small_config(n_steps=10, record_stride=1))
    assert trace.status.startswith("truncated at step 3: NumericalBlowup")
    assert [f.step for f in trace.frames] == [0, 1, 2]


def test_stiff_helix_takes_large_overdamped_steps():
    trace = run_simulation(small_config(dt=5e-3, n_steps=40, record_stride=10))
    assert trace.status == "completed"
    assert trace_metrics(trace).distance > 0


def test_bacteria_scenario_swims_along_its_axis():
    config = swimmer_config(parse_config(os.path.join(CONFIG_DIR, "bacteria.cfg")))
    trace = run_simulation(config)
    assert trace.status == "completed"

    metrics = trace_metrics(trace)
    assert metrics.distance > 0.05 * config.length
    assert metrics.axis_angle < 45.0


def test_inertial_mode_steps():
    config = small_config(mode="inertial", dt=1e-6, n_steps=3, record_stride=1)
    trace = run_simulation(config)
    assert trace.status == "completed"
    assert len(trace) == 4
    assert trace.frames[-1].base_omega[2] > 0


def test_trace_metrics():
    frames = []
    for k, shift in enumerate([0.0, 1.0]):
        positions = np.array([[0.0, 0.0, shift], [0.0, 0.0, shift + 1.0]])
        frames.append(TraceFrame(step=k, time=2.0 * k, positions=positions, q=np.zeros((2, 3)),
                                 p=np.zeros((2, 3)), base_frame=np.eye(3),
                                 base_omega=np.array([0.0, 0.0, 3.0]),
                                 motor_torque=np.array([0.0, 0.0, 0.5]), net_force=np.zeros(3)))
    metrics = trace_metrics(SimulationTrace(frames=frames))
    np.testing.assert_allclose(metrics.displacement, [0.0, 0.0, 1.0])
    assert metrics.distance == pytest.approx(1.0)
    assert metrics.mean_speed == pytest.approx(0.5)
    assert metrics.base_roll_rate == pytest.approx(3.0)
    assert metrics.speed_per_torque == pytest.approx(1.0)
    assert metrics.axis_angle == pytest.approx(0.0)


def test_trace_metrics_rejects_empty_trace():
    with pytest.raises(EmptyTrace):
        trace_metrics(SimulationTrace())
