"""
Tests for rod dynamics: constitutive law, balance laws, both time steppers
and the stable-step search.
"""

import numpy as np
import pytest

from cosseratflow.backend.errors import GridTooSmall, NoStableStep
from cosseratflow.backend.kinematics import (
    GridSpec,
    KinematicFields,
    kinematic_residuals,
    phi_inverse,
    rotation_from_p,
)
from cosseratflow.backend.rod_dynamics import (
    ExternalLoads,
    FullState,
    RodParameters,
    RodState,
    constitutive_forces,
    dynamic_rhs,
    elastic_rate_operator,
    full_state_from_rod_state,
    is_stable,
    linear_momentum,
    reconstruct_centerline,
    reference_stiff_scenario,
    rod_state_from_frames,
    spatial_derivative,
    stable_step_search,
    state_energy,
    step_full_numeric,
    step_semi_analytical,
    strains,
    with_bend_scale,
)


def _straight_rod(n=21, params=None, p=None):
    params = params or RodParameters()
    s = np.linspace(0.0, 1.0, n)
    p = np.zeros((n, 3)) if p is None else np.tile(p, (n, 1))
    r = s[:, None] * (rotation_from_p(p[0]) @ np.array([0.0, 0.0, 1.0]))
    return rod_state_from_frames(p, r, s[1] - s[0]), params


def test_rod_parameters_validate():
    with pytest.raises(ValueError):
        RodParameters(rho=-1.0)
    with pytest.raises(ValueError):
        RodParameters(bend_stiffness=[1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        RodParameters(boundary="pinned")


def test_constitutive_forces_vanish_at_reference():
    params = RodParameters()
    m, n = constitutive_forces(np.zeros((4, 3)), np.tile([0.0, 0.0, 1.0], (4, 1)), params)
    assert not m.any() and not n.any()
    m, _ = constitutive_forces(np.tile([0.5, 0.0, 0.0], (4, 1)), np.tile([0.0, 0.0, 1.0], (4, 1)), params)
    np.testing.assert_allclose(m[:, 0], 0.5 * params.bend_stiffness[0])


def test_spatial_derivative_exact_for_quadratics():
    s = np.linspace(0.0, 2.0, 9)
    values = np.stack([s ** 2, 3 * s, np.ones_like(s)], axis=-1)
    expected = np.stack([2 * s, 3 * np.ones_like(s), np.zeros_like(s)], axis=-1)
    np.testing.assert_allclose(spatial_derivative(values, s[1] - s[0]), expected, atol=1e-12)


def test_spatial_derivative_needs_three_nodes():
    with pytest.raises(GridTooSmall):
        spatial_derivative(np.zeros((2, 3)), 0.5)


def test_straight_rod_has_reference_strains():
    state, params = _straight_rod(p=[0.3, -0.2, 0.5])
    kappa, nu = strains(state)
    np.testing.assert_allclose(kappa, 0.0, atol=1e-12)
    np.testing.assert_allclose(nu, np.tile(params.nu_ref, (state.n_nodes, 1)), atol=1e-12)


def test_reconstruct_centerline_recovers_frames_and_points():
    state, _ = _straight_rod(p=[0.3, -0.2, 0.5])
    state.r0 = np.array([1.0, 2.0, 3.0])
    r, frames = reconstruct_centerline(state)
    direction = rotation_from_p(np.array([0.3, -0.2, 0.5]))[:, 2]
    s = np.linspace(0.0, 1.0, state.n_nodes)
    np.testing.assert_allclose(r, state.r0 + s[:, None] * direction, atol=1e-12)
    np.testing.assert_allclose(frames, rotation_from_p(state.p), atol=1e-15)


def test_dynamic_rhs_free_ends_load_the_end_nodes():
    params = RodParameters()
    n = 11
    kappa = np.tile([0.2, 0.0, 0.0], (n, 1))
    nu = np.tile(params.nu_ref, (n, 1))
    zeros = np.zeros((n, 3))
    loads = ExternalLoads.zeros(n)

    omega_t, v_t = dynamic_rhs(kappa, nu, zeros, zeros, loads, params, 0.1)
    np.testing.assert_allclose(omega_t, 0.0, atol=1e-12)
    np.testing.assert_allclose(v_t, 0.0, atol=1e-12)

    omega_t, _ = dynamic_rhs(kappa, nu, zeros, zeros, loads, params, 0.1, boundary="free-free")
    assert abs(omega_t[0, 0]) > 0 and abs(omega_t[-1, 0]) > 0
    np.testing.assert_allclose(omega_t[3:-3], 0.0, atol=1e-12)


def test_relaxed_rod_stays_at_rest():
    state, params = _straight_rod()
    loads = ExternalLoads.zeros(state.n_nodes)
    stepped = state
    for _ in range(10):
        stepped = step_semi_analytical(stepped, loads, params, 1e-4)
    np.testing.assert_allclose(stepped.p, state.p, atol=1e-14)
    np.testing.assert_allclose(stepped.q, state.q, atol=1e-14)
    assert stepped.t == pytest.approx(1e-3)
    assert state_energy(stepped, params) == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(linear_momentum(stepped, params), 0.0, atol=1e-12)


def test_steppers_agree_for_small_steps():
    scenario = reference_stiff_scenario(n_nodes=21, seed=3)
    semi = scenario.state.copy()
    full = full_state_from_rod_state(scenario.state)
    for _ in range(10):
        semi = step_semi_analytical(semi, scenario.loads, scenario.params, 1e-6)
        full = step_full_numeric(full, scenario.loads, scenario.params, 1e-6)

    kappa, nu = strains(semi)
    np.testing.assert_allclose(semi.omega, full.omega, atol=1e-7)
    np.testing.assert_allclose(semi.v, full.v, atol=1e-7)
    np.testing.assert_allclose(kappa, full.kappa, atol=1e-7)
    np.testing.assert_allclose(nu, full.nu, atol=1e-7)
    assert np.abs(kappa).max() > 0


def test_elastic_rate_operator_matches_a_small_step():
    n = 41
    params = RodParameters(boundary="free-free")
    s = np.linspace(0.0, 1.0, n)
    p = np.column_stack([0.4 * np.sin(np.pi * s), 0.2 * s, 0.3 * s ** 2])
    r = np.column_stack([0.1 * np.sin(2 * s), 0.05 * s ** 2, s])
    state = rod_state_from_frames(p, r, s[1] - s[0])
    omega = 0.5 * np.column_stack([np.cos(s), s, 1.0 - s ** 2])
    v = np.column_stack([s ** 2, np.sin(3 * s), 0.2 * s])

    def elastic(st):
        kappa, nu = strains(st)
        torque, force = dynamic_rhs(kappa, nu, np.zeros((n, 3)), np.zeros((n, 3)),
                                    ExternalLoads.zeros(n), params, st.ds, boundary="free-free")
        return np.concatenate([(params.rho * params.inertia * torque).ravel(),
                               (params.rho * params.area * force).ravel()])

    h = 1e-7
    moved = RodState(p=state.p + h * phi_inverse(omega, state.p),
                     q=state.q + h * (np.cross(state.q, omega) - v),
                     omega=state.omega, v=state.v, ds=state.ds)
    kappa, nu = strains(state)
    operator = elastic_rate_operator(kappa, nu, rotation_from_p(state.p), params, state.ds)
    predicted = operator @ np.concatenate([omega.ravel(), v.ravel()])
    measured = (elastic(moved) - elastic(state)) / h
    assert np.linalg.norm(measured - predicted) <= 1e-2 * np.linalg.norm(predicted)


def _advance(step, state, loads, params, dt, n_steps):
    for _ in range(n_steps):
        state = step(state, loads, params, dt)
    return state


def _fields(state):
    if isinstance(state, FullState):
        return state.omega, state.kappa, state.nu, state.v
    kappa, nu = strains(state)
    return state.omega, kappa, nu, state.v


def _window_residual(window, ds, dt):
    """Largest compatibility residual over three consecutive states."""
    fields = KinematicFields(*(np.stack(f, axis=1) for f in zip(*window)))
    n = fields.omega.shape[0]
    h1, h2 = kinematic_residuals(fields, GridSpec(s_max=ds * (n - 1), t_max=2 * dt, n_s=n, n_t=3))
    return max(np.abs(h1).max(), np.abs(h2).max())


def test_reconstruct_centerline_is_translation_equivariant():
    n = 9
    s = np.linspace(0.0, 1.0, n)
    p = 0.3 * np.sin(np.outer(s, [1.0, 2.0, 3.0]))
    r = np.column_stack([0.1 * s ** 2, np.sin(s), s])
    state = rod_state_from_frames(p, r, s[1] - s[0])
    moved = state.copy()
    shift = np.array([2.5, -1.0, 4.0])
    moved.r0 = state.r0 + shift

    r_a, frames_a = reconstruct_centerline(state)
    r_b, frames_b = reconstruct_centerline(moved)
    np.testing.assert_allclose(r_b, r_a + shift, atol=1e-12)
    np.testing.assert_array_equal(frames_b, frames_a)


def test_constant_curvature_rod_is_a_circular_arc():
    k = 2.0
    errors, spacing = [], []
    for n in (11, 21, 41):
        s = np.linspace(0.0, 1.0, n)
        theta = k * s
        p = np.column_stack([theta, np.zeros(n), np.zeros(n)])
        arc = np.column_stack([np.zeros(n), (np.cos(theta) - 1.0) / k, np.sin(theta) / k])
        state = rod_state_from_frames(p, arc, s[1] - s[0])
        kappa, _ = strains(state)
        np.testing.assert_allclose(kappa, np.tile([k, 0.0, 0.0], (n, 1)), atol=1e-12)

        r, _ = reconstruct_centerline(state)
        errors.append(np.linalg.norm(r - arc, axis=-1).max())
        spacing.append(s[1] - s[0])

    order, _ = np.polyfit(np.log(spacing), np.log(errors), 1)
    assert order == pytest.approx(2.0, abs=0.3)
    assert errors[-1] < 2e-3


def test_semi_analytical_step_converges_at_first_order():
    scenario = reference_stiff_scenario(n_nodes=11, amplitude=1e-2, seed=1)
    horizon = 1e-3

    def final(dt):
        state = _advance(step_semi_analytical, scenario.state, scenario.loads, scenario.params,
                         dt, int(round(horizon / dt)))
        return np.concatenate([state.p.ravel(), state.q.ravel(), state.omega.ravel(), state.v.ravel()])

    reference = final(1e-6)
    steps = np.array([1e-4, 5e-5, 2.5e-5])
    errors = [np.abs(final(dt) - reference).max() for dt in steps]
    order, _ = np.polyfit(np.log(steps), np.log(errors), 1)
    assert order == pytest.approx(1.0, abs=0.2)


def test_compatibility_residual_stays_bounded_only_for_semi_analytical():
    scenario = reference_stiff_scenario(n_nodes=11, amplitude=1e-2, seed=4)
    dt, n_steps = 1e-4, 1000

    def residual_drift(step, state):
        kept = []
        for i in range(n_steps + 1):
            if i < 3 or i > n_steps - 3:
                kept.append(_fields(state))
            if i < n_steps:
                state = step(state, scenario.loads, scenario.params, dt)
        early = _window_residual(kept[:3], state.ds, dt)
        late = _window_residual(kept[3:], state.ds, dt)
        return early, late

    semi_early, semi_late = residual_drift(step_semi_analytical, scenario.state)
    full_early, full_late = residual_drift(step_full_numeric, full_state_from_rod_state(scenario.state))
    assert semi_late <= 10.0 * semi_early
    assert full_late / full_early > semi_late / semi_early


def test_momentum_error_halves_with_dt():
    # the stencil itself moves the momentum of a free rod, so the time-step part
    # is measured against a small-step run
    params = RodParameters(boundary="free-free")
    scenario = reference_stiff_scenario(params=params, n_nodes=11, amplitude=1e-2, seed=2)
    horizon = 1e-3

    def momentum(dt):
        state = _advance(step_semi_analytical, scenario.state, scenario.loads, params,
                         dt, int(round(horizon / dt)))
        return linear_momentum(state, params)

    reference = momentum(1e-6)
    coarse = np.linalg.norm(momentum(1e-4) - reference)
    fine = np.linalg.norm(momentum(5e-5) - reference)
    assert coarse / fine == pytest.approx(2.0, rel=0.3)


def test_clamped_base_does_not_move():
    scenario = reference_stiff_scenario(n_nodes=21)
    state = scenario.state
    for _ in range(20):
        state = step_semi_analytical(state, scenario.loads, scenario.params, 1e-5)
    np.testing.assert_array_equal(state.p[0], scenario.state.p[0])
    np.testing.assert_array_equal(state.q[0], scenario.state.q[0])
    np.testing.assert_array_equal(state.r0, scenario.state.r0)
    assert not state.omega[0].any() and not state.v[0].any()


def test_steppers_reject_nonpositive_dt():
    scenario = reference_stiff_scenario(n_nodes=11)
    with pytest.raises(ValueError):
        step_semi_analytical(scenario.state, scenario.loads, scenario.params, 0.0)
    with pytest.raises(ValueError):
        step_full_numeric(full_state_from_rod_state(scenario.state), scenario.loads,
                          scenario.params, -1e-3)


def test_stability_verdicts():
    scenario = reference_stiff_scenario(n_nodes=20)
    for stepper in ("semi-analytical", "full-numeric"):
        assert is_stable(stepper, scenario, 1e-7, window=100)
    assert is_stable("semi-analytical", scenario, 1e-1, window=200)
    assert not is_stable("full-numeric", scenario, 1e-1, window=200)


def test_semi_analytical_step_is_a_thousand_times_larger():
    scenario = reference_stiff_scenario()
    semi = stable_step_search("semi-analytical", scenario)
    full = stable_step_search("full-numeric", scenario)
    assert semi / full >= 1e3
    for stepper, dt_max in (("semi-analytical", semi), ("full-numeric", full)):
        assert is_stable(stepper, scenario, 1e-2 * dt_max)


def test_stiffer_rod_needs_smaller_steps():
    soft = reference_stiff_scenario(n_nodes=20)
    stiff = reference_stiff_scenario(params=with_bend_scale(RodParameters(), 100.0), n_nodes=20)
    assert (stable_step_search("full-numeric", stiff, window=200)
            <= stable_step_search("full-numeric", soft, window=200))


def test_search_range_must_span_six_decades():
    scenario = reference_stiff_scenario(n_nodes=11)
    with pytest.raises(ValueError):
        stable_step_search("semi-analytical", scenario, dt_range=(1e-6, 1e-3))


def test_search_reports_when_nothing_is_stable():
    scenario = reference_stiff_scenario(n_nodes=20)
    with pytest.raises(NoStableStep):
        stable_step_search("full-numeric", scenario, dt_range=(1e-1, 1e5), window=200)
