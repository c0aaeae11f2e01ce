"""
Tests for rod kinematics: the exponential-map matrices, the inverse map,
rotation-vector bookkeeping and recovery of (p, q) from kinematic fields.
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cosseratflow.backend.errors import GridTooSmall, InconsistentFields, SingularParameterization
from cosseratflow.backend.kinematics import (
    SMALL_ANGLE,
    GridSpec,
    KinematicFields,
    TrigonometricField,
    dexp_matrix,
    fields_from_parameterization,
    jacobian_det,
    kinematic_residuals,
    log_rotation,
    nearest_equivalent,
    phi_inverse,
    rebase_rotation_vector,
    recover_parameterization,
    rotation_from_p,
    rotation_vector_derivative,
)


def _random_p(rng, n, lo=0.1, hi=3.0):
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    return rng.uniform(lo, hi, size=(n, 1)) * direction


@pytest.mark.parametrize("theta", [1e-8, 1e-5, 0.5, 2.0, 3.1, 5.0])
def test_rotation_from_p_matches_scipy(theta):
    p = theta * np.array([0.48, -0.6, 0.64])
    np.testing.assert_allclose(rotation_from_p(p), Rotation.from_rotvec(p).as_matrix(), atol=1e-13)


def test_log_rotation_inverts_rotation_from_p():
    rng = np.random.default_rng(1)
    p = _random_p(rng, 50, hi=6.0)
    back = log_rotation(rotation_from_p(p))
    assert np.all(np.linalg.norm(back, axis=-1) <= np.pi + 1e-12)
    np.testing.assert_allclose(rotation_from_p(back), rotation_from_p(p), atol=1e-12)


def test_dexp_matrix_continuous_across_small_angle_switch():
    axis = np.array([0.0, 0.6, 0.8])
    below = dexp_matrix(SMALL_ANGLE * (1.0 - 1e-9) * axis)
    above = dexp_matrix(SMALL_ANGLE * (1.0 + 1e-9) * axis)
    np.testing.assert_allclose(below, above, atol=1e-12)


def test_jacobian_det_is_signed_determinant_of_dexp():
    rng = np.random.default_rng(2)
    p = np.vstack([_random_p(rng, 20), [[1e-6, 0.0, 0.0]], [[0.0, 0.0, 0.0]]])
    np.testing.assert_allclose(np.linalg.det(dexp_matrix(p)), -jacobian_det(p), rtol=1e-10)


def test_jacobian_det_vanishes_at_full_turn():
    assert abs(float(jacobian_det(np.array([0.0, 2.0 * np.pi, 0.0])))) < 1e-12
    assert float(jacobian_det(np.zeros(3))) == pytest.approx(-1.0)


def test_phi_inverse_solves_dexp_system():
    rng = np.random.default_rng(3)
    p = _random_p(rng, 30)
    x = rng.standard_normal((30, 3))
    y = phi_inverse(x, p)
    np.testing.assert_allclose(np.einsum("nij,nj->ni", dexp_matrix(p), y), x, atol=1e-12)


def test_phi_inverse_rejects_singular_p():
    with pytest.raises(SingularParameterization):
        phi_inverse(np.ones(3), np.array([2.0 * np.pi, 0.0, 0.0]))


def test_rebase_keeps_rotation_and_bounds_magnitude():
    axis = np.array([0.6, 0.0, -0.8])
    p = np.array([(3.0 * np.pi + 0.1) * axis, 4.0 * axis, 1.0 * axis])
    rebased = rebase_rotation_vector(p)
    assert np.all(np.linalg.norm(rebased, axis=-1) <= np.pi * (1.0 + 1e-12))
    np.testing.assert_allclose(rotation_from_p(rebased), rotation_from_p(p), atol=1e-12)
    np.testing.assert_array_equal(rebased[2], p[2])


def test_nearest_equivalent_picks_closest_representation():
    p = np.array([0.0, 0.0, 3.0])
    ref = np.array([0.0, 0.0, -3.0])
    best = nearest_equivalent(p, ref)
    np.testing.assert_allclose(best, [0.0, 0.0, 3.0 - 2.0 * np.pi])
    np.testing.assert_allclose(rotation_from_p(best), rotation_from_p(p), atol=1e-12)


def test_rotation_vector_derivative_ignores_rebasing_jumps():
    s = np.linspace(0.0, 1.0, 41)
    p = rebase_rotation_vector(s[:, None] * np.array([0.0, 0.0, 8.0]))
    assert np.any(np.abs(np.diff(p[:, 2])) > np.pi)
    dp = rotation_vector_derivative(p, s[1] - s[0])
    np.testing.assert_allclose(dp, np.tile([0.0, 0.0, 8.0], (41, 1)), atol=1e-9)


def test_rotation_vector_derivative_needs_three_nodes():
    with pytest.raises(GridTooSmall):
        rotation_vector_derivative(np.zeros((2, 3)), 0.1)


def test_trigonometric_field_derivatives():
    field = TrigonometricField.random(np.random.default_rng(4), amplitude=0.5)
    s, t, h = 0.3, 0.7, 1e-6
    np.testing.assert_allclose(field.d_s(s, t), (field.value(s + h, t) - field.value(s - h, t)) / (2 * h),
                               atol=1e-8)
    np.testing.assert_allclose(field.d_t(s, t), (field.value(s, t + h) - field.value(s, t - h)) / (2 * h),
                               atol=1e-8)


def test_general_solution_residuals_converge_at_second_order():
    rng = np.random.default_rng(5)
    p_field = TrigonometricField.random(rng, amplitude=0.3)
    q_field = TrigonometricField.random(rng, amplitude=0.3)
    errors = []
    for n in (16, 32, 64):
        grid = GridSpec(n_s=n, n_t=n)
        h1, h2 = kinematic_residuals(fields_from_parameterization(p_field, q_field, grid), grid)
        errors.append(max(np.abs(h1).max(), np.abs(h2).max()))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(np.abs(orders - 2.0) < 0.3)


def test_residuals_need_three_samples_per_axis():
    grid = GridSpec(n_s=2, n_t=8)
    zeros = np.zeros((2, 8, 3))
    with pytest.raises(GridTooSmall):
        kinematic_residuals(KinematicFields(zeros, zeros, zeros, zeros), grid)


def test_recovery_reproduces_known_parameterization():
    rng = np.random.default_rng(6)
    p_field = TrigonometricField.random(rng, amplitude=0.3, offset=[0.4, 0.1, -0.2])
    q_field = TrigonometricField.random(rng, amplitude=0.3)
    grid = GridSpec(n_s=40, n_t=40)
    fields = fields_from_parameterization(p_field, q_field, grid)

    result = recover_parameterization(fields, grid, p_field.value(0.0, 0.0), q_field.value(0.0, 0.0))

    s, t = grid.mesh()
    assert result.rms_error < 1e-5
    np.testing.assert_allclose(rotation_from_p(result.p), rotation_from_p(p_field.value(s, t)), atol=1e-5)
    np.testing.assert_allclose(result.q, q_field.value(s, t), atol=1e-5)


def test_recovery_rejects_incompatible_fields():
    rng = np.random.default_rng(7)
    p_field = TrigonometricField.random(rng, amplitude=0.3)
    q_field = TrigonometricField.random(rng, amplitude=0.3)
    grid = GridSpec(n_s=20, n_t=20)
    fields = fields_from_parameterization(p_field, q_field, grid)
    _, t = grid.mesh()
    fields.kappa = fields.kappa + 0.3 * t[..., None] * np.array([1.0, 0.0, 0.0])

    with pytest.raises(InconsistentFields):
        recover_parameterization(fields, grid, p_field.value(0.0, 0.0), q_field.value(0.0, 0.0))
