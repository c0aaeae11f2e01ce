"""
Rod kinematics: closed-form general solution of the compatibility conditions.
Body rates from the rotation-vector field p, strains and velocities from q,
the inverse map, frame reconstruction and numerical recovery of (p, q).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation

from .errors import GridTooSmall, InconsistentFields, SingularParameterization


logger = logging.getLogger(__name__)

SMALL_ANGLE = 1e-4          # below this |p| the coefficient functions use Taylor series
SINGULARITY_TOL = 1e-8      # |J(p)| at or below this is treated as singular
REBASE_SLACK = 1e-12        # relative slack on the pi bound so rounding cannot flip the axis
PATH_TOL = 1e-5             # allowed disagreement between the two recovery paths
TWO_PI = 2.0 * np.pi


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x for vectors stacked along the last axis."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape + (3,))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _angle_coefficients(theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Scalar coefficient functions of the exponential map.

    Returns:
        (a, b, c) with a = (t - sin t)/t^3, b = (1 - cos t)/t^2, c = sin t / t
    """
    theta = np.asarray(theta, dtype=float)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta

    a_taylor = 1.0 / 6.0 - t2 / 120.0 + t2 ** 2 / 5040.0 - t2 ** 3 / 362880.0
    b_taylor = 0.5 - t2 / 24.0 + t2 ** 2 / 720.0 - t2 ** 3 / 40320.0
    c_taylor = 1.0 - t2 / 6.0 + t2 ** 2 / 120.0 - t2 ** 3 / 5040.0

    a = np.where(small, a_taylor, (t - np.sin(t)) / t ** 3)
    b = np.where(small, b_taylor, 2.0 * np.sin(0.5 * t) ** 2 / t ** 2)
    c = np.where(small, c_taylor, np.sin(t) / t)
    return a, b, c


def dexp_matrix(p: np.ndarray) -> np.ndarray:
    """
    Matrix A(p) with omega = A(p) p_t and kappa = A(p) p_s.

    Args:
        p: Rotation vector(s), shape (..., 3)

    Returns:
        A(p), shape (..., 3, 3)
    """
    p = np.asarray(p, dtype=float)
    theta = np.linalg.norm(p, axis=-1)
    a, b, _ = _angle_coefficients(theta)

    eye = np.broadcast_to(np.eye(3), p.shape + (3,))
    outer = p[..., :, None] * p[..., None, :]
    return (eye
            + a[..., None, None] * (outer - (theta ** 2)[..., None, None] * eye)
            - b[..., None, None] * skew(p))


def body_rate_from_p(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Body rate A(p) dp; omega for dp = p_t, kappa for dp = p_s."""
    return np.einsum("...ij,...j->...i", dexp_matrix(p), np.asarray(dp, dtype=float))


def jacobian_det(p: np.ndarray) -> np.ndarray:
    """
    Closed-form Jacobian value J(p) = 2(cos|p| - 1)/|p|^2.

    The value lies in [-1, 0] and vanishes on |p| = 2*pi*k. Its magnitude
    equals det A(p); the sign follows the closed form.
    """
    p = np.asarray(p, dtype=float)
    theta = np.linalg.norm(p, axis=-1)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    taylor = -1.0 + t2 / 12.0 - t2 ** 2 / 360.0 + t2 ** 3 / 20160.0
    return np.where(small, taylor, -4.0 * np.sin(0.5 * t) ** 2 / t ** 2)


def phi_inverse(x: np.ndarray, p: np.ndarray, tol: float = SINGULARITY_TOL) -> np.ndarray:
    """
    Inverse map Phi(x, p): solves A(p) y = x.

    Args:
        x: Body rate(s), shape (..., 3)
        p: Rotation vector(s), shape (..., 3)
        tol: Singularity guard on |J(p)|

    Returns:
        y with A(p) y = x

    Raises:
        SingularParameterization: if |J(p)| <= tol anywhere
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    det = np.abs(jacobian_det(p))
    if np.any(det <= tol):
        worst = float(np.max(np.linalg.norm(p, axis=-1)[det <= tol]))
        raise SingularParameterization(
            f"|J(p)| <= {tol:g} at |p| = {worst:.12g}; rebase the rotation vector first"
        )
    x, p = np.broadcast_arrays(x, p)
    return np.linalg.solve(dexp_matrix(p), x[..., None])[..., 0]


def rotation_from_p(p: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrix exp([p]x), shape (..., 3, 3)."""
    p = np.asarray(p, dtype=float)
    theta = np.linalg.norm(p, axis=-1)
    _, b, c = _angle_coefficients(theta)
    k = skew(p)
    return (np.broadcast_to(np.eye(3), p.shape + (3,))
            + c[..., None, None] * k
            + b[..., None, None] * (k @ k))


def log_rotation(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector (magnitude <= pi) of rotation matrices, shape (..., 3, 3) -> (..., 3)."""
    rotation = np.asarray(rotation, dtype=float)
    flat = rotation.reshape(-1, 3, 3)
    rotvec = Rotation.from_matrix(flat).as_rotvec()
    return rotvec.reshape(rotation.shape[:-2] + (3,))


def strain_velocity_from_q(q: np.ndarray, dq_s: np.ndarray, dq_t: np.ndarray,
                           kappa: np.ndarray, omega: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linear strain and velocity generated by the q field.

    Returns:
        (nu, v) with nu = q x kappa - q_s and v = q x omega - q_t
    """
    q = np.asarray(q, dtype=float)
    nu = np.cross(q, kappa) - np.asarray(dq_s, dtype=float)
    v = np.cross(q, omega) - np.asarray(dq_t, dtype=float)
    return nu, v


def rebase_rotation_vector(p: np.ndarray) -> np.ndarray:
    """
    Map p to an equivalent rotation vector with |p| <= pi.

    Equivalent to applying p <- p (1 - 2*pi/|p|) while |p| > pi; the k
    passes are taken at once, so the cost does not grow with |p|. The
    rotation is unchanged and the magnitude never grows.
    """
    p = np.array(p, dtype=float, copy=True)
    bound = np.pi * (1.0 + REBASE_SLACK)
    theta = np.linalg.norm(p, axis=-1)
    over = theta > bound
    if np.any(over):
        safe = np.where(over, theta, 1.0)
        passes = np.where(over, np.ceil((safe - bound) / TWO_PI), 0.0)
        p = p * (1.0 - TWO_PI * passes / safe)[..., None]
        theta = np.linalg.norm(p, axis=-1)
    while np.any(theta > bound):     # rounding leftovers
        over = theta > bound
        safe = np.where(over, theta, 1.0)
        factor = np.where(over, 1.0 - TWO_PI / safe, 1.0)
        p = p * factor[..., None]
        theta = np.linalg.norm(p, axis=-1)
    return p


def nearest_equivalent(p: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Rotation vector describing the same rotation as p that lies closest to ref."""
    p, ref = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(ref, dtype=float))
    theta = np.linalg.norm(p, axis=-1, keepdims=True)
    ref_norm = np.linalg.norm(ref, axis=-1, keepdims=True)
    fallback = np.where(ref_norm > 0, ref / np.where(ref_norm > 0, ref_norm, 1.0), [0.0, 0.0, 1.0])
    axis = np.where(theta > 0, p / np.where(theta > 0, theta, 1.0), fallback)

    best = p.copy()
    best_dist = np.linalg.norm(p - ref, axis=-1)
    for k in (-2, -1, 1, 2):
        candidate = p + TWO_PI * k * axis
        dist = np.linalg.norm(candidate - ref, axis=-1)
        better = dist < best_dist
        best = np.where(better[..., None], candidate, best)
        best_dist = np.minimum(dist, best_dist)
    return best


def rotation_vector_derivative(p: np.ndarray, ds: float) -> np.ndarray:
    """
    Second-order derivative along axis 0 of a per-node rotation-vector field.

    Nodes may have been rebased independently, so every stencil neighbour is
    first mapped to the representation nearest its centre node. The stencils
    are those of spatial differencing elsewhere: central inside, one-sided
    second order at both ends.

    Raises:
        GridTooSmall: fewer than 3 nodes
    """
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    if n < 3:
        raise GridTooSmall(f"need at least 3 nodes to differentiate, got {n}")

    out = np.empty_like(p)
    centre = p[1:-1]
    ahead = nearest_equivalent(p[2:], centre)
    behind = nearest_equivalent(p[:-2], centre)
    out[1:-1] = (ahead - behind) / (2.0 * ds)

    first = p[0]
    out[0] = (-3.0 * first + 4.0 * nearest_equivalent(p[1], first)
              - nearest_equivalent(p[2], first)) / (2.0 * ds)
    last = p[-1]
    out[-1] = (3.0 * last - 4.0 * nearest_equivalent(p[-2], last)
               + nearest_equivalent(p[-3], last)) / (2.0 * ds)
    return out


@dataclass(frozen=True)
class GridSpec:
    """Uniform (s, t) grid."""
    s_min: float = 0.0
    s_max: float = 1.0
    t_min: float = 0.0
    t_max: float = 1.0
    n_s: int = 32
    n_t: int = 32

    def __post_init__(self):
        if not self.s_max > self.s_min or not self.t_max > self.t_min:
            raise ValueError("grid ranges must be strictly increasing")
        if self.n_s < 2 or self.n_t < 2:
            raise ValueError("grid needs at least 2 samples per axis")

    @property
    def ds(self) -> float:
        return (self.s_max - self.s_min) / (self.n_s - 1)

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.n_t - 1)

    @property
    def s(self) -> np.ndarray:
        return np.linspace(self.s_min, self.s_max, self.n_s)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_t)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.s, self.t, indexing="ij")


@dataclass
class KinematicFields:
    """omega, kappa, nu, v sampled on a grid, each of shape (n_s, n_t, 3)."""
    omega: np.ndarray
    kappa: np.ndarray
    nu: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.omega), np.shape(self.kappa), np.shape(self.nu), np.shape(self.v)}
        if len(shapes) != 1:
            raise ValueError(f"kinematic fields disagree in shape: {sorted(shapes)}")
        if np.shape(self.omega)[-1] != 3:
            raise ValueError("kinematic fields must have 3 components")


def kinematic_residuals(fields: KinematicFields, grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Residuals of the compatibility conditions.

    h1 = kappa_t - omega_s + omega x kappa
    h2 = nu_t - v_s - kappa x v + omega x nu

    Args:
        fields: Kinematic fields on the grid
        grid: Grid specification

    Returns:
        (h1, h2), each of shape (n_s, n_t, 3)

    Raises:
        GridTooSmall: if n_s or n_t < 3
    """
    if grid.n_s < 3 or grid.n_t < 3:
        raise GridTooSmall(f"residuals need n_s, n_t >= 3, got {grid.n_s} x {grid.n_t}")

    def d_s(f):
        return np.gradient(f, grid.ds, axis=0, edge_order=2)

    def d_t(f):
        return np.gradient(f, grid.dt, axis=1, edge_order=2)

    om, ka, nu, v = fields.omega, fields.kappa, fields.nu, fields.v
    h1 = d_t(ka) - d_s(om) + np.cross(om, ka)
    h2 = d_t(nu) - d_s(v) - np.cross(ka, v) + np.cross(om, nu)
    return h1, h2


@dataclass(frozen=True)
class TrigonometricField:
    """
    Smooth vector field c + sum_m a_m sin(alpha_m s + beta_m t + phi_m) with exact derivatives.
    """
    amplitudes: np.ndarray      # (modes, 3)
    s_freqs: np.ndarray         # (modes,)
    t_freqs: np.ndarray         # (modes,)
    phases: np.ndarray          # (modes, 3)
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def random(cls, rng: np.random.Generator, n_modes: int = 3, amplitude: float = 0.3,
               max_frequency: float = 1.0, offset: Optional[np.ndarray] = None) -> "TrigonometricField":
        """Draw a seeded field with at most n_modes modes."""
        return cls(
            amplitudes=rng.uniform(-amplitude, amplitude, size=(n_modes, 3)),
            s_freqs=rng.uniform(-max_frequency, max_frequency, size=n_modes),
            t_freqs=rng.uniform(-max_frequency, max_frequency, size=n_modes),
            phases=rng.uniform(0.0, TWO_PI, size=(n_modes, 3)),
            offset=np.zeros(3) if offset is None else np.asarray(offset, dtype=float),
        )

    def _argument(self, s, t):
        s = np.asarray(s, dtype=float)[..., None, None]
        t = np.asarray(t, dtype=float)[..., None, None]
        return self.s_freqs[:, None] * s + self.t_freqs[:, None] * t + self.phases

    def value(self, s, t) -> np.ndarray:
        return self.offset + np.sum(self.amplitudes * np.sin(self._argument(s, t)), axis=-2)

    def d_s(self, s, t) -> np.ndarray:
        return np.sum(self.amplitudes * self.s_freqs[:, None] * np.cos(self._argument(s, t)), axis=-2)

    def d_t(self, s, t) -> np.ndarray:
        return np.sum(self.amplitudes * self.t_freqs[:, None] * np.cos(self._argument(s, t)), axis=-2)


def fields_from_parameterization(p_field: TrigonometricField, q_field: TrigonometricField,
                                 grid: GridSpec) -> KinematicFields:
    """Evaluate omega, kappa, nu, v of the general solution for given smooth (p, q)."""
    s, t = grid.mesh()
    p = p_field.value(s, t)
    kappa = body_rate_from_p(p, p_field.d_s(s, t))
    omega = body_rate_from_p(p, p_field.d_t(s, t))
    nu, v = strain_velocity_from_q(q_field.value(s, t), q_field.d_s(s, t), q_field.d_t(s, t),
                                   kappa, omega)
    return KinematicFields(omega=omega, kappa=kappa, nu=nu, v=v)


@dataclass
class RecoveryResult:
    """Recovered (p, q) fields and how well they reproduce the inputs."""
    p: np.ndarray
    q: np.ndarray
    rms_error: float
    path_discrepancy: float


def _rk4_march(rhs: Callable, y0: np.ndarray, x: np.ndarray,
               post: Optional[Callable] = None) -> np.ndarray:
    """Classical fourth-order march of dy/dx = rhs(x, y) over the nodes x."""
    ys = np.empty((len(x),) + y0.shape)
    y = np.array(y0, dtype=float)
    ys[0] = y
    for i in range(len(x) - 1):
        h = x[i + 1] - x[i]
        k1 = rhs(x[i], y)
        k2 = rhs(x[i] + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(x[i] + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(x[i + 1], y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if post is not None:
            y = post(y)
        ys[i + 1] = y
    return ys


def _integrate_two_paths(s_rhs, t_rhs, s_field, t_field, y0, grid, post=None):
    """
    Integrate a field ODE along both grid paths.

    s_rhs(rate, y) / t_rhs(rate, y) give the s- and t-derivative of the unknown
    for sampled rates; s_field / t_field are the rate arrays of shape (n_s, n_t, 3).

    Returns:
        (path_s_first, path_t_first), each of shape (n_s, n_t, 3)
    """
    s_nodes, t_nodes = grid.s, grid.t

    # s along t_min, then t for every s
    edge = CubicSpline(s_nodes, s_field[:, 0, :], axis=0)
    y_edge = _rk4_march(lambda x, y: s_rhs(edge(x), y), y0, s_nodes, post)
    columns = CubicSpline(t_nodes, t_field, axis=1)
    path_a = _rk4_march(lambda x, y: t_rhs(columns(x), y), y_edge, t_nodes, post)
    path_a = np.swapaxes(path_a, 0, 1)

    # t along s_min, then s for every t
    edge = CubicSpline(t_nodes, t_field[0, :, :], axis=0)
    y_edge = _rk4_march(lambda x, y: t_rhs(edge(x), y), y0, t_nodes, post)
    rows = CubicSpline(s_nodes, s_field, axis=0)
    path_b = _rk4_march(lambda x, y: s_rhs(rows(x), y), y_edge, s_nodes, post)
    return path_a, path_b


def recover_parameterization(fields: KinematicFields, grid: GridSpec,
                             p0: np.ndarray, q0: np.ndarray,
                             path_tol: float = PATH_TOL) -> RecoveryResult:
    """
    Integrate p_s = Phi(kappa, p), p_t = Phi(omega, p) and
    q_s = q x kappa - nu, q_t = q x omega - v from (s_min, t_min).

    Both unknowns are integrated along the s-edge first and then along t,
    and again in the opposite order; the two paths must agree.

    Args:
        fields: Kinematic fields on the grid
        grid: Grid specification (n_s, n_t >= 3)
        p0: Rotation vector at (s_min, t_min)
        q0: q value at (s_min, t_min)
        path_tol: Allowed max disagreement between paths

    Returns:
        RecoveryResult with the s-first fields, the RMS error with which they
        reproduce the inputs and the path discrepancy

    Raises:
        SingularParameterization: the path reaches |J(p)| ~ 0
        InconsistentFields: the two paths disagree beyond path_tol
        GridTooSmall: fewer than 3 samples on an axis
    """
    if grid.n_s < 3 or grid.n_t < 3:
        raise GridTooSmall(f"recovery needs n_s, n_t >= 3, got {grid.n_s} x {grid.n_t}")

    p0 = rebase_rotation_vector(np.asarray(p0, dtype=float))
    q0 = np.asarray(q0, dtype=float)

    def p_rhs(rate, p):
        return phi_inverse(rate, p)

    p_a, p_b = _integrate_two_paths(p_rhs, p_rhs, fields.kappa, fields.omega, p0, grid,
                                    post=rebase_rotation_vector)
    p_gap = float(np.max(np.abs(rotation_from_p(p_a) - rotation_from_p(p_b))))
    if p_gap > path_tol:
        raise InconsistentFields(f"frame paths disagree by {p_gap:.3e} (tol {path_tol:g})")

    kappa_nu = np.concatenate([fields.kappa, fields.nu], axis=-1)
    omega_v = np.concatenate([fields.omega, fields.v], axis=-1)

    def q_rhs(rate, q):
        return np.cross(q, rate[..., :3]) - rate[..., 3:]

    q_a, q_b = _integrate_two_paths(q_rhs, q_rhs, kappa_nu, omega_v, q0, grid)
    q_gap = float(np.max(np.abs(q_a - q_b)))
    if q_gap > path_tol:
        raise InconsistentFields(f"q paths disagree by {q_gap:.3e} (tol {path_tol:g})")

    rms = _reproduction_rms(fields, grid, p_a, q_a)
    logger.debug("recovered parameterization: rms %.3e, path gap %.3e", rms, max(p_gap, q_gap))
    return RecoveryResult(p=p_a, q=q_a, rms_error=rms, path_discrepancy=max(p_gap, q_gap))


def _unwrap_along(p: np.ndarray, axis: int) -> np.ndarray:
    """Continuous lift of a rotation-vector field along one grid axis."""
    p = np.moveaxis(np.array(p, dtype=float, copy=True), axis, 0)
    for i in range(1, p.shape[0]):
        p[i] = nearest_equivalent(p[i], p[i - 1])
    return np.moveaxis(p, 0, axis)


def _reproduction_rms(fields: KinematicFields, grid: GridSpec,
                      p: np.ndarray, q: np.ndarray) -> float:
    """RMS mismatch of the inputs against fields regenerated from (p, q) by spline derivatives."""
    p_s_lift = _unwrap_along(p, 0)
    p_t_lift = _unwrap_along(p, 1)
    kappa = body_rate_from_p(p_s_lift, CubicSpline(grid.s, p_s_lift, axis=0)(grid.s, 1))
    omega = body_rate_from_p(p_t_lift, CubicSpline(grid.t, p_t_lift, axis=1)(grid.t, 1))
    q_s = CubicSpline(grid.s, q, axis=0)(grid.s, 1)
    q_t = CubicSpline(grid.t, q, axis=1)(grid.t, 1)
    nu, v = strain_velocity_from_q(q, q_s, q_t, kappa, omega)

    diff = np.concatenate([omega - fields.omega, kappa - fields.kappa,
                           nu - fields.nu, v - fields.v], axis=-1)
    return float(np.sqrt(np.mean(diff ** 2)))
