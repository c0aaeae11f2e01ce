"""
Regularized Stokes flow: blob, kernels, Stokeslets, rotlets and mobility solves.
All closed forms belong to the blob 15 eps^4 / (8 pi (r^2 + eps^2)^(7/2)).
"""

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.sparse.linalg import lsqr

from .errors import NoConvergence
from .kinematics import skew


logger = logging.getLogger(__name__)

SOLVE_RTOL = 1e-10
LEAST_SQUARES_TOL = 1e-8    # normal-equation residual accepted as a least-squares solution
QUAD_RTOL = 1e-13
QUAD_BREAKS = (0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1e3, 1e4, 1e5)
FOUR_PI = 4.0 * np.pi
EIGHT_PI = 8.0 * np.pi


@dataclass(frozen=True)
class FluidParams:
    """Viscosity mu (Pa s) and blob radius epsilon (m)."""
    mu: float = 1.0
    epsilon: float = 0.05

    def __post_init__(self):
        if self.mu <= 0 or self.epsilon <= 0:
            raise ValueError("mu and epsilon must be > 0")


@dataclass
class PointForceSet:
    """Point sources: locations, forces, optional torques and optional per-source blob radii."""
    points: np.ndarray
    forces: np.ndarray
    torques: Optional[np.ndarray] = None
    radii: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.forces = np.atleast_2d(np.asarray(self.forces, dtype=float))
        if self.points.shape[0] < 1 or self.points.shape[1] != 3:
            raise ValueError("need at least one source point with 3 coordinates")
        if self.forces.shape != self.points.shape:
            raise ValueError("forces must match points in shape")
        if self.torques is not None:
            self.torques = np.atleast_2d(np.asarray(self.torques, dtype=float))
            if self.torques.shape != self.points.shape:
                raise ValueError("torques must match points in shape")
        if self.radii is not None:
            self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
            if self.radii.shape[0] != self.points.shape[0] or np.any(self.radii <= 0):
                raise ValueError("radii must be positive, one per point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("source points must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]

    def blob_radii(self, fp: FluidParams) -> np.ndarray:
        if self.radii is None:
            return np.full(len(self), fp.epsilon)
        return self.radii

    def scaled(self, factor: float) -> "PointForceSet":
        return PointForceSet(self.points, self.forces * factor,
                             None if self.torques is None else self.torques * factor, self.radii)


class BlobKernels(NamedTuple):
    g1: np.ndarray      # G'_eps
    g: np.ndarray       # G_eps
    b1: np.ndarray      # B'_eps
    b2: np.ndarray      # B''_eps


def blob_phi(r, eps: float):
    """Blob function 15 eps^4 / (8 pi (r^2 + eps^2)^(7/2))."""
    r = np.asarray(r, dtype=float)
    return 15.0 * eps ** 4 / (EIGHT_PI * (r * r + eps * eps) ** 3.5)


def blob_kernels(r, eps: float) -> BlobKernels:
    """
    Closed-form kernels of the blob.

    G solves the radial Laplace equation with source phi, B the one with
    source G. With R = sqrt(r^2 + eps^2):

        G'  =  r (2 r^2 + 5 eps^2) / (8 pi R^5)
        G   = -(2 r^2 + 3 eps^2) / (8 pi R^3)
        B'  = -r / (8 pi R)
        B'' = -eps^2 / (8 pi R^3)
    """
    r = np.asarray(r, dtype=float)
    r2 = r * r
    e2 = eps * eps
    big_r = np.sqrt(r2 + e2)
    g1 = r * (2.0 * r2 + 5.0 * e2) / (EIGHT_PI * big_r ** 5)
    g = -(2.0 * r2 + 3.0 * e2) / (EIGHT_PI * big_r ** 3)
    b1 = -r / (EIGHT_PI * big_r)
    b2 = -e2 / (EIGHT_PI * big_r ** 3)
    return BlobKernels(g1, g, b1, b2)


def _integral(func, a: float, b: float) -> float:
    """Adaptive quadrature split at fixed breakpoints so narrow peaks are not skipped."""
    edges = [a] + [x for x in QUAD_BREAKS if a < x < b] + [b]
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += quad(func, lo, hi, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)[0]
    return total


def _unit_phi(t: float) -> float:
    return 15.0 / (EIGHT_PI * (t * t + 1.0) ** 3.5)


def _moment_density(t: float) -> float:
    return t * t * _unit_phi(t)


def _tail(s: float) -> float:
    """T(s) = integral of t^2 phi over [s, inf) for the unit blob."""
    return _integral(_moment_density, s, np.inf)


def kernels_by_quadrature(r: float, eps: float) -> BlobKernels:
    """
    Kernels evaluated from their defining integrals by adaptive quadrature.

    With M(s) = int_0^s t^2 phi, T(s) = int_s^inf t^2 phi and M_inf = M + T:

        G'(r) = M(r) / r^2
        G(r)  = -int_r^inf M(s)/s^2 ds
        B'(r) = r G(r)/3 - (1/(3 r^2)) int_0^r s M(s) ds
        B''   = G - 2 B'/r

    Beyond one blob radius the tail forms G = -M_inf/r + g(r),
    g(r) = int_r^inf T(s)/s^2 ds, and B'' = g/3 - (2/(3 r^3)) int_0^r s T(s) ds
    avoid cancellation. The integrals are taken for the unit blob and scaled.
    """
    x = float(r) / eps
    m_inf = _integral(_moment_density, 0.0, np.inf)

    def moment(s):
        return _integral(_moment_density, 0.0, s) if s <= 10.0 else m_inf - _tail(s)

    def tail_g(s):
        return _integral(lambda u: _tail(u) / (u * u), s, np.inf)

    g_one = -m_inf + tail_g(1.0)
    if x >= 1.0:
        g_x = tail_g(x)
        s_tail = _integral(lambda u: u * _tail(u), 0.0, x)
        g1 = moment(x) / (x * x)
        g = -m_inf / x + g_x
        b1 = -0.5 * m_inf + x * g_x / 3.0 + s_tail / (3.0 * x * x)
        b2 = g_x / 3.0 - 2.0 * s_tail / (3.0 * x ** 3)
    elif x > 0.0:
        g1 = moment(x) / (x * x)
        g = g_one - _integral(lambda u: moment(u) / (u * u), x, 1.0)
        b1 = x * g / 3.0 - _integral(lambda u: u * moment(u), 0.0, x) / (3.0 * x * x)
        b2 = g - 2.0 * b1 / x
    else:
        g1 = 0.0
        g = g_one - _integral(lambda u: moment(u) / (u * u), 0.0, 1.0)
        b1 = 0.0
        b2 = g / 3.0

    # unit-blob values scale as eps^-2, eps^-1, eps^0, eps^-1
    return BlobKernels(np.float64(g1 / eps ** 2), np.float64(g / eps),
                       np.float64(b1), np.float64(b2 / eps))


def blob_mass(eps: float) -> float:
    """Integral of 4 pi r^2 phi over [0, inf) by quadrature."""
    return FOUR_PI * _integral(lambda x: x * x * eps ** 3 * float(blob_phi(eps * x, eps)), 0.0, np.inf)


def _separations(x: np.ndarray, sources: PointForceSet, fp: FluidParams):
    x = np.asarray(x, dtype=float)
    d = x[..., None, :] - sources.points
    r2 = np.sum(d * d, axis=-1)
    e2 = sources.blob_radii(fp) ** 2
    return d, r2, e2


def pressure_at(x: np.ndarray, sources: PointForceSet, fp: FluidParams) -> np.ndarray:
    """Pressure sum_k (f_k . d_k) G'(r_k)/r_k, finite at the sources."""
    d, r2, e2 = _separations(x, sources, fp)
    f_dot_d = np.einsum("...kj,kj->...k", d, sources.forces)
    coeff = (2.0 * r2 + 5.0 * e2) / (EIGHT_PI * (r2 + e2) ** 2.5)
    return np.sum(f_dot_d * coeff, axis=-1)


def velocity_at(x: np.ndarray, sources: PointForceSet, fp: FluidParams) -> np.ndarray:
    """
    Regularized Stokeslet velocity.

    u = (1/mu) sum_k [ f_k (B'/r - G) + (f_k . d) d (r B'' - B')/r^3 ]
      = (1/(8 pi mu)) sum_k [ f_k (r^2 + 2 eps^2) + (f_k . d) d ] / R^3
    """
    d, r2, e2 = _separations(x, sources, fp)
    inv_r3 = 1.0 / (r2 + e2) ** 1.5
    f_dot_d = np.einsum("...kj,kj->...k", d, sources.forces)
    u = (np.einsum("...k,kj->...j", (r2 + 2.0 * e2) * inv_r3, sources.forces)
         + np.einsum("...k,...kj->...j", f_dot_d * inv_r3, d))
    return u / (EIGHT_PI * fp.mu)


def rodlet_velocity_at(x: np.ndarray, sources: PointForceSet, fp: FluidParams) -> np.ndarray:
    """Regularized rotlet velocity (1/(8 pi mu)) sum_k (2 r^2 + 5 eps^2)/(2 R^5) T_k x d."""
    x = np.asarray(x, dtype=float)
    if sources.torques is None:
        return np.zeros(x.shape)
    d, r2, e2 = _separations(x, sources, fp)
    coeff = (2.0 * r2 + 5.0 * e2) / (2.0 * (r2 + e2) ** 2.5)
    u = np.sum(coeff[..., None] * np.cross(sources.torques, d), axis=-2)
    return u / (EIGHT_PI * fp.mu)


def angular_velocity_at(x: np.ndarray, sources: PointForceSet, fp: FluidParams) -> np.ndarray:
    """
    Local fluid rotation rate (half the vorticity) of the Stokeslet and rotlet fields.
    """
    d, r2, e2 = _separations(x, sources, fp)
    big_r2 = r2 + e2
    coeff_f = (2.0 * r2 + 5.0 * e2) / (2.0 * big_r2 ** 2.5)
    w = np.sum(coeff_f[..., None] * np.cross(sources.forces, d), axis=-2)

    if sources.torques is not None:
        torques = sources.torques
        t_dot_d = np.einsum("...kj,kj->...k", d, torques)
        inv_r7 = 1.0 / (4.0 * big_r2 ** 3.5)
        iso = (10.0 * e2 * e2 - 7.0 * e2 * r2 - 2.0 * r2 * r2) * inv_r7
        aniso = 3.0 * (2.0 * r2 + 7.0 * e2) * t_dot_d * inv_r7
        w = w + (np.einsum("...k,kj->...j", iso, torques)
                 + np.einsum("...k,...kj->...j", aniso, d))
    return w / (EIGHT_PI * fp.mu)


def self_mobility(fp: FluidParams) -> float:
    """Velocity per unit force at the source itself, 1/(4 pi mu eps)."""
    return 1.0 / (FOUR_PI * fp.mu * fp.epsilon)


def assemble_mobility(points: np.ndarray, fp: FluidParams) -> np.ndarray:
    """
    Dense 3N x 3N mobility matrix; block (i, j) maps f_j to its velocity at x_i.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    d = points[:, None, :] - points[None, :, :]
    r2 = np.sum(d * d, axis=-1)
    e2 = fp.epsilon ** 2
    inv_r3 = 1.0 / (r2 + e2) ** 1.5
    blocks = ((r2 + 2.0 * e2) * inv_r3)[..., None, None] * np.eye(3) \
        + inv_r3[..., None, None] * d[..., :, None] * d[..., None, :]
    blocks /= EIGHT_PI * fp.mu
    return blocks.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)


def assemble_load_mobility(points: np.ndarray, fp: FluidParams) -> np.ndarray:
    """
    Dense 6N x 6N mobility of point torques and forces at the given points.

    Rows stack the rotation rates over the velocities, columns the torques
    over the forces, so [w; u] = M [T; f] reproduces angular_velocity_at and
    velocity_at + rodlet_velocity_at for sources of radius fp.epsilon.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    d = points[:, None, :] - points[None, :, :]
    r2 = np.sum(d * d, axis=-1)
    e2 = fp.epsilon ** 2
    big_r2 = r2 + e2
    eye = np.eye(3)
    outer = d[..., :, None] * d[..., None, :]

    rotlet = -((2.0 * r2 + 5.0 * e2) / (2.0 * big_r2 ** 2.5))[..., None, None] * skew(d)
    inv_r7 = 1.0 / (4.0 * big_r2 ** 3.5)
    spin = ((10.0 * e2 * e2 - 7.0 * e2 * r2 - 2.0 * r2 * r2) * inv_r7)[..., None, None] * eye \
        + (3.0 * (2.0 * r2 + 7.0 * e2) * inv_r7)[..., None, None] * outer
    inv_r3 = 1.0 / big_r2 ** 1.5
    stokeslet = ((r2 + 2.0 * e2) * inv_r3)[..., None, None] * eye + inv_r3[..., None, None] * outer

    def flat(blocks):
        return blocks.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)

    mobility = np.block([[flat(spin), flat(rotlet)], [flat(rotlet), flat(stokeslet)]])
    return mobility / (EIGHT_PI * fp.mu)


@dataclass
class MobilitySolve:
    """Forces from an iterative mobility solve."""
    forces: np.ndarray
    residual: float
    iterations: int
    status: str = "converged"


def solve_forces_for_velocities(mobility: np.ndarray, velocities: np.ndarray,
                                tol: float = SOLVE_RTOL,
                                max_iter: Optional[int] = None) -> MobilitySolve:
    """
    Least-squares forces F minimizing |M F - U| by LSQR.

    Args:
        mobility: Mobility matrix (3N x 3N)
        velocities: Stacked velocities U, length 3N (or shape (N, 3))
        tol: Relative residual target
        max_iter: Iteration limit, default 10 * 3N

    Returns:
        MobilitySolve; status "least-squares" when M is singular and U is
        outside its range (the least-squares solution is returned)

    Raises:
        NoConvergence: iteration limit hit with neither criterion met
    """
    shape = np.shape(velocities)
    rhs = np.asarray(velocities, dtype=float).reshape(-1)
    size = rhs.shape[0]
    max_iter = 10 * size if max_iter is None else max_iter

    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return MobilitySolve(np.zeros(shape), 0.0, 0)

    # stop a decade below tol: the recomputed residual can exceed lsqr's estimate
    x, istop, itn, r1norm, _, anorm, _, arnorm = lsqr(
        mobility, rhs, atol=0.0, btol=0.1 * tol, conlim=1e15, iter_lim=max_iter)[:8]
    residual = float(np.linalg.norm(mobility @ x - rhs) / rhs_norm)

    if residual <= tol:
        status = "converged"
    elif arnorm <= LEAST_SQUARES_TOL * anorm * max(r1norm, np.finfo(float).tiny):
        status = "least-squares"
        logger.warning("mobility is singular for this right-hand side; "
                       "least-squares forces with relative residual %.3e", residual)
    else:
        raise NoConvergence(f"lsqr stopped (istop={istop}) after {itn} iterations "
                            f"with relative residual {residual:.3e} > {tol:g}")
    return MobilitySolve(forces=x.reshape(shape), residual=residual, iterations=int(itn), status=status)


@dataclass(frozen=True)
class ProbeBox:
    """Axis-aligned box sampled by an n x n x n probe grid."""
    lower: tuple = (-1.0, -1.0, -1.0)
    upper: tuple = (1.0, 1.0, 1.0)
    n: int = 5

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, self.n) for lo, hi in zip(self.lower, self.upper)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in grid], axis=-1)


def velocity_divergence(x: np.ndarray, sources: PointForceSet, fp: FluidParams,
                        h: Optional[float] = None) -> np.ndarray:
    """Central-difference div u at the points x, step h (default 1e-3 eps)."""
    h = 1e-3 * fp.epsilon if h is None else h
    x = np.asarray(x, dtype=float)
    div = np.zeros(x.shape[:-1])
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        div += (velocity_at(x + step, sources, fp)[..., axis]
                - velocity_at(x - step, sources, fp)[..., axis]) / (2.0 * h)
    return div


def divergence_residual(sources: PointForceSet, fp: FluidParams, probe_box: ProbeBox,
                        h: Optional[float] = None, nondimensional: bool = True) -> float:
    """
    Max |div u| over the probe grid by central differences with step h.

    The nondimensional value is |div u| mu eps^2 / max|f|.
    """
    div = velocity_divergence(probe_box.points(), sources, fp, h)
    residual = float(np.max(np.abs(div)))

    if nondimensional:
        f_max = float(np.max(np.linalg.norm(sources.forces, axis=-1)))
        if f_max == 0.0:
            return 0.0
        residual *= fp.mu * fp.epsilon ** 2 / f_max
    return residual
