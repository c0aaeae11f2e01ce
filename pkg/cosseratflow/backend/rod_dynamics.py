"""
Rod dynamics: constitutive law, balance laws and time steppers.
The semi-analytical stepper keeps (p, q) as the only stored kinematic state;
the full-numeric baseline integrates all twelve fields directly.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .errors import GridTooSmall, NoStableStep, NumericalBlowup, SingularParameterization
from .kinematics import (
    body_rate_from_p,
    phi_inverse,
    rebase_rotation_vector,
    rotation_from_p,
    rotation_vector_derivative,
    skew,
)


logger = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e12
STABILITY_WINDOW = 1000         # steps a dt must survive to count as stable
ENERGY_GROWTH_LIMIT = 10.0      # allowed energy growth over the window
SEARCH_RESOLUTION = 1.2         # bisection stops when dt_hi / dt_lo <= this
ENERGY_CHECK_EVERY = 50
BOUNDARIES = ("clamped-free", "free-free")
STEPPERS = ("semi-analytical", "full-numeric")


def _vec3(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"expected 3-vector(s), got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class RodParameters:
    """Material and reference-shape parameters of a rod."""
    rho: float = 1.0
    area: float = 1e-2
    inertia: np.ndarray = field(default_factory=lambda: np.array([1e-5, 1e-5, 2e-5]))
    bend_stiffness: np.ndarray = field(default_factory=lambda: np.array([1e-2, 1e-2, 1e-2]))
    shear_stiffness: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0]))
    kappa_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))
    nu_ref: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    boundary: str = "clamped-free"

    def __post_init__(self):
        for name in ("inertia", "bend_stiffness", "shear_stiffness", "kappa_ref", "nu_ref"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        if self.rho <= 0 or self.area <= 0:
            raise ValueError("rho and area must be > 0")
        for name in ("inertia", "bend_stiffness", "shear_stiffness"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} components must be > 0")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")


@dataclass
class RodState:
    """Semi-analytical state: per-node p, q, omega, v plus base position and time."""
    p: np.ndarray
    q: np.ndarray
    omega: np.ndarray
    v: np.ndarray
    ds: float
    r0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self):
        self.p = _vec3(self.p)
        self.q = _vec3(self.q)
        self.omega = _vec3(self.omega)
        self.v = _vec3(self.v)
        self.r0 = _vec3(self.r0)
        if not self.p.shape == self.q.shape == self.omega.shape == self.v.shape:
            raise ValueError("per-node fields must share one shape (n_nodes, 3)")
        if self.ds <= 0:
            raise ValueError("ds must be > 0")

    @property
    def n_nodes(self) -> int:
        return self.p.shape[0]

    def copy(self) -> "RodState":
        return RodState(self.p.copy(), self.q.copy(), self.omega.copy(), self.v.copy(),
                        self.ds, self.r0.copy(), self.t)


@dataclass
class FullState:
    """Baseline state: the twelve fields kappa, nu, omega, v plus the base frame."""
    kappa: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    v: np.ndarray
    ds: float
    p_base: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r_base: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    @property
    def n_nodes(self) -> int:
        return np.shape(self.kappa)[0]


@dataclass
class ExternalLoads:
    """Body-frame force (F) and torque (L) densities per node."""
    force: np.ndarray
    torque: np.ndarray

    @classmethod
    def zeros(cls, n_nodes: int) -> "ExternalLoads":
        return cls(np.zeros((n_nodes, 3)), np.zeros((n_nodes, 3)))


def constitutive_forces(kappa: np.ndarray, nu: np.ndarray,
                        params: RodParameters) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linear diagonal constitutive law in the director basis.

    Returns:
        (m, n) with m = K_bend (kappa - kappa_ref), n = K_shear (nu - nu_ref)
    """
    m = params.bend_stiffness * (np.asarray(kappa, dtype=float) - params.kappa_ref)
    n = params.shear_stiffness * (np.asarray(nu, dtype=float) - params.nu_ref)
    return m, n


def spatial_derivative(values: np.ndarray, ds: float) -> np.ndarray:
    """
    Derivative along the nodes: central inside, second-order one-sided at both ends.

    Raises:
        GridTooSmall: fewer than 3 nodes
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 3:
        raise GridTooSmall(f"need at least 3 nodes to differentiate, got {values.shape[0]}")
    return np.gradient(values, ds, axis=0, edge_order=2)


def _free_end_mask(n_nodes: int, boundary: str) -> np.ndarray:
    """1 where the stress resultants are free, 0 on free end nodes."""
    keep = np.ones(n_nodes)
    keep[-1] = 0.0
    if boundary == "free-free":
        keep[0] = 0.0
    return keep


def strains(state: RodState) -> Tuple[np.ndarray, np.ndarray]:
    """
    kappa and nu of a semi-analytical state through the closed-form solution.

    nu = q x kappa - q_s is evaluated as -R^T (R q)_s: the difference stencil
    acts on the lab-frame chord R q = r_0 - r, so the shear strain of a node
    follows its own frame and not the mean of its neighbours.
    """
    kappa = body_rate_from_p(state.p, rotation_vector_derivative(state.p, state.ds))
    frames = rotation_from_p(state.p)
    chord = np.einsum("nij,nj->ni", frames, state.q)
    nu = -np.einsum("nji,nj->ni", frames, spatial_derivative(chord, state.ds))
    return kappa, nu


def dynamic_rhs(kappa: np.ndarray, nu: np.ndarray, omega: np.ndarray, v: np.ndarray,
                loads: ExternalLoads, params: RodParameters, ds: float,
                boundary: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Angular and linear balance laws in the body frame.

    rho J omega_t = m_s + kappa x m + nu x n - omega x (rho J omega) + L
    rho A v_t     = n_s + kappa x n - omega x (rho A v) + F

    Args:
        kappa, nu, omega, v: Per-node fields, shape (n, 3)
        loads: External force and torque densities
        params: Rod parameters (J diagonal)
        ds: Node spacing
        boundary: None for the bare operator, otherwise "clamped-free" or
            "free-free"; free ends impose m = n = 0 on the end node and a
            clamped base holds node 0 at rest

    Returns:
        (omega_t, v_t) per node
    """
    m, n = constitutive_forces(kappa, nu, params)
    if boundary is not None:
        keep = _free_end_mask(np.shape(kappa)[0], boundary)[:, None]
        m = m * keep
        n = n * keep
    m_s = spatial_derivative(m, ds)
    n_s = spatial_derivative(n, ds)

    rho_j = params.rho * params.inertia
    rho_a = params.rho * params.area
    omega_t = (m_s + np.cross(kappa, m) + np.cross(nu, n)
               - np.cross(omega, rho_j * omega) + loads.torque) / rho_j
    v_t = (n_s + np.cross(kappa, n) - np.cross(omega, rho_a * v) + loads.force) / rho_a

    if boundary == "clamped-free":
        omega_t[0] = 0.0
        v_t[0] = 0.0
    return omega_t, v_t


def _check_finite(*arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)) or np.max(np.abs(arr)) > BLOWUP_THRESHOLD:
            raise NumericalBlowup(f"field exceeded {BLOWUP_THRESHOLD:g} or became non-finite")


def _node_blocks(mats: np.ndarray) -> sparse.csr_matrix:
    """Block-diagonal operator on flattened (n, 3) fields from per-node 3x3 matrices."""
    n = mats.shape[0]
    return sparse.bsr_matrix((np.ascontiguousarray(mats), np.arange(n), np.arange(n + 1)),
                             shape=(3 * n, 3 * n)).tocsr()


def _node_diagonal(values: np.ndarray, n_nodes: int) -> sparse.dia_matrix:
    return sparse.diags(np.tile(values, n_nodes))


@lru_cache(maxsize=16)
def _difference_operator(n_nodes: int, ds: float) -> sparse.csr_matrix:
    """spatial_derivative as a sparse operator on flattened (n, 3) fields."""
    stencil = spatial_derivative(np.eye(n_nodes), ds)
    return sparse.kron(sparse.csr_matrix(stencil), sparse.identity(3), format="csr")


def elastic_rate_operator(kappa: np.ndarray, nu: np.ndarray, frames: np.ndarray,
                          params: RodParameters, ds: float,
                          boundary: Optional[str] = None) -> sparse.csr_matrix:
    """
    Linear map from end-of-step (omega, v) to the increments of the elastic
    torque and force densities over one step, divided by dt.

    Strain increments follow the closed-form kinematics of (p, q) with the
    rates entering through p_t = Phi(omega, p) and q_t = q x omega - v:
    dkappa = dt (D_s + [kappa]x) omega and dnu = dt ([nu]x omega + R^T D_s R v),
    R the node frames. The elastic terms m_s + kappa x m + nu x n and
    n_s + kappa x n are linearized about the current strains. Rows stack
    torque over force, columns omega over v, both per node.

    Args:
        boundary: End conditions of the stress resultants, default params.boundary
    """
    n_nodes = kappa.shape[0]
    keep = _free_end_mask(n_nodes, boundary or params.boundary)
    m, n = constitutive_forces(kappa, nu, params)
    m = m * keep[:, None]
    n = n * keep[:, None]

    difference = _difference_operator(n_nodes, ds)
    transport = difference + _node_blocks(skew(kappa))
    rotate = _node_blocks(np.asarray(frames))
    nu_omega = _node_blocks(skew(nu))
    nu_v = rotate.T @ difference @ rotate

    free = sparse.diags(np.repeat(keep, 3))
    bend = free @ _node_diagonal(params.bend_stiffness, n_nodes)
    shear = free @ _node_diagonal(params.shear_stiffness, n_nodes)
    cross_m = _node_blocks(skew(m))
    cross_n = _node_blocks(skew(n))

    torque_kappa = transport @ bend - cross_m
    torque_nu = nu_omega @ shear - cross_n
    force_kappa = -cross_n
    force_nu = transport @ shear

    return sparse.bmat([
        [torque_kappa @ transport + torque_nu @ nu_omega, torque_nu @ nu_v],
        [force_kappa @ transport + force_nu @ nu_omega, force_nu @ nu_v],
    ], format="csr")


def step_semi_analytical(state: RodState, loads: ExternalLoads, params: RodParameters,
                         dt: float) -> RodState:
    """
    One step of the semi-analytical scheme.

    Strains come from (p, q). The end-of-step omega and v solve one sparse
    linear system: the elastic response to the strain increment that the new
    rates induce through p_t = Phi(omega, p) and q_t = q x omega - v is taken
    at the end of the step, everything else at the start. p and q then
    advance with the new rates, so the stored state stays compatible; stiff
    elastic modes are damped at any dt.

    Raises:
        SingularParameterization: propagated from the inverse map
        NumericalBlowup: a field left the finite range
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")

    kappa, nu = strains(state)
    omega_t, v_t = dynamic_rhs(kappa, nu, state.omega, state.v, loads, params, state.ds,
                               boundary=params.boundary)

    n_nodes = state.n_nodes
    mass = np.concatenate([np.tile(params.rho * params.inertia, n_nodes),
                           np.full(3 * n_nodes, params.rho * params.area)])
    rates = np.concatenate([state.omega.ravel(), state.v.ravel()])
    frames = rotation_from_p(state.p)
    stiffness = elastic_rate_operator(kappa, nu, frames, params, state.ds)
    lhs = sparse.diags(mass) - dt * dt * stiffness
    rhs = mass * (rates + dt * np.concatenate([omega_t.ravel(), v_t.ravel()]))
    if params.boundary == "clamped-free":
        moving = np.ones(6 * n_nodes)
        moving[0:3] = 0.0
        moving[3 * n_nodes:3 * n_nodes + 3] = 0.0
        lhs = sparse.diags(moving) @ lhs + sparse.diags(1.0 - moving)
        rhs = moving * rhs + (1.0 - moving) * rates

    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            solved = spsolve(lhs.tocsc(), rhs)
        except MatrixRankWarning as e:
            raise NumericalBlowup(f"singular rate system at t = {state.t:g}") from e
    omega = solved[:3 * n_nodes].reshape(n_nodes, 3)
    v = solved[3 * n_nodes:].reshape(n_nodes, 3)
    if params.boundary == "clamped-free":
        omega[0] = state.omega[0]
        v[0] = state.v[0]

    p = state.p + dt * phi_inverse(omega, state.p)
    q = state.q + dt * (np.cross(state.q, omega) - v)
    r0 = state.r0 + dt * (frames[0] @ v[0])
    if params.boundary == "clamped-free":
        p[0] = state.p[0]
        q[0] = state.q[0]
        r0 = state.r0.copy()

    p = rebase_rotation_vector(p)
    _check_finite(p, q, omega, v)
    return RodState(p=p, q=q, omega=omega, v=v, ds=state.ds, r0=r0, t=state.t + dt)


def step_full_numeric(state: FullState, loads: ExternalLoads, params: RodParameters,
                      dt: float) -> FullState:
    """Forward Euler on all twelve fields of the governing system."""
    if dt <= 0:
        raise ValueError("dt must be > 0")

    kappa, nu, omega, v = state.kappa, state.nu, state.omega, state.v
    kappa_t = spatial_derivative(omega, state.ds) - np.cross(omega, kappa)
    nu_t = spatial_derivative(v, state.ds) + np.cross(kappa, v) - np.cross(omega, nu)
    omega_t, v_t = dynamic_rhs(kappa, nu, omega, v, loads, params, state.ds,
                               boundary=params.boundary)

    new_kappa = kappa + dt * kappa_t
    new_nu = nu + dt * nu_t
    new_omega = omega + dt * omega_t
    new_v = v + dt * v_t

    p_base = state.p_base
    r_base = state.r_base
    if params.boundary != "clamped-free":
        r_base = r_base + dt * (rotation_from_p(p_base) @ v[0])
        p_base = rebase_rotation_vector(p_base + dt * phi_inverse(omega[0], p_base))

    _check_finite(new_kappa, new_nu, new_omega, new_v)
    return FullState(new_kappa, new_nu, new_omega, new_v, state.ds,
                     p_base=p_base, r_base=r_base, t=state.t + dt)


def full_state_from_rod_state(state: RodState) -> FullState:
    """Baseline state carrying the same strains and rates as a semi-analytical state."""
    kappa, nu = strains(state)
    return FullState(kappa=kappa, nu=nu, omega=state.omega.copy(), v=state.v.copy(),
                     ds=state.ds, p_base=state.p[0].copy(), r_base=state.r0.copy(), t=state.t)


def reconstruct_centerline(state: RodState) -> Tuple[np.ndarray, np.ndarray]:
    """
    Centerline and director frames of a rod state.

    r(s_0) = r0 and r_{i+1} = r_i + (ds/2)(D_i nu_i + D_{i+1} nu_{i+1}).

    Returns:
        (r, D) with shapes (n, 3) and (n, 3, 3)
    """
    frames = rotation_from_p(state.p)
    if state.n_nodes == 1:
        return state.r0[None, :].copy(), frames

    _, nu = strains(state)
    tangent = np.einsum("nij,nj->ni", frames, nu)
    steps = 0.5 * state.ds * (tangent[1:] + tangent[:-1])
    r = np.empty_like(tangent)
    r[0] = state.r0
    r[1:] = state.r0 + np.cumsum(steps, axis=0)
    return r, frames


def rod_state_from_frames(p: np.ndarray, r: np.ndarray, ds: float,
                          omega: Optional[np.ndarray] = None,
                          v: Optional[np.ndarray] = None) -> RodState:
    """
    Rod state for given frame rotation vectors and centerline points.

    Uses q = -R(p)^T (r - r_0), the integral of the strain relation with the
    base as reference point.
    """
    p = _vec3(p)
    r = _vec3(r)
    q = -np.einsum("nji,nj->ni", rotation_from_p(p), r - r[0])
    zeros = np.zeros_like(p)
    return RodState(p=p, q=q,
                    omega=zeros.copy() if omega is None else omega,
                    v=zeros.copy() if v is None else v,
                    ds=ds, r0=r[0].copy())


def rod_energy(kappa: np.ndarray, nu: np.ndarray, omega: np.ndarray, v: np.ndarray,
               params: RodParameters, ds: float) -> float:
    """Kinetic plus elastic energy."""
    kinetic = 0.5 * np.sum(params.rho * params.area * v ** 2 + params.rho * params.inertia * omega ** 2)
    m, n = constitutive_forces(kappa, nu, params)
    elastic = 0.5 * np.sum(m * (kappa - params.kappa_ref) + n * (nu - params.nu_ref))
    return float((kinetic + elastic) * ds)


def state_energy(state: Union[RodState, FullState], params: RodParameters) -> float:
    if isinstance(state, RodState):
        kappa, nu = strains(state)
    else:
        kappa, nu = state.kappa, state.nu
    return rod_energy(kappa, nu, state.omega, state.v, params, state.ds)


def linear_momentum(state: RodState, params: RodParameters) -> np.ndarray:
    """Lab-frame linear momentum sum(rho A D_i v_i ds)."""
    lab_v = np.einsum("nij,nj->ni", rotation_from_p(state.p), state.v)
    return params.rho * params.area * state.ds * lab_v.sum(axis=0)


@dataclass
class StiffnessScenario:
    """Initial condition and loads for a stability search."""
    params: RodParameters
    state: RodState
    loads: ExternalLoads
    name: str = "reference-stiff-rod"


def reference_stiff_scenario(params: Optional[RodParameters] = None, n_nodes: int = 50,
                             length: float = 1.0, amplitude: float = 1e-3,
                             seed: int = 0) -> StiffnessScenario:
    """
    Straight rod along e3 with seeded random initial rates so every mode is excited.
    """
    params = params or RodParameters()
    rng = np.random.default_rng(seed)
    ds = length / (n_nodes - 1)
    s = np.linspace(0.0, length, n_nodes)
    r = s[:, None] * params.nu_ref[None, :]
    omega = amplitude * rng.standard_normal((n_nodes, 3))
    v = amplitude * rng.standard_normal((n_nodes, 3))
    if params.boundary == "clamped-free":
        omega[0] = 0.0
        v[0] = 0.0
    state = rod_state_from_frames(np.zeros((n_nodes, 3)), r, ds, omega=omega, v=v)
    return StiffnessScenario(params=params, state=state, loads=ExternalLoads.zeros(n_nodes))


def is_stable(stepper: str, scenario: StiffnessScenario, dt: float,
              window: int = STABILITY_WINDOW) -> bool:
    """True when `window` steps finish without blowup and energy stays below the growth limit."""
    params = scenario.params
    if stepper == "semi-analytical":
        state = scenario.state.copy()
        step = step_semi_analytical
    elif stepper == "full-numeric":
        state = full_state_from_rod_state(scenario.state)
        step = step_full_numeric
    else:
        raise ValueError(f"stepper must be one of {STEPPERS}")

    limit = ENERGY_GROWTH_LIMIT * max(state_energy(state, params), np.finfo(float).tiny)
    try:
        for i in range(1, window + 1):
            state = step(state, scenario.loads, params, dt)
            if i % ENERGY_CHECK_EVERY == 0 or i == window:
                if not state_energy(state, params) < limit:
                    return False
    except (NumericalBlowup, SingularParameterization):
        return False
    return True


def stable_step_search(stepper: str, scenario: StiffnessScenario,
                       dt_range: Tuple[float, float] = (1e-9, 1e-1),
                       window: int = STABILITY_WINDOW,
                       resolution: float = SEARCH_RESOLUTION) -> float:
    """
    Largest stable time step, by bisection over log dt.

    Args:
        stepper: "semi-analytical" or "full-numeric"
        scenario: Initial condition and loads
        dt_range: (dt_min, dt_max), spanning at least 6 decades
        window: Steps a dt must survive
        resolution: Ratio at which the bracket is considered resolved

    Returns:
        The largest dt found stable, within `resolution` of the threshold

    Raises:
        NoStableStep: dt_min itself is unstable
    """
    lo, hi = float(dt_range[0]), float(dt_range[1])
    if not 0 < lo < hi or hi / lo < 1e6:
        raise ValueError("dt_range must be positive and span at least 6 decades")

    if not is_stable(stepper, scenario, lo, window):
        raise NoStableStep(f"{stepper}: unstable already at dt = {lo:g}")
    if is_stable(stepper, scenario, hi, window):
        logger.info("%s stable over the whole range, dt_max = %g", stepper, hi)
        return hi

    while hi / lo > resolution:
        mid = float(np.sqrt(lo * hi))
        if is_stable(stepper, scenario, mid, window):
            lo = mid
        else:
            hi = mid
        logger.debug("%s bracket [%g, %g]", stepper, lo, hi)

    logger.info("%s dt_max = %g", stepper, lo)
    return lo


def with_bend_scale(params: RodParameters, factor: float) -> RodParameters:
    """Copy of params with every bending stiffness multiplied by factor."""
    return replace(params, bend_stiffness=params.bend_stiffness * factor)
