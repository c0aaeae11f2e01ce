"""
Run configuration: flat `key = value` files validated into a RunConfig.
Every key is optional; the defaults below are the documented values.
"""

import logging
from typing import Dict, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .backend.errors import ConfigParseError, ConfigValidationError
from .backend.rod_dynamics import RodParameters
from .backend.stokes_flow import FluidParams, ProbeBox
from .backend.swimmer import SwimmerConfig


logger = logging.getLogger(__name__)

Vector = Tuple[float, float, float]
POSITIVE_VECTORS = ("inertia", "bend_stiffness", "shear_stiffness")


class RunConfig(BaseModel):
    """All run parameters; field descriptions double as the key reference."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    scenario: str = Field("bacteria", description="free-form scenario name, used in file names")
    output_dir: str = Field("out", description="directory every output file goes to")
    seed: int = Field(0, ge=0, description="seed of every random draw")
    record_stride: int = Field(10, gt=0, description="record a trace frame every n steps")

    # rod
    length: float = Field(1.0, gt=0, description="flagellum length")
    n_nodes: int = Field(21, ge=3, description="rod nodes")
    rho: float = Field(1.0, gt=0, description="density")
    area: float = Field(1e-2, gt=0, description="cross-section area")
    inertia: Vector = Field((1e-4, 1e-4, 2e-4), description="second moments J1, J2, J3")
    bend_stiffness: Vector = Field((1.0, 1.0, 1.0), description="bending/twist stiffness")
    shear_stiffness: Vector = Field((100.0, 100.0, 100.0), description="shear/stretch stiffness")
    boundary: Literal["clamped-free", "free-free"] = Field("free-free", description="rod ends")

    # fluid
    mu: float = Field(1.0, gt=0, description="viscosity")
    epsilon: float = Field(0.05, gt=0, description="blob radius")

    # swimmer
    mode: Literal["overdamped", "inertial"] = Field("overdamped", description="coupling mode")
    helix_amplitude: float = Field(0.05, ge=0, description="helix radius, 0 for a straight rod")
    helix_wavelength: float = Field(1.0, gt=0, description="helix pitch")
    motor_torque: float = Field(2.0, description="signed motor torque along the base d3")
    head_radius: float = Field(0.1, ge=0, description="head blob radius, 0 for no head")
    chemotaxis_gain: float = Field(0.0, description="torque modulation per unit gradient")
    gradient: Vector = Field((0.0, 0.0, 0.0), description="concentration gradient")
    base_rotation: Vector = Field((0.0, 0.0, 0.0), description="initial swimmer orientation")
    initial_noise: float = Field(0.0, ge=0, description="initial rotation-vector noise")
    dt: float = Field(5e-5, gt=0, description="time step")
    n_steps: int = Field(1000, ge=0, description="time steps")

    # bench-stiffness
    dt_min: float = Field(1e-9, gt=0, description="smallest step of the stability search")
    dt_max: float = Field(1e-1, gt=0, description="largest step of the stability search")
    stability_window: int = Field(1000, gt=0, description="steps a dt must survive")
    bench_amplitude: float = Field(1e-3, gt=0, description="initial rate amplitude")

    # stokes-probe
    n_sources: int = Field(5, gt=0, description="random Stokeslets in the probe field")
    probe_lower: Vector = Field((-1.0, -1.0, -1.0), description="probe box lower corner")
    probe_upper: Vector = Field((1.0, 1.0, 1.0), description="probe box upper corner")
    probe_n: int = Field(5, ge=2, description="probe points per axis")

    @field_validator(*POSITIVE_VECTORS)
    @classmethod
    def _positive_components(cls, value: Vector) -> Vector:
        if min(value) <= 0:
            raise ValueError("must be > 0")
        return value


FIELD_NAMES = tuple(RunConfig.model_fields)


def _constraint(error: Dict) -> str:
    ctx = error.get("ctx", {})
    kind = error["type"]
    if kind == "greater_than":
        return f"must be > {ctx['gt']:g}"
    if kind == "greater_than_equal":
        return f"must be >= {ctx['ge']:g}"
    if kind == "value_error":
        return str(ctx.get("error", error["msg"]))
    return error["msg"]


def validate_config(values: Dict) -> RunConfig:
    """
    Build a RunConfig from raw values.

    Raises:
        ConfigValidationError: first violated constraint, keyed by field name
    """
    try:
        return RunConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else "config"
        raise ConfigValidationError(key, _constraint(error)) from e


def parse_config_text(text: str) -> RunConfig:
    """
    Parse `key = value` lines; `#` starts a comment, vectors are comma separated.

    Raises:
        ConfigParseError: malformed line, unknown or repeated key
        ConfigValidationError: value outside its range
    """
    values: Dict = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(number, "expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key.isidentifier():
            raise ConfigParseError(number, f"invalid key {key!r}")
        if key not in FIELD_NAMES:
            raise ConfigParseError(number, f"unknown key {key!r}")
        if key in values:
            raise ConfigParseError(number, f"duplicate key {key!r}")
        if not value:
            raise ConfigParseError(number, f"missing value for {key!r}")
        values[key] = [v.strip() for v in value.split(",")] if "," in value else value
    return validate_config(values)


def parse_config(path: str) -> RunConfig:
    """Read and parse a configuration file."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    config = parse_config_text(text)
    logger.info("loaded config %s (scenario %s)", path, config.scenario)
    return config


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: RunConfig) -> str:
    """Every key with its value, in declaration order; parses back to an equal config."""
    return "".join(f"{key} = {_format(getattr(config, key))}\n" for key in FIELD_NAMES)


def with_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Copy with CLI overrides (None entries ignored), revalidated."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return config
    return validate_config({**config.model_dump(), **updates})


def rod_parameters(config: RunConfig) -> RodParameters:
    return RodParameters(rho=config.rho, area=config.area, inertia=config.inertia,
                         bend_stiffness=config.bend_stiffness,
                         shear_stiffness=config.shear_stiffness, boundary=config.boundary)


def fluid_params(config: RunConfig) -> FluidParams:
    return FluidParams(mu=config.mu, epsilon=config.epsilon)


def probe_box(config: RunConfig) -> ProbeBox:
    return ProbeBox(lower=config.probe_lower, upper=config.probe_upper, n=config.probe_n)


def swimmer_config(config: RunConfig) -> SwimmerConfig:
    """SwimmerConfig for the run command."""
    return SwimmerConfig(
        length=config.length, n_nodes=config.n_nodes, rod=rod_parameters(config),
        helix_amplitude=config.helix_amplitude, helix_wavelength=config.helix_wavelength,
        fluid=fluid_params(config), motor_torque=config.motor_torque,
        head_radius=config.head_radius, mode=config.mode,
        chemotaxis_gain=config.chemotaxis_gain, gradient=np.array(config.gradient),
        base_rotation=np.array(config.base_rotation), initial_noise=config.initial_noise,
        dt=config.dt, n_steps=config.n_steps, record_stride=config.record_stride,
        seed=config.seed,
    )
