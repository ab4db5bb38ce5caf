"""
Configuration for the laboratory.

Process settings come from the environment (CONELAB_*) and an optional
.env file. Run configurations are flat `section.key = value` files with
the sections geometry, mesh, flow, estimates and sweep.
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings

from conelab.errors import ConfigError, HorizonError, MeshError
from conelab.flow import FlowConfig, FlowVariant
from conelab.geometry import ConeParams, DivisorConfig, DivisorKind, ModelGeometry, tmax
from conelab.mesh import Mesh, build_mesh

logger = logging.getLogger(__name__)

LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
LOG_FORMATS = {"json", "text"}


class Settings(BaseSettings):
    """Process settings"""

    out_dir: str = "./runs"
    log_level: str = "INFO"
    log_format: str = "json"
    jobs: int = Field(default=1, ge=1)
    metrics_enabled: bool = True

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        if v.upper() not in LOG_LEVELS:
            raise ValueError(f"log_level must be one of {sorted(LOG_LEVELS)}")
        return v.upper()

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v):
        if v.lower() not in LOG_FORMATS:
            raise ValueError(f"log_format must be one of {sorted(LOG_FORMATS)}")
        return v.lower()

    class Config:
        env_prefix = "CONELAB_"
        env_file = ".env"
        case_sensitive = False


def _split_list(v):
    if isinstance(v, str):
        return [item.strip() for item in v.split(",") if item.strip()]
    return v


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometrySection(_Section):
    divisor: DivisorKind = DivisorKind.ONE_POINT
    twist_c: float = 1.0
    rescale_lambda: float = Field(default=0.005, gt=0.0, lt=1.0)
    delta_cap: float = Field(default=0.01, gt=0.0, lt=1.0)
    gamma: float = Field(default=0.5, ge=0.0, le=1.0)
    epsilon: float = Field(default=0.1, ge=0.0)
    horizon_T: float = Field(default=1.0, gt=0.0)


class MeshSection(_Section):
    u_min: float = -40.0
    u_max: float = 12.0
    n: int = Field(default=513, ge=8)
    grading: float = Field(default=1.02, ge=1.0)


class InitialData(str, Enum):
    ZERO = "zero"
    BUMP = "bump"
    RANDOM = "random"


class FlowSection(_Section):
    variant: FlowVariant = FlowVariant.CONICAL
    initial_data: InitialData = InitialData.ZERO
    initial_amplitude: float = Field(default=0.5, ge=0.0)
    mollify_j: int = Field(default=4, ge=1)
    mollify_radius: float = Field(default=1.0, gt=0.0)
    dt_initial: float = Field(default=1e-3, gt=0.0)
    dt_growth: float = Field(default=0.05, ge=0.0)
    dt_max: float = Field(default=0.02, gt=0.0)
    dt_schedule: Optional[List[Tuple[float, float]]] = None
    output_times: List[float] = Field(default_factory=list)
    newton_tol: float = Field(default=1e-11, gt=0.0)
    newton_max_iter: int = Field(default=30, ge=1)
    positivity_floor_scale: float = Field(default=1e-14, gt=0.0)
    max_halvings: int = Field(default=8, ge=0)

    @field_validator("dt_schedule", mode="before")
    @classmethod
    def parse_schedule(cls, v):
        if isinstance(v, str):
            pairs = []
            for item in _split_list(v):
                end, _, dt = item.partition(":")
                if not dt:
                    raise ValueError(f"schedule entry '{item}' is not t_end:dt")
                pairs.append((end, dt))
            return pairs
        return v

    @field_validator("output_times", mode="before")
    @classmethod
    def parse_times(cls, v):
        return _split_list(v)


class EstimatesSection(_Section):
    sigma: float = Field(default=0.05, gt=0.0)
    delta: float = Field(default=0.1, ge=0.0)
    l: float = Field(default=2.0, gt=0.0)
    t0: float = Field(default=0.05, gt=0.0)
    gamma_ladder: bool = False


def _default_gammas() -> List[float]:
    return [2.0**-k for k in range(1, 9)]


def _default_time_ladder() -> List[float]:
    return [1e-5 * 2.0**k for k in range(15)]


class SweepSection(_Section):
    gammas: List[float] = Field(default_factory=_default_gammas)
    window: Tuple[float, float] = (-5.0, 5.0)
    times: List[float] = Field(default_factory=lambda: [0.1, 0.5, 0.9])
    epsilons: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1])
    j_list: List[int] = Field(default_factory=lambda: [1, 2, 4])
    u_mins: List[float] = Field(default_factory=lambda: [-20.0, -40.0, -60.0])
    time_ladder: List[float] = Field(default_factory=_default_time_ladder)
    seed: int = 0

    @field_validator("gammas", "window", "times", "epsilons", "j_list", "u_mins", "time_ladder", mode="before")
    @classmethod
    def parse_lists(cls, v):
        return _split_list(v)


SECTIONS = {
    "geometry": GeometrySection,
    "mesh": MeshSection,
    "flow": FlowSection,
    "estimates": EstimatesSection,
    "sweep": SweepSection,
}


class LabConfig(BaseModel):
    """A fully defaulted run configuration"""

    model_config = ConfigDict(frozen=True)

    geometry: GeometrySection = Field(default_factory=GeometrySection)
    mesh: MeshSection = Field(default_factory=MeshSection)
    flow: FlowSection = Field(default_factory=FlowSection)
    estimates: EstimatesSection = Field(default_factory=EstimatesSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    def divisor(self) -> DivisorConfig:
        geo = self.geometry
        return DivisorConfig(
            kind=geo.divisor,
            twist_c=geo.twist_c,
            rescale_lambda=geo.rescale_lambda,
            delta_cap=geo.delta_cap,
        )

    def model_geometry(self) -> ModelGeometry:
        return ModelGeometry(self.divisor())

    def cone_params(self) -> ConeParams:
        geo = self.geometry
        return ConeParams(gamma=geo.gamma, epsilon=geo.epsilon, horizon_T=geo.horizon_T)

    def build_mesh(self) -> Mesh:
        m = self.mesh
        return build_mesh(m.u_min, m.u_max, m.n, m.grading)

    def gamma_eff(self) -> float:
        return 0.0 if self.flow.variant is FlowVariant.CUSP else self.geometry.gamma

    def tmax(self) -> float:
        return tmax(self.model_geometry(), self.gamma_eff())

    def flow_config(self, **overrides) -> FlowConfig:
        f = self.flow
        kwargs = dict(
            geom=self.model_geometry(),
            params=self.cone_params(),
            mesh=self.build_mesh(),
            variant=f.variant,
            mollify_j=f.mollify_j,
            mollify_radius=f.mollify_radius,
            dt_schedule=tuple(f.dt_schedule) if f.dt_schedule else None,
            dt_initial=f.dt_initial,
            dt_growth=f.dt_growth,
            dt_max=f.dt_max,
            output_times=tuple(f.output_times),
            newton_tol=f.newton_tol,
            newton_max_iter=f.newton_max_iter,
            positivity_floor_scale=f.positivity_floor_scale,
            max_halvings=f.max_halvings,
        )
        kwargs.update(overrides)
        return FlowConfig(**kwargs)

    def canonical(self) -> dict:
        return self.model_dump(mode="json")


def _line_of(lines: Dict[str, int], section: str, key: str) -> Optional[int]:
    return lines.get(f"{section}.{key}")


def parse_config_text(text: str) -> LabConfig:
    """
    Parse and validate a key-value configuration.

    Raises:
        ConfigError: malformed line, unknown key, bad value or violated invariant
    """
    raw: Dict[str, Dict[str, str]] = {name: {} for name in SECTIONS}
    lines: Dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'", line=lineno)
        section, dot, name = key.partition(".")
        if not dot or not name:
            raise ConfigError(f"line {lineno}: key '{key}' has no section", key=key, line=lineno)
        if section not in SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section '{section}'", key=key, line=lineno)
        if name in raw[section]:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'", key=key, line=lineno)
        raw[section][name] = value
        lines[key] = lineno

    sections = {}
    for section, model in SECTIONS.items():
        try:
            sections[section] = model(**raw[section])
        except ValidationError as e:
            err = e.errors()[0]
            name = str(err["loc"][0]) if err["loc"] else ""
            key = f"{section}.{name}"
            if err["type"] == "extra_forbidden":
                message = f"unknown key '{key}'"
            else:
                message = f"invalid value for '{key}': {err['msg']}"
            line = _line_of(lines, section, name)
            if line is not None:
                message = f"line {line}: {message}"
            raise ConfigError(message, key=key, line=line)

    config = LabConfig(**sections)
    _check_invariants(config, lines)
    return config


def _check_invariants(config: LabConfig, lines: Dict[str, int]) -> None:
    geo = config.geometry
    if not geo.rescale_lambda < geo.delta_cap:
        raise ConfigError(
            "rescale_lambda must be strictly below delta_cap",
            key="geometry.rescale_lambda",
            line=_line_of(lines, "geometry", "rescale_lambda"),
            invariant="rescale_lambda < delta_cap < 1",
        )
    if config.flow.variant in (FlowVariant.CONICAL, FlowVariant.REGULARIZED) and not geo.gamma > 0:
        raise ConfigError(
            f"{config.flow.variant.value.capitalize()} requires gamma > 0",
            key="geometry.gamma",
            line=_line_of(lines, "geometry", "gamma"),
            invariant="gamma > 0",
        )
    limit = config.tmax()
    if not geo.horizon_T < limit:
        raise ConfigError(
            f"horizon_T={geo.horizon_T} violates the class condition: the class "
            f"[omega] + t(-c1(X) + (1-gamma) c1(L_D) + [eta]) stops being positive at tmax={limit}",
            key="geometry.horizon_T",
            line=_line_of(lines, "geometry", "horizon_T"),
            invariant="horizon_T < tmax (class condition)",
        )
    for gamma in config.sweep.gammas:
        sweep_limit = tmax(config.model_geometry(), gamma)
        if not geo.horizon_T < sweep_limit:
            raise ConfigError(
                f"horizon_T={geo.horizon_T} violates the class condition at sweep gamma={gamma}",
                key="sweep.gammas",
                line=_line_of(lines, "sweep", "gammas"),
                invariant="horizon_T < tmax (class condition)",
            )
    try:
        config.flow_config()
    except MeshError as e:
        raise ConfigError(
            f"invalid mesh: {e.message}",
            key="mesh.u_min",
            line=_line_of(lines, "mesh", "u_min"),
            invariant="u_min < u_max, n >= 8",
        )
    except HorizonError as e:
        raise ConfigError(e.message, key="geometry.horizon_T", invariant="horizon_T < tmax (class condition)")
    except ConfigError as e:
        raise ConfigError(
            e.message,
            key=e.key,
            line=_line_of(lines, *e.key.split(".", 1)) if e.key else None,
            invariant=e.invariant,
        )


def load_config(path: Union[str, Path, None]) -> LabConfig:
    """Read a configuration file; None gives the defaults"""
    if path is None:
        config = LabConfig()
        _check_invariants(config, {})
        return config
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    config = parse_config_text(text)
    logger.info("Configuration loaded", extra={"path": str(path), "tmax": config.tmax()})
    return config


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.17g" % value
    if hasattr(value, "value"):
        return str(value.value)
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            return ", ".join(f"{_fmt(a)}:{_fmt(b)}" for a, b in value)
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def dump_config(config: LabConfig) -> str:
    """Echo every key, defaults included; the output parses back to an equal config"""
    out = [f"# tmax = {_fmt(float(config.tmax()))}"]
    for section in SECTIONS:
        model = getattr(config, section)
        for name in type(model).model_fields:
            value = getattr(model, name)
            if value is None:
                continue
            if isinstance(value, list) and not value:
                continue
            out.append(f"{section}.{name} = {_fmt(value)}")
    return "\n".join(out) + "\n"


settings = Settings()
