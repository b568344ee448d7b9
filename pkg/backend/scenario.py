"""
scenario.py — Scenario files (YAML) and their translation into domain objects

    geometry:   kind (chain | ring | two_atom | custom), N, a0 or R0, dipole / theta
    params:     rabi, detuning, trap_freq (ω_r units), recoil_freq, friction
    run:        mode (adiabatic | full | reduced), t_max, sample_dt, stride, motion_axes
    ensemble:   n_realizations, disorder_amplitude, base_seed
    output:     directory, formats
    potential / spectrum / sweep: per-command options

All physics values are in natural units (Γ₀ = 1, λ₀ = 1). Unknown keys are
rejected.
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from core.config import settings
from core.errors import ConfigError
from dynamics import StopCriteria
from model import (
    AtomConfiguration, GeometryKind, MotionAxes, SystemParams,
    build_custom, build_geometry, dipole_from_spec, ring_radius,
)

logger = logging.getLogger(__name__)

FIGURE_PRESETS = Path(__file__).resolve().parent / "figure_presets.json"

DEFAULT_SPACING = 0.5           # λ₀
DEFAULT_TWO_ATOM_SPACING = 0.6  # λ₀
DEFAULT_THETA = math.pi / 2


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class GeometryBlock(_Block):
    kind: Literal["chain", "ring", "two_atom", "custom"] = "chain"
    n_atoms: Optional[int] = Field(None, alias="N", ge=1)
    spacing: Optional[float] = Field(None, alias="a0", gt=0)
    radius: Optional[float] = Field(None, alias="R0", gt=0)
    dipole: Any = None      # "z" | "x" | "circular" | θ | {theta: θ} | [dx, dy, dz]
    theta: Optional[float] = None
    trap_centers: Optional[List[Tuple[float, float]]] = None

    @field_validator("dipole", mode="before")
    @classmethod
    def _parse_dipole(cls, value):
        if value is None or isinstance(value, (str, int, float, dict)):
            return value
        if isinstance(value, (list, tuple)) and len(value) == 3:
            try:
                return [complex(c.replace(" ", "")) if isinstance(c, str) else complex(c) for c in value]
            except (TypeError, ValueError) as exc:
                raise ValueError(f"dipole components must be numbers: {exc}") from exc
        raise ValueError("dipole must be a name, an angle, {theta: ...} or a 3-vector")


class ParamsBlock(_Block):
    rabi: float = Field(settings.RABI, ge=0)
    detuning: float = settings.DETUNING
    trap_freq: Optional[float] = Field(None, gt=0)   # None → geometry default
    recoil_freq: float = Field(settings.RECOIL_FREQ, gt=0)
    friction: float = Field(settings.FRICTION, ge=0)


class RunBlock(_Block):
    mode: Literal["adiabatic", "full", "reduced"] = "adiabatic"
    t_max: float = Field(settings.T_MAX, gt=0)
    sample_dt: float = Field(settings.SAMPLE_DT, gt=0)
    stride: int = Field(settings.SAMPLE_STRIDE, ge=1)
    t_hold: Optional[float] = Field(None, gt=0)
    motion_axes: Optional[Literal["x_only", "radial_only", "planar_xy"]] = None


class EnsembleBlock(_Block):
    n_realizations: int = Field(1, ge=1)
    disorder_amplitude: float = Field(0.0, ge=0)
    base_seed: int = Field(0, ge=0)


class OutputBlock(_Block):
    directory: str = settings.OUTPUT_DIR
    formats: List[Literal["csv", "json"]] = ["csv", "json"]


class PotentialBlock(_Block):
    start: float = Field(0.1, gt=0)
    stop: float = Field(3.0, gt=0)
    points_per_lambda: int = Field(settings.POINTS_PER_LAMBDA, ge=10)
    theta_values: Optional[List[float]] = None


class SpectrumBlock(_Block):
    cutoff_cells: int = Field(settings.CUTOFF_CELLS, ge=1)
    k_points: int = Field(2 * settings.ZAK_MIN_POINTS, ge=2)
    zak_convention: Literal["biorthogonal", "right"] = "biorthogonal"
    band: int = Field(0, ge=0, le=1)
    a1: Optional[float] = Field(None, gt=0)     # both set → periodic chain only
    a2: Optional[float] = Field(None, gt=0)


class SweepBlock(_Block):
    axis: str = "geometry.spacing"
    values: Optional[List[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    num: int = Field(11, ge=1)

    def grid(self) -> List[float]:
        if self.values is not None:
            return [float(v) for v in self.values]
        if self.start is None or self.stop is None:
            raise ConfigError("sweep needs either 'values' or 'start' and 'stop'", key="sweep.values")
        if self.num == 1:
            return [float(self.start)]
        step = (self.stop - self.start) / (self.num - 1)
        return [float(self.start + i * step) for i in range(self.num)]


class ScenarioConfig(_Block):
    geometry: GeometryBlock = GeometryBlock()
    params: ParamsBlock = ParamsBlock()
    run: RunBlock = RunBlock()
    ensemble: EnsembleBlock = EnsembleBlock()
    output: OutputBlock = OutputBlock()
    potential: PotentialBlock = PotentialBlock()
    spectrum: SpectrumBlock = SpectrumBlock()
    sweep: SweepBlock = SweepBlock()


# ============================================================================
# LOADING
# ============================================================================

def _first_error(exc: ValidationError) -> Tuple[str, str]:
    error = exc.errors()[0]
    key = ".".join(str(part) for part in error["loc"])
    return key, error["msg"]


def from_mapping(data: Optional[Dict[str, Any]], source: str = "<mapping>") -> ScenarioConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping of sections", key="")
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        key, msg = _first_error(exc)
        raise ConfigError(f"{source}: invalid value for '{key}': {msg}", key=key) from exc
    return cfg


def _needs_geometry(cfg: ScenarioConfig, command: Optional[str]) -> bool:
    if command == "zpm-table":
        return False
    if command == "spectrum":
        return cfg.spectrum.a1 is None or cfg.spectrum.a2 is None
    return True


def load_config(path, command: Optional[str] = None) -> ScenarioConfig:
    """Parse and validate a YAML scenario file; the atom count is checked unless `command` runs without one."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}", path=str(path))
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ConfigError(f"{path}: YAML parse error at line {line}: {exc.problem}",
                          path=str(path), line=line) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML parse error: {exc}", path=str(path)) from exc
    cfg = from_mapping(data, str(path))
    if _needs_geometry(cfg, command):
        try:
            require_n_atoms(cfg)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc.message}", path=str(path), **exc.details) from exc
    logger.info(f"Loaded scenario {path} ({cfg.geometry.kind}, N={cfg.geometry.n_atoms})")
    return cfg


def load_figure_preset(name: str, path: Path = FIGURE_PRESETS) -> Tuple[str, ScenarioConfig]:
    """Return (command, config) for a named figure preset."""
    with open(path, "r", encoding="utf-8") as fh:
        presets = json.load(fh)["figures"]
    if name not in presets:
        raise ConfigError(f"Unknown figure preset '{name}' (available: {', '.join(sorted(presets))})",
                          key="figure")
    entry = presets[name]
    return entry["command"], from_mapping(entry["config"], f"preset {name}")


def with_value(cfg: ScenarioConfig, dotted_key: str, value: Any) -> ScenarioConfig:
    """Copy of cfg with one nested field replaced, re-validated."""
    data = cfg.model_dump()
    section, _, field_name = dotted_key.partition(".")
    if section not in data or not field_name or field_name not in data[section]:
        raise ConfigError(f"Unknown sweep axis '{dotted_key}'", key="sweep.axis")
    data[section][field_name] = value
    return from_mapping(data, f"sweep point {dotted_key}={value}")


# ============================================================================
# DOMAIN OBJECTS
# ============================================================================

def require_n_atoms(cfg: ScenarioConfig) -> int:
    geometry = cfg.geometry
    if geometry.kind == "two_atom":
        return 2
    if geometry.kind == "custom":
        if not geometry.trap_centers:
            raise ConfigError("Custom geometry needs 'trap_centers'", key="geometry.trap_centers")
        return len(geometry.trap_centers)
    if geometry.n_atoms is None:
        raise ConfigError("geometry.n_atoms (N) is required", key="geometry.n_atoms")
    return geometry.n_atoms


def resolve_spacing(cfg: ScenarioConfig) -> float:
    """a₀ from the file, from R₀ for rings, or the geometry default."""
    geometry = cfg.geometry
    if geometry.spacing is not None:
        return geometry.spacing
    if geometry.kind == "ring" and geometry.radius is not None:
        n = require_n_atoms(cfg)
        return 2.0 * geometry.radius * math.sin(math.pi / n)
    return DEFAULT_TWO_ATOM_SPACING if geometry.kind == "two_atom" else DEFAULT_SPACING


def resolve_trap_freq(cfg: ScenarioConfig) -> float:
    """ω in ω_r: 1.0 for chains with N ≠ 2, 0.1 for rings and atom pairs."""
    if cfg.params.trap_freq is not None:
        return cfg.params.trap_freq
    kind = cfg.geometry.kind
    if kind == "ring" or kind == "two_atom" or require_n_atoms(cfg) == 2:
        return settings.RING_TRAP_FREQ
    return settings.CHAIN_TRAP_FREQ


def resolve_theta(cfg: ScenarioConfig) -> float:
    geometry = cfg.geometry
    if geometry.theta is not None:
        return geometry.theta
    if isinstance(geometry.dipole, (int, float)):
        return float(geometry.dipole)
    if isinstance(geometry.dipole, dict) and "theta" in geometry.dipole:
        return float(geometry.dipole["theta"])
    return DEFAULT_THETA


def build_configuration(cfg: ScenarioConfig) -> AtomConfiguration:
    geometry = cfg.geometry
    n = require_n_atoms(cfg)
    axes = MotionAxes(cfg.run.motion_axes) if cfg.run.motion_axes else None

    if geometry.kind == "two_atom":
        return build_geometry(GeometryKind.CHAIN, 2, resolve_spacing(cfg),
                              dipole_spec=resolve_theta(cfg), motion_axes=axes)
    if geometry.kind == "custom":
        return build_custom(geometry.trap_centers, geometry.dipole, axes or MotionAxes.PLANAR_XY)
    dipole = geometry.theta if geometry.theta is not None else geometry.dipole
    return build_geometry(GeometryKind(geometry.kind), n, resolve_spacing(cfg),
                          dipole_spec=dipole, motion_axes=axes)


def build_params(cfg: ScenarioConfig, config: Optional[AtomConfiguration] = None) -> SystemParams:
    dipole = config.dipole if config is not None else dipole_from_spec(None)
    p = cfg.params
    return SystemParams(
        rabi=p.rabi,
        detuning=p.detuning,
        trap_freq=resolve_trap_freq(cfg),
        recoil_freq=p.recoil_freq,
        friction=p.friction,
        dipole=dipole,
    )


def build_stop(cfg: ScenarioConfig) -> StopCriteria:
    run = cfg.run
    return StopCriteria(t_max=run.t_max, sample_dt=run.sample_dt, stride=run.stride, t_hold=run.t_hold)


def trap_radius(cfg: ScenarioConfig) -> float:
    return ring_radius(require_n_atoms(cfg), resolve_spacing(cfg))
