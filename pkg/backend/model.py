"""
model.py — Domain types, geometry builders and positional disorder

Natural units throughout: Γ₀ = 1, λ₀ = 1 (k₀ = 2π), ħ = 1, momenta in ħk₀.
The atomic mass is eliminated through m = ħk₀²/ω_r, so
    dx/dt = (ω_r/k₀)·p          (x in λ₀, p in ħk₀)
    dp/dt = F − k₀ω_r·f²·(x − x_t) − γp
with f = ω/ω_r the trap frequency in recoil units.
"""
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist

from core.config import settings
from core.errors import ConfigError, GeometryError

logger = logging.getLogger(__name__)

K0 = 2.0 * math.pi

Z_DIPOLE = (0j, 0j, 1 + 0j)
X_DIPOLE = (1 + 0j, 0j, 0j)
CIRCULAR_DIPOLE = (1 / math.sqrt(2) + 0j, 1j / math.sqrt(2), 0j)

DipoleSpec = Union[None, str, float, dict, Sequence[complex]]


class GeometryKind(str, Enum):
    CHAIN = "chain"
    RING = "ring"
    CUSTOM = "custom"


class MotionAxes(str, Enum):
    X_ONLY = "x_only"
    RADIAL_ONLY = "radial_only"
    PLANAR_XY = "planar_xy"


# ============================================================================
# DIPOLES
# ============================================================================

def validate_dipole(dipole) -> Tuple[complex, complex, complex]:
    """Return the dipole as an immutable complex 3-tuple, rejecting non-unit vectors."""
    vec = np.asarray(dipole, dtype=complex).reshape(-1)
    if vec.shape != (3,):
        raise GeometryError(f"Dipole must be a 3-vector, got shape {vec.shape}")
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > settings.UNIT_NORM_TOL:
        raise GeometryError(f"Dipole must have unit norm, got |d| = {norm:.15g}", norm=norm)
    return tuple(complex(c) for c in vec)


def two_atom_dipole(theta: float) -> Tuple[complex, complex, complex]:
    """d = [cos θ, i sin θ, 0]."""
    return validate_dipole([math.cos(theta), 1j * math.sin(theta), 0.0])


def dipole_from_spec(spec: DipoleSpec, default=Z_DIPOLE) -> Tuple[complex, complex, complex]:
    """
    Parse a dipole specification.

    Accepted forms: None (use `default`), "z", "x", "circular", a float θ or
    {"theta": θ} for [cos θ, i sin θ, 0], or an explicit 3-vector.
    """
    if spec is None:
        return validate_dipole(default)
    if isinstance(spec, str):
        named = {"z": Z_DIPOLE, "x": X_DIPOLE, "circular": CIRCULAR_DIPOLE}
        key = spec.strip().lower()
        if key not in named:
            raise GeometryError(f"Unknown dipole name '{spec}' (expected one of {sorted(named)})")
        return named[key]
    if isinstance(spec, (int, float)):
        return two_atom_dipole(float(spec))
    if isinstance(spec, dict):
        if set(spec) != {"theta"}:
            raise GeometryError(f"Dipole mapping must contain only 'theta', got {sorted(spec)}")
        return two_atom_dipole(float(spec["theta"]))
    return validate_dipole(spec)


# ============================================================================
# DOMAIN TYPES
# ============================================================================

@dataclass(frozen=True)
class SystemParams:
    """Physical rates and scales. rabi, detuning, friction, recoil_freq in Γ₀; trap_freq in ω_r."""
    rabi: float = settings.RABI
    detuning: float = settings.DETUNING
    trap_freq: float = settings.CHAIN_TRAP_FREQ
    recoil_freq: float = settings.RECOIL_FREQ
    friction: float = settings.FRICTION
    dipole: Tuple[complex, complex, complex] = Z_DIPOLE

    def __post_init__(self):
        if self.rabi < 0:
            raise ConfigError(f"rabi must be >= 0, got {self.rabi}", key="params.rabi")
        if self.trap_freq <= 0:
            raise ConfigError(f"trap_freq must be > 0, got {self.trap_freq}", key="params.trap_freq")
        if self.recoil_freq <= 0:
            raise ConfigError(f"recoil_freq must be > 0, got {self.recoil_freq}", key="params.recoil_freq")
        if self.friction < 0:
            raise ConfigError(f"friction must be >= 0, got {self.friction}", key="params.friction")
        object.__setattr__(self, "dipole", validate_dipole(self.dipole))

        if self.rabi > settings.WEAK_DRIVE_LIMIT:
            logger.warning(f"Rabi frequency {self.rabi} Γ₀ is outside the weak-driving regime")
        if self.recoil_freq > settings.RECOIL_LIMIT:
            logger.warning(f"Recoil frequency {self.recoil_freq} Γ₀ breaks the ω_r ≪ Γ₀ separation")

    @property
    def dipole_vector(self) -> np.ndarray:
        return np.array(self.dipole, dtype=complex)

    @property
    def trap_omega(self) -> float:
        """Trap angular frequency ω in Γ₀."""
        return self.trap_freq * self.recoil_freq

    @property
    def trap_period(self) -> float:
        return 2.0 * math.pi / self.trap_omega

    @property
    def trap_stiffness(self) -> float:
        """mω²/(ħk₀) per λ₀ of displacement, i.e. the trap force in ħk₀Γ₀ per λ₀."""
        return K0 * self.recoil_freq * self.trap_freq ** 2

    @property
    def velocity_factor(self) -> float:
        """dx/dt (λ₀ per Γ₀⁻¹) per unit momentum ħk₀, i.e. ħk₀/m = ω_r/k₀."""
        return self.recoil_freq / K0

    def replace(self, **changes) -> "SystemParams":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class AtomConfiguration:
    """Trap centres (N×2, λ₀) with geometry metadata."""
    trap_centers: np.ndarray
    kind: GeometryKind
    spacing: float
    motion_axes: MotionAxes
    dipole: Tuple[complex, complex, complex] = Z_DIPOLE
    seed: Optional[int] = None
    disorder_amplitude: float = 0.0
    ring_radius: Optional[float] = None
    center: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        centers = np.array(self.trap_centers, dtype=float).reshape(-1, 2)
        if len(centers) < 1:
            raise GeometryError("A configuration needs at least one atom")
        if len(centers) > 1:
            distances = pdist(centers)
            if np.min(distances) <= 0.0:
                raise GeometryError("Trap centres must be pairwise distinct")
        centers.setflags(write=False)
        object.__setattr__(self, "trap_centers", centers)
        object.__setattr__(self, "dipole", validate_dipole(self.dipole))

    @property
    def n_atoms(self) -> int:
        return len(self.trap_centers)

    @property
    def radial_units(self) -> np.ndarray:
        """Unit vectors from the ring centre to each trap centre."""
        rel = self.trap_centers - np.asarray(self.center)
        norms = np.linalg.norm(rel, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return rel / norms


@dataclass
class SimState:
    """Mean-field coherences, positions (λ₀), momenta (ħk₀) at time t (Γ₀⁻¹)."""
    coherences: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    time: float = 0.0

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.coherences) ** 2

    @property
    def max_population(self) -> float:
        return float(np.max(self.populations)) if len(self.coherences) else 0.0

    @property
    def excitation_breach(self) -> bool:
        return self.max_population > settings.MAX_POPULATION

    @classmethod
    def at_rest(cls, config: AtomConfiguration) -> "SimState":
        """Atoms at rest at their trap centres, in the ground state."""
        n = config.n_atoms
        return cls(
            coherences=np.zeros(n, dtype=complex),
            positions=np.array(config.trap_centers, dtype=float),
            momenta=np.zeros((n, 2)),
            time=0.0,
        )


# ============================================================================
# GEOMETRY BUILDERS
# ============================================================================

def ring_radius(n_atoms: int, spacing: float) -> float:
    """Radius of an N-gon with side `spacing`: a = 2R sin(π/N)."""
    return spacing / (2.0 * math.sin(math.pi / n_atoms))


def build_geometry(kind, n_atoms: int, spacing: float, dipole_spec: DipoleSpec = None,
                   motion_axes: Optional[MotionAxes] = None) -> AtomConfiguration:
    """
    Build a chain along x or a ring in the x–y plane.

    Chains default to motion along x and d = ẑ; rings default to radial
    motion and d = (x̂ + iŷ)/√2.
    """
    kind = GeometryKind(kind)
    if n_atoms < 1:
        raise GeometryError(f"Need at least one atom, got N={n_atoms}")
    if not spacing > 0:
        raise GeometryError(f"Spacing must be positive, got {spacing}")

    if kind == GeometryKind.CHAIN:
        centers = np.column_stack([np.arange(n_atoms) * spacing, np.zeros(n_atoms)])
        return AtomConfiguration(
            trap_centers=centers,
            kind=kind,
            spacing=float(spacing),
            motion_axes=MotionAxes(motion_axes or MotionAxes.X_ONLY),
            dipole=dipole_from_spec(dipole_spec, Z_DIPOLE),
        )

    if kind == GeometryKind.RING:
        if n_atoms < 3:
            raise GeometryError(f"A ring needs N >= 3, got N={n_atoms}")
        radius = ring_radius(n_atoms, spacing)
        angles = 2.0 * np.pi * np.arange(n_atoms) / n_atoms
        centers = radius * np.column_stack([np.cos(angles), np.sin(angles)])
        return AtomConfiguration(
            trap_centers=centers,
            kind=kind,
            spacing=float(spacing),
            motion_axes=MotionAxes(motion_axes or MotionAxes.RADIAL_ONLY),
            dipole=dipole_from_spec(dipole_spec, CIRCULAR_DIPOLE),
            ring_radius=radius,
        )

    raise GeometryError("Custom geometries are built with build_custom()")


def build_two_atom(theta: float, spacing: float) -> AtomConfiguration:
    """Two atoms on the x-axis with d = [cos θ, i sin θ, 0]."""
    return build_geometry(GeometryKind.CHAIN, 2, spacing, dipole_spec=two_atom_dipole(theta))


def build_custom(trap_centers, dipole_spec: DipoleSpec = None,
                 motion_axes: MotionAxes = MotionAxes.PLANAR_XY) -> AtomConfiguration:
    centers = np.asarray(trap_centers, dtype=float).reshape(-1, 2)
    spacing = float(np.min(pdist(centers))) if len(centers) > 1 else 1.0
    return AtomConfiguration(
        trap_centers=centers,
        kind=GeometryKind.CUSTOM,
        spacing=spacing,
        motion_axes=MotionAxes(motion_axes),
        dipole=dipole_from_spec(dipole_spec, Z_DIPOLE),
    )


def make_rng(seed: int) -> np.random.Generator:
    """Philox is counter-based, so a seed reproduces the same stream on every platform."""
    return np.random.Generator(np.random.Philox(seed))


def apply_disorder(config: AtomConfiguration, amplitude: float, seed: int) -> AtomConfiguration:
    """
    Displace every trap centre by U[−amplitude·a₀, +amplitude·a₀] along each
    allowed motion axis (x for chains, the radial direction for radial rings,
    both x and y for planar motion).
    """
    if amplitude < 0:
        raise GeometryError(f"Disorder amplitude must be >= 0, got {amplitude}")
    if amplitude == 0:
        return config

    rng = make_rng(seed)
    half_width = amplitude * config.spacing
    draws = rng.uniform(-half_width, half_width, size=(config.n_atoms, 2))

    if config.motion_axes == MotionAxes.X_ONLY:
        shift = np.column_stack([draws[:, 0], np.zeros(config.n_atoms)])
    elif config.motion_axes == MotionAxes.RADIAL_ONLY:
        shift = draws[:, :1] * config.radial_units
    else:
        shift = draws

    logger.debug(f"Applied disorder amplitude={amplitude} seed={seed} to N={config.n_atoms}")
    return replace(
        config,
        trap_centers=config.trap_centers + shift,
        seed=seed,
        disorder_amplitude=float(amplitude),
    )


def nearest_neighbor_distances(positions) -> np.ndarray:
    """Distances between consecutive atoms (chains, in storage order)."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    return np.linalg.norm(np.diff(pos, axis=0), axis=1)
