"""
potentials.py — Reduced dynamics and effective potentials

Two geometries reduce to a single coordinate:

  Two atoms on x (separation a, relative momentum p_R = (p₂ − p₁)/2):
      ṗ_R = −(2/k₀)|σ̃|² ∂J₁₂/∂a − ½k₀ω_r f²(a − a₀),  ȧ = 2(ω_r/k₀)p_R
      |σ̃|² = Ω²/|C₁₂ − δ − i/2|²

  Symmetric ring of N atoms (radius R, per-atom radial momentum p):
      ṗ = −(2/k₀)|σ̃|² Σ_m J′(r₁ₘ) sin(π(m−1)/N) − k₀ω_r f²(R − R_t)
      σ̃ = Ω/(Σ_m C₁ₘ − δ − i/2),   r₁ₘ = 2R sin(π(m−1)/N)

Forces are in ħk₀Γ₀ and lengths in λ₀; the builders below scale potentials
by k₀ so curves come out in ħΓ₀.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicHermiteSpline
from scipy.signal import argrelextrema

from core.config import settings
from core.errors import ConfigError, GeometryError, SeparationError
from dynamics import MotionModel, StopCriteria, Trajectory, run_model
from greens import pair_terms
from model import CIRCULAR_DIPOLE, K0, SimState, SystemParams, ring_radius, two_atom_dipole

logger = logging.getLogger(__name__)


class Minimum(NamedTuple):
    coordinate: float
    value: float


class BoundaryMinimum(NamedTuple):
    coordinate: float
    value: float
    side: str       # "lower" | "upper"


@dataclass
class PotentialCurve:
    coordinate: np.ndarray
    value: np.ndarray
    force: np.ndarray
    minima: List[Minimum] = field(default_factory=list)
    boundary_minima: List[BoundaryMinimum] = field(default_factory=list)
    energy_scale: float = 1.0

    def interpolator(self) -> CubicHermiteSpline:
        """C¹ interpolant of V using the force samples as slopes."""
        return CubicHermiteSpline(self.coordinate, self.value, -self.energy_scale * self.force)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"coordinate": self.coordinate, "V": self.value, "force": self.force})


# ============================================================================
# POTENTIAL CURVES
# ============================================================================

def _parabolic_vertex(x: np.ndarray, y: np.ndarray):
    (x0, x1, x2), (y0, y1, y2) = x, y
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 ** 2 * (y0 - y1) + x1 ** 2 * (y2 - y0) + x0 ** 2 * (y1 - y2)) / denom
    c = (x1 * x2 * (x1 - x2) * y0 + x2 * x0 * (x2 - x0) * y1 + x0 * x1 * (x0 - x1) * y2) / denom
    if a <= 0:
        return float(x1), float(y1)
    return float(-b / (2 * a)), float(c - b ** 2 / (4 * a))


def local_minima(curve: PotentialCurve) -> List[Minimum]:
    """Strict interior minima, refined by a parabola through the neighbouring samples."""
    value = np.asarray(curve.value, dtype=float)
    if len(value) < 3:
        return []
    indices = argrelextrema(value, np.less)[0]
    minima = []
    for i in indices:
        x, y = _parabolic_vertex(curve.coordinate[i - 1:i + 2], value[i - 1:i + 2])
        minima.append(Minimum(x, y))
    return sorted(minima)


def boundary_minima(curve: PotentialCurve) -> List[BoundaryMinimum]:
    """Endpoints lower than their only neighbour, e.g. an attractive a → 0 basin."""
    value = np.asarray(curve.value, dtype=float)
    if len(value) < 2:
        return []
    found = []
    if value[0] < value[1]:
        found.append(BoundaryMinimum(float(curve.coordinate[0]), float(value[0]), "lower"))
    if value[-1] < value[-2]:
        found.append(BoundaryMinimum(float(curve.coordinate[-1]), float(value[-1]), "upper"))
    return found


def effective_potential_curve(force_fn: Callable[[float], float], grid,
                              energy_scale: float = 1.0) -> PotentialCurve:
    """
    V(x_k) = −energy_scale·∫ force dx from grid[0] (cumulative trapezoid),
    anchored at V(grid[0]) = 0.
    """
    coordinate = np.asarray(grid, dtype=float)
    if coordinate.ndim != 1 or len(coordinate) < 2:
        raise ConfigError("Potential grid needs at least two points", key="grid")
    if not np.all(np.diff(coordinate) > 0):
        raise ConfigError("Potential grid must be strictly increasing", key="grid")

    force = np.array([force_fn(float(x)) for x in coordinate], dtype=float)
    if not np.all(np.isfinite(force)):
        raise ConfigError("Force is not finite on the whole grid", key="grid")
    value = -energy_scale * cumulative_trapezoid(force, coordinate, initial=0.0)

    curve = PotentialCurve(coordinate=coordinate, value=value, force=force, energy_scale=energy_scale)
    curve.minima = local_minima(curve)
    curve.boundary_minima = boundary_minima(curve)
    return curve


def dense_grid(start: float, stop: float, points_per_lambda: int = settings.POINTS_PER_LAMBDA) -> np.ndarray:
    n = max(3, int(math.ceil((stop - start) * points_per_lambda)) + 1)
    return np.linspace(start, stop, n)


# ============================================================================
# TWO ATOMS
# ============================================================================

def _two_atom_light(a: float, params: SystemParams, dipole) -> tuple:
    """(|σ̃|², ∂J₁₂/∂a, C₁₂) at separation a; raises SeparationError inside the guard."""
    if not a >= settings.NEAR_FIELD_GUARD:
        raise SeparationError(f"Separation {a:.3g} λ₀ is below the near-field guard",
                              pair=(0, 1), distance=float(a))
    value, gradient = pair_terms(np.array([a, 0.0, 0.0]), dipole)
    c12 = complex(value)
    population = params.rabi ** 2 / abs(c12 - params.detuning - 0.5j) ** 2
    return population, float(np.real(gradient[0])), c12


def _two_atom_force(a: float, params: SystemParams, dipole, trap_spacing: float) -> float:
    population, dj_da, _ = _two_atom_light(a, params, dipole)
    return -2.0 * population * dj_da / K0 - 0.5 * params.trap_stiffness * (a - trap_spacing)


def two_atom_force(a: float, params: SystemParams, theta: float, trap_spacing: float) -> float:
    """Relative-coordinate force ṗ_R (ħk₀Γ₀) for d = [cos θ, i sin θ, 0]."""
    if not a > settings.COLLISION_DISTANCE:
        raise SeparationError(
            f"Separation {a:.3g} λ₀ is below the collision threshold {settings.COLLISION_DISTANCE} λ₀",
            pair=(0, 1), distance=float(a),
        )
    return _two_atom_force(a, params, two_atom_dipole(theta), trap_spacing)


def two_atom_potential(params: SystemParams, theta: float, trap_spacing: float,
                       grid: Optional[Sequence[float]] = None) -> PotentialCurve:
    grid = dense_grid(0.1, 3.0) if grid is None else grid
    dipole = two_atom_dipole(theta)
    return effective_potential_curve(
        lambda a: _two_atom_force(a, params, dipole, trap_spacing), grid, energy_scale=K0
    )


def two_atom_minima_scan(thetas: Sequence[float], params: SystemParams, trap_spacing: float,
                         grid: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """Long-format table of minima (theta, coordinate, V, boundary) over a θ grid."""
    rows = []
    for theta in thetas:
        curve = two_atom_potential(params, float(theta), trap_spacing, grid)
        for m in curve.minima:
            rows.append({"theta": float(theta), "coordinate": m.coordinate, "V": m.value, "boundary": False})
        for m in curve.boundary_minima:
            rows.append({"theta": float(theta), "coordinate": m.coordinate, "V": m.value, "boundary": True})
        logger.debug(f"θ={theta:.4f}: {len(curve.minima)} interior minima")
    return pd.DataFrame(rows, columns=["theta", "coordinate", "V", "boundary"])


# ============================================================================
# RING
# ============================================================================

def _ring_terms(radius: float, n_atoms: int):
    """Chord lengths, their dR-derivatives, and the circular-dipole couplings to atom 0."""
    angles = np.pi * np.arange(1, n_atoms) / n_atoms
    chords = 2.0 * radius * np.sin(angles)
    if not np.min(chords) >= settings.NEAR_FIELD_GUARD:
        raise SeparationError(f"Ring chord {np.min(chords):.3g} λ₀ is below the near-field guard",
                              pair=(0, 1), distance=float(np.min(chords)))
    separations = np.column_stack([chords, np.zeros_like(chords), np.zeros_like(chords)])
    values, gradients = pair_terms(separations, CIRCULAR_DIPOLE)
    return np.sin(angles), values, np.real(gradients[:, 0])


def ring_coherence(radius: float, n_atoms: int, params: SystemParams) -> complex:
    _, values, _ = _ring_terms(radius, n_atoms)
    return params.rabi / (np.sum(values) - params.detuning - 0.5j)


def _ring_force(radius: float, n_atoms: int, params: SystemParams, trap_radius: float) -> float:
    half_sines, values, dj_dr = _ring_terms(radius, n_atoms)
    sigma = params.rabi / (np.sum(values) - params.detuning - 0.5j)
    light = -2.0 * abs(sigma) ** 2 * float(np.sum(dj_dr * half_sines)) / K0
    return light - params.trap_stiffness * (radius - trap_radius)


def ring_force(radius: float, n_atoms: int, params: SystemParams, trap_radius: float) -> float:
    """Radial force (ħk₀Γ₀) on each atom of a symmetric ring of circular in-plane dipoles."""
    if n_atoms < 3:
        raise GeometryError(f"A ring needs N >= 3, got N={n_atoms}")
    if not radius > 0:
        raise GeometryError(f"Ring radius must be positive, got {radius}")
    chord = 2.0 * radius * math.sin(math.pi / n_atoms)
    if not chord > settings.COLLISION_DISTANCE:
        raise SeparationError(f"Ring chord {chord:.3g} λ₀ is below the collision threshold",
                              pair=(0, 1), distance=chord)
    return _ring_force(radius, n_atoms, params, trap_radius)


def ring_potential(n_atoms: int, params: SystemParams, trap_radius: float,
                   grid: Optional[Sequence[float]] = None) -> PotentialCurve:
    if n_atoms < 3:
        raise GeometryError(f"A ring needs N >= 3, got N={n_atoms}")
    if grid is None:
        lower = max(settings.COLLISION_DISTANCE / (2 * math.sin(math.pi / n_atoms)), 0.5 * trap_radius)
        grid = dense_grid(lower, 1.5 * trap_radius)
    return effective_potential_curve(
        lambda r: _ring_force(r, n_atoms, params, trap_radius), grid, energy_scale=K0
    )


# ============================================================================
# REDUCED INTEGRATORS
# ============================================================================

@dataclass
class ReducedRun:
    """A one-coordinate run together with its SimState view."""
    trajectory: Trajectory
    coordinate: np.ndarray
    momentum: np.ndarray
    kinetic_factor: float       # E_kin = kinetic_factor · p², in ħk₀Γ₀·λ₀

    @property
    def final(self) -> float:
        return float(self.coordinate[-1])

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times


class TwoAtomModel(MotionModel):
    """Relative coordinate of two trapped atoms; centre of mass fixed at a₀/2."""

    def __init__(self, params: SystemParams, theta: float, trap_spacing: float, stop: StopCriteria):
        super().__init__(params, stop)
        self.dipole = two_atom_dipole(theta)
        self.trap_spacing = float(trap_spacing)

    def initial(self) -> np.ndarray:
        return np.array([self.trap_spacing, 0.0])

    def force(self, a: float) -> float:
        return _two_atom_force(a, self.params, self.dipole, self.trap_spacing)

    def rhs(self, t, y):
        a, p = y
        return np.array([2.0 * self.params.velocity_factor * p,
                         self.force(a) - self.params.friction * p])

    def to_state(self, t, y) -> SimState:
        a, p = float(y[0]), float(y[1])
        center = 0.5 * self.trap_spacing
        _, _, c12 = _two_atom_light(a, self.params, self.dipole)
        sigma = self.params.rabi / (c12 - self.params.detuning - 0.5j)
        return SimState(
            coherences=np.array([sigma, sigma]),
            positions=np.array([[center - 0.5 * a, 0.0], [center + 0.5 * a, 0.0]]),
            momenta=np.array([[-p, 0.0], [p, 0.0]]),
            time=float(t),
        )

    def steadiness(self, t, y):
        return abs(float(y[1])), abs(self.force(float(y[0])))

    def min_separation(self, y):
        return float(y[0]), (0, 1)

    def population(self, y):
        return _two_atom_light(float(y[0]), self.params, self.dipole)[0]

    @staticmethod
    def reduce(state: SimState):
        return (float(state.positions[1, 0] - state.positions[0, 0]),
                float(0.5 * (state.momenta[1, 0] - state.momenta[0, 0])))


class RingRadialModel(MotionModel):
    """Breathing mode of a symmetric ring; every atom shares R and p."""

    def __init__(self, n_atoms: int, params: SystemParams, trap_radius: float, stop: StopCriteria):
        super().__init__(params, stop)
        self.n_atoms = n_atoms
        self.trap_radius = float(trap_radius)
        angles = 2.0 * np.pi * np.arange(n_atoms) / n_atoms
        self.units = np.column_stack([np.cos(angles), np.sin(angles)])

    def initial(self) -> np.ndarray:
        return np.array([self.trap_radius, 0.0])

    def force(self, radius: float) -> float:
        return _ring_force(radius, self.n_atoms, self.params, self.trap_radius)

    def rhs(self, t, y):
        radius, p = y
        return np.array([self.params.velocity_factor * p,
                         self.force(radius) - self.params.friction * p])

    def to_state(self, t, y) -> SimState:
        radius, p = float(y[0]), float(y[1])
        sigma = ring_coherence(radius, self.n_atoms, self.params)
        return SimState(
            coherences=np.full(self.n_atoms, sigma, dtype=complex),
            positions=radius * self.units,
            momenta=p * self.units,
            time=float(t),
        )

    def steadiness(self, t, y):
        return abs(float(y[1])), abs(self.force(float(y[0])))

    def min_separation(self, y):
        return 2.0 * float(y[0]) * math.sin(math.pi / self.n_atoms), (0, 1)

    def population(self, y):
        return abs(ring_coherence(float(y[0]), self.n_atoms, self.params)) ** 2

    @staticmethod
    def reduce(state: SimState):
        return (float(np.linalg.norm(state.positions[0])),
                float(np.dot(state.momenta[0], state.positions[0]) / np.linalg.norm(state.positions[0])))


def _reduced_run(model, trajectory: Trajectory, kinetic_factor: float) -> ReducedRun:
    pairs = np.array([model.reduce(s) for s in trajectory.samples])
    return ReducedRun(trajectory=trajectory, coordinate=pairs[:, 0], momentum=pairs[:, 1],
                      kinetic_factor=kinetic_factor)


def two_atom_integrate(theta: float, trap_spacing: float, params: SystemParams,
                       stop: Optional[StopCriteria] = None) -> ReducedRun:
    """Integrate (a, p_R) from rest at a = a₀."""
    stop = stop or StopCriteria()
    model = TwoAtomModel(params, theta, trap_spacing, stop)
    logger.info(f"Two-atom reduced run: θ={theta:.4f}, a₀={trap_spacing}")
    return _reduced_run(model, run_model(model), params.velocity_factor)


def ring_radial_integrate(n_atoms: int, params: SystemParams, trap_spacing: float,
                          stop: Optional[StopCriteria] = None) -> ReducedRun:
    """Integrate (R, p) from rest at R_t = a₀/(2 sin(π/N))."""
    if n_atoms < 3:
        raise GeometryError(f"A ring needs N >= 3, got N={n_atoms}")
    stop = stop or StopCriteria()
    model = RingRadialModel(n_atoms, params, ring_radius(n_atoms, trap_spacing), stop)
    logger.info(f"Ring radial run: N={n_atoms}, a₀={trap_spacing}, R_t={model.trap_radius:.6g}")
    return _reduced_run(model, run_model(model), 0.5 * params.velocity_factor)


def reduced_energy(run: ReducedRun, curve: PotentialCurve) -> np.ndarray:
    """Kinetic plus effective potential energy at every sample, in the curve's units."""
    potential = curve.interpolator()(run.coordinate)
    return curve.energy_scale * run.kinetic_factor * run.momentum ** 2 + potential
