"""
analysis.py — Structure and spectral analysis of self-organized arrays

Chains:
    gaps → classify_chain (uniform / dimerized / other) + dimer strength D_s
    positions → H_eff = [C_nm] → spectrum_ipr → edge-state candidates
    mean alternating gaps (a1, a2) → Bloch H(k) → bands, gap, Zak phase

Bloch convention: sites at 0 and a1 inside a cell of length L = a1 + a2,
H_αβ(k) = Σ_c C(x_β + cL − x_α) e^{ikcL}, so H(k + 2π/L) = H(k).
"""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import constants
from scipy.cluster.vq import kmeans2

from core.config import settings
from core.errors import ConfigError, GapClosureError, GeometryError, NumericalError
from greens import coupling_matrix, pair_terms
from model import K0, Z_DIPOLE, nearest_neighbor_distances

logger = logging.getLogger(__name__)

SPECIES_PRESETS = Path(__file__).resolve().parent / "species_presets.json"
ZPM_SPACINGS = (1.5, 1.0, 0.5)   # a/λ₀, column order of the published table


def _planar(positions) -> np.ndarray:
    """Accept x-coordinates (N,) or planar positions (N, 2)."""
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        return np.column_stack([pos, np.zeros_like(pos)])
    return pos.reshape(-1, 2)


# ============================================================================
# DIMERIZATION
# ============================================================================

def dimer_strength_from_couplings(bond_couplings: Sequence[float]) -> float:
    """
    D_s = 1/(N−2) Σ_{n=1}^{N−2} (−1)ⁿ (|J_{n+1}| − |J_n|)/(|J_{n+1}| + |J_n|)
    over the N−1 nearest-neighbour bond magnitudes.
    """
    bonds = np.abs(np.asarray(bond_couplings, dtype=float))
    if len(bonds) < 2:
        raise GeometryError(f"Dimer strength needs N >= 3 atoms, got N={len(bonds) + 1}")
    signs = (-1.0) ** np.arange(1, len(bonds))
    terms = signs * (bonds[1:] - bonds[:-1]) / (bonds[1:] + bonds[:-1])
    return float(np.mean(terms))


def nearest_neighbor_couplings(positions, dipole=Z_DIPOLE) -> np.ndarray:
    """J_{n,n+1} between consecutive atoms."""
    pos = _planar(positions)
    separations = np.diff(pos, axis=0)
    distances = np.linalg.norm(separations, axis=1)
    if not np.all(distances >= settings.NEAR_FIELD_GUARD):
        raise GeometryError("Consecutive atoms coincide; cannot evaluate bond couplings")
    values, _ = pair_terms(separations, dipole, with_gradient=False)
    return np.real(values)


def dimer_strength(positions, dipole=Z_DIPOLE) -> float:
    pos = _planar(positions)
    if len(pos) < 3:
        raise GeometryError(f"Dimer strength needs N >= 3 atoms, got N={len(pos)}")
    return dimer_strength_from_couplings(nearest_neighbor_couplings(pos, dipole))


class ChainKind(str, Enum):
    UNIFORM = "uniform"
    DIMERIZED = "dimerized"
    OTHER = "other"


@dataclass
class ChainClassification:
    kind: ChainKind
    gaps: np.ndarray
    dimer_strength: float
    a_final: Optional[float] = None      # uniform chains
    a_strong: Optional[float] = None     # intra-dimer (shorter) gap
    a_weak: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "gaps": self.gaps.tolist(),
            "dimer_strength": self.dimer_strength,
            "a_final": self.a_final,
            "a_strong": self.a_strong,
            "a_weak": self.a_weak,
        }


def classify_chain(positions, dipole=Z_DIPOLE) -> ChainClassification:
    """Label a relaxed chain from its consecutive gaps (sorted along x)."""
    pos = _planar(positions)
    if len(pos) < 3:
        raise GeometryError(f"Chain classification needs N >= 3 atoms, got N={len(pos)}")
    pos = pos[np.argsort(pos[:, 0], kind="stable")]
    gaps = nearest_neighbor_distances(pos)
    if not np.all(gaps > 0):
        raise GeometryError("Chain gaps must be positive")
    strength = dimer_strength(pos, dipole)

    mean = float(np.mean(gaps))
    if np.std(gaps) / mean < settings.UNIFORM_TOL:
        return ChainClassification(ChainKind.UNIFORM, gaps, strength, a_final=mean)

    initial = np.array([[gaps.min()], [gaps.max()]])
    centroids, labels = kmeans2(gaps.reshape(-1, 1), initial, minit="matrix")
    centers = centroids[:, 0]
    alternating = bool(np.all(labels[1:] != labels[:-1]))
    contrast = abs(centers[1] - centers[0]) / np.mean(centers)
    if alternating and contrast > settings.CLUSTER_CONTRAST:
        short, long = sorted(float(np.mean(gaps[labels == k])) for k in (0, 1))
        return ChainClassification(ChainKind.DIMERIZED, gaps, strength, a_strong=short, a_weak=long)
    return ChainClassification(ChainKind.OTHER, gaps, strength)


# ============================================================================
# FINITE-CHAIN SPECTRUM
# ============================================================================

@dataclass
class SpectralReport:
    eigenvalues: np.ndarray          # sorted by real part
    eigenvectors: np.ndarray         # columns, unit norm
    ipr: np.ndarray
    midgap_pair: Optional[Tuple[int, int]] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "index": np.arange(len(self.eigenvalues)),
            "re_lambda": self.eigenvalues.real,
            "im_lambda": self.eigenvalues.imag,
            "ipr": self.ipr,
        })


def effective_hamiltonian(positions, dipole=Z_DIPOLE) -> np.ndarray:
    """H_eff = [C_nm] with C_nn = −i/2; complex symmetric."""
    return coupling_matrix(_planar(positions), dipole).c


def inverse_participation_ratio(vectors: np.ndarray) -> np.ndarray:
    """Σ|ψ_n|⁴/(Σ|ψ_n|²)² for a vector or for each column of a matrix."""
    density = np.abs(np.asarray(vectors)) ** 2
    return np.sum(density ** 2, axis=0) / np.sum(density, axis=0) ** 2


def edge_weight(vector, n_edge: int = settings.EDGE_SITES) -> float:
    """Probability mass on the first and last n_edge sites."""
    density = np.abs(np.asarray(vector)) ** 2
    density = density / np.sum(density)
    if 2 * n_edge >= len(density):
        return 1.0
    return float(np.sum(density[:n_edge]) + np.sum(density[-n_edge:]))


def spectrum_ipr(hamiltonian: np.ndarray) -> SpectralReport:
    h = np.asarray(hamiltonian, dtype=complex)
    if not np.all(np.isfinite(h)):
        raise NumericalError("Hamiltonian contains non-finite entries")
    try:
        eigenvalues, eigenvectors = scipy.linalg.eig(h)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Eigendecomposition failed: {exc}") from exc

    order = np.lexsort((eigenvalues.imag, eigenvalues.real))
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]
    eigenvectors = eigenvectors / np.linalg.norm(eigenvectors, axis=0)
    ipr = inverse_participation_ratio(eigenvectors)

    report = SpectralReport(eigenvalues=eigenvalues, eigenvectors=eigenvectors, ipr=ipr)
    report.midgap_pair = _midgap_pair(eigenvalues, ipr)
    return report


def _midgap_pair(eigenvalues: np.ndarray, ipr: np.ndarray) -> Optional[Tuple[int, int]]:
    """Two edge candidates closest in Re λ to the spectral midpoint (median of Re λ)."""
    if len(ipr) < 3:
        return None
    candidates = np.flatnonzero(ipr > settings.EDGE_IPR_FACTOR * np.median(ipr))
    if len(candidates) < 2:
        return None
    midpoint = np.median(eigenvalues.real)
    closest = candidates[np.argsort(np.abs(eigenvalues.real[candidates] - midpoint), kind="stable")[:2]]
    return tuple(sorted(int(i) for i in closest))


# ============================================================================
# PERIODIC DIMERIZED CHAIN
# ============================================================================

LIGHT_LINE_EPS = 1e-9   # |1 − z| below which a lattice tail is left unsummed


@dataclass(frozen=True, eq=False)
class LatticeCouplings:
    """
    C(x_β + cL − x_α) for every cell c in [−M, M]; the on-site term carries −i/2.

    The far cells |c| > M are summed in closed form on request: writing
    C(r) = e^{ik₀r}·h(r) with h smooth, each tail is Σ_{c>M} z^c h_c with
    z = e^{i(k₀ ± k)L}, resummed by parts to third order in the differences of h.
    """
    a1: float
    a2: float
    cells: np.ndarray
    terms: np.ndarray       # (2, 2, 2M+1)
    offsets: np.ndarray     # (2, 2) x_β − x_α
    tail_plus: np.ndarray   # (2, 2, 3) h, Δh, Δ²h at c = M+1 (cells to the right)
    tail_minus: np.ndarray  # (2, 2, 3) same for c = −(M+1) (cells to the left)

    @property
    def period(self) -> float:
        return self.a1 + self.a2

    @property
    def cutoff_cells(self) -> int:
        return int(self.cells[-1])

    def hamiltonian(self, k, with_tail: bool = False) -> np.ndarray:
        """H(k) for a scalar k (2×2) or an array of k (n_k×2×2)."""
        k_arr = np.atleast_1d(np.asarray(k, dtype=float))
        phases = np.exp(1j * np.outer(k_arr, self.cells) * self.period)
        h = np.einsum("abc,kc->kab", self.terms, phases)
        if with_tail:
            h = h + self._tail(k_arr, +1.0, self.tail_plus) + self._tail(k_arr, -1.0, self.tail_minus)
        return h[0] if np.ndim(k) == 0 else h

    def _tail(self, k: np.ndarray, side: float, diffs: np.ndarray) -> np.ndarray:
        first = self.cutoff_cells + 1
        theta = (K0 + side * k) * self.period
        z = np.exp(1j * theta)
        one_minus = 1.0 - z
        singular = np.abs(one_minus) < LIGHT_LINE_EPS
        w = np.where(singular, 0.0, 1.0 / np.where(singular, 1.0, one_minus))
        lead = np.exp(1j * theta * first) * w
        series = (np.einsum("k,ab->kab", lead, diffs[..., 0])
                  + np.einsum("k,ab->kab", lead * z * w, diffs[..., 1])
                  + np.einsum("k,ab->kab", lead * (z * w) ** 2, diffs[..., 2]))
        return np.exp(1j * side * K0 * self.offsets)[None] * series


def _smooth_tail(separations: np.ndarray, distances: np.ndarray, dipole) -> np.ndarray:
    values, _ = pair_terms(separations, dipole, with_gradient=False)
    h = values * np.exp(-1j * K0 * distances)
    return np.array([h[0], h[1] - h[0], h[2] - 2.0 * h[1] + h[0]])


def lattice_couplings(a1: float, a2: float, dipole=Z_DIPOLE,
                      cutoff_cells: int = settings.CUTOFF_CELLS) -> LatticeCouplings:
    if not (a1 > 0 and a2 > 0):
        raise GeometryError(f"Dimerized cell needs a1, a2 > 0, got ({a1}, {a2})")
    if cutoff_cells < settings.MIN_CUTOFF_CELLS:
        raise ConfigError(
            f"cutoff_cells={cutoff_cells} is below the minimum {settings.MIN_CUTOFF_CELLS}",
            key="spectrum.cutoff_cells",
        )
    period = a1 + a2
    sites = np.array([0.0, a1])
    cells = np.arange(-cutoff_cells, cutoff_cells + 1)
    far = (cutoff_cells + 1 + np.arange(3)) * period
    terms = np.zeros((2, 2, len(cells)), dtype=complex)
    offsets = np.zeros((2, 2))
    tail_plus = np.zeros((2, 2, 3), dtype=complex)
    tail_minus = np.zeros((2, 2, 3), dtype=complex)
    for alpha in range(2):
        for beta in range(2):
            shift = sites[beta] - sites[alpha]
            offsets[alpha, beta] = shift
            lags = shift + cells * period
            onsite = np.abs(lags) < 1e-12
            separations = np.column_stack([lags, np.zeros_like(lags)])[~onsite]
            values, _ = pair_terms(separations, dipole, with_gradient=False)
            terms[alpha, beta, ~onsite] = values
            terms[alpha, beta, onsite] = -0.5j

            right = far + shift
            left = -far + shift
            tail_plus[alpha, beta] = _smooth_tail(
                np.column_stack([right, np.zeros(3)]), right, dipole)
            tail_minus[alpha, beta] = _smooth_tail(
                np.column_stack([left, np.zeros(3)]), -left, dipole)
    return LatticeCouplings(a1=float(a1), a2=float(a2), cells=cells, terms=terms,
                            offsets=offsets, tail_plus=tail_plus, tail_minus=tail_minus)


def bloch_hamiltonian(k: float, a1: float, a2: float, dipole=Z_DIPOLE,
                      cutoff_cells: int = settings.CUTOFF_CELLS) -> np.ndarray:
    return lattice_couplings(a1, a2, dipole, cutoff_cells).hamiltonian(float(k))


def default_k_grid(a1: float, a2: float, n_points: int = 2 * settings.ZAK_MIN_POINTS) -> np.ndarray:
    """One Brillouin zone [−π/L, π/L)."""
    period = a1 + a2
    return np.linspace(-np.pi / period, np.pi / period, n_points, endpoint=False)


@dataclass
class BandStructure:
    k: np.ndarray
    bands: np.ndarray        # (n_k, 2), sorted by real part at each k
    gap: float
    gap_k: float
    near_light_line: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "k": self.k,
            "re_lower": self.bands[:, 0].real, "im_lower": self.bands[:, 0].imag,
            "re_upper": self.bands[:, 1].real, "im_upper": self.bands[:, 1].imag,
            "near_light_line": self.near_light_line,
        })


def _sorted_eigvals(h: np.ndarray) -> np.ndarray:
    values = np.linalg.eigvals(h)
    index = np.argsort(values.real, axis=-1, kind="stable")
    return np.take_along_axis(values, index, axis=-1)


def light_line_distance(k, period: float) -> np.ndarray:
    """Phase distance |(k₀ ± k)L mod 2π| to the nearer folded light line."""
    kl = np.asarray(k, dtype=float) * period
    plus = np.abs(np.angle(np.exp(1j * (K0 * period + kl))))
    minus = np.abs(np.angle(np.exp(1j * (K0 * period - kl))))
    return np.minimum(plus, minus)


def band_structure(a1: float, a2: float, dipole=Z_DIPOLE, k_grid=None,
                   cutoff_cells: int = settings.CUTOFF_CELLS,
                   light_line_window: float = settings.LIGHT_LINE_WINDOW) -> BandStructure:
    """
    Bands over k_grid and the minimum direct gap min_k |Re λ₊ − Re λ₋|.

    Lattice tails beyond cutoff_cells are summed analytically. The far-field
    sum has a logarithmic singularity where (k₀ ± k)L ≡ 0 mod 2π, so the gap
    minimum is taken over k at least light_line_window (phase, rad) from it.
    """
    lattice = lattice_couplings(a1, a2, dipole, cutoff_cells)
    k = default_k_grid(a1, a2) if k_grid is None else np.asarray(k_grid, dtype=float)
    try:
        bands = _sorted_eigvals(lattice.hamiltonian(k, with_tail=True))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Band eigensolver failed: {exc}") from exc

    near = light_line_distance(k, lattice.period) < light_line_window
    if np.all(near):
        raise ConfigError(f"Every k-point lies within {light_line_window} rad of the light line",
                          key="spectrum.k_points")
    splitting = np.abs(bands[:, 1].real - bands[:, 0].real)
    splitting = np.where(near, np.inf, splitting)
    at = int(np.argmin(splitting))
    logger.debug(f"Band gap {splitting[at]:.4g} Γ₀ at kL={k[at] * lattice.period:.4f} "
                 f"({int(np.sum(near))} k-points skipped near the light line)")
    return BandStructure(k=k, bands=bands, gap=float(splitting[at]), gap_k=float(k[at]),
                         near_light_line=near)


def ssh_bloch_hamiltonian(k: float, v: complex, w: complex, period: float = 1.0) -> np.ndarray:
    """Nearest-neighbour reference: intra-cell v, inter-cell w."""
    return np.array([[0.0, v + w * np.exp(-1j * k * period)],
                     [v + w * np.exp(1j * k * period), 0.0]], dtype=complex)


# ============================================================================
# ZAK PHASE
# ============================================================================

def _band_vectors(h: np.ndarray, band: int, convention: str):
    values, left, right = scipy.linalg.eig(h, left=True, right=True)
    pick = np.argsort(values.real, kind="stable")[band]
    r = right[:, pick] / np.linalg.norm(right[:, pick])
    if convention == "right":
        return r, r
    l = left[:, pick]
    norm = np.vdot(l, r)
    if abs(norm) < 1e-14:
        raise GapClosureError("Left and right eigenvectors are orthogonal (exceptional point on path)")
    return l / np.conj(norm), r


def wilson_loop_phase(h_of_k: Callable[[float], np.ndarray], k_grid, band: int,
                      convention: str = "biorthogonal") -> float:
    """
    φ = −Im log Π_j ⟨ψ_{k_j}|ψ_{k_{j+1}}⟩ over a closed loop, in [0, 2π).

    k_grid spans one Brillouin zone of a periodic-gauge H(k); the loop is
    closed back onto its first point.
    """
    if convention not in ("biorthogonal", "right"):
        raise ConfigError(f"Unknown Zak convention '{convention}'", key="spectrum.zak_convention")
    k = np.asarray(k_grid, dtype=float)
    if len(k) < settings.ZAK_MIN_POINTS:
        raise ConfigError(f"Zak phase needs at least {settings.ZAK_MIN_POINTS} k-points, got {len(k)}",
                          key="spectrum.k_points")

    vectors = [_band_vectors(h_of_k(float(kj)), band, convention) for kj in k]
    product = 1.0 + 0j
    for j in range(len(k)):
        l_j, r_j = vectors[j]
        _, r_next = vectors[(j + 1) % len(k)]
        overlap = abs(np.vdot(r_j, r_next))
        if overlap < settings.ZAK_MIN_OVERLAP:
            raise GapClosureError(
                f"gap closure on path near k={k[j]:.6g} (overlap {overlap:.3g})", k=float(k[j])
            )
        step = np.vdot(l_j, r_next)
        product *= step / abs(step)
    return float(np.mod(-np.angle(product), 2.0 * np.pi))


def zak_phase(a1: float, a2: float, dipole=Z_DIPOLE, k_grid=None, band_index: int = 0,
              convention: str = "biorthogonal", cutoff_cells: int = settings.CUTOFF_CELLS) -> float:
    lattice = lattice_couplings(a1, a2, dipole, cutoff_cells)
    k = default_k_grid(a1, a2) if k_grid is None else k_grid
    return wilson_loop_phase(lattice.hamiltonian, k, band_index, convention)


def phase_distance(phi: float, target: float) -> float:
    """Distance between two angles on the circle."""
    return float(abs(np.angle(np.exp(1j * (phi - target)))))


def zak_report(a1: float, a2: float, dipole=Z_DIPOLE, k_grid=None, band_index: int = 0,
               cutoff_cells: int = settings.CUTOFF_CELLS) -> dict:
    """Zak phase under both overlap conventions, flagging a disagreement."""
    lattice = lattice_couplings(a1, a2, dipole, cutoff_cells)
    k = default_k_grid(a1, a2) if k_grid is None else k_grid
    biorthogonal = wilson_loop_phase(lattice.hamiltonian, k, band_index, "biorthogonal")
    right = wilson_loop_phase(lattice.hamiltonian, k, band_index, "right")
    disagreement = phase_distance(biorthogonal, right)
    agree = disagreement <= settings.ZAK_CONVENTION_TOL
    if not agree:
        logger.warning(f"Zak conventions disagree by {disagreement:.3g} rad "
                       f"(biorthogonal {biorthogonal:.4f}, right {right:.4f})")
    return {
        "a1": float(a1), "a2": float(a2), "band": band_index,
        "zak_biorthogonal": biorthogonal, "zak_right": right,
        "disagreement": disagreement, "conventions_agree": bool(agree),
    }


# ============================================================================
# SELF-ORGANIZED VS PERIODIC
# ============================================================================

@dataclass
class PeriodicComparison:
    a1: float
    a2: float
    max_delta_h: float
    alternating_std: float
    periodic_positions: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"a1": self.a1, "a2": self.a2, "max_delta_h": self.max_delta_h,
                "alternating_std": self.alternating_std}


def alternating_means(gaps) -> Tuple[float, float]:
    """Mean of odd-numbered gaps (a1) and even-numbered gaps (a2)."""
    gaps = np.asarray(gaps, dtype=float)
    if len(gaps) < 2:
        raise GeometryError("Need at least two gaps to extract alternating separations")
    return float(np.mean(gaps[0::2])), float(np.mean(gaps[1::2]))


def periodic_reference(positions, dipole=Z_DIPOLE) -> PeriodicComparison:
    """Compare a relaxed chain with the perfectly dimerized chain of the same mean gaps."""
    pos = _planar(positions)
    pos = pos[np.argsort(pos[:, 0], kind="stable")]
    gaps = nearest_neighbor_distances(pos)
    a1, a2 = alternating_means(gaps)

    reference_gaps = np.where(np.arange(len(gaps)) % 2 == 0, a1, a2)
    x = pos[0, 0] + np.concatenate([[0.0], np.cumsum(reference_gaps)])
    periodic = np.column_stack([x, np.zeros_like(x)])

    delta = effective_hamiltonian(pos, dipole) - effective_hamiltonian(periodic, dipole)
    return PeriodicComparison(
        a1=a1, a2=a2,
        max_delta_h=float(np.max(np.abs(delta))),
        alternating_std=float(np.sqrt(np.mean((gaps - reference_gaps) ** 2))),
        periodic_positions=periodic,
    )


# ============================================================================
# ZERO-POINT MOTION
# ============================================================================

def zpm_threshold(mass: float, lambda0: float, gamma0: float, a: float) -> float:
    """
    Minimum trap frequency ratio ω/Γ₀ = ħ/(2 m a² Γ₀); SI inputs (kg, m, rad/s, m).

    The bound depends on the wavelength only through a; lambda0 is checked
    and used to report the spacing in λ₀.
    """
    if not (mass > 0 and lambda0 > 0 and gamma0 > 0 and a > 0):
        raise ConfigError("zpm_threshold needs positive mass, wavelength, linewidth and spacing")
    ratio = constants.hbar / (2.0 * mass * a ** 2 * gamma0)
    logger.debug(f"zpm threshold {ratio:.3g} at a = {a / lambda0:g} λ₀")
    return ratio


def zpm_length(mass: float, omega: float) -> float:
    """x_zpm = √(ħ/2mω) in metres."""
    if not (mass > 0 and omega > 0):
        raise ConfigError("zpm_length needs positive mass and trap frequency")
    return math.sqrt(constants.hbar / (2.0 * mass * omega))


def load_species(path: Path = SPECIES_PRESETS) -> List[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)["species"]


def zpm_table(species: Optional[List[dict]] = None, spacings: Sequence[float] = ZPM_SPACINGS) -> pd.DataFrame:
    """One row per species, one column per spacing a/λ₀."""
    rows = []
    for entry in species if species is not None else load_species():
        gamma0 = 2.0 * math.pi * entry["gamma0_over_2pi_MHz"] * 1e6
        lambda0 = entry["lambda0_nm"] * 1e-9
        row = {"species": entry["name"]}
        for factor in spacings:
            row[f"a={factor:g}"] = zpm_threshold(entry["mass_kg"], lambda0, gamma0, factor * lambda0)
        rows.append(row)
    return pd.DataFrame(rows)
