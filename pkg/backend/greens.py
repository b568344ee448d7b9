"""
greens.py — Free-space Green's tensor and dipole-dipole couplings

    C(r) = J − iΓ/2 = −(3πΓ₀/ω₀) d†·G(r)·d
         = −(3/4) [f(x) + g(x)·|d·r̂|²],   x = k₀|r|
    f(x) = e^{ix}(x² + ix − 1)/x³,  g(x) = e^{ix}(−x² − 3ix + 3)/x³

Lengths are in λ₀ (k₀ = 2π); rates in Γ₀. Gradients are analytic and are
taken with respect to the first atom of the pair, per λ₀.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.config import settings
from core.errors import SeparationError
from model import K0

logger = logging.getLogger(__name__)

SELF_COUPLING = -0.5j   # J_nn = 0, Γ_nn = Γ₀


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """c[n, m] = C_nm (Γ₀); grad_c[n, m, i] = ∂C_nm/∂r_{n,i} (Γ₀/λ₀), i ∈ {x, y}."""
    c: np.ndarray
    grad_c: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.c.shape[0]

    @property
    def offdiag(self) -> np.ndarray:
        return self.c - np.diag(np.diag(self.c))


def _as_3d(r_vec) -> np.ndarray:
    r = np.asarray(r_vec, dtype=float)
    if r.shape[-1] == 2:
        r = np.concatenate([r, np.zeros(r.shape[:-1] + (1,))], axis=-1)
    return r


def _check_separation(distance: float):
    if not distance >= settings.NEAR_FIELD_GUARD:
        raise SeparationError(
            f"Separation {distance:.3g} λ₀ is below the near-field guard "
            f"({settings.NEAR_FIELD_GUARD} λ₀); the Green's tensor diverges",
            distance=float(distance),
        )


def green_tensor(r_vec, k: float = K0) -> np.ndarray:
    """G(r, ω₀) = e^{ikr}/(4πk²r³)[(k²r²+ikr−1)𝟙 + (−k²r²−3ikr+3) r⊗r/r²]."""
    r = _as_3d(r_vec)
    distance = float(np.linalg.norm(r))
    _check_separation(distance * k / K0)
    x = k * distance
    rhat = r / distance
    prefactor = np.exp(1j * x) / (4.0 * np.pi * k ** 2 * distance ** 3)
    return prefactor * ((x ** 2 + 1j * x - 1.0) * np.eye(3)
                        + (-x ** 2 - 3j * x + 3.0) * np.outer(rhat, rhat))


def _radial_kernels(x: np.ndarray):
    """f, g and their x-derivatives."""
    phase = np.exp(1j * x)
    x2, x3, x4 = x ** 2, x ** 3, x ** 4
    f = phase * (x2 + 1j * x - 1.0) / x3
    g = phase * (-x2 - 3j * x + 3.0) / x3
    df = phase * (1j * x3 - 2.0 * x2 - 3j * x + 3.0) / x4
    dg = phase * (-1j * x3 + 4.0 * x2 + 9j * x - 9.0) / x4
    return f, g, df, dg


def pair_terms(separations, dipole, with_gradient: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised coupling and gradient for an array of separation vectors (..., 2|3).

    Returns C with shape (...) and ∂C/∂r with shape (..., 3). Callers are
    responsible for the near-field guard.
    """
    r = _as_3d(separations)
    d = np.asarray(dipole, dtype=complex)
    distance = np.linalg.norm(r, axis=-1)
    rhat = r / distance[..., None]
    x = K0 * distance

    d_dot_rhat = rhat @ d
    u = np.abs(d_dot_rhat) ** 2
    f, g, df, dg = _radial_kernels(x)
    coupling = -0.75 * (f + g * u)
    if not with_gradient:
        return coupling, None

    radial = (df + dg * u)[..., None] * K0 * rhat
    angular = (g * 2.0 / distance)[..., None] * (
        np.real(np.conj(d_dot_rhat)[..., None] * d) - u[..., None] * rhat
    )
    gradient = -0.75 * (radial + angular)
    return coupling, gradient


def coupling(r_vec, dipole) -> complex:
    """C = J − iΓ/2 for a single separation vector (λ₀) and unit dipole."""
    r = _as_3d(r_vec)
    _check_separation(float(np.linalg.norm(r)))
    value, _ = pair_terms(r, dipole, with_gradient=False)
    return complex(value)


def coupling_gradient(r_vec, dipole) -> np.ndarray:
    """∂C/∂r (complex 3-vector, Γ₀/λ₀); real part ∂J/∂r, imaginary part −½∂Γ/∂r."""
    r = _as_3d(r_vec)
    _check_separation(float(np.linalg.norm(r)))
    _, gradient = pair_terms(r, dipole)
    return gradient


def coupling_matrix(positions, dipole) -> CouplingMatrix:
    """Full N×N coupling matrix for in-plane positions (N×2, λ₀)."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(pos)
    c = np.full((n, n), SELF_COUPLING, dtype=complex)
    grad_c = np.zeros((n, n, 2), dtype=complex)
    if n == 1:
        return CouplingMatrix(c=c, grad_c=grad_c)

    rows, cols = np.triu_indices(n, k=1)
    separations = pos[rows] - pos[cols]
    distances = np.linalg.norm(separations, axis=1)
    worst = int(np.argmin(distances))
    if not distances[worst] >= settings.NEAR_FIELD_GUARD:
        pair = (int(rows[worst]), int(cols[worst]))
        raise SeparationError(
            f"Atoms {pair[0]} and {pair[1]} are {distances[worst]:.3g} λ₀ apart",
            pair=pair,
            distance=float(distances[worst]),
        )

    values, gradients = pair_terms(separations, dipole)
    c[rows, cols] = values
    c[cols, rows] = values
    grad_c[rows, cols] = gradients[:, :2]
    grad_c[cols, rows] = -gradients[:, :2]   # ∂C_mn/∂r_m = −∂C_nm/∂r_n
    return CouplingMatrix(c=c, grad_c=grad_c)
