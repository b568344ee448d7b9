"""
config.py - Centralized Numerical & Application Configuration

All physics inside the package is in natural units: Γ₀ = 1 (rates),
λ₀ = 1 (lengths, so k₀ = 2π), ħ = 1, momenta in ħk₀.
"""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="SELFORG_", extra="ignore")

    # App
    APP_NAME: str = "Atomic Self-Organization Simulator"
    APP_VERSION: str = "1.0.0"
    LOG_LEVEL: str = "INFO"

    # ── Physics defaults (natural units) ───────────────
    RABI: float = 0.05             # Ω in Γ₀
    DETUNING: float = 0.0          # δ in Γ₀
    RECOIL_FREQ: float = 1e-3      # ω_r in Γ₀
    FRICTION: float = 0.005        # γ in Γ₀
    CHAIN_TRAP_FREQ: float = 1.0   # ω in ω_r for chains (N != 2)
    RING_TRAP_FREQ: float = 0.1    # ω in ω_r for rings and the two-atom chain

    # ── Soft physics checks ────────────────────────────
    WEAK_DRIVE_LIMIT: float = 0.1      # warn when Ω exceeds this
    RECOIL_LIMIT: float = 0.01         # warn when ω_r is not ≪ Γ₀
    UNIT_NORM_TOL: float = 1e-12

    # ── Green's tensor ─────────────────────────────────
    NEAR_FIELD_GUARD: float = 1e-3     # λ₀; below this the coupling is undefined

    # ── Integrator ─────────────────────────────────────
    ODE_METHOD: str = "RK45"           # embedded Runge-Kutta pair
    RTOL: float = 1e-8
    ATOL: float = 1e-10
    T_MAX: float = 2e6                 # Γ₀⁻¹
    SAMPLE_DT: float = 100.0           # Γ₀⁻¹ between steady-state checks
    SAMPLE_STRIDE: int = 10            # keep every Nth sample in the trajectory
    SEGMENT_SAMPLES: int = 200         # samples per solve_ivp call

    # ── Outcome classification ─────────────────────────
    EPS_MOMENTUM: float = 1e-6         # ħk₀
    EPS_FORCE: float = 1e-8            # ħk₀Γ₀
    HOLD_TRAP_PERIODS: float = 10.0
    COLLISION_DISTANCE: float = 0.05   # λ₀
    MAX_POPULATION: float = 0.1
    SINGULAR_COND: float = 1e12

    # ── Analysis ───────────────────────────────────────
    UNIFORM_TOL: float = 0.02          # std/mean of gaps below which a chain is uniform
    CLUSTER_CONTRAST: float = 0.05     # relative separation of the two gap clusters
    EDGE_IPR_FACTOR: float = 3.0       # edge candidates: IPR above this × median
    EDGE_SITES: int = 4
    CUTOFF_CELLS: int = 100
    MIN_CUTOFF_CELLS: int = 10
    ZAK_MIN_OVERLAP: float = 0.1
    ZAK_MIN_POINTS: int = 200
    ZAK_CONVENTION_TOL: float = 1e-2
    LIGHT_LINE_WINDOW: float = 0.1     # rad of (k₀ ± k)L kept out of the band-gap minimum

    # ── Quadrature ─────────────────────────────────────
    POINTS_PER_LAMBDA: int = 2000

    # ── Output ─────────────────────────────────────────
    OUTPUT_DIR: str = "runs"
    JOBS: int = 1


settings = Settings()
