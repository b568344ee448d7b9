"""
dynamics.py — Coupled internal/external equations of motion

Mean-field coherences (rotating frame, uniform drive phase):
    dσ̃_n/dt = (iδ − Γ₀/2)σ̃_n − i(Σ_{m≠n} C_nm σ̃_m − Ω)
Motion (natural units, see model.py):
    dx/dt = (ω_r/k₀)p,   dp/dt = F_dip − k₀ω_r f²(x − x_t) − γp
    F_dip,n = −(1/k₀) Σ_m [∂C_nm/∂r_n σ̃_n* σ̃_m + c.c.]

Pipeline of one run:
  MotionModel.rhs  →  solve_ivp (embedded RK pair) in segments
      ↓ every SAMPLE_DT
  steadiness of momenta / net forces  →  detect_steady over the trailing hold window
      ↓
  Trajectory(samples, outcome, max_population)
"""
import logging
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from core.config import settings
from core.errors import NumericalError, SeparationError
from greens import CouplingMatrix, coupling_matrix
from model import K0, AtomConfiguration, MotionAxes, SimState, SystemParams

logger = logging.getLogger(__name__)


class IntegrationMode(str, Enum):
    FULL = "full"
    ADIABATIC = "adiabatic"


class OutcomeKind(str, Enum):
    CONVERGED = "converged"
    COLLIDED = "collided"
    TIMEOUT = "timeout"
    EXCITATION_BREACH = "excitation_breach"


@dataclass(frozen=True)
class StopCriteria:
    t_max: float = settings.T_MAX
    sample_dt: float = settings.SAMPLE_DT
    stride: int = settings.SAMPLE_STRIDE
    eps_momentum: float = settings.EPS_MOMENTUM
    eps_force: float = settings.EPS_FORCE
    t_hold: Optional[float] = None     # None → HOLD_TRAP_PERIODS trap periods
    collision_distance: float = settings.COLLISION_DISTANCE
    max_population: float = settings.MAX_POPULATION
    method: str = settings.ODE_METHOD
    rtol: float = settings.RTOL
    atol: float = settings.ATOL
    segment_samples: int = settings.SEGMENT_SAMPLES

    def hold_time(self, params: SystemParams) -> float:
        if self.t_hold is not None:
            return self.t_hold
        return settings.HOLD_TRAP_PERIODS * params.trap_period


@dataclass(frozen=True)
class SteadyTolerances:
    eps_momentum: float
    eps_force: float
    hold: float


@dataclass
class Outcome:
    kind: OutcomeKind
    time: float
    state: Optional[SimState] = None
    pair: Optional[Tuple[int, int]] = None

    def to_dict(self) -> dict:
        payload = {"kind": self.kind.value, "time": self.time}
        if self.pair is not None:
            payload["pair"] = list(self.pair)
        return payload


@dataclass
class Trajectory:
    samples: List[SimState]
    outcome: Outcome
    max_population: float
    mode: str = IntegrationMode.ADIABATIC.value

    @property
    def final_state(self) -> SimState:
        return self.outcome.state if self.outcome.state is not None else self.samples[-1]

    @property
    def converged(self) -> bool:
        return self.outcome.kind == OutcomeKind.CONVERGED

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.samples])

    def positions(self) -> np.ndarray:
        """(n_samples, N, 2)."""
        return np.array([s.positions for s in self.samples])


# ============================================================================
# INTERNAL DYNAMICS
# ============================================================================

def steady_coherences(couplings: CouplingMatrix, rabi: float, detuning: float) -> np.ndarray:
    """Solve (C − δ𝟙)σ̃ = Ω·1, the fixed point of the coherence equation."""
    system = couplings.c - detuning * np.eye(couplings.n_atoms)
    cond = np.linalg.cond(system)
    if not cond < settings.SINGULAR_COND:
        raise NumericalError(
            f"Steady-state system is singular (condition number {cond:.3g})",
            condition=float(cond),
        )
    return scipy.linalg.solve(system, np.full(couplings.n_atoms, rabi, dtype=complex))


def coherence_rhs(state: SimState, couplings: CouplingMatrix, params: SystemParams) -> np.ndarray:
    sigma = state.coherences
    return ((1j * params.detuning - 0.5) * sigma
            - 1j * (couplings.offdiag @ sigma - params.rabi))


def dipole_force(coherences: np.ndarray, couplings: CouplingMatrix) -> np.ndarray:
    """Light force per atom (N×2, ħk₀Γ₀)."""
    sigma = np.asarray(coherences, dtype=complex)
    weighted = np.einsum("nmi,n,m->ni", couplings.grad_c, np.conj(sigma), sigma)
    return -2.0 * np.real(weighted) / K0


def trap_force(positions: np.ndarray, trap_centers: np.ndarray, params: SystemParams) -> np.ndarray:
    return -params.trap_stiffness * (positions - trap_centers)


def constrain(vectors: np.ndarray, config: AtomConfiguration) -> np.ndarray:
    """Project per-atom vectors onto the allowed motion axes."""
    if config.motion_axes == MotionAxes.X_ONLY:
        out = np.array(vectors, dtype=float)
        out[:, 1] = 0.0
        return out
    if config.motion_axes == MotionAxes.RADIAL_ONLY:
        units = config.radial_units
        return np.sum(vectors * units, axis=1, keepdims=True) * units
    return vectors


def pairwise_min_distance(positions: np.ndarray) -> Tuple[float, Optional[Tuple[int, int]]]:
    n = len(positions)
    if n < 2:
        return math.inf, None
    rows, cols = np.triu_indices(n, k=1)
    distances = np.linalg.norm(positions[rows] - positions[cols], axis=1)
    k = int(np.argmin(distances))
    return float(distances[k]), (int(rows[k]), int(cols[k]))


# ============================================================================
# STEADY-STATE DETECTION
# ============================================================================

def detect_steady(times: Sequence[float], max_momenta: Sequence[float], max_forces: Sequence[float],
                  tolerances: SteadyTolerances) -> bool:
    """
    True iff momenta and net forces stayed below tolerance at every sample of
    the trailing window [t_last − hold, t_last], and the history spans it.
    """
    times = np.asarray(times, dtype=float)
    if len(times) == 0:
        return False
    t_last = times[-1]
    if t_last - times[0] < tolerances.hold:
        return False
    window = times >= t_last - tolerances.hold
    return bool(
        np.all(np.asarray(max_momenta)[window] < tolerances.eps_momentum)
        and np.all(np.asarray(max_forces)[window] < tolerances.eps_force)
    )


# ============================================================================
# MOTION MODELS
# ============================================================================

class MotionModel:
    """
    Base for anything the segment driver can integrate.

    Subclasses provide the packed initial vector, the right-hand side, the
    SimState view of a packed vector and a (max |p|, max |F_net|) steadiness pair.
    """
    mode = IntegrationMode.ADIABATIC.value

    def __init__(self, params: SystemParams, stop: StopCriteria):
        self.params = params
        self.stop = stop

    def initial(self) -> np.ndarray:
        raise NotImplementedError

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_state(self, t: float, y: np.ndarray) -> SimState:
        raise NotImplementedError

    def steadiness(self, t: float, y: np.ndarray) -> Tuple[float, float]:
        raise NotImplementedError

    def min_separation(self, y: np.ndarray) -> Tuple[float, Optional[Tuple[int, int]]]:
        return pairwise_min_distance(self.to_state(0.0, y).positions)

    def population(self, y: np.ndarray) -> float:
        return self.to_state(0.0, y).max_population

    def events(self) -> List[Callable]:
        def collision(t, y):
            return self.min_separation(y)[0] - self.stop.collision_distance
        collision.terminal = True
        collision.direction = -1

        def breach(t, y):
            return self.population(y) - self.stop.max_population
        breach.terminal = True
        breach.direction = 1
        return [collision, breach]


class ArrayModel(MotionModel):
    """Planar N-atom model, in Full or Adiabatic mode."""

    def __init__(self, config: AtomConfiguration, params: SystemParams, mode: IntegrationMode,
                 stop: StopCriteria):
        super().__init__(params, stop)
        self.config = config
        self.mode = IntegrationMode(mode).value
        self.n = config.n_atoms
        self.dipole = np.array(config.dipole, dtype=complex)
        self._offset = 2 * self.n if self.mode == IntegrationMode.FULL.value else 0

    # ── packing ──

    def initial(self) -> np.ndarray:
        rest = SimState.at_rest(self.config)
        motion = np.concatenate([rest.positions.ravel(), rest.momenta.ravel()])
        if self.mode == IntegrationMode.FULL.value:
            return np.concatenate([np.zeros(2 * self.n), motion])
        return motion

    def _unpack(self, y: np.ndarray):
        n, o = self.n, self._offset
        positions = y[o:o + 2 * n].reshape(n, 2)
        momenta = y[o + 2 * n:o + 4 * n].reshape(n, 2)
        return positions, momenta

    def _coherences(self, y: np.ndarray, couplings: CouplingMatrix) -> np.ndarray:
        if self.mode == IntegrationMode.FULL.value:
            return y[:self.n] + 1j * y[self.n:2 * self.n]
        return steady_coherences(couplings, self.params.rabi, self.params.detuning)

    # ── physics ──

    def net_force(self, positions: np.ndarray, sigma: np.ndarray, couplings: CouplingMatrix) -> np.ndarray:
        total = dipole_force(sigma, couplings) + trap_force(positions, self.config.trap_centers, self.params)
        return constrain(total, self.config)

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        positions, momenta = self._unpack(y)
        couplings = coupling_matrix(positions, self.dipole)
        sigma = self._coherences(y, couplings)
        force = self.net_force(positions, sigma, couplings)

        dx = self.params.velocity_factor * momenta
        dp = force - self.params.friction * momenta
        motion = np.concatenate([dx.ravel(), dp.ravel()])
        if self.mode == IntegrationMode.FULL.value:
            state = SimState(sigma, positions, momenta, t)
            dsigma = coherence_rhs(state, couplings, self.params)
            return np.concatenate([dsigma.real, dsigma.imag, motion])
        return motion

    def to_state(self, t: float, y: np.ndarray) -> SimState:
        positions, momenta = self._unpack(y)
        if self.mode == IntegrationMode.FULL.value:
            sigma = y[:self.n] + 1j * y[self.n:2 * self.n]
        else:
            sigma = steady_coherences(coupling_matrix(positions, self.dipole),
                                      self.params.rabi, self.params.detuning)
        return SimState(np.array(sigma), positions.copy(), momenta.copy(), float(t))

    def min_separation(self, y: np.ndarray):
        positions, _ = self._unpack(y)
        return pairwise_min_distance(positions)

    def population(self, y: np.ndarray) -> float:
        if self.mode == IntegrationMode.FULL.value:
            return float(np.max(y[:self.n] ** 2 + y[self.n:2 * self.n] ** 2))
        positions, _ = self._unpack(y)
        sigma = steady_coherences(coupling_matrix(positions, self.dipole),
                                  self.params.rabi, self.params.detuning)
        return float(np.max(np.abs(sigma) ** 2))

    def steadiness(self, t: float, y: np.ndarray) -> Tuple[float, float]:
        positions, momenta = self._unpack(y)
        couplings = coupling_matrix(positions, self.dipole)
        sigma = self._coherences(y, couplings)
        force = self.net_force(positions, sigma, couplings)
        return (float(np.max(np.linalg.norm(momenta, axis=1))),
                float(np.max(np.linalg.norm(force, axis=1))))


# ============================================================================
# SEGMENT DRIVER
# ============================================================================

@dataclass
class _Recorder:
    stride: int
    samples: List[SimState] = field(default_factory=list)
    count: int = 0
    max_population: float = 0.0

    def add(self, state: SimState, force: bool = False):
        self.max_population = max(self.max_population, state.max_population)
        if force or self.count % self.stride == 0:
            if not self.samples or state.time > self.samples[-1].time:
                self.samples.append(state)
        self.count += 1


def run_model(model: MotionModel) -> Trajectory:
    """Integrate a MotionModel segment by segment until an outcome is reached."""
    stop = model.stop
    tolerances = SteadyTolerances(stop.eps_momentum, stop.eps_force, stop.hold_time(model.params))
    recorder = _Recorder(stride=max(1, stop.stride))
    times: List[float] = []
    p_max: List[float] = []
    f_max: List[float] = []
    quiet_since: Optional[float] = None

    def finish(kind: OutcomeKind, t: float, y: np.ndarray, pair=None) -> Trajectory:
        state = model.to_state(t, y)
        recorder.add(state, force=True)
        logger.info(f"Run finished: {kind.value} at t={t:.6g} (max population {recorder.max_population:.4g})")
        return Trajectory(
            samples=recorder.samples,
            outcome=Outcome(kind=kind, time=float(t), state=state, pair=pair),
            max_population=recorder.max_population,
            mode=model.mode,
        )

    y = model.initial()
    t = 0.0
    recorder.add(model.to_state(t, y))
    events = model.events()
    segment = stop.sample_dt * stop.segment_samples
    next_index = 1

    while t < stop.t_max:
        t_end = min(t + segment, stop.t_max)
        last_index = int(math.floor(t_end / stop.sample_dt + 1e-9))
        t_eval = np.arange(next_index, last_index + 1) * stop.sample_dt
        t_eval = t_eval[(t_eval > t) & (t_eval <= t_end)]

        try:
            sol = solve_ivp(model.rhs, (t, t_end), y, method=stop.method, dense_output=True,
                            events=events, rtol=stop.rtol, atol=stop.atol)
        except SeparationError as exc:
            logger.warning(f"Near-field breakdown inside a step after t={t:.6g}: {exc.message}")
            return finish(OutcomeKind.COLLIDED, t, y, pair=exc.pair or model.min_separation(y)[1])

        if sol.status == -1:
            raise NumericalError(f"Integrator failed at t={t:.6g}: {sol.message}", time=float(t))

        sample_times = t_eval[t_eval <= sol.t[-1]]
        sample_states = sol.sol(sample_times) if len(sample_times) else np.empty((len(y), 0))
        for k, t_sample in enumerate(sample_times):
            y_sample = sample_states[:, k]
            recorder.add(model.to_state(t_sample, y_sample))
            pk, fk = model.steadiness(t_sample, y_sample)
            times.append(float(t_sample))
            p_max.append(pk)
            f_max.append(fk)

            if pk < tolerances.eps_momentum and fk < tolerances.eps_force:
                quiet_since = t_sample if quiet_since is None else quiet_since
            else:
                quiet_since = None

            if quiet_since is not None and t_sample - quiet_since >= tolerances.hold:
                start = bisect_left(times, t_sample - tolerances.hold - stop.sample_dt)
                if detect_steady(times[start:], p_max[start:], f_max[start:], tolerances):
                    return finish(OutcomeKind.CONVERGED, t_sample, y_sample)
        next_index = last_index + 1

        if sol.status == 1:
            if len(sol.t_events[0]):
                t_hit, y_hit = sol.t_events[0][0], sol.y_events[0][0]
                return finish(OutcomeKind.COLLIDED, t_hit, y_hit, pair=model.min_separation(y_hit)[1])
            t_hit, y_hit = sol.t_events[1][0], sol.y_events[1][0]
            logger.warning(f"Weak-excitation breach at t={t_hit:.6g}")
            return finish(OutcomeKind.EXCITATION_BREACH, t_hit, y_hit)

        t, y = float(sol.t[-1]), sol.y[:, -1]
        logger.debug(f"Segment done: t={t:.6g}, max|p|={p_max[-1] if p_max else 0:.3g}")

    return finish(OutcomeKind.TIMEOUT, t, y)


def integrate(config: AtomConfiguration, params: SystemParams,
              mode: IntegrationMode = IntegrationMode.ADIABATIC,
              stop: Optional[StopCriteria] = None) -> Trajectory:
    """
    Relax an array from rest at its trap centres (σ̃ = 0, p = 0).

    Full mode integrates coherences, positions and momenta jointly; Adiabatic
    mode slaves σ̃ to its instantaneous steady state.
    """
    stop = stop or StopCriteria()
    if not stop.t_max > 0:
        raise NumericalError(f"t_max must be positive, got {stop.t_max}")
    logger.info(f"Integrating N={config.n_atoms} {config.kind.value} in {IntegrationMode(mode).value} mode "
                f"(t_max={stop.t_max:.3g})")
    return run_model(ArrayModel(config, params, mode, stop))
