"""
ensemble.py — Disorder ensembles and parameter sweeps

    ScenarioConfig ─┬─ realization 0: derive_seed(base, 0) → disorder → integrate → observables
                    ├─ realization 1 ...
                    └─ ...            (ProcessPoolExecutor when jobs > 1)
                          ↓ sorted by realization index
                    statistics over Converged realizations + outcome counts

Seeds are bound to the realization index, never to scheduling, so any
degree of parallelism reproduces the sequential result bit for bit.
"""
import logging
import math
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

sys.path.append(str(Path(__file__).parent.parent))

import scenario
from analysis import dimer_strength
from core.config import settings
from core.errors import ConfigError, SelfOrgError
from dynamics import IntegrationMode, OutcomeKind, integrate
from model import GeometryKind, apply_disorder, nearest_neighbor_distances
from potentials import ReducedRun, ring_radial_integrate, two_atom_integrate
from scenario import ScenarioConfig

logger = logging.getLogger(__name__)

OUTCOMES = [kind.value for kind in OutcomeKind] + ["failed"]


def derive_seed(base_seed: int, index: int) -> int:
    """Stable 64-bit seed for realization `index` (SeedSequence hash of the pair)."""
    state = np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, dtype=np.uint64)
    return int(state[0])


# ============================================================================
# ONE REALIZATION
# ============================================================================

def _chain_observables(positions: np.ndarray, spacing: float, dipole) -> Dict[str, float]:
    ordered = positions[np.argsort(positions[:, 0], kind="stable")]
    observables = {"a_final_ratio": float(np.mean(nearest_neighbor_distances(ordered))) / spacing}
    if len(positions) >= 3:
        observables["dimer_strength"] = dimer_strength(ordered, dipole)
    return observables


def _ring_observables(positions: np.ndarray, center, trap_radius: float) -> Dict[str, float]:
    radii = np.linalg.norm(positions - np.asarray(center), axis=1)
    mean = float(np.mean(radii))
    spread = float(np.std(radii)) / mean
    # mean over realizations = fraction of rings that lost their shape
    return {"r_final_ratio": mean / trap_radius, "radius_spread": spread,
            "lost_structure": float(spread > settings.UNIFORM_TOL)}


def run_realization(cfg: ScenarioConfig, index: int, disorder_amplitude: float, base_seed: int) -> dict:
    """Run one realization; errors are captured as outcome 'failed'."""
    seed = derive_seed(base_seed, index)
    record = {"index": index, "seed": seed, "outcome": "failed", "observables": {}}
    try:
        config = scenario.build_configuration(cfg)
        params = scenario.build_params(cfg, config)
        stop = scenario.build_stop(cfg)
        spacing = scenario.resolve_spacing(cfg)

        if cfg.run.mode == "reduced":
            if disorder_amplitude > 0:
                logger.warning("Reduced runs are symmetric; disorder amplitude is ignored")
            run = _reduced(cfg, params, stop, spacing)
            trajectory = run.trajectory
        else:
            config = apply_disorder(config, disorder_amplitude, seed)
            trajectory = integrate(config, params, IntegrationMode(cfg.run.mode), stop)

        record["outcome"] = trajectory.outcome.kind.value
        final = trajectory.final_state.positions
        observables = {"max_population": trajectory.max_population}
        if config.kind == GeometryKind.RING:
            observables.update(_ring_observables(final, config.center, config.ring_radius))
        else:
            observables.update(_chain_observables(final, spacing, config.dipole))
        record["observables"] = observables
    except SelfOrgError as exc:
        logger.warning(f"Realization {index} failed: {exc.message}")
        record["error"] = exc.to_dict()
    return record


def _reduced(cfg: ScenarioConfig, params, stop, spacing: float) -> ReducedRun:
    kind = cfg.geometry.kind
    if kind == "ring":
        return ring_radial_integrate(scenario.require_n_atoms(cfg), params, spacing, stop)
    if kind == "two_atom" or (kind == "chain" and scenario.require_n_atoms(cfg) == 2):
        return two_atom_integrate(scenario.resolve_theta(cfg), spacing, params, stop)
    raise ConfigError("run.mode 'reduced' applies to rings and atom pairs only", key="run.mode")


def _run_tasks(tasks: Sequence[Tuple], jobs: int) -> List[dict]:
    if jobs <= 1 or len(tasks) <= 1:
        return [run_realization(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_realization, *zip(*tasks)))


# ============================================================================
# STATISTICS
# ============================================================================

@dataclass
class EnsembleResult:
    n_realizations: int
    disorder_amplitude: float
    base_seed: int
    outcome_counts: Dict[str, int]
    statistics: Dict[str, Dict[str, float]]      # observable → {mean, std, n}
    realizations: List[dict] = field(repr=False, default_factory=list)

    @property
    def n_converged(self) -> int:
        return self.outcome_counts.get(OutcomeKind.CONVERGED.value, 0)

    @property
    def flagged(self) -> bool:
        """True when no realization reached a steady state."""
        return self.n_converged == 0

    def to_dict(self) -> dict:
        return {
            "n_realizations": self.n_realizations,
            "disorder_amplitude": self.disorder_amplitude,
            "base_seed": self.base_seed,
            "outcome_counts": self.outcome_counts,
            "statistics": self.statistics,
            "flagged": self.flagged,
        }


def aggregate(records: Sequence[dict], disorder_amplitude: float = 0.0, base_seed: int = 0) -> EnsembleResult:
    """Order-independent statistics over the Converged realizations."""
    records = sorted(records, key=lambda r: r["index"])
    counts = Counter(r["outcome"] for r in records)
    outcome_counts = {name: int(counts.get(name, 0)) for name in OUTCOMES}

    converged = [r["observables"] for r in records if r["outcome"] == OutcomeKind.CONVERGED.value]
    names = sorted({name for obs in (r["observables"] for r in records) for name in obs})
    statistics = {}
    for name in names:
        values = np.array([obs[name] for obs in converged if name in obs], dtype=float)
        statistics[name] = {
            "mean": float(np.mean(values)) if len(values) else math.nan,
            "std": float(np.std(values)) if len(values) else math.nan,
            "n": int(len(values)),
        }
    return EnsembleResult(
        n_realizations=len(records),
        disorder_amplitude=float(disorder_amplitude),
        base_seed=int(base_seed),
        outcome_counts=outcome_counts,
        statistics=statistics,
        realizations=list(records),
    )


def run_ensemble(cfg: ScenarioConfig, n_realizations: Optional[int] = None,
                 disorder_amplitude: Optional[float] = None, base_seed: Optional[int] = None,
                 jobs: int = settings.JOBS) -> EnsembleResult:
    """Run n disorder realizations of one scenario; unspecified arguments come from cfg.ensemble."""
    n = cfg.ensemble.n_realizations if n_realizations is None else n_realizations
    amplitude = cfg.ensemble.disorder_amplitude if disorder_amplitude is None else disorder_amplitude
    seed = cfg.ensemble.base_seed if base_seed is None else base_seed
    if n < 1:
        raise ConfigError(f"n_realizations must be >= 1, got {n}", key="ensemble.n_realizations")

    logger.info(f"Ensemble: {n} realizations, amplitude={amplitude}, base_seed={seed}, jobs={jobs}")
    records = _run_tasks([(cfg, i, amplitude, seed) for i in range(n)], jobs)
    result = aggregate(records, amplitude, seed)
    logger.info(f"Ensemble done: {result.outcome_counts}")
    return result


# ============================================================================
# SWEEPS
# ============================================================================

@dataclass
class SweepResult:
    axis: str
    values: List[float]
    points: List[EnsembleResult]

    @property
    def flagged_values(self) -> List[float]:
        return [v for v, p in zip(self.values, self.points) if p.flagged]

    def to_frame(self) -> pd.DataFrame:
        """Long format: one row per (axis value, observable)."""
        rows = []
        for value, point in zip(self.values, self.points):
            for name, stats in point.statistics.items():
                row = {"axis": self.axis, "value": value, "observable": name,
                       "mean": stats["mean"], "std": stats["std"], "n": stats["n"],
                       "n_realizations": point.n_realizations, "flagged": point.flagged}
                row.update({f"n_{k}": c for k, c in point.outcome_counts.items()})
                rows.append(row)
        columns = ["axis", "value", "observable", "mean", "std", "n", "n_realizations", "flagged"] + \
            [f"n_{k}" for k in OUTCOMES]
        return pd.DataFrame(rows, columns=columns)


def sweep(cfg: ScenarioConfig, axis: Optional[str] = None, values: Optional[Sequence[float]] = None,
          n_realizations: Optional[int] = None, disorder_amplitude: Optional[float] = None,
          base_seed: Optional[int] = None, jobs: int = settings.JOBS) -> SweepResult:
    """run_ensemble at every grid point of one scenario axis (e.g. 'geometry.spacing')."""
    axis = axis or cfg.sweep.axis
    grid = list(values) if values is not None else cfg.sweep.grid()
    if not grid:
        raise ConfigError("Sweep grid is empty", key="sweep.values")
    n = cfg.ensemble.n_realizations if n_realizations is None else n_realizations
    amplitude = cfg.ensemble.disorder_amplitude if disorder_amplitude is None else disorder_amplitude
    seed = cfg.ensemble.base_seed if base_seed is None else base_seed

    point_cfgs = [scenario.with_value(cfg, axis, value) for value in grid]
    tasks = [(point_cfg, i, amplitude, seed) for point_cfg in point_cfgs for i in range(n)]
    logger.info(f"Sweep over {axis}: {len(grid)} points × {n} realizations (jobs={jobs})")
    records = _run_tasks(tasks, jobs)

    points = [aggregate(records[j * n:(j + 1) * n], amplitude, seed) for j in range(len(grid))]
    result = SweepResult(axis=axis, values=[float(v) for v in grid], points=points)
    for value in result.flagged_values:
        logger.warning(f"No realization converged at {axis}={value}")
    return result
