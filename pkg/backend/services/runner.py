"""
runner.py — Command dispatch for the CLI

    execute(command, cfg, ...)
        RunDirectory.start()             manifest: running
        → simulate | potential | spectrum | ensemble | sweep | zpm-table
        RunDirectory.complete()          manifest: complete (artifact list)
        on SelfOrgError: RunDirectory.fail(error)  and re-raise
"""
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

sys.path.append(str(Path(__file__).parent.parent))

import scenario
from analysis import (
    band_structure, classify_chain, default_k_grid, edge_weight,
    effective_hamiltonian, periodic_reference, spectrum_ipr, zak_report, zpm_table,
)
from core.errors import ConfigError, NonConvergenceError, SelfOrgError
from dynamics import IntegrationMode, OutcomeKind, Trajectory, integrate
from model import GeometryKind, apply_disorder, dipole_from_spec, ring_radius
from potentials import (
    dense_grid, ring_potential, ring_radial_integrate, two_atom_integrate, two_atom_minima_scan,
    two_atom_potential,
)
from scenario import ScenarioConfig
from services.ensemble import SweepResult, derive_seed, run_ensemble, sweep
from storage import RunDirectory, load_summary, trajectory_frame

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "potential", "spectrum", "sweep", "ensemble", "zpm-table")


def _dipole_payload(dipole) -> list:
    return [[complex(c).real, complex(c).imag] for c in dipole]


def _dipole_from_payload(payload) -> tuple:
    return dipole_from_spec([complex(re, im) for re, im in payload])


# ============================================================================
# SIMULATE
# ============================================================================

def _simulate(cfg: ScenarioConfig, out: RunDirectory) -> Dict[str, Any]:
    config = scenario.build_configuration(cfg)
    params = scenario.build_params(cfg, config)
    stop = scenario.build_stop(cfg)
    spacing = scenario.resolve_spacing(cfg)
    seed = None

    if cfg.run.mode == "reduced":
        if config.kind == GeometryKind.RING:
            trajectory = ring_radial_integrate(config.n_atoms, params, spacing, stop).trajectory
        elif config.n_atoms == 2:
            trajectory = two_atom_integrate(scenario.resolve_theta(cfg), spacing, params, stop).trajectory
        else:
            raise ConfigError("run.mode 'reduced' applies to rings and atom pairs only", key="run.mode")
    else:
        if cfg.ensemble.disorder_amplitude > 0:
            seed = derive_seed(cfg.ensemble.base_seed, 0)
            config = apply_disorder(config, cfg.ensemble.disorder_amplitude, seed)
        trajectory = integrate(config, params, IntegrationMode(cfg.run.mode), stop)

    out.csv("trajectory.csv", trajectory_frame(trajectory))
    summary = _summary(trajectory, config, params, spacing, seed)
    out.json("summary.json", summary)
    return summary


def _summary(trajectory: Trajectory, config, params, spacing: float, seed) -> Dict[str, Any]:
    final = trajectory.final_state.positions
    summary = {
        "outcome": trajectory.outcome.to_dict(),
        "converged": trajectory.converged,
        "mode": trajectory.mode,
        "geometry": {"kind": config.kind.value, "n_atoms": config.n_atoms, "spacing": spacing,
                     "motion_axes": config.motion_axes.value, "dipole": _dipole_payload(config.dipole)},
        "params": {"rabi": params.rabi, "detuning": params.detuning, "trap_freq": params.trap_freq,
                   "recoil_freq": params.recoil_freq, "friction": params.friction},
        "seed": seed,
        "disorder_amplitude": config.disorder_amplitude,
        "trap_centers": config.trap_centers.tolist(),
        "final_positions": final.tolist(),
        "max_displacement": float(np.max(np.linalg.norm(final - config.trap_centers, axis=1))),
        "max_population": trajectory.max_population,
    }
    if config.kind == GeometryKind.RING:
        radii = np.linalg.norm(final - np.asarray(config.center), axis=1)
        summary["r_final"] = float(np.mean(radii))
        summary["r_final_ratio"] = float(np.mean(radii)) / config.ring_radius
    elif config.n_atoms >= 3:
        summary["classification"] = classify_chain(final, config.dipole).to_dict()
        summary["dimer_strength"] = summary["classification"]["dimer_strength"]
    elif config.n_atoms == 2:
        summary["separation"] = float(np.linalg.norm(final[1] - final[0]))
    return summary


# ============================================================================
# POTENTIAL
# ============================================================================

def _potential(cfg: ScenarioConfig, out: RunDirectory) -> Dict[str, Any]:
    geometry = cfg.geometry
    block = cfg.potential
    config = scenario.build_configuration(cfg)
    params = scenario.build_params(cfg, config)
    spacing = scenario.resolve_spacing(cfg)
    explicit_range = {"start", "stop"} <= block.model_fields_set

    if geometry.kind == "ring":
        radius = ring_radius(config.n_atoms, spacing)
        grid = dense_grid(block.start, block.stop, block.points_per_lambda) if explicit_range else None
        curve = ring_potential(config.n_atoms, params, radius, grid)
        extra = {"trap_radius": radius}
    elif config.n_atoms == 2:
        theta = scenario.resolve_theta(cfg)
        curve = two_atom_potential(params, theta, spacing,
                                   dense_grid(block.start, block.stop, block.points_per_lambda))
        extra = {"theta": theta, "trap_spacing": spacing}
        if block.theta_values:
            scan = two_atom_minima_scan(block.theta_values, params, spacing,
                                        dense_grid(block.start, block.stop, block.points_per_lambda))
            out.csv("minima_scan.csv", scan)
    else:
        raise ConfigError("Effective potentials exist for atom pairs and rings only", key="geometry.kind")

    out.csv("potential.csv", curve.to_frame())
    minima = {
        "minima": [m._asdict() for m in curve.minima],
        "boundary_minima": [m._asdict() for m in curve.boundary_minima],
        "units": "hbar*Gamma0",
        **extra,
    }
    out.json("minima.json", minima)
    return minima


# ============================================================================
# SPECTRUM
# ============================================================================

def _spectrum(cfg: ScenarioConfig, out: RunDirectory, from_summary: Optional[str]) -> Dict[str, Any]:
    block = cfg.spectrum
    result: Dict[str, Any] = {}

    if block.a1 is not None and block.a2 is not None:
        a1, a2 = block.a1, block.a2
        dipole = dipole_from_spec(cfg.geometry.dipole)
    else:
        if from_summary:
            summary = load_summary(from_summary)
            missing = [key for key in ("final_positions", "geometry") if key not in summary]
            if missing:
                raise ConfigError(f"{from_summary} lacks {', '.join(missing)}", key="from_summary")
            positions = summary["final_positions"]
            dipole = _dipole_from_payload(summary["geometry"]["dipole"])
        else:
            summary = _simulate(cfg, out)
            positions = np.asarray(summary["final_positions"])
            dipole = scenario.build_configuration(cfg).dipole
        report = spectrum_ipr(effective_hamiltonian(positions, dipole))
        frame = report.to_frame()
        frame["edge_weight"] = [edge_weight(report.eigenvectors[:, i]) for i in range(len(frame))]
        out.csv("spectrum.csv", frame)

        comparison = periodic_reference(positions, dipole)
        a1, a2 = comparison.a1, comparison.a2
        result.update({
            "midgap_pair": list(report.midgap_pair) if report.midgap_pair else None,
            "median_ipr": float(np.median(report.ipr)),
            "classification": classify_chain(positions, dipole).to_dict(),
            "periodic_reference": comparison.to_dict(),
        })
        if report.midgap_pair:
            result["midgap_edge_weights"] = [edge_weight(report.eigenvectors[:, i]) for i in report.midgap_pair]

    k_grid = default_k_grid(a1, a2, block.k_points)
    bands = band_structure(a1, a2, dipole, k_grid, block.cutoff_cells)
    out.csv("bands.csv", bands.to_frame())
    zak = zak_report(a1, a2, dipole, k_grid, block.band, block.cutoff_cells)
    zak["zak_phase"] = zak[f"zak_{block.zak_convention}"]
    zak["convention"] = block.zak_convention
    zak["gap"] = bands.gap
    zak["gap_k"] = bands.gap_k
    result.update(zak)
    out.json("zak.json", result)
    return result


# ============================================================================
# ENSEMBLES / SWEEPS / TABLES
# ============================================================================

def _ensemble(cfg: ScenarioConfig, out: RunDirectory, jobs: int) -> Dict[str, Any]:
    result = run_ensemble(cfg, jobs=jobs)
    frame = SweepResult(axis="ensemble.disorder_amplitude", values=[result.disorder_amplitude],
                        points=[result]).to_frame()
    out.csv("ensemble.csv", frame)
    payload = result.to_dict()
    payload["realizations"] = [{k: r[k] for k in ("index", "seed", "outcome", "observables")}
                               for r in result.realizations]
    out.json("ensemble.json", payload)
    return payload


def _sweep(cfg: ScenarioConfig, out: RunDirectory, jobs: int) -> Dict[str, Any]:
    result = sweep(cfg, jobs=jobs)
    out.csv("sweep.csv", result.to_frame())
    payload = {"axis": result.axis, "values": result.values, "flagged_values": result.flagged_values,
               "points": [p.to_dict() for p in result.points]}
    out.json("sweep.json", payload)
    return payload


def _zpm_table(out: RunDirectory) -> Dict[str, Any]:
    table = zpm_table()
    out.csv("zpm_table.csv", table)
    return {"species": table["species"].tolist()}


def _converged(command: str, payload: Dict[str, Any]) -> bool:
    if command == "simulate":
        return payload["outcome"]["kind"] == OutcomeKind.CONVERGED.value
    if command == "ensemble":
        return not payload["flagged"]
    if command == "sweep":
        return not payload["flagged_values"]
    return True


def execute(command: str, cfg: ScenarioConfig, output_dir=None, jobs: int = 1,
            require_converged: bool = False, from_summary: Optional[str] = None) -> Dict[str, Any]:
    """Run one CLI command and write its artifacts; raises SelfOrgError on failure."""
    if command not in COMMANDS:
        raise ConfigError(f"Unknown command '{command}' (expected one of {', '.join(COMMANDS)})",
                          key="command")
    out = RunDirectory(output_dir or cfg.output.directory, command)
    out.start(config=cfg.model_dump(mode="python"))
    try:
        if command == "simulate":
            payload = _simulate(cfg, out)
        elif command == "potential":
            payload = _potential(cfg, out)
        elif command == "spectrum":
            payload = _spectrum(cfg, out, from_summary)
        elif command == "ensemble":
            payload = _ensemble(cfg, out, jobs)
        elif command == "sweep":
            payload = _sweep(cfg, out, jobs)
        else:
            payload = _zpm_table(out)

        if require_converged and not _converged(command, payload):
            raise NonConvergenceError(f"{command}: steady state not reached", command=command)
    except SelfOrgError as exc:
        out.fail(exc.to_dict())
        raise
    except Exception as exc:
        out.fail({"success": False, "kind": "internal", "error": f"{type(exc).__name__}: {exc}"})
        raise
    out.complete()
    return {"success": True, "command": command, "output": str(out.root), "artifacts": out.artifacts}
