"""
storage.py — Run artifacts on disk

Every command writes into one output directory:
    run_manifest.json   status running → complete | failed, list of artifacts
    *.csv               pandas, 17 significant digits
    *.json              summaries / minima / Zak reports

Files are written to a temporary sibling and moved into place with
os.replace, so a reader never sees a half-written artifact.
"""
import json
import logging
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from core.config import settings
from core.errors import ConfigError
from dynamics import Trajectory
from model import SimState

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MANIFEST = "run_manifest.json"


def _json_default(value: Any):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    return str(value)


def _atomic_write(path: Path, write) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    return _atomic_write(Path(path), lambda fh: json.dump(payload, fh, indent=2, default=_json_default))


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    return _atomic_write(Path(path), lambda fh: frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT))


# ============================================================================
# RUN DIRECTORY + MANIFEST
# ============================================================================

class RunDirectory:
    """
    Output directory for one command invocation.

    Args:
        root: Directory to write into (created if missing)
        command: CLI command name, recorded in the manifest
    """

    def __init__(self, root=None, command: str = ""):
        self.root = Path(root or settings.OUTPUT_DIR)
        self.command = command
        self.artifacts: List[str] = []
        self.started = datetime.now(timezone.utc).isoformat()

    def _manifest(self, status: str, **extra) -> Dict[str, Any]:
        return {"command": self.command, "status": status, "started": self.started,
                "updated": datetime.now(timezone.utc).isoformat(),
                "artifacts": list(self.artifacts), **extra}

    def start(self, config: Optional[dict] = None):
        write_json(self.root / MANIFEST, self._manifest("running", config=config))
        logger.info(f"Writing {self.command} artifacts to {self.root}")

    def complete(self, **extra):
        write_json(self.root / MANIFEST, self._manifest("complete", **extra))
        logger.info(f"Run complete: {len(self.artifacts)} artifacts in {self.root}")

    def fail(self, error: Dict[str, Any]):
        write_json(self.root / MANIFEST, self._manifest("failed", error=error))
        logger.error(f"Run failed: {error.get('error')}")

    def csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = write_csv(self.root / name, frame)
        self.artifacts.append(name)
        return path

    def json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = write_json(self.root / name, payload)
        self.artifacts.append(name)
        return path


def read_manifest(root) -> Dict[str, Any]:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise ConfigError(f"No run manifest in {root}", path=str(path))
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ============================================================================
# TRAJECTORIES
# ============================================================================

def trajectory_frame(trajectory: Trajectory) -> pd.DataFrame:
    """time, then x_n, y_n, px_n, py_n, re_sigma_n, im_sigma_n for every atom n."""
    samples = trajectory.samples
    n = len(samples[0].coherences)
    data = {"time": np.array([s.time for s in samples])}
    positions = np.array([s.positions for s in samples])
    momenta = np.array([s.momenta for s in samples])
    coherences = np.array([s.coherences for s in samples])
    for i in range(n):
        data[f"x_{i}"] = positions[:, i, 0]
        data[f"y_{i}"] = positions[:, i, 1]
        data[f"px_{i}"] = momenta[:, i, 0]
        data[f"py_{i}"] = momenta[:, i, 1]
        data[f"re_sigma_{i}"] = coherences[:, i].real
        data[f"im_sigma_{i}"] = coherences[:, i].imag
    return pd.DataFrame(data)


def load_trajectory(path) -> List[SimState]:
    """Re-read a trajectory CSV into SimStates."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Trajectory file not found: {path}", path=str(path))
    frame = pd.read_csv(path, float_precision="round_trip")
    n = sum(1 for col in frame.columns if col.startswith("x_"))
    states = []
    for row in frame.itertuples(index=False):
        values = row._asdict()
        states.append(SimState(
            coherences=np.array([complex(values[f"re_sigma_{i}"], values[f"im_sigma_{i}"]) for i in range(n)]),
            positions=np.array([[values[f"x_{i}"], values[f"y_{i}"]] for i in range(n)]),
            momenta=np.array([[values[f"px_{i}"], values[f"py_{i}"]] for i in range(n)]),
            time=float(values["time"]),
        ))
    return states


def load_summary(path) -> Dict[str, Any]:
    """Re-read a summary JSON; final positions come back as an (N, 2) array."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Summary file not found: {path}", path=str(path))
    with open(path, "r", encoding="utf-8") as fh:
        summary = json.load(fh)
    if "final_positions" in summary:
        summary["final_positions"] = np.asarray(summary["final_positions"], dtype=float).reshape(-1, 2)
    return summary
