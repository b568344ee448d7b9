"""
errors.py — Structured exceptions

Library code raises these; the CLI turns them into exit codes and the
machine-readable `{"success": False, "kind": ..., "error": ...}` payload.
"""
from typing import Any, Dict, Optional, Tuple


class SelfOrgError(Exception):
    """Base error. `details` is merged into the JSON payload."""
    kind = "error"
    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        payload = {"success": False, "kind": self.kind, "error": self.message}
        payload.update(self.details)
        return payload


class ConfigError(SelfOrgError):
    kind = "config"
    exit_code = 2


class GeometryError(SelfOrgError):
    kind = "geometry"
    exit_code = 2


class SeparationError(SelfOrgError):
    """Green's tensor evaluated at (or below the guard of) zero separation."""
    kind = "separation"
    exit_code = 3

    def __init__(self, message: str, pair: Optional[Tuple[int, int]] = None, distance: float = 0.0):
        super().__init__(message, pair=list(pair) if pair is not None else None, distance=distance)
        self.pair = pair
        self.distance = distance


class NumericalError(SelfOrgError):
    kind = "numerical"
    exit_code = 3


class GapClosureError(NumericalError):
    kind = "gap_closure"


class NonConvergenceError(SelfOrgError):
    kind = "non_convergence"
    exit_code = 4
