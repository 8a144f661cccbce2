"""Central numerical tolerances.

Every tolerance used by the package lives here so a single record can be
tightened or loosened for a study.
"""
from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    unitary: float = 1e-10
    projector: float = 1e-10
    hermitian: float = 1e-10
    psd: float = 1e-10
    trace: float = 1e-10
    norm: float = 1e-10
    completeness: float = 1e-8
    eig_degeneracy: float = 1e-9
    boundary_floor: float = 1e-30
    dominance_threshold: float = 10.0
    dimension_cap: int = 2**14
    node_floor: float = 1e-12
    onshell: float = 1e-9
    radicand: float = 1e-12

    def with_(self, **changes) -> "Tolerances":
        return replace(self, **changes)


DEFAULT = Tolerances()

_current = DEFAULT


def get() -> Tolerances:
    return _current


def set_tolerances(tol: Tolerances) -> Tolerances:
    """Install `tol` as the process-wide default; returns the previous one."""
    global _current
    previous, _current = _current, tol
    return previous
