"""Two-state-vector measurement calculus.

Conventions
-----------
Evolution operators act on kets and run forward in time: ``U|i>`` is the
pre-selected state carried to the final time. A projector ``P`` applied at an
intermediate time and then evolved by ``U_after`` equals the postponed
projector ``U_after P U_after^dag`` applied after the evolution.

Boundary probabilities are ratios ``Tr(rho_i B M rho_f M F) / Tr(rho_i B rho_f F)``
with ``F`` the forward evolution and ``B`` its backward partner (``F^dag`` by
default), so normalization constants of the projectors cancel and are never
stored.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import config
from . import rng as rngmod
from .errors import ContractViolation, IncompatibleBoundaryError
from .hilbert import (
    Basis,
    DensityMatrix,
    Operator,
    StateVector,
    _same_basis,
    eigh_sorted,
    evolve,
    identity,
)

# Rescale unnormalized boundary matrices once their trace drops below this.
_RESCALE_BELOW = 2.0**-100


@dataclass(frozen=True, eq=False)
class MeasurementContext:
    """Complete family of mutually orthogonal projectors inserted at one time."""

    projectors: tuple
    insertion_label: str = "t"

    def __post_init__(self):
        projs = tuple(self.projectors)
        object.__setattr__(self, "projectors", projs)
        if not projs:
            raise ContractViolation("measurement family is empty")
        basis = projs[0].basis
        for p in projs:
            _same_basis(basis, p.basis)
            if p.kind != "projector":
                raise ContractViolation("measurement family members must be marked projector")
        tol = config.get().completeness
        total = sum(p.matrix for p in projs)
        if np.max(np.abs(total - np.eye(basis.dim))) > tol:
            raise ContractViolation("projectors do not sum to the identity")
        for a in range(len(projs)):
            for b in range(a + 1, len(projs)):
                if np.max(np.abs(projs[a].matrix @ projs[b].matrix)) > tol:
                    raise ContractViolation(f"projectors {a} and {b} are not orthogonal")

    @property
    def basis(self) -> Basis:
        return self.projectors[0].basis

    def __len__(self):
        return len(self.projectors)


def computational_family(basis: Basis, register: str | None = None, label: str = "t") -> MeasurementContext:
    """Projectors onto the computational values of one register (or of the whole basis)."""
    if register is None:
        projs = []
        for k in range(basis.dim):
            m = np.zeros((basis.dim, basis.dim), dtype=complex)
            m[k, k] = 1.0
            projs.append(Operator(basis, m, "projector", f"P{k}"))
        return MeasurementContext(tuple(projs), label)
    r = basis.index_of(register)
    values = np.unravel_index(np.arange(basis.dim), basis.dims)[r]
    projs = []
    for k in range(basis.dims[r]):
        projs.append(Operator(basis, np.diag((values == k).astype(complex)), "projector", f"{register}={k}"))
    return MeasurementContext(tuple(projs), label)


def binary_family(p: Operator, label: str = "t") -> MeasurementContext:
    """``{P, I - P}``."""
    comp = Operator(p.basis, np.eye(p.dim) - p.matrix, "projector", "not " + p.label)
    return MeasurementContext((p, comp), label)


@dataclass(frozen=True, eq=False)
class BoundaryPair:
    """Initial and final boundary density matrices with the evolution between them."""

    initial: DensityMatrix
    final: DensityMatrix
    forward_evolution: Operator
    backward_evolution: Operator | None = None
    denominator: complex = field(init=False, default=0j)

    def __post_init__(self):
        if self.backward_evolution is None:
            object.__setattr__(self, "backward_evolution", self.forward_evolution.dagger())
        for op in (self.final, self.forward_evolution, self.backward_evolution):
            _same_basis(self.initial.basis, op.basis)
        object.__setattr__(self, "denominator", _bracket(self, self.final.matrix))

    @property
    def basis(self) -> Basis:
        return self.initial.basis

    @property
    def incompatible(self) -> bool:
        return abs(self.denominator) <= self._floor()

    def _floor(self) -> float:
        scale = abs(np.trace(self.initial.matrix)) * abs(np.trace(self.final.matrix))
        return config.get().boundary_floor * max(scale, np.finfo(float).tiny)

    def log2_overlap(self) -> float:
        """``log2 Tr(rho_i B rho_f F)`` including the final matrix's scale."""
        d = abs(self.denominator)
        if d == 0.0:
            return -np.inf
        return float(np.log2(d)) + self.final.log2_scale + self.initial.log2_scale


def _bracket(b: BoundaryPair, final_matrix: np.ndarray) -> complex:
    """``Tr(rho_i B X F)`` for the given middle matrix ``X``."""
    left = b.initial.matrix @ b.backward_evolution.matrix
    right = final_matrix @ b.forward_evolution.matrix
    return complex(np.sum(left.T * right))


def boundary_pair(
    initial: StateVector | DensityMatrix,
    final: StateVector | DensityMatrix,
    forward: Operator | None = None,
    backward: Operator | None = None,
) -> BoundaryPair:
    """Convenience constructor accepting pure states."""
    from .hilbert import pure

    rho_i = pure(initial) if isinstance(initial, StateVector) else initial
    rho_f = pure(final) if isinstance(final, StateVector) else final
    forward = identity(rho_i.basis) if forward is None else forward
    return BoundaryPair(rho_i, rho_f, forward, backward)


def postpone(m: MeasurementContext, u_after: Operator) -> list[Operator]:
    """Carry each projector to the final time: ``U P U^dag``."""
    if u_after.kind != "unitary":
        raise ContractViolation("postpone requires an operator marked unitary")
    _same_basis(m.basis, u_after.basis)
    u = u_after.matrix
    out = []
    for p in m.projectors:
        q = u @ p.matrix @ u.conj().T
        q = 0.5 * (q + q.conj().T)
        out.append(Operator(m.basis, q, "projector", p.label + "'"))
    return out


def _numerator(b: BoundaryPair, m_evolved: Operator) -> complex:
    _same_basis(b.basis, m_evolved.basis)
    mm = m_evolved.matrix
    return _bracket(b, mm @ b.final.matrix @ mm)


def probability_m(b: BoundaryPair, m_evolved: Operator) -> float:
    """Boundary-density-matrix probability of the postponed projector `m_evolved`.

    Normalized by the unconditioned overlap ``Tr(rho_i B rho_f F)``.
    """
    if m_evolved.kind != "projector":
        raise ContractViolation("probability_m expects a projector")
    if b.incompatible:
        raise IncompatibleBoundaryError("boundary overlap below floor")
    return float((_numerator(b, m_evolved) / b.denominator).real)


def family_probabilities(b: BoundaryPair, family: Sequence[Operator]) -> np.ndarray:
    """Numerators of :func:`probability_m` normalized over the family.

    Coincides with :func:`probability_m` when cross terms between family
    members vanish, and stays defined when the unconditioned overlap is zero.
    """
    nums = np.array([_numerator(b, p).real for p in family])
    total = nums.sum()
    if total <= b._floor():
        raise IncompatibleBoundaryError("every family member has zero weight")
    return nums / total


def update_final(b: BoundaryPair, m_evolved: Operator) -> BoundaryPair:
    """Replace the final boundary by ``M rho_f M`` without renormalizing.

    The shrinking trace is tracked in ``final.log2_scale`` once it would
    approach underflow.
    """
    if b.incompatible:
        raise IncompatibleBoundaryError("boundary overlap below floor")
    _same_basis(b.basis, m_evolved.basis)
    mm = m_evolved.matrix
    raw = mm @ b.final.matrix @ mm
    raw = 0.5 * (raw + raw.conj().T)
    before = float(np.trace(b.final.matrix).real)
    after = float(np.trace(raw).real)
    if after <= config.get().boundary_floor * before:
        raise IncompatibleBoundaryError("update annihilates the final boundary")
    scale = b.final.log2_scale
    if after < _RESCALE_BELOW:
        raw = raw / after
        scale += float(np.log2(after))
    final = DensityMatrix(b.basis, raw, normalized=False, log2_scale=scale)
    return BoundaryPair(b.initial, final, b.forward_evolution, b.backward_evolution)


class Dominant(NamedTuple):
    eigenvalue: float
    vector: StateVector
    ratio: float


def dominant_vector(d: DensityMatrix) -> Dominant:
    """Top spectral component and the dominance ratio ``lambda_1 / lambda_2``.

    The ratio is ``inf`` for rank-1 input. Whether the single-vector
    approximation is admissible is the caller's decision, see
    :func:`is_dominant`.
    """
    tr = float(np.trace(d.matrix).real)
    if tr <= config.get().boundary_floor:
        raise IncompatibleBoundaryError("density matrix trace below floor")
    w, v = eigh_sorted(d.matrix)
    lam1 = w[0]
    lam2 = w[1] if len(w) > 1 else 0.0
    ratio = np.inf if lam2 <= config.get().eig_degeneracy * lam1 else lam1 / lam2
    return Dominant(float(lam1) * 2.0**d.log2_scale, StateVector(d.basis, v[:, 0]), float(ratio))


def is_dominant(ratio: float, threshold: float | None = None) -> bool:
    threshold = config.get().dominance_threshold if threshold is None else threshold
    return ratio >= threshold


def _branch_amplitudes(i, f, u_before, u_after, family) -> np.ndarray:
    for op in (f, u_before, u_after, family):
        _same_basis(i.basis, op.basis)
    psi = evolve(i, u_before).amplitudes
    fa = f.amplitudes.conj() @ u_after.matrix
    return np.array([fa @ (p.matrix @ psi) for p in family.projectors])


def abl_probability(
    i: StateVector,
    f: StateVector,
    u_before: Operator,
    u_after: Operator,
    family: MeasurementContext,
    normalization: str = "family",
) -> np.ndarray:
    """ABL outcome probabilities with amplitudes ``<f| U_after P_k U_before |i>``.

    ``normalization="family"`` (default) divides by the sum over outcomes,
    giving a distribution. ``normalization="overlap"`` divides by the
    unconditioned ``|<f| U_after U_before |i>|^2`` instead; those ratios need
    not sum to one.
    """
    amps = _branch_amplitudes(i, f, u_before, u_after, family)
    nums = np.abs(amps) ** 2
    if normalization == "family":
        total = nums.sum()
        if total <= config.get().boundary_floor:
            raise IncompatibleBoundaryError("every outcome has zero ABL weight")
        return nums / total
    if normalization == "overlap":
        overlap = abs(np.sum(amps)) ** 2
        if overlap <= config.get().boundary_floor:
            raise IncompatibleBoundaryError("pre- and post-selection are orthogonal")
        return nums / overlap
    raise ValueError(f"unknown normalization {normalization!r}")


def abl_mixed(
    rho_i: DensityMatrix,
    rho_f: DensityMatrix,
    u_before: Operator,
    u_after: Operator,
    family: MeasurementContext,
) -> np.ndarray:
    """Family-normalized ABL weights ``Tr(rho_f U_a P_k U_b rho_i U_b^dag P_k U_a^dag)``."""
    for op in (rho_f, u_before, u_after, family):
        _same_basis(rho_i.basis, op.basis)
    ub, ua = u_before.matrix, u_after.matrix
    rho = ub @ rho_i.matrix @ ub.conj().T
    nums = []
    for p in family.projectors:
        x = ua @ p.matrix @ rho @ p.matrix @ ua.conj().T
        nums.append(float(np.sum(rho_f.matrix.T * x).real))
    nums = np.array(nums)
    total = nums.sum()
    if total <= config.get().boundary_floor:
        raise IncompatibleBoundaryError("every outcome has zero weight")
    return nums / total


def born_probabilities(i: StateVector, family: MeasurementContext, u_before: Operator | None = None) -> np.ndarray:
    psi = i.amplitudes if u_before is None else evolve(i, u_before).amplitudes
    return np.array([float(np.vdot(psi, p.matrix @ psi).real) for p in family.projectors])


@dataclass
class BornReport:
    trials: int
    counts: np.ndarray
    frequencies: np.ndarray
    born: np.ndarray
    mixed_final: np.ndarray
    sigma: np.ndarray
    seed: int

    @property
    def max_mixed_deviation(self) -> float:
        return float(np.max(np.abs(self.mixed_final - self.born)))

    def within(self, nsigma: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.frequencies - self.born) <= nsigma * self.sigma + 1e-15))

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "counts": self.counts.tolist(),
            "frequencies": self.frequencies.tolist(),
            "born": self.born.tolist(),
            "mixed_final": self.mixed_final.tolist(),
            "sigma": self.sigma.tolist(),
            "seed": self.seed,
        }


def born_limit_check(
    i: StateVector,
    family: MeasurementContext,
    trials: int,
    seed: int,
    u_before: Operator | None = None,
    u_after: Operator | None = None,
    chunk_size: int = 1024,
) -> BornReport:
    """Tally the dominant ABL outcome over Haar-random final states.

    Each trial draws a Haar final state and records the outcome with the
    largest ABL weight (lowest index on ties). The report also carries the
    exact distribution for a completely mixed final boundary, which equals
    the Born probabilities.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    basis = i.basis
    u_before = identity(basis) if u_before is None else u_before
    u_after = identity(basis) if u_after is None else u_after
    psi = evolve(i, u_before).amplitudes
    branches = np.stack([u_after.matrix @ (p.matrix @ psi) for p in family.projectors])
    counts = np.zeros(len(family), dtype=np.int64)
    dim = basis.dim
    for idx, start, stop in rngmod.chunks(trials, chunk_size):
        g = rngmod.stream(seed, "born_limit", idx)
        n = stop - start
        z = g.standard_normal((n, dim)) + 1j * g.standard_normal((n, dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        weights = np.abs(z.conj() @ branches.T) ** 2
        counts += np.bincount(np.argmax(weights, axis=1), minlength=len(family))
    born = born_probabilities(i, family, u_before)
    from .hilbert import maximally_mixed, pure

    mixed = abl_mixed(pure(i), maximally_mixed(basis), u_before, u_after, family)
    freq = counts / trials
    sigma = np.sqrt(np.clip(born * (1 - born), 0, None) / trials)
    return BornReport(trials, counts, freq, born, mixed, sigma, seed)
