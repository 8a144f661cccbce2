"""Dense finite-dimensional Hilbert-space primitives.

States, operators and density matrices live on a :class:`Basis`, an ordered
list of named registers. Composite indices are row-major over the register
order, so ``Basis(("a", "b"), (2, 3))`` has index ``3 * a + b``.

All objects are immutable; their arrays are flagged read-only.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from . import config
from .errors import BasisError, CapacityError, ContractViolation


def _frozen(arr, dtype=complex) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Basis:
    """Ordered tensor-product factorization ``names[0] x names[1] x ...``."""

    names: tuple
    dims: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "dims", dims)
        if len(names) != len(dims):
            raise BasisError("names and dims differ in length")
        if len(set(names)) != len(names):
            raise BasisError(f"register names not unique: {names}")
        if any(d < 2 for d in dims):
            raise BasisError(f"register dimensions must be >= 2: {dims}")
        cap = config.get().dimension_cap
        if self.dim > cap:
            raise CapacityError(f"dimension {self.dim} exceeds cap {cap}")

    @classmethod
    def qubits(cls, *names: str) -> "Basis":
        return cls(tuple(names), (2,) * len(names))

    @classmethod
    def single(cls, name: str, dim: int) -> "Basis":
        return cls((name,), (dim,))

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.dims else 1

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise BasisError(f"unknown register {name!r}; have {self.names}") from None

    def concat(self, other: "Basis") -> "Basis":
        clash = set(self.names) & set(other.names)
        if clash:
            raise BasisError(f"registers shared by both factors: {sorted(clash)}")
        total = self.dim * other.dim
        cap = config.get().dimension_cap
        if total > cap:
            raise CapacityError(f"dimension {total} exceeds cap {cap}")
        return Basis(self.names + other.names, self.dims + other.dims)

    def flat_index(self, values: Sequence[int]) -> int:
        """Composite index of the product basis state with the given register values."""
        if len(values) != len(self.dims):
            raise BasisError("one value per register required")
        return int(np.ravel_multi_index(tuple(values), self.dims))


@dataclass(frozen=True, eq=False)
class StateVector:
    basis: Basis
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes).reshape(-1)
        if amps.shape[0] != self.basis.dim:
            raise BasisError(f"{amps.shape[0]} amplitudes for dimension {self.basis.dim}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "StateVector":
        n = self.norm()
        if n == 0.0:
            raise ContractViolation("cannot normalize the zero vector")
        return StateVector(self.basis, self.amplitudes / n)

    def is_normalized(self) -> bool:
        return abs(self.norm() - 1.0) <= config.get().norm

    def tensor_view(self) -> np.ndarray:
        return self.amplitudes.reshape(self.basis.dims)


OperatorKind = str  # "general" | "unitary" | "projector"


@dataclass(frozen=True, eq=False)
class Operator:
    """Square matrix on a basis, optionally marked ``unitary`` or ``projector``.

    Marked operators are checked on construction and raise
    :class:`ContractViolation` when the mark is false.
    """

    basis: Basis
    matrix: np.ndarray
    kind: OperatorKind = "general"
    label: str = ""

    def __post_init__(self):
        m = _frozen(self.matrix)
        d = self.basis.dim
        if m.shape != (d, d):
            raise BasisError(f"operator shape {m.shape} does not match dimension {d}")
        object.__setattr__(self, "matrix", m)
        if self.kind == "unitary":
            check_unitary(m)
        elif self.kind == "projector":
            check_projector(m)
        elif self.kind != "general":
            raise ValueError(f"unknown operator kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.basis.dim

    def dagger(self) -> "Operator":
        return Operator(self.basis, self.matrix.conj().T, self.kind, self.label + "^dag")

    def conj(self) -> "Operator":
        return Operator(self.basis, self.matrix.conj(), self.kind, self.label + "^*")

    def __matmul__(self, other: "Operator") -> "Operator":
        _same_basis(self.basis, other.basis)
        kind = "unitary" if self.kind == other.kind == "unitary" else "general"
        return Operator(self.basis, self.matrix @ other.matrix, kind)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian PSD matrix; ``log2_scale`` carries an extra factor ``2**log2_scale``.

    The scale lets long chains of unnormalized updates track weights far
    below the float range. The represented operator is
    ``2**log2_scale * matrix``.
    """

    basis: Basis
    matrix: np.ndarray
    normalized: bool = True
    log2_scale: float = 0.0

    def __post_init__(self):
        m = _frozen(self.matrix)
        d = self.basis.dim
        if m.shape != (d, d):
            raise BasisError(f"density matrix shape {m.shape} does not match dimension {d}")
        object.__setattr__(self, "matrix", m)
        tol = config.get()
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if np.max(np.abs(m - m.conj().T)) > tol.hermitian * scale:
            raise ContractViolation("density matrix is not Hermitian")
        if d <= 256:
            w = np.linalg.eigvalsh(m)
            if w.size and w[0] < -tol.psd * scale:
                raise ContractViolation(f"density matrix has negative eigenvalue {w[0]:.3e}")
        if self.normalized:
            if self.log2_scale != 0.0:
                raise ContractViolation("normalized density matrices carry no scale")
            if abs(np.trace(m).real - 1.0) > tol.trace:
                raise ContractViolation(f"trace {np.trace(m).real} != 1")

    @property
    def dim(self) -> int:
        return self.basis.dim

    def trace(self) -> float:
        """Trace of the represented operator (may underflow to 0)."""
        return float(np.trace(self.matrix).real) * 2.0**self.log2_scale

    def log2_trace(self) -> float:
        t = float(np.trace(self.matrix).real)
        return -np.inf if t <= 0 else float(np.log2(t)) + self.log2_scale

    def normalize(self) -> "DensityMatrix":
        t = float(np.trace(self.matrix).real)
        if t <= 0:
            raise ContractViolation("cannot normalize a traceless density matrix")
        return DensityMatrix(self.basis, self.matrix / t, True)


State = Union[StateVector, Operator, DensityMatrix]


def _same_basis(a: Basis, b: Basis):
    if a != b:
        raise BasisError(f"basis mismatch: {a.names}{a.dims} vs {b.names}{b.dims}")


def check_unitary(m: np.ndarray, tol: float | None = None):
    tol = config.get().unitary if tol is None else tol
    err = np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0])))
    if err > tol:
        raise ContractViolation(f"operator not unitary (max |U^dag U - I| = {err:.2e})")


def check_projector(m: np.ndarray, tol: float | None = None):
    tol = config.get().projector if tol is None else tol
    if np.max(np.abs(m - m.conj().T)) > tol:
        raise ContractViolation("projector not Hermitian")
    err = np.max(np.abs(m @ m - m))
    if err > tol:
        raise ContractViolation(f"operator not idempotent (max |P^2 - P| = {err:.2e})")


# --- core operations -------------------------------------------------------


def tensor(a: State, b: State) -> State:
    """Kronecker product; the result basis is ``a.basis`` followed by ``b.basis``."""
    basis = a.basis.concat(b.basis)
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(basis, np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, Operator) and isinstance(b, Operator):
        kind = a.kind if a.kind == b.kind else "general"
        return Operator(basis, np.kron(a.matrix, b.matrix), kind)
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(
            basis,
            np.kron(a.matrix, b.matrix),
            a.normalized and b.normalized,
            a.log2_scale + b.log2_scale,
        )
    raise TypeError(f"cannot tensor {type(a).__name__} with {type(b).__name__}")


def evolve(s: StateVector, u: Operator) -> StateVector:
    _same_basis(s.basis, u.basis)
    if u.kind != "unitary":
        raise ContractViolation("evolve requires an operator marked unitary")
    return StateVector(s.basis, u.matrix @ s.amplitudes)


def inner(a: StateVector, b: StateVector) -> complex:
    """``<a|b>``, conjugate-linear in `a`."""
    _same_basis(a.basis, b.basis)
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def _phase_fix(v: np.ndarray) -> np.ndarray:
    mags = np.abs(v)
    k = int(np.argmax(mags > 1e-12 * mags.max()))
    return v * (abs(v[k]) / v[k])


def _lex_key(v: np.ndarray) -> tuple:
    r = np.round(v, 9)
    return tuple(-x for pair in zip(r.real, r.imag) for x in pair)


def eigh_sorted(matrix: np.ndarray, degeneracy: float | None = None):
    """Deterministic eigendecomposition of a Hermitian matrix.

    Returns ``(values, vectors)`` with values descending and vectors in
    columns. Within a degenerate cluster the basis is canonical: standard
    basis vectors projected onto the eigenspace and Gram-Schmidt
    orthonormalized, so the result does not depend on LAPACK's choice.
    Each vector's first non-negligible component is real positive and
    cluster members are ordered lexicographically by amplitude.
    """
    tol = config.get().eig_degeneracy if degeneracy is None else degeneracy
    w, v = np.linalg.eigh(matrix)
    w, v = w[::-1], v[:, ::-1]
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    out_vecs = np.empty_like(v)
    i, n = 0, len(w)
    while i < n:
        j = i + 1
        while j < n and abs(w[j] - w[i]) <= tol * scale:
            j += 1
        block = v[:, i:j]
        if j - i == 1:
            out_vecs[:, i] = _phase_fix(block[:, 0])
        else:
            proj = block @ block.conj().T
            found: list[np.ndarray] = []
            for e in range(matrix.shape[0]):
                cand = proj[:, e].copy()
                for f in found:
                    cand -= np.vdot(f, cand) * f
                nrm = np.linalg.norm(cand)
                if nrm > 1e-6:
                    found.append(cand / nrm)
                if len(found) == j - i:
                    break
            found = [_phase_fix(f) for f in found]
            found.sort(key=_lex_key)
            for k, f in enumerate(found):
                out_vecs[:, i + k] = f
            w[i:j] = np.mean(w[i:j])
        i = j
    return w.copy(), out_vecs


def spectral(d: DensityMatrix) -> list[tuple[float, StateVector]]:
    """Eigenpairs of `d` sorted by descending eigenvalue (deterministic ties)."""
    m = d.matrix
    if np.max(np.abs(m - m.conj().T)) > config.get().hermitian * max(1.0, float(np.max(np.abs(m)))):
        raise ContractViolation("spectral requires a Hermitian matrix")
    w, v = eigh_sorted(m)
    factor = 2.0**d.log2_scale
    return [(float(w[k]) * factor, StateVector(d.basis, v[:, k])) for k in range(len(w))]


def partial_trace(d: DensityMatrix, keep: Iterable[str]) -> DensityMatrix:
    keep = list(keep)
    for name in keep:
        d.basis.index_of(name)
    keep_idx = [i for i, name in enumerate(d.basis.names) if name in keep]
    if len(keep_idx) == len(d.basis.names):
        return d
    if not keep_idx:
        raise BasisError("must keep at least one register")
    n = len(d.basis.dims)
    t = d.matrix.reshape(d.basis.dims * 2)
    letters = "abcdefghijklmnopqrstuvwxyz"
    if 2 * n > len(letters):
        raise BasisError("too many registers for partial_trace")
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for i in range(n):
        if i not in keep_idx:
            col[i] = row[i]
    out = "".join(row[i] for i in keep_idx) + "".join(col[i] for i in keep_idx)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    basis = Basis(tuple(d.basis.names[i] for i in keep_idx), tuple(d.basis.dims[i] for i in keep_idx))
    dk = basis.dim
    return DensityMatrix(basis, reduced.reshape(dk, dk), d.normalized, d.log2_scale)


# --- constructors and helpers ----------------------------------------------


def basis_state(basis: Basis, values: Union[int, Sequence[int]]) -> StateVector:
    """Computational basis state; `values` is a flat index or one value per register."""
    idx = values if isinstance(values, (int, np.integer)) else basis.flat_index(values)
    amps = np.zeros(basis.dim, dtype=complex)
    amps[idx] = 1.0
    return StateVector(basis, amps)


def state(basis: Basis, amplitudes, normalize: bool = True) -> StateVector:
    s = StateVector(basis, np.asarray(amplitudes, dtype=complex))
    return s.normalize() if normalize else s


def identity(basis: Basis) -> Operator:
    return Operator(basis, np.eye(basis.dim), "unitary", "I")


def projector(s: StateVector) -> Operator:
    v = s.normalize().amplitudes
    return Operator(s.basis, np.outer(v, v.conj()), "projector")


def pure(s: StateVector) -> DensityMatrix:
    v = s.normalize().amplitudes
    return DensityMatrix(s.basis, np.outer(v, v.conj()))


def maximally_mixed(basis: Basis) -> DensityMatrix:
    return DensityMatrix(basis, np.eye(basis.dim) / basis.dim)


def embed(local: np.ndarray, basis: Basis, register: str, kind: OperatorKind = "general") -> Operator:
    """Lift a single-register matrix to the full basis (identity elsewhere)."""
    k = basis.index_of(register)
    local = np.asarray(local, dtype=complex)
    if local.shape != (basis.dims[k], basis.dims[k]):
        raise BasisError(f"local matrix shape {local.shape} does not fit register {register!r}")
    full = np.ones((1, 1), dtype=complex)
    for i, d in enumerate(basis.dims):
        full = np.kron(full, local if i == k else np.eye(d))
    return Operator(basis, full, kind)


def apply_local(amplitudes: np.ndarray, basis: Basis, register: str, local: np.ndarray) -> np.ndarray:
    """Apply a single-register matrix to a flat amplitude array without forming the full operator."""
    k = basis.index_of(register)
    t = np.asarray(amplitudes).reshape(basis.dims)
    t = np.tensordot(local, t, axes=([1], [k]))
    return np.moveaxis(t, 0, k).reshape(-1)


def haar_state(basis: Basis, rng: np.random.Generator) -> StateVector:
    """Haar-random pure state (normalized complex Gaussian vector)."""
    z = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    return StateVector(basis, z / np.linalg.norm(z))


def haar_matrix(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary via QR of a complex Gaussian matrix with phase-fixed R diagonal."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def haar_unitary(basis: Basis, rng: np.random.Generator) -> Operator:
    return Operator(basis, haar_matrix(basis.dim, rng), "unitary", "haar")


# Common single-qubit objects.
SQRT1_2 = 1.0 / np.sqrt(2.0)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) * SQRT1_2
KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)
KET_PLUS = np.array([1, 1], dtype=complex) * SQRT1_2
KET_MINUS = np.array([1, -1], dtype=complex) * SQRT1_2


def rotation_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def qubit(name: str = "q") -> Basis:
    return Basis.qubits(name)
