"""Witnessed branching, macroscopic pathways and bang/crunch border matching.

A decision projects a system register onto one of two outcomes and copies
the outcome into witness registers. Because witness records are orthogonal,
the projector applied at decision time can be replaced by a projector onto
witness records at the final time; leaf weights of a decision tree are then
two-state-vector weights of those final-time record projectors.

Log-weights are base 2 throughout; the "huge" of a branch is
``-log2(weight)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import config
from . import hilbert as hs
from . import rng as rngmod
from . import tsvf
from .errors import BasisError, ContractViolation, IncompatibleBoundaryError, RangeError
from .hilbert import Basis, DensityMatrix, Operator, StateVector


# --- macroscopic states -----------------------------------------------------


@dataclass(frozen=True)
class MacroState:
    """Class of microstates declared macroscopically indistinguishable.

    Phases between members are summed over, so the class acts through its
    projector (an incoherent, phase-averaged sum).
    """

    class_id: str
    members: tuple
    phase_policy: str = "sum_all_phases"

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))
        if self.phase_policy != "sum_all_phases":
            raise ValueError(f"unsupported phase policy {self.phase_policy!r}")
        if not self.members:
            raise ValueError(f"macro state {self.class_id!r} has no members")


def check_partition(classes: Sequence[MacroState], dim: int):
    seen = np.zeros(dim, dtype=int)
    for c in classes:
        for m in c.members:
            if not 0 <= m < dim:
                raise RangeError(f"member {m} outside dimension {dim}")
            seen[m] += 1
    if np.any(seen > 1):
        raise ContractViolation("macro states overlap")
    if np.any(seen == 0):
        raise ContractViolation("macro states do not cover the basis")


def partition_by_registers(basis: Basis, registers: Sequence[str]) -> list[MacroState]:
    """Classes labelled by the values of `registers`; other registers are microscopic."""
    idx = [basis.index_of(r) for r in registers]
    values = np.array(np.unravel_index(np.arange(basis.dim), basis.dims)).T
    groups: dict[tuple, list[int]] = {}
    for flat, vals in enumerate(values):
        groups.setdefault(tuple(int(vals[i]) for i in idx), []).append(flat)
    return [MacroState("".join(map(str, k)), tuple(v)) for k, v in sorted(groups.items())]


def _class_projector(c: MacroState, dim: int) -> np.ndarray:
    diag = np.zeros(dim)
    diag[list(c.members)] = 1.0
    return diag


def transition_weights(initial: Sequence[MacroState], final: Sequence[MacroState], u: Operator) -> np.ndarray:
    """``W[a, b] = Tr(P_b U P_a U^dag) / |a|``: phase-averaged class-to-class weight."""
    dim = u.dim
    check_partition(initial, dim)
    check_partition(final, dim)
    prob = np.abs(u.matrix) ** 2  # prob[j, i] = |<j|U|i>|^2
    out = np.zeros((len(initial), len(final)))
    for a, ca in enumerate(initial):
        col = prob[:, list(ca.members)].sum(axis=1) / len(ca.members)
        for b, cb in enumerate(final):
            out[a, b] = col[list(cb.members)].sum()
    return out


def pathway_multiplicity(
    initial: Sequence[MacroState],
    final: Sequence[MacroState],
    u: Operator,
    threshold: float,
) -> int:
    """Number of (initial class, final class) pairs with transition weight above `threshold`."""
    return int(np.count_nonzero(transition_weights(initial, final, u) > threshold))


def decision_circuit(n_qubits: int, decisions: int, seed: int, names: Sequence[str] | None = None) -> list[Operator]:
    """Alternating random single-qubit decisions and a fixed entangling permutation.

    Step ``2k`` rotates qubit ``k mod n`` by a seeded random angle (an
    undecided binary choice); step ``2k+1`` is a cyclic CNOT ladder that
    spreads the choice over the other registers.
    """
    names = tuple(names) if names is not None else tuple(f"q{i}" for i in range(n_qubits))
    basis = Basis.qubits(*names)
    g = rngmod.stream(seed, "decision_circuit")
    dim = basis.dim
    ladder = np.eye(dim)
    for c in range(n_qubits):
        t = (c + 1) % n_qubits
        if t == c:
            continue
        perm = np.zeros((dim, dim))
        for idx in range(dim):
            bits = list(np.unravel_index(idx, basis.dims))
            if bits[c]:
                bits[t] ^= 1
            perm[basis.flat_index(bits), idx] = 1.0
        ladder = perm @ ladder
    steps = []
    for k in range(decisions):
        theta = g.uniform(0.2, np.pi - 0.2)
        steps.append(hs.embed(hs.rotation_y(theta), basis, names[k % n_qubits], "unitary"))
        steps.append(Operator(basis, ladder, "unitary", "ladder"))
    return steps


def compose(steps: Sequence[Operator]) -> Operator:
    """Product ``steps[-1] @ ... @ steps[0]`` (first step acts first)."""
    out = hs.identity(steps[0].basis)
    for s in steps:
        m = s.matrix @ out.matrix
        kind = "unitary" if out.kind == s.kind == "unitary" else "general"
        out = Operator(out.basis, m, kind)
    return out


# --- decision trees -----------------------------------------------------------


@dataclass(frozen=True)
class WitnessBinding:
    """Records the outcome of `decision_id` into `register` as a basis index."""

    decision_id: str
    register: str
    record_map: Mapping[int, int]

    def __post_init__(self):
        rm = {int(k): int(v) for k, v in dict(self.record_map).items()}
        if len(set(rm.values())) != len(rm):
            raise ContractViolation(f"witness {self.register!r} records two outcomes identically")
        object.__setattr__(self, "record_map", rm)


@dataclass(frozen=True, eq=False)
class DecisionNode:
    decision_id: str
    register: str
    projectors: tuple
    witnesses: tuple
    pre_unitary: np.ndarray | None = None
    children: tuple = (None, None)
    labels: tuple = ("0", "1")

    def __post_init__(self):
        projs = tuple(np.asarray(p, dtype=complex) for p in self.projectors)
        if len(projs) != 2:
            raise ContractViolation("a decision has exactly two branches")
        for p in projs:
            hs.check_projector(p)
        d = projs[0].shape[0]
        tol = config.get().completeness
        if np.max(np.abs(projs[0] + projs[1] - np.eye(d))) > tol:
            raise ContractViolation(f"branches of {self.decision_id!r} are not complete")
        if np.max(np.abs(projs[0] @ projs[1])) > tol:
            raise ContractViolation(f"branches of {self.decision_id!r} are not orthogonal")
        object.__setattr__(self, "projectors", projs)
        if isinstance(self.witnesses, WitnessBinding):
            object.__setattr__(self, "witnesses", (self.witnesses,))
        else:
            object.__setattr__(self, "witnesses", tuple(self.witnesses))
        if not self.witnesses:
            raise ContractViolation(f"decision {self.decision_id!r} has no witness")
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True, eq=False)
class DecisionTree:
    basis: Basis
    root: DecisionNode

    def __post_init__(self):
        for node, _ in self.walk():
            k = self.basis.index_of(node.register)
            if node.projectors[0].shape[0] != self.basis.dims[k]:
                raise BasisError(f"projectors of {node.decision_id!r} do not fit register {node.register!r}")
            for w in node.witnesses:
                j = self.basis.index_of(w.register)
                if w.register == node.register:
                    raise BasisError("a decision cannot witness itself")
                if max(w.record_map.values()) >= self.basis.dims[j]:
                    raise BasisError(f"record index outside witness register {w.register!r}")
                if set(w.record_map) != {0, 1}:
                    raise ContractViolation("witness must record both outcomes")

    def walk(self):
        """Yield ``(node, path)`` in breadth-first order; `path` is the outcome prefix."""
        queue = [(self.root, ())]
        while queue:
            node, path = queue.pop(0)
            yield node, path
            for o, child in enumerate(node.children):
                if child is not None:
                    queue.append((child, path + (o,)))

    def leaves(self) -> list[tuple[tuple, list[DecisionNode]]]:
        """Root-to-leaf outcome paths with the nodes visited, sorted lexicographically."""
        out = []

        def rec(node, path, nodes):
            for o in (0, 1):
                child = node.children[o]
                if child is None:
                    out.append((path + (o,), nodes + [node]))
                else:
                    rec(child, path + (o,), nodes + [node])

        rec(self.root, (), [])
        out.sort(key=lambda item: item[0])
        return out

    def label(self, path: tuple) -> str:
        node, parts = self.root, []
        for o in path:
            parts.append(node.labels[o])
            node = node.children[o]
        return "/".join(parts)


def uniform_tree(
    basis: Basis,
    system: str,
    witness_registers: Sequence[Sequence[str]],
    pre_unitary: np.ndarray | None = None,
    labels: tuple = ("up", "down"),
) -> DecisionTree:
    """Full binary tree whose level ``k`` decides `system` and records into ``witness_registers[k]``.

    Outcome 0 is recorded as witness index 0, outcome 1 as index 1.
    """
    d = basis.dims[basis.index_of(system)]
    p0 = np.zeros((d, d), dtype=complex)
    p0[0, 0] = 1.0
    projs = (p0, np.eye(d) - p0)

    def build(level: int, prefix: str):
        if level == len(witness_registers):
            return None
        ws = tuple(WitnessBinding(f"D{level}{prefix}", r, {0: 0, 1: 1}) for r in witness_registers[level])
        kids = (build(level + 1, prefix + "0"), build(level + 1, prefix + "1"))
        return DecisionNode(f"D{level}{prefix}", system, projs, ws, pre_unitary, kids, labels)

    return DecisionTree(basis, build(0, ""))


def _record_shift(d: int, rec: int) -> np.ndarray:
    return np.roll(np.eye(d), rec, axis=0)


def _register_values(basis: Basis) -> np.ndarray:
    return np.array(np.unravel_index(np.arange(basis.dim), basis.dims))


def _record_mask(basis: Basis, values: np.ndarray, nodes: Sequence[DecisionNode], path: Sequence[int]) -> np.ndarray:
    mask = np.ones(basis.dim, dtype=bool)
    for node, o in zip(nodes, path):
        for w in node.witnesses:
            mask &= values[basis.index_of(w.register)] == w.record_map[o]
    return mask


def _node_action(amps, basis, node: DecisionNode):
    """Decide ``node`` on `amps`: pre-unitary, then record each outcome into its witnesses."""
    if node.pre_unitary is not None:
        amps = hs.apply_local(amps, basis, node.register, node.pre_unitary)
    out = np.zeros_like(amps)
    for o in (0, 1):
        branch = hs.apply_local(amps, basis, node.register, node.projectors[o])
        for w in node.witnesses:
            d = basis.dims[basis.index_of(w.register)]
            branch = hs.apply_local(branch, basis, w.register, _record_shift(d, w.record_map[o]))
        out = out + branch
    return out


def evolve_tree(initial: StateVector, tree: DecisionTree) -> np.ndarray:
    """Whole-state evolution through every decision, without any projection.

    Each node acts on the component whose ancestor witnesses carry the
    node's path; its action is the controlled record ``sum_o W_o P_o``.
    """
    basis = tree.basis
    values = _register_values(basis)
    amps = initial.amplitudes.copy()
    parents: dict[tuple, list] = {(): []}
    for node, path in tree.walk():
        anc = parents[path]
        mask = _record_mask(basis, values, [n for n, _ in anc], [o for _, o in anc])
        comp = np.where(mask, amps, 0)
        amps = amps - comp + _node_action(comp, basis, node)
        for o, child in enumerate(node.children):
            if child is not None:
                parents[path + (o,)] = anc + [(node, o)]
    return amps


def _check_witnesses_ready(initial: StateVector, tree: DecisionTree):
    values = _register_values(tree.basis)
    regs = {w.register for node, _ in tree.walk() for w in node.witnesses}
    ready = np.ones(tree.basis.dim, dtype=bool)
    for r in regs:
        ready &= values[tree.basis.index_of(r)] == 0
    if np.any(np.abs(initial.amplitudes[~ready]) > 1e-12):
        raise ContractViolation("witness registers must start in their ready state |0>")


@dataclass
class PathwayReport:
    leaves: list
    log2_weights: np.ndarray
    probabilities: np.ndarray
    forward_log2_weights: np.ndarray
    selected: str
    selected_index: int
    gap: float
    tie: bool
    total_overlap: float
    pure_overlap: float
    max_cross_term: float
    node_branch_log2: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "selected": self.selected,
            "gap": self.gap,
            "tie": self.tie,
            "leaves": list(self.leaves),
            "log2_weights": [float(x) for x in self.log2_weights],
            "probabilities": [float(x) for x in self.probabilities],
            "forward_log2_weights": [float(x) for x in self.forward_log2_weights],
            "total_overlap": self.total_overlap,
            "pure_overlap": self.pure_overlap,
            "max_cross_term": self.max_cross_term,
        }


def _safe_log2(x):
    with np.errstate(divide="ignore"):
        return np.log2(x)


def select_pathway(log2_weights: np.ndarray, tol: float = 1e-12) -> tuple[int, float, bool]:
    """Index of the heaviest leaf, the gap to the runner-up, and whether it tied.

    Ties go to the lowest index (lexicographic leaf order).
    """
    lw = np.asarray(log2_weights, dtype=float)
    order = np.argsort(-lw, kind="stable")
    best = int(order[0])
    if len(lw) < 2:
        return best, np.inf, False
    second = lw[order[1]]
    gap = float(lw[best] - second) if np.isfinite(second) else np.inf
    return best, gap, bool(gap <= tol)


def run_tree(
    initial: StateVector,
    tree: DecisionTree,
    final: StateVector | DensityMatrix,
    dephase_records: bool = True,
) -> PathwayReport:
    """Two-state-vector weights of every leaf of a witnessed decision tree.

    The leaf weight is ``<phi_l| rho_f |phi_l>`` with ``phi_l = Pi_l psi``,
    ``psi`` the fully evolved state and ``Pi_l`` the final-time projector on
    the leaf's witness records. With ``dephase_records`` the final boundary
    is taken block-diagonal in the record sectors (records are also held
    outside the simulated registers), so leaf weights add up to the total
    overlap; otherwise the pure overlap ``<psi|rho_f|psi>`` is the total and
    ``max_cross_term`` reports the interference between leaves.
    """
    if initial.basis != tree.basis or final.basis != tree.basis:
        raise BasisError("initial, final and tree must share a basis")
    _check_witnesses_ready(initial, tree)
    basis = tree.basis
    values = _register_values(basis)
    init = initial.normalize()
    psi = evolve_tree(init, tree)
    rho_f = final.matrix if isinstance(final, DensityMatrix) else None
    fvec = None if rho_f is not None else final.amplitudes

    leaves = tree.leaves()
    labels, lw, fw, amps = [], [], [], []
    for path, nodes in leaves:
        phi = np.where(_record_mask(basis, values, nodes, path), psi, 0)
        if fvec is not None:
            a = np.vdot(fvec, phi)
            amps.append(a)
            w = abs(a) ** 2
        else:
            w = float(np.vdot(phi, rho_f @ phi).real)
        labels.append(tree.label(path))
        lw.append(w)
        fw.append(float(np.vdot(phi, phi).real))
    weights = np.array(lw)
    total = float(weights.sum())
    if fvec is not None:
        pure_overlap = float(abs(np.vdot(fvec, psi)) ** 2)
        cross = float(abs(pure_overlap - total))
    else:
        pure_overlap = float(np.vdot(psi, rho_f @ psi).real)
        cross = float(abs(pure_overlap - total))
    if total <= config.get().boundary_floor:
        raise IncompatibleBoundaryError("final state annihilates every witnessed pathway")
    log2w = _safe_log2(weights)
    best, gap, tie = select_pathway(log2w)
    denom = total if dephase_records else pure_overlap
    return PathwayReport(
        leaves=labels,
        log2_weights=log2w,
        probabilities=weights / denom if denom > 0 else weights * np.nan,
        forward_log2_weights=_safe_log2(np.array(fw)),
        selected=labels[best],
        selected_index=best,
        gap=gap,
        tie=tie,
        total_overlap=total if dephase_records else pure_overlap,
        pure_overlap=pure_overlap,
        max_cross_term=cross,
        node_branch_log2=_node_branch_log2(init, tree),
    )


def _node_branch_log2(initial: StateVector, tree: DecisionTree) -> dict:
    """Forward (pre-selection only) branch log2-weights at every node, keyed by decision id."""
    basis = tree.basis
    out = {}

    def rec(node, amps):
        if node.pre_unitary is not None:
            amps = hs.apply_local(amps, basis, node.register, node.pre_unitary)
        norm = float(np.vdot(amps, amps).real)
        pair = []
        for o in (0, 1):
            branch = hs.apply_local(amps, basis, node.register, node.projectors[o])
            for w in node.witnesses:
                d = basis.dims[basis.index_of(w.register)]
                branch = hs.apply_local(branch, basis, w.register, _record_shift(d, w.record_map[o]))
            nb = float(np.vdot(branch, branch).real)
            pair.append(float(_safe_log2(nb / norm)) if norm > 0 else -np.inf)
            if node.children[o] is not None:
                rec(node.children[o], branch)
        out[node.decision_id] = tuple(pair)

    rec(tree.root, initial.amplitudes)
    return out


def leaf_projector(tree: DecisionTree, path: Sequence[int]) -> Operator:
    """Final-time projector onto the witness records of the leaf at `path`."""
    nodes = dict(tree.leaves())[tuple(path)]
    mask = _record_mask(tree.basis, _register_values(tree.basis), nodes, path)
    return Operator(tree.basis, np.diag(mask.astype(complex)), "projector")


def dephase_records(tree: DecisionTree, rho_f: DensityMatrix) -> DensityMatrix:
    """Block-diagonal part of `rho_f` over the leaves' record sectors (rest kept as is)."""
    m = np.zeros_like(rho_f.matrix)
    covered = np.zeros(tree.basis.dim, dtype=bool)
    values = _register_values(tree.basis)
    for path, nodes in tree.leaves():
        mask = _record_mask(tree.basis, values, nodes, path)
        covered |= mask
        m += np.outer(mask, mask) * rho_f.matrix
    rest = ~covered
    m += np.outer(rest, rest) * rho_f.matrix
    return DensityMatrix(tree.basis, m, rho_f.normalized, rho_f.log2_scale)


# --- Stern-Gerlach branch statistics ------------------------------------------


@dataclass
class SternGerlachResult:
    seed: int
    witness_count: int
    log2_up: float
    log2_down: float
    selected: str
    gap: float
    huge_up: float
    huge_down: float

    def to_dict(self) -> dict:
        return {k: (v if not isinstance(v, float) or np.isfinite(v) else str(v)) for k, v in self.__dict__.items()}


def _spin_amplitudes(preparation, agent) -> np.ndarray:
    c = np.asarray(hs.KET_PLUS if preparation is None else preparation, dtype=complex)
    c = c / np.linalg.norm(c)
    if agent is not None:
        m = agent.matrix if isinstance(agent, Operator) else np.asarray(agent, dtype=complex)
        c = m @ c
    return c


def _witness_overlaps(seed: int, witness_count: int) -> np.ndarray:
    """``|<f_j|0>|^2`` and ``|<f_j|1>|^2`` for a Haar product final state, shape (W, 2)."""
    g = rngmod.stream(seed, "stern_gerlach", "final")
    z = g.standard_normal((witness_count, 2)) + 1j * g.standard_normal((witness_count, 2))
    p = np.abs(z) ** 2
    return p / p.sum(axis=1, keepdims=True)


def stern_gerlach_scenario(
    seed: int,
    witness_count: int,
    preparation=None,
    agent=None,
) -> SternGerlachResult:
    """Two-branch split (paths I/I' up, II/II' down) amplified into witness qubits.

    Each branch flips the ready state of ``witness_count`` witness qubits to
    its own record (up -> |0>, down -> |1>). The final boundary is a Haar
    product state over the witnesses; the spin itself is left unselected
    (maximally mixed final boundary on the spin). Branch weights factor into
    ``|c_b|^2 * prod_j |<f_j|record_b>|^2`` and are evaluated in log2.

    `agent`, when given, is applied to the spin before the split.
    """
    if witness_count < 1:
        raise ContractViolation("at least one witness is required for a macroscopic decision")
    c = _spin_amplitudes(preparation, agent)
    ov = _witness_overlaps(seed, witness_count)
    logs = _safe_log2(ov).sum(axis=0)
    lw_up = float(_safe_log2(abs(c[0]) ** 2) + logs[0])
    lw_down = float(_safe_log2(abs(c[1]) ** 2) + logs[1])
    if not (np.isfinite(lw_up) or np.isfinite(lw_down)):
        raise IncompatibleBoundaryError("both branches vanish")
    best, gap, _ = select_pathway(np.array([lw_up, lw_down]))
    return SternGerlachResult(
        seed=seed,
        witness_count=witness_count,
        log2_up=lw_up,
        log2_down=lw_down,
        selected=("up", "down")[best],
        gap=gap,
        huge_up=-lw_up,
        huge_down=-lw_down,
    )


def stern_gerlach_dense(seed: int, witness_count: int, preparation=None, agent=None) -> PathwayReport:
    """Same scenario evaluated densely through :func:`run_tree` (small witness counts)."""
    names = ["spin"] + [f"w{j}" for j in range(witness_count)]
    basis = Basis.qubits(*names)
    c = _spin_amplitudes(preparation, agent)
    init = hs.tensor(hs.state(Basis.qubits("spin"), c), hs.basis_state(Basis.qubits(*names[1:]), 0))
    tree = uniform_tree(basis, "spin", [names[1:]])
    g = rngmod.stream(seed, "stern_gerlach", "final")
    z = g.standard_normal((witness_count, 2)) + 1j * g.standard_normal((witness_count, 2))
    fw = np.ones(1, dtype=complex)
    for j in range(witness_count):
        fw = np.kron(fw, z[j] / np.linalg.norm(z[j]))
    rho = np.kron(np.eye(2), np.outer(fw, fw.conj()))
    return run_tree(init, tree, DensityMatrix(basis, rho, normalized=False))


@dataclass
class SternGerlachBatch:
    witness_count: int
    seeds: int
    up_fraction: float
    sigma: float
    median_gap: float
    mean_huge: float
    gaps: np.ndarray

    def to_dict(self) -> dict:
        return {
            "witness_count": self.witness_count,
            "seeds": self.seeds,
            "up_fraction": self.up_fraction,
            "sigma": self.sigma,
            "median_gap": self.median_gap,
            "mean_huge": self.mean_huge,
        }


def stern_gerlach_batch(
    seeds: Iterable[int],
    witness_count: int,
    preparation=None,
    agent=None,
) -> SternGerlachBatch:
    results = [stern_gerlach_scenario(s, witness_count, preparation, agent) for s in seeds]
    n = len(results)
    up = sum(r.selected == "up" for r in results) / n
    gaps = np.array([r.gap for r in results])
    finite = np.array([r.huge_up + r.huge_down for r in results])
    finite = finite[np.isfinite(finite)]
    return SternGerlachBatch(
        witness_count=witness_count,
        seeds=n,
        up_fraction=float(up),
        sigma=float(np.sqrt(0.25 / n)),
        median_gap=float(np.median(gaps)),
        mean_huge=float(np.mean(finite) / 2) if finite.size else float("inf"),
        gaps=gaps,
    )


# --- bidirectional scenario ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class BidirectionalScenario:
    """Bang and crunch boundary states with step-wise evolutions to the border.

    ``forward_steps`` carry the bang up to the border; ``backward_steps``
    carry the crunch back to the border. The first step acts first.
    """

    bang: StateVector
    crunch: StateVector
    forward_steps: tuple
    backward_steps: tuple
    n_decisions: int = 0

    def __post_init__(self):
        if self.bang.basis != self.crunch.basis:
            raise BasisError("bang and crunch must share a basis")
        fs = tuple(self.forward_steps) or (hs.identity(self.bang.basis),)
        bs = tuple(self.backward_steps) or (hs.identity(self.bang.basis),)
        for op in fs + bs:
            hs._same_basis(self.bang.basis, op.basis)
        object.__setattr__(self, "forward_steps", fs)
        object.__setattr__(self, "backward_steps", bs)

    @property
    def basis(self) -> Basis:
        return self.bang.basis

    @property
    def forward_u(self) -> Operator:
        return compose(self.forward_steps)

    @property
    def backward_u(self) -> Operator:
        return compose(self.backward_steps)


def trajectory(start: StateVector, steps: Sequence[Operator]) -> list[np.ndarray]:
    """States after each step (index 0 is the start)."""
    out = [start.amplitudes.copy()]
    v = start.amplitudes
    for s in steps:
        v = s.matrix @ v
        out.append(v)
    return out


def _evolved(start: StateVector, steps) -> tuple[np.ndarray, float]:
    v = trajectory(start, steps)[-1]
    n2 = float(np.vdot(v, v).real)
    if n2 <= config.get().boundary_floor:
        raise IncompatibleBoundaryError("evolution annihilates the state")
    return v / np.sqrt(n2), n2


@dataclass
class BorderMatch:
    overlap: complex
    border: StateVector
    dominance_ratio: float
    eigenvalues: np.ndarray
    factor_bang: complex
    factor_crunch: complex
    construction: str
    bang_weight: float = 1.0
    crunch_weight: float = 1.0

    @property
    def factorized(self) -> complex:
        return self.factor_bang * self.factor_crunch

    def to_dict(self) -> dict:
        return {
            "overlap_abs": abs(self.overlap),
            "log2_overlap_sq": float(np.log2(abs(self.overlap) ** 2)),
            "dominance_ratio": self.dominance_ratio if np.isfinite(self.dominance_ratio) else "inf",
            "factorized_abs": abs(self.factorized),
            "construction": self.construction,
        }


def border_matrix(b: np.ndarray, c: np.ndarray, construction: str = "hermitian") -> np.ndarray:
    """Dense border density function built from evolved bang `b` and revolved crunch `c`.

    ``hermitian``: Hermitian part of ``|b><c~|`` with ``c~`` carrying the
    phase that makes ``<b|c~>`` real positive, normalized by its trace norm.
    ``projector``: ``P_b P_c P_b + P_c P_b P_c`` normalized by its trace.
    """
    z = np.vdot(b, c)
    if construction == "hermitian":
        ct = c * (np.conj(z) / abs(z)) if abs(z) > 0 else c
        h = 0.5 * (np.outer(b, ct.conj()) + np.outer(ct, b.conj()))
        return h / np.sum(np.abs(np.linalg.eigvalsh(h)))
    if construction == "projector":
        pb, pc = np.outer(b, b.conj()), np.outer(c, c.conj())
        m = pb @ pc @ pb + pc @ pb @ pc
        return m / np.trace(m).real
    raise ValueError(f"unknown construction {construction!r}")


def _reduced_border(b, c, construction):
    """Same spectrum as :func:`border_matrix`, computed in span{b, c}."""
    z = np.vdot(b, c)
    r = abs(z)
    perp = c * (np.conj(z) / r) - r * b if r > 0 else c.copy()
    s = float(np.linalg.norm(perp))
    if s < 1e-14:
        return np.array([1.0, 0.0]), b[:, None], np.array([[1.0], [0.0]])
    e2 = perp / s
    if construction == "hermitian":
        m = np.array([[r, s / 2], [s / 2, 0.0]])
        m = m / np.sum(np.abs(np.linalg.eigvalsh(m)))
    elif construction == "projector":
        m = r**2 * np.array([[1 + r**2, r * s], [r * s, s**2]])
        m = m / np.trace(m)
    else:
        raise ValueError(f"unknown construction {construction!r}")
    w, v = np.linalg.eigh(m)
    return w, np.stack([b, e2], axis=1), v


def match_border(
    s: BidirectionalScenario,
    construction: str = "hermitian",
    dense: bool | None = None,
) -> BorderMatch:
    """Overlap at the border and the dominant border component.

    The dominance ratio is the largest over the second-largest eigenvalue
    magnitude (``inf`` for rank one). With ``dense`` the full matrix is built
    and diagonalized; otherwise the rank-2 reduction is used (default for
    dimensions above 64).
    """
    b, wb = _evolved(s.bang, s.forward_steps)
    c, wc = _evolved(s.crunch, s.backward_steps)
    z = complex(np.vdot(b, c))
    if abs(z) <= config.get().boundary_floor:
        raise IncompatibleBoundaryError("bang and crunch do not overlap at the border")
    dense = s.basis.dim <= 64 if dense is None else dense
    if dense:
        m = border_matrix(b, c, construction)
        w, v = hs.eigh_sorted(m)
        order = np.argsort(-np.abs(w), kind="stable")
        w, v = w[order], v[:, order]
        top = v[:, 0]
    else:
        w, frame, coeffs = _reduced_border(b, c, construction)
        order = np.argsort(-np.abs(w), kind="stable")
        w = w[order]
        top = frame @ coeffs[:, order[0]] if coeffs.shape[1] > 1 else frame[:, 0]
        top = hs._phase_fix(top / np.linalg.norm(top))
    lam1 = abs(w[0])
    lam2 = abs(w[1]) if len(w) > 1 else 0.0
    ratio = np.inf if lam2 <= 1e-12 * lam1 else lam1 / lam2
    border = StateVector(s.basis, top)
    return BorderMatch(
        overlap=z,
        border=border,
        dominance_ratio=float(ratio),
        eigenvalues=np.asarray(w),
        factor_bang=complex(np.vdot(b, top)),
        factor_crunch=complex(np.vdot(top, c)),
        construction=construction,
        bang_weight=wb,
        crunch_weight=wc,
    )


def agent_insert(s: BidirectionalScenario, at_step: int, op: Operator) -> BidirectionalScenario:
    """Splice `op` into the forward evolution before step `at_step`.

    The backward evolution receives the complex-conjugated operator at the
    mirrored position, so both phases see the intervention. Steps before
    `at_step` are untouched.
    """
    if op.kind not in ("unitary", "projector"):
        raise ContractViolation("agent operator must be unitary or a projector")
    hs._same_basis(s.basis, op.basis)
    nf, nb = len(s.forward_steps), len(s.backward_steps)
    mirror = nb - at_step
    if not 0 <= at_step <= nf or not 0 <= mirror <= nb:
        raise RangeError(f"step {at_step} outside forward evolution of {nf} steps")
    fwd = s.forward_steps[:at_step] + (op,) + s.forward_steps[at_step:]
    bwd = s.backward_steps[:mirror] + (op.conj(),) + s.backward_steps[mirror:]
    return BidirectionalScenario(s.bang, s.crunch, fwd, bwd, s.n_decisions)


def haar_scenario(n_qubits: int, seed: int, steps: int = 1, random_evolution: bool = False) -> BidirectionalScenario:
    """Independent Haar bang and crunch on ``n_qubits`` qubits."""
    basis = Basis.single("u", 2**n_qubits)
    g = rngmod.stream(seed, "bidirectional", n_qubits)
    bang, crunch = hs.haar_state(basis, g), hs.haar_state(basis, g)
    if random_evolution:
        fwd = tuple(hs.haar_unitary(basis, g) for _ in range(steps))
        bwd = tuple(hs.haar_unitary(basis, g) for _ in range(steps))
    else:
        fwd = bwd = tuple(hs.identity(basis) for _ in range(steps))
    return BidirectionalScenario(bang, crunch, fwd, bwd, n_qubits)


def overlap_scaling(qubit_range: Sequence[int], seeds: int, base_seed: int = 0) -> dict:
    """Mean ``log2 |<bang|crunch>|^2`` per dimension and the fitted slope against ``log2(dim)``."""
    xs, means = [], []
    for n in qubit_range:
        vals = []
        for k in range(seeds):
            m = match_border(haar_scenario(n, rngmod._word(base_seed) * 1_000_003 + k))
            vals.append(np.log2(abs(m.overlap) ** 2))
        xs.append(n)
        means.append(float(np.mean(vals)))
    slope, intercept = np.polyfit(xs, means, 1)
    return {"log2_dim": xs, "mean_log2_overlap_sq": means, "slope": float(slope), "intercept": float(intercept)}


# --- coexisting paths -----------------------------------------------------------


@dataclass
class InterferenceReport:
    witness_overlap: complex | None
    visibility: float
    interference_amplitude: float
    phases: np.ndarray
    detection: np.ndarray

    def to_dict(self) -> dict:
        return {
            "witness_overlap": None if self.witness_overlap is None else abs(self.witness_overlap),
            "visibility": self.visibility,
            "interference_amplitude": self.interference_amplitude,
        }


def interferometer_detection(phase: float, witness_overlap: complex | None = None) -> float:
    """Probability of the final M'(e_up) port of a balanced two-path interferometer.

    Paths are the two values of register ``p``; the upper path picks up
    `phase`. If `witness_overlap` is given, a witness register records the
    path with states ``|w_0> = |0>`` and ``|w_1> = o|0> + sqrt(1-|o|^2)|1>``.
    """
    if witness_overlap is None:
        basis = Basis.qubits("p")
        psi = hs.basis_state(basis, 0).amplitudes
        psi = hs.HADAMARD @ psi
        psi = np.diag([1, np.exp(1j * phase)]) @ psi
        psi = hs.HADAMARD @ psi
        return float(abs(psi[0]) ** 2)
    o = complex(witness_overlap)
    if abs(o) > 1 + 1e-12:
        raise ValueError("witness overlap must have modulus <= 1")
    basis = Basis.qubits("p", "w")
    w1 = np.array([o, np.sqrt(max(0.0, 1 - abs(o) ** 2))])
    # Unitary on w taking |0> to |w_1>.
    rec = np.array([[w1[0], -np.conj(w1[1])], [w1[1], np.conj(w1[0])]], dtype=complex)
    psi = hs.basis_state(basis, (0, 0)).amplitudes
    psi = hs.apply_local(psi, basis, "p", hs.HADAMARD)
    psi = hs.apply_local(psi, basis, "p", np.diag([1, np.exp(1j * phase)]))
    ctrl = np.kron(np.diag([1, 0]), np.eye(2)) + np.kron(np.diag([0, 1]), rec)
    psi = ctrl @ psi
    psi = hs.apply_local(psi, basis, "p", hs.HADAMARD)
    port = hs.embed(np.diag([1, 0]), basis, "p").matrix
    return float(np.vdot(psi, port @ psi).real)


def coexisting_paths_check(witness_overlap: complex | None = None, n_phases: int = 64) -> InterferenceReport:
    """Visibility of the detection fringe over a full phase sweep.

    The sweep is uniform, so the first Fourier harmonic gives the fringe
    exactly: ``P(phi) = A + B cos(phi) + C sin(phi)`` and the visibility is
    ``sqrt(B^2 + C^2) / A``.
    """
    phases = 2 * np.pi * np.arange(n_phases) / n_phases
    det = np.array([interferometer_detection(p, witness_overlap) for p in phases])
    a = det.mean()
    bc = 2 * np.mean(det * np.exp(-1j * phases))
    amp = abs(bc)
    return InterferenceReport(witness_overlap, float(amp / a), float(amp), phases, det)
