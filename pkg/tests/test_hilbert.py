import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsvfsim import config
from tsvfsim import hilbert as hs
from tsvfsim.errors import BasisError, CapacityError, ContractViolation


def ket(basis, values):
    return hs.basis_state(basis, values)


class TestBasis:
    def test_dimension_and_names(self):
        b = hs.Basis(("a", "b"), (2, 3))
        assert b.dim == 6
        assert b.flat_index((1, 2)) == 5

    def test_duplicate_names_rejected(self):
        with pytest.raises(BasisError):
            hs.Basis(("a", "a"), (2, 2))

    def test_small_register_rejected(self):
        with pytest.raises(BasisError):
            hs.Basis(("a",), (1,))

    def test_cap(self):
        with pytest.raises(CapacityError):
            hs.Basis.qubits(*[f"q{i}" for i in range(15)])


class TestTensor:
    def test_dims_multiply(self):
        a = hs.state(hs.Basis.single("a", 2), [1, 1])
        b = hs.state(hs.Basis.single("b", 3), [1, 0, 0])
        t = hs.tensor(a, b)
        assert t.dim == 6
        assert t.basis.names == ("a", "b")

    def test_zero_zero(self):
        a = ket(hs.qubit("a"), 0)
        b = ket(hs.qubit("b"), 0)
        amps = hs.tensor(a, b).amplitudes
        assert amps[0] == 1 and np.all(amps[1:] == 0)

    def test_identity(self):
        i4 = hs.tensor(hs.identity(hs.qubit("a")), hs.identity(hs.qubit("b")))
        assert np.array_equal(i4.matrix, np.eye(4))
        assert i4.kind == "unitary"

    def test_shared_register_rejected(self):
        a = ket(hs.qubit("a"), 0)
        with pytest.raises(BasisError):
            hs.tensor(a, a)

    def test_cap_exceeded(self):
        big = hs.Basis.qubits(*[f"q{i}" for i in range(8)])
        other = hs.Basis.qubits(*[f"r{i}" for i in range(7)])
        with pytest.raises(CapacityError):
            hs.tensor(ket(big, 0), ket(other, 0))

    def test_associative_up_to_labels(self, rng):
        a = hs.haar_state(hs.qubit("a"), rng)
        b = hs.haar_state(hs.Basis.single("b", 3), rng)
        c = hs.haar_state(hs.qubit("c"), rng)
        left = hs.tensor(hs.tensor(a, b), c)
        right = hs.tensor(a, hs.tensor(b, c))
        assert left.basis == right.basis
        assert np.allclose(left.amplitudes, right.amplitudes, atol=1e-14)


class TestEvolve:
    def test_identity(self, q, rng):
        s = hs.haar_state(q, rng)
        assert np.allclose(hs.evolve(s, hs.identity(q)).amplitudes, s.amplitudes)

    def test_bit_flip(self, q):
        x = hs.Operator(q, hs.PAULI_X, "unitary")
        out = hs.evolve(ket(q, 0), x)
        assert np.allclose(out.amplitudes, [0, 1])

    def test_round_trip(self, rng):
        b = hs.Basis.qubits("a", "b", "c")
        s = hs.haar_state(b, rng)
        u = hs.haar_unitary(b, rng)
        back = hs.evolve(hs.evolve(s, u), u.dagger())
        assert np.max(np.abs(back.amplitudes - s.amplitudes)) < 1e-10

    def test_norm_preserved(self, rng):
        b = hs.Basis.single("d", 16)
        s = hs.haar_state(b, rng)
        assert abs(hs.evolve(s, hs.haar_unitary(b, rng)).norm() - 1) < 1e-10

    def test_basis_mismatch(self, q):
        other = hs.qubit("r")
        with pytest.raises(BasisError):
            hs.evolve(ket(q, 0), hs.identity(other))

    def test_unmarked_operator_rejected(self, q):
        with pytest.raises(ContractViolation):
            hs.evolve(ket(q, 0), hs.Operator(q, np.eye(2)))

    def test_false_unitary_mark_rejected(self, q):
        with pytest.raises(ContractViolation):
            hs.Operator(q, np.array([[1, 0], [0, 2]]), "unitary")


class TestInner:
    def test_normalized(self, q, rng):
        s = hs.haar_state(q, rng)
        assert abs(hs.inner(s, s) - 1) < 1e-12

    def test_orthogonal(self, q):
        assert hs.inner(ket(q, 0), ket(q, 1)) == 0

    def test_x_plus(self, q):
        xp = hs.state(q, hs.KET_PLUS)
        assert abs(hs.inner(xp, ket(q, 0)) - 1 / np.sqrt(2)) < 1e-15

    def test_conjugate_linear_first(self, q, rng):
        a, b = hs.haar_state(q, rng), hs.haar_state(q, rng)
        ia = hs.StateVector(q, 1j * a.amplitudes)
        assert np.isclose(hs.inner(ia, b), -1j * hs.inner(a, b))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_unitary_invariance(self, seed):
        g = np.random.default_rng(seed)
        b = hs.Basis.single("d", 5)
        s, t, u = hs.haar_state(b, g), hs.haar_state(b, g), hs.haar_unitary(b, g)
        lhs = abs(hs.inner(hs.evolve(s, u), hs.evolve(t, u)))
        assert abs(lhs - abs(hs.inner(s, t))) < 1e-9


class TestSpectral:
    def test_diagonal(self, q):
        d = hs.DensityMatrix(q, np.diag([0.9, 0.1]))
        (l1, v1), (l2, v2) = hs.spectral(d)
        assert (l1, l2) == pytest.approx((0.9, 0.1))
        assert np.allclose(v1.amplitudes, [1, 0]) and np.allclose(v2.amplitudes, [0, 1])

    def test_degenerate_deterministic(self, q):
        d = hs.maximally_mixed(q)
        pairs = hs.spectral(d)
        assert [p[0] for p in pairs] == pytest.approx([0.5, 0.5])
        assert np.allclose(pairs[0][1].amplitudes, [1, 0])
        assert np.allclose(pairs[1][1].amplitudes, [0, 1])

    def test_degenerate_independent_of_rotation(self, rng):
        # Same eigenspaces described through different matrices give identical output.
        b = hs.Basis.single("d", 4)
        u = hs.haar_matrix(4, rng)
        vecs = u[:, :2]
        proj = vecs @ vecs.conj().T
        m1 = 0.4 * proj + 0.1 * (np.eye(4) - proj)
        rot = hs.haar_matrix(2, rng)
        vecs2 = vecs @ rot
        m2 = 0.4 * vecs2 @ vecs2.conj().T + 0.1 * (np.eye(4) - vecs2 @ vecs2.conj().T)
        s1 = hs.spectral(hs.DensityMatrix(b, m1))
        s2 = hs.spectral(hs.DensityMatrix(b, 0.5 * (m2 + m2.conj().T)))
        for (l1, v1), (l2, v2) in zip(s1, s2):
            assert l1 == pytest.approx(l2)
            assert np.allclose(v1.amplitudes, v2.amplitudes, atol=1e-8)

    def test_rank_one_plus(self, q):
        plus = hs.state(q, hs.KET_PLUS)
        (l1, v1), (l2, v2) = hs.spectral(hs.pure(plus))
        assert l1 == pytest.approx(1) and abs(l2) < 1e-12
        assert np.allclose(v1.amplitudes, hs.KET_PLUS)
        assert np.allclose(v2.amplitudes, hs.KET_MINUS)

    def test_phase_fixed(self, rng):
        b = hs.Basis.single("d", 6)
        a = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        m = a @ a.conj().T
        for _, v in hs.spectral(hs.DensityMatrix(b, m / np.trace(m))):
            k = np.argmax(np.abs(v.amplitudes) > 1e-12)
            assert abs(v.amplitudes[k].imag) < 1e-14 and v.amplitudes[k].real > 0

    def test_non_hermitian_rejected(self, q):
        with pytest.raises(ContractViolation):
            hs.DensityMatrix(q, np.array([[0.5, 0.3], [0.0, 0.5]]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 8))
    def test_reconstruction(self, seed, dim):
        g = np.random.default_rng(seed)
        a = g.standard_normal((dim, dim)) + 1j * g.standard_normal((dim, dim))
        m = a @ a.conj().T
        m /= np.trace(m).real
        d = hs.DensityMatrix(hs.Basis.single("d", dim), m)
        rec = sum(l * np.outer(v.amplitudes, v.amplitudes.conj()) for l, v in hs.spectral(d))
        assert np.max(np.abs(rec - m)) < 1e-8
        vals = [l for l, _ in hs.spectral(d)]
        assert vals == sorted(vals, reverse=True)


class TestPartialTrace:
    def test_product(self):
        b = hs.Basis.qubits("a", "b")
        d = hs.pure(ket(b, (0, 0)))
        red = hs.partial_trace(d, ["a"])
        assert np.allclose(red.matrix, [[1, 0], [0, 0]])

    @pytest.mark.parametrize("keep", ["a", "b"])
    def test_bell(self, keep):
        b = hs.Basis.qubits("a", "b")
        bell = hs.state(b, [1, 0, 0, 1])
        red = hs.partial_trace(hs.pure(bell), [keep])
        assert np.allclose(red.matrix, np.eye(2) / 2)

    def test_keep_all(self, rng):
        b = hs.Basis.qubits("a", "b")
        d = hs.pure(hs.haar_state(b, rng))
        assert hs.partial_trace(d, ["a", "b"]) is d

    def test_unknown_register(self):
        b = hs.Basis.qubits("a", "b")
        with pytest.raises(BasisError):
            hs.partial_trace(hs.maximally_mixed(b), ["z"])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_tensor_inverse(self, seed):
        g = np.random.default_rng(seed)
        ra = hs.pure(hs.haar_state(hs.Basis.single("a", 3), g))
        rb = hs.maximally_mixed(hs.qubit("b"))
        red = hs.partial_trace(hs.tensor(ra, rb), ["a"])
        assert np.max(np.abs(red.matrix - ra.matrix)) < 1e-10

    def test_trace_and_hermiticity_preserved(self, rng):
        b = hs.Basis(("a", "b", "c"), (2, 3, 2))
        d = hs.pure(hs.haar_state(b, rng))
        red = hs.partial_trace(d, ["a", "c"])
        assert red.basis.names == ("a", "c")
        assert abs(np.trace(red.matrix) - 1) < 1e-12
        assert np.allclose(red.matrix, red.matrix.conj().T)


class TestHelpers:
    def test_haar_unitary(self, rng):
        u = hs.haar_matrix(8, rng)
        assert np.allclose(u.conj().T @ u, np.eye(8), atol=1e-12)

    def test_apply_local_matches_embed(self, rng):
        b = hs.Basis(("a", "b", "c"), (2, 3, 2))
        s = hs.haar_state(b, rng)
        local = hs.haar_matrix(3, rng)
        full = hs.embed(local, b, "b")
        assert np.allclose(hs.apply_local(s.amplitudes, b, "b", local), full.matrix @ s.amplitudes)

    def test_projector_mark_checked(self, q):
        with pytest.raises(ContractViolation):
            hs.Operator(q, np.array([[1, 1], [0, 0]]), "projector")

    def test_tolerances_are_central(self):
        prev = config.set_tolerances(config.DEFAULT.with_(dimension_cap=8))
        try:
            with pytest.raises(CapacityError):
                hs.Basis.single("d", 16)
        finally:
            config.set_tolerances(prev)

    def test_immutable(self, q):
        s = ket(q, 0)
        with pytest.raises(ValueError):
            s.amplitudes[0] = 2
