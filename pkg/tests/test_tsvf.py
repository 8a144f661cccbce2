import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsvfsim import hilbert as hs
from tsvfsim import tsvf
from tsvfsim.errors import ContractViolation, IncompatibleBoundaryError


def P(q, k):
    m = np.zeros((2, 2), dtype=complex)
    m[k, k] = 1
    return hs.Operator(q, m, "projector")


def random_projector_family(basis, rank, g):
    u = hs.haar_matrix(basis.dim, g)
    p = u[:, :rank] @ u[:, :rank].conj().T
    return tsvf.binary_family(hs.Operator(basis, 0.5 * (p + p.conj().T), "projector"))


@pytest.fixture
def states(q):
    return {
        "0": hs.basis_state(q, 0),
        "1": hs.basis_state(q, 1),
        "+": hs.state(q, hs.KET_PLUS),
        "-": hs.state(q, hs.KET_MINUS),
    }


class TestPostpone:
    def test_identity(self, q):
        fam = tsvf.computational_family(q)
        out = tsvf.postpone(fam, hs.identity(q))
        for a, b in zip(out, fam.projectors):
            assert np.allclose(a.matrix, b.matrix)

    def test_bit_flip(self, q):
        fam = tsvf.computational_family(q)
        out = tsvf.postpone(fam, hs.Operator(q, hs.PAULI_X, "unitary"))
        assert np.allclose(out[0].matrix, P(q, 1).matrix)

    def test_completeness(self, rng):
        b = hs.Basis.single("d", 6)
        fam = tsvf.computational_family(b)
        out = tsvf.postpone(fam, hs.haar_unitary(b, rng))
        assert np.max(np.abs(sum(p.matrix for p in out) - np.eye(6))) < 1e-9
        for p in out:
            assert p.kind == "projector"

    def test_non_unitary(self, q):
        with pytest.raises(ContractViolation):
            tsvf.postpone(tsvf.computational_family(q), hs.Operator(q, np.eye(2)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 64))
    def test_identity_measure_then_evolve(self, seed, dim):
        g = np.random.default_rng(seed)
        b = hs.Basis.single("d", dim)
        fam = random_projector_family(b, max(1, dim // 3), g)
        u = hs.haar_unitary(b, g)
        i = hs.haar_state(b, g)
        for m, mp in zip(fam.projectors, tsvf.postpone(fam, u)):
            lhs = u.matrix @ (m.matrix @ i.amplitudes)
            rhs = mp.matrix @ (u.matrix @ i.amplitudes)
            assert np.max(np.abs(lhs - rhs)) < 1e-9


class TestProbabilityM:
    def test_consistent_selection(self, q, states):
        b = tsvf.boundary_pair(states["0"], states["0"])
        assert tsvf.probability_m(b, P(q, 0)) == pytest.approx(1.0, abs=1e-15)

    def test_x_plus_to_zero(self, q, states):
        b = tsvf.boundary_pair(states["+"], states["0"])
        assert tsvf.probability_m(b, P(q, 0)) == pytest.approx(1.0, abs=1e-15)
        assert tsvf.probability_m(b, P(q, 1)) == pytest.approx(0.0, abs=1e-15)

    def test_x_plus_to_x_minus(self, q, states):
        # Unconditioned overlap <x+|x-> vanishes: the literal ratio is undefined,
        # the family-normalized numerators are 1/4 each.
        b = tsvf.boundary_pair(states["+"], states["-"])
        assert b.incompatible
        with pytest.raises(IncompatibleBoundaryError):
            tsvf.probability_m(b, P(q, 0))
        nums = [tsvf._numerator(b, P(q, k)).real for k in (0, 1)]
        assert nums == pytest.approx([0.25, 0.25], abs=1e-15)
        assert tsvf.family_probabilities(b, [P(q, 0), P(q, 1)]) == pytest.approx([0.5, 0.5], abs=1e-15)

    def test_requires_projector(self, q, states):
        b = tsvf.boundary_pair(states["0"], states["0"])
        with pytest.raises(ContractViolation):
            tsvf.probability_m(b, hs.identity(q))

    def test_pure_case_matches_amplitude(self, rng):
        b = hs.Basis.single("d", 5)
        i, f, u = hs.haar_state(b, rng), hs.haar_state(b, rng), hs.haar_unitary(b, rng)
        fam = random_projector_family(b, 2, rng)
        pair = tsvf.boundary_pair(i, f, u)
        for p in fam.projectors:
            amp = np.vdot(f.amplitudes, p.matrix @ u.matrix @ i.amplitudes)
            tot = np.vdot(f.amplitudes, u.matrix @ i.amplitudes)
            assert tsvf.probability_m(pair, p) == pytest.approx(abs(amp) ** 2 / abs(tot) ** 2, rel=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_sums_to_one_without_cross_terms(self, seed):
        # A final boundary diagonal in the family basis removes all cross terms.
        g = np.random.default_rng(seed)
        b = hs.Basis.single("d", 6)
        fam = tsvf.computational_family(b)
        w = g.random(6)
        rho_f = hs.DensityMatrix(b, np.diag(w / w.sum()))
        rho_i = hs.pure(hs.haar_state(b, g))
        pair = tsvf.BoundaryPair(rho_i, rho_f, hs.identity(b))
        total = sum(tsvf.probability_m(pair, p) for p in fam.projectors)
        assert abs(total - 1) < 1e-8


class TestUpdateFinal:
    def test_plus_projected(self, q, states):
        pair = tsvf.boundary_pair(states["0"], states["+"])
        out = tsvf.update_final(pair, P(q, 0))
        assert np.allclose(out.final.matrix, [[0.5, 0], [0, 0]])
        assert out.final.trace() == pytest.approx(0.5)
        assert not out.final.normalized

    def test_identity(self, q, states):
        pair = tsvf.boundary_pair(states["0"], states["+"])
        out = tsvf.update_final(pair, hs.Operator(q, np.eye(2), "projector"))
        assert np.allclose(out.final.matrix, pair.final.matrix)

    def test_orthogonal_updates_annihilate(self, q, states):
        pair = tsvf.BoundaryPair(hs.maximally_mixed(q), hs.pure(states["+"]), hs.identity(q))
        once = tsvf.update_final(pair, P(q, 0))
        with pytest.raises(IncompatibleBoundaryError):
            tsvf.update_final(once, P(q, 1))

    def test_trace_monotone_and_log_domain(self, rng):
        b = hs.Basis.single("d", 4)
        pair = tsvf.BoundaryPair(hs.maximally_mixed(b), hs.maximally_mixed(b), hs.identity(b))
        last = 0.0
        for _ in range(1500):
            pair = tsvf.update_final(pair, random_projector_family(b, 2, rng).projectors[0])
            lt = pair.final.log2_trace()
            assert lt <= last + 1e-9
            last = lt
        assert np.isfinite(last) and last < -1000
        assert pair.final.trace() == 0.0  # underflows in linear domain, log stays exact

    def test_trace_concentration(self):
        # n = 16 random unbiased binary updates, 100 seeded runs.
        b = hs.Basis.single("d", 16)
        n, ratios = 16, []
        for run in range(100):
            g = np.random.default_rng([7, run])
            rho_f = hs.pure(hs.haar_state(b, g))
            pair = tsvf.BoundaryPair(hs.maximally_mixed(b), rho_f, hs.identity(b))
            for _ in range(n):
                fam = random_projector_family(b, 8, g)
                pair = tsvf.update_final(pair, fam.projectors[int(g.integers(2))])
            ratios.append(pair.final.log2_trace() / n)
        assert -1.2 <= np.mean(ratios) <= -0.8


class TestDominantVector:
    def test_rank_one(self, q, states):
        d = tsvf.dominant_vector(hs.pure(states["+"]))
        assert d.ratio == np.inf
        assert abs(abs(hs.inner(d.vector, states["+"])) - 1) < 1e-12

    def test_diagonal(self, q):
        d = tsvf.dominant_vector(hs.DensityMatrix(q, np.diag([0.9, 0.1])))
        assert d.eigenvalue == pytest.approx(0.9)
        assert np.allclose(d.vector.amplitudes, [1, 0])
        assert d.ratio == pytest.approx(9.0)
        assert not tsvf.is_dominant(d.ratio)
        assert tsvf.is_dominant(d.ratio, threshold=5)

    def test_after_projector_chain(self):
        # Brute-force oracle: eigenvalues straight from numpy on the same matrix.
        b = hs.Basis.single("d", 16)
        ratios = []
        for run in range(20):
            g = np.random.default_rng([11, run])
            pair = tsvf.BoundaryPair(hs.maximally_mixed(b), hs.maximally_mixed(b), hs.identity(b))
            for _ in range(20):
                fam = random_projector_family(b, 8, g)
                pair = tsvf.update_final(pair, fam.projectors[int(g.integers(2))])
            dom = tsvf.dominant_vector(pair.final)
            w = np.sort(np.linalg.eigvalsh(pair.final.matrix))[::-1]
            expect = w[0] / w[1]
            assert dom.ratio == pytest.approx(expect, rel=1e-6)
            assert dom.eigenvalue == pytest.approx(w[0] * 2**pair.final.log2_scale, rel=1e-9)
            ratios.append(dom.ratio)
        assert all(r >= 1 for r in ratios)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_rank_one_reconstruction_within_lambda2(self, seed):
        g = np.random.default_rng(seed)
        a = g.standard_normal((5, 5)) + 1j * g.standard_normal((5, 5))
        m = a @ a.conj().T
        m /= np.trace(m).real
        d = hs.DensityMatrix(hs.Basis.single("d", 5), m)
        dom = tsvf.dominant_vector(d)
        v = dom.vector.amplitudes
        err = np.linalg.norm(m - dom.eigenvalue * np.outer(v, v.conj()), 2)
        lam2 = np.sort(np.linalg.eigvalsh(m))[-2]
        assert err <= lam2 + 1e-10


class TestABL:
    def test_consistent(self, q, states):
        fam = tsvf.computational_family(q)
        I = hs.identity(q)
        assert tsvf.abl_probability(states["0"], states["0"], I, I, fam) == pytest.approx([1, 0], abs=1e-12)

    def test_x_plus_zero(self, q, states):
        fam = tsvf.computational_family(q)
        I = hs.identity(q)
        assert tsvf.abl_probability(states["+"], states["0"], I, I, fam) == pytest.approx([1, 0], abs=1e-12)

    def test_x_plus_x_minus(self, q, states):
        fam = tsvf.computational_family(q)
        I = hs.identity(q)
        assert tsvf.abl_probability(states["+"], states["-"], I, I, fam) == pytest.approx([0.5, 0.5], abs=1e-12)
        with pytest.raises(IncompatibleBoundaryError):
            tsvf.abl_probability(states["+"], states["-"], I, I, fam, normalization="overlap")

    def test_all_zero(self, q, states):
        fam = tsvf.MeasurementContext((hs.Operator(q, np.eye(2), "projector"),))
        I = hs.identity(q)
        with pytest.raises(IncompatibleBoundaryError):
            tsvf.abl_probability(states["0"], states["1"], I, I, fam)

    def test_overlap_normalization_not_a_distribution(self, q):
        # <i|P_k|f> with i, f at 45 degrees to the measured basis.
        i = hs.state(q, [1, 1])
        f = hs.state(q, [1, 0.2])
        fam = tsvf.computational_family(q)
        I = hs.identity(q)
        raw = tsvf.abl_probability(i, f, I, I, fam, normalization="overlap")
        amps = np.array([1, 0.2]) / np.sqrt(2) / np.sqrt(1.04)
        assert raw == pytest.approx(amps**2 / amps.sum() ** 2, rel=1e-12)
        assert abs(raw.sum() - 1) > 0.1

    def test_matches_probability_m_with_postponement(self, rng):
        b = hs.Basis.single("d", 6)
        i, f = hs.haar_state(b, rng), hs.haar_state(b, rng)
        ub, ua = hs.haar_unitary(b, rng), hs.haar_unitary(b, rng)
        fam = random_projector_family(b, 3, rng)
        abl = tsvf.abl_probability(i, f, ub, ua, fam, normalization="overlap")
        pair = tsvf.boundary_pair(i, f, ua @ ub)
        # Postponed projectors are conjugated by U_after only.
        post = tsvf.postpone(fam, ua)
        pm = [tsvf.probability_m(pair, p) for p in post]
        assert abl == pytest.approx(pm, rel=1e-9)

    def test_mixed_final_is_born(self, rng):
        for trial in range(100):
            g = np.random.default_rng([3, trial])
            dim = int(g.integers(2, 17))
            b = hs.Basis.single("d", dim)
            i = hs.haar_state(b, g)
            ub, ua = hs.haar_unitary(b, g), hs.haar_unitary(b, g)
            fam = random_projector_family(b, int(g.integers(1, dim)), g) if dim > 2 else tsvf.computational_family(b)
            got = tsvf.abl_mixed(hs.pure(i), hs.maximally_mixed(b), ub, ua, fam)
            assert np.max(np.abs(got - tsvf.born_probabilities(i, fam, ub))) < 1e-10


class TestBornLimit:
    def test_exact_mixed_limit(self, q, states):
        fam = tsvf.computational_family(q)
        rep = tsvf.born_limit_check(states["+"], fam, trials=10, seed=0)
        assert rep.max_mixed_deviation < 1e-10

    def test_eigenstate(self, q, states):
        fam = tsvf.computational_family(q)
        rep = tsvf.born_limit_check(states["0"], fam, trials=200, seed=1)
        assert rep.born[0] == 1 and rep.mixed_final[0] == pytest.approx(1)
        assert rep.counts[0] == 200

    def test_x_plus_haar(self, q, states):
        fam = tsvf.computational_family(q)
        rep = tsvf.born_limit_check(states["+"], fam, trials=10_000, seed=42)
        sigma = np.sqrt(0.25 / 10_000)
        assert abs(rep.frequencies[0] - 0.5) <= 3 * sigma
        assert rep.within(3)

    def test_tilted_binary_preparation(self, q):
        # Two-outcome argmax over Haar finals reproduces Born weights.
        theta = 1.1
        i = hs.state(q, [np.cos(theta / 2), np.sin(theta / 2)])
        rep = tsvf.born_limit_check(i, tsvf.computational_family(q), trials=20_000, seed=5)
        assert rep.within(3)

    def test_seed_determinism(self, q, states):
        fam = tsvf.computational_family(q)
        a = tsvf.born_limit_check(states["+"], fam, trials=3000, seed=9)
        b = tsvf.born_limit_check(states["+"], fam, trials=3000, seed=9)
        assert np.array_equal(a.counts, b.counts)
