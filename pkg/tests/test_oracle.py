import math

import numpy as np
import pytest

from metrology_errors import DomainError
from oracle import (
    basis_equivalence,
    brute_uncertainty,
    canonical_seed,
    dense_block_entries,
    dense_dephase,
    dense_symmetric_state,
    hamming_weights,
    random_probe,
    random_seed,
    random_state,
    sdp_crosscheck,
    spin_basis,
    symmetrize,
)
from probes import multicopy
from spin_blocks import NoiseModel, build_blocks, build_hamiltonians
from tradeoff import allocate, deterministic_uncertainty


class TestDenseDephasing:
    """計算基底でのデフェーズ"""

    def test_plus_state(self):
        r = 0.8
        rho = dense_dephase(np.full((4, 4), 0.25), NoiseModel(r))
        assert rho[0, 3] == pytest.approx(0.25 * r ** 2)
        assert rho[1, 2] == pytest.approx(0.25 * r ** 2)
        assert rho[0, 1] == pytest.approx(0.25 * r)
        assert rho[1, 1] == pytest.approx(0.25)

    def test_noiseless_is_identity_map(self, rng):
        psi = random_state(3, rng)
        rho = np.outer(psi, psi)
        np.testing.assert_allclose(dense_dephase(rho, NoiseModel(1.0)), rho)

    def test_rejects_non_square(self):
        with pytest.raises(DomainError):
            dense_dephase(np.zeros((4, 2)), NoiseModel(0.5))


class TestBruteUncertainty:
    """計算基底での (σ², S)"""

    def test_single_qubit(self):
        psi = np.array([1.0, 1.0]) / math.sqrt(2)
        sigma2, S = brute_uncertainty(psi, np.ones((2, 2)), NoiseModel(0.8))
        assert S == pytest.approx(1.0)
        assert sigma2 == pytest.approx(1.2)

    def test_zero_seed(self):
        psi = np.array([1.0, 0.0])
        sigma2, S = brute_uncertainty(psi, np.zeros((2, 2)), NoiseModel(0.8))
        assert S == 0.0
        assert math.isnan(sigma2)

    def test_canonical_seed_is_deterministic_uncertainty(self):
        n, r = 4, 0.8
        probe = multicopy(n)
        sigma2, S = brute_uncertainty(dense_symmetric_state(probe), canonical_seed(n), NoiseModel(r))
        assert S == pytest.approx(1.0, abs=1e-12)
        assert sigma2 == pytest.approx(deterministic_uncertainty(build_blocks(probe, NoiseModel(r))),
                                       abs=1e-12)


class TestSpinBasis:
    """|j m α⟩ の構成"""

    @pytest.mark.parametrize("n", [1, 3, 4])
    def test_orthonormal_and_complete(self, n):
        basis = spin_basis(n)
        stacked = np.concatenate([v.reshape(-1, 2 ** n) for v in basis.values()])
        assert stacked.shape == (2 ** n, 2 ** n)
        np.testing.assert_allclose(stacked @ stacked.T, np.eye(2 ** n), atol=1e-10)

    def test_magnetic_number(self):
        n = 4
        weight = hamming_weights(n)
        for two_j, vectors in spin_basis(n).items():
            for level in range(two_j + 1):
                two_m = -two_j + 2 * level
                support = np.abs(vectors[:, level]).sum(axis=0) > 1e-12
                assert np.all(n - 2 * weight[support] == two_m)

    def test_too_many_qubits(self):
        with pytest.raises(DomainError):
            spin_basis(13)

    @pytest.mark.parametrize("n, r", [(3, 0.8), (4, 0.6), (5, 0.9)])
    def test_block_entries_match_closed_form(self, n, r):
        probe = multicopy(n)
        noise = NoiseModel(r)
        psi = dense_symmetric_state(probe)
        entries = dense_block_entries(dense_dephase(np.outer(psi, psi), noise), n)
        for block in build_blocks(probe, noise):
            p_j, rho_j = entries[block.two_j]
            assert p_j == pytest.approx(block.p_j, abs=1e-12)
            np.testing.assert_allclose(rho_j, block.dense(), atol=1e-10)


class TestBasisEquivalence:
    """スピン基底と計算基底の一致"""

    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    @pytest.mark.parametrize("S", [1.0, 0.7, 0.3])
    def test_multicopy(self, n, S):
        result = basis_equivalence(multicopy(n), NoiseModel(0.8), S)
        assert result["max_abs_diff"] <= 1e-10

    def test_random_probes(self, rng):
        basis = spin_basis(4)
        for _ in range(5):
            probe = random_probe(4, rng)
            result = basis_equivalence(probe, NoiseModel(0.7), 0.6, basis)
            assert result["max_abs_diff"] <= 1e-10
            assert result["S_dense"] == pytest.approx(0.6, abs=1e-9)


class TestSymmetrize:
    """置換対称化で (σ², S) が変わらないこと"""

    @pytest.mark.parametrize("n", [2, 3])
    @pytest.mark.parametrize("complex_valued", [False, True])
    def test_invariance(self, rng, n, complex_valued):
        noise = NoiseModel(0.75)
        for _ in range(10):
            psi = random_state(n, rng, complex_valued)
            omega = random_seed(2 ** n, rng, complex_valued)
            psi_sym, omega_sym = symmetrize(psi, omega)
            sigma2, S = brute_uncertainty(psi, omega, noise)
            sigma2_sym, S_sym = brute_uncertainty(psi_sym, omega_sym, noise)
            assert S_sym == pytest.approx(S, abs=1e-9)
            assert sigma2_sym == pytest.approx(sigma2, abs=1e-9)

    def test_symmetrized_seed_is_valid(self, rng):
        n = 3
        psi = random_state(n, rng, complex_valued=True)
        omega = random_seed(2 ** n, rng, complex_valued=True)
        psi_sym, omega_sym = symmetrize(psi, omega)
        weight = hamming_weights(n)
        assert np.linalg.norm(psi_sym) == pytest.approx(1.0)
        np.testing.assert_allclose(omega_sym, np.conj(omega_sym.T), atol=1e-12)
        assert np.linalg.eigvalsh(omega_sym).min() >= -1e-10
        for beta in range(n + 1):
            sector = np.flatnonzero(weight == beta)
            block = omega_sym[np.ix_(sector, sector)]
            assert np.linalg.eigvalsh(block).max() <= 1.0 + 1e-10
        # ψ^sym は重みにしか依存しない
        for beta in range(n + 1):
            values = psi_sym[weight == beta]
            np.testing.assert_allclose(values, values[0])


class TestSdpCrosscheck:
    """ブロック SDP の主・双対"""

    @pytest.mark.parametrize("S", [0.1, 0.54, 0.8, 1.0])
    def test_matches_allocation(self, multicopy_system, S):
        blocks, hams = multicopy_system(6, 0.8)
        point = allocate(blocks, hams, S)
        cert = sdp_crosscheck(blocks, hams, S)
        assert cert.primal == pytest.approx(point.sigma2, abs=1e-6)
        assert cert.dual <= cert.primal + 1e-12
        assert cert.converged

    def test_random_probe(self, rng):
        probe = random_probe(7, rng)
        noise = NoiseModel(0.85)
        blocks = build_blocks(probe, noise)
        hams = build_hamiltonians(blocks)
        cert = sdp_crosscheck(blocks, hams, 0.5)
        assert cert.primal == pytest.approx(allocate(blocks, hams, 0.5).sigma2, abs=1e-6)
        assert cert.converged

    def test_invalid_success(self, multicopy_system):
        blocks, hams = multicopy_system(3, 0.8)
        with pytest.raises(DomainError):
            sdp_crosscheck(blocks, hams, 0.0)
