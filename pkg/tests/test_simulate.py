import math

import numpy as np
import pytest

from metrology_errors import DomainError, EnvelopeViolationError
from simulate import (
    _BlockDensity,
    _draw_deltas,
    fourier_coefficients,
    loss,
    monte_carlo_loss,
    outcome_density,
    sample,
    sample_batch,
    success_probability,
    worst_case_check,
    wrap_angle,
)
from tradeoff import allocate


@pytest.fixture
def single_qubit(multicopy_system):
    blocks, hams = multicopy_system(1, 0.8)
    return blocks, allocate(blocks, hams, 1.0).solutions


class TestHelpers:
    """角度と損失"""

    def test_wrap_angle(self):
        np.testing.assert_allclose(wrap_angle([math.pi, -math.pi, 3 * math.pi / 2, 0.1]),
                                   [math.pi, math.pi, -math.pi / 2, 0.1])

    def test_loss(self):
        assert loss(0.3, 0.3) == pytest.approx(0.0)
        assert loss(0.0, math.pi) == pytest.approx(4.0)
        assert loss(0.1, 0.1 + 2 * math.pi) == pytest.approx(0.0, abs=1e-12)


class TestOutcomeDensity:
    """共変測定の結果密度"""

    def test_single_qubit_density(self, single_qubit):
        blocks, solutions = single_qubit
        theta_hat = np.linspace(-math.pi, math.pi, 7)
        expected = (1 + 0.8 * np.cos(0.4 - theta_hat)) / (2 * math.pi)
        np.testing.assert_allclose(outcome_density(blocks, solutions, 0.4, theta_hat), expected)

    def test_covariance(self, multicopy_system):
        blocks, hams = multicopy_system(5, 0.8)
        solutions = allocate(blocks, hams, 0.6).solutions
        theta_hat = np.linspace(-3, 3, 11)
        shifted = outcome_density(blocks, solutions, 1.3, theta_hat + 1.3)
        np.testing.assert_allclose(outcome_density(blocks, solutions, 0.0, theta_hat), shifted)

    def test_fourier_zero_mode_is_block_success(self, multicopy_system):
        blocks, hams = multicopy_system(6, 0.8)
        point = allocate(blocks, hams, 0.7)
        for block in blocks:
            sol = point.solutions.get(block.two_j)
            if sol is not None:
                coeffs = fourier_coefficients(block, sol.filter_f)
                assert coeffs[0] == pytest.approx(sol.s_j, abs=1e-10)
                assert coeffs[1] == pytest.approx(float(np.sum(sol.filter_f[:-1] * sol.filter_f[1:]
                                                               * block.offdiag)))

    @pytest.mark.parametrize("S", [0.3, 0.6, 1.0])
    def test_success_probability(self, multicopy_system, S):
        blocks, hams = multicopy_system(6, 0.8)
        point = allocate(blocks, hams, S)
        assert success_probability(blocks, point.solutions, 0.7) == pytest.approx(point.S, abs=1e-10)

    @pytest.mark.parametrize("S", [0.3, 0.6, 1.0])
    def test_conditional_loss_matches_variance(self, multicopy_system, S):
        blocks, hams = multicopy_system(6, 0.8)
        point = allocate(blocks, hams, S)
        assert worst_case_check(blocks, point.solutions, np.linspace(-3, 3, 7)) <= 1e-8

    def test_worst_case_needs_success(self, multicopy_system):
        blocks, _ = multicopy_system(3, 0.8)
        with pytest.raises(DomainError):
            worst_case_check(blocks, {}, [0.0])


class TestSampling:
    """棄却サンプリング"""

    def test_abstain_everything(self, multicopy_system):
        blocks, _ = multicopy_system(3, 0.8)
        batch = sample_batch(blocks, {}, 0.2, 100, seed=1)
        assert not batch.success.any()
        assert np.all(np.isnan(batch.theta_hat))
        assert sample(blocks, {}, 0.2, rng_seed=1).abstained

    def test_reproducible(self, multicopy_system):
        blocks, hams = multicopy_system(6, 0.8)
        solutions = allocate(blocks, hams, 0.6).solutions
        a = sample_batch(blocks, solutions, 0.5, 500, seed=42)
        b = sample_batch(blocks, solutions, 0.5, 500, seed=42)
        np.testing.assert_array_equal(a.success, b.success)
        np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
        hits = a.theta_hat[a.success]
        assert np.all((hits > -math.pi) & (hits <= math.pi))

    def test_single_trials_mix_success_and_abstention(self, multicopy_system):
        blocks, hams = multicopy_system(6, 0.8)
        solutions = allocate(blocks, hams, 0.6).solutions
        results = [sample(blocks, solutions, 0.0, rng_seed=seed) for seed in range(50)]
        abstained = [result for result in results if result.abstained]
        assert 0 < len(abstained) < len(results)
        for result in results:
            if not result.abstained:
                assert -math.pi < result.theta_hat <= math.pi

    def test_small_batches_with_abstention(self, multicopy_system):
        blocks, hams = multicopy_system(6, 0.8)
        solutions = allocate(blocks, hams, 0.3).solutions
        for seed in range(20):
            batch = sample_batch(blocks, solutions, 1.0, 3, seed=seed)
            assert np.array_equal(np.isnan(batch.theta_hat), ~batch.success)

    def test_zero_draws(self):
        density = _BlockDensity(two_j=2, p_j=1.0, coeffs=np.array([0.5, 0.1, 0.0]), envelope=1.0)
        assert _draw_deltas(density, 0, np.random.default_rng(0)).size == 0

    def test_single_sample(self, single_qubit):
        blocks, solutions = single_qubit
        result = sample(blocks, solutions, 0.0, rng_seed=3)
        assert not result.abstained
        assert result.block_j == 0.5

    def test_negative_size(self, single_qubit):
        blocks, solutions = single_qubit
        with pytest.raises(DomainError):
            sample_batch(blocks, solutions, 0.0, -1)

    def test_envelope_violation(self):
        density = _BlockDensity(two_j=2, p_j=1.0, coeffs=np.array([1.0, 0.4, 0.1]), envelope=0.5)
        with pytest.raises(EnvelopeViolationError):
            _draw_deltas(density, 1000, np.random.default_rng(0))


class TestMonteCarlo:
    """条件付き損失の経験平均"""

    def test_single_qubit_loss(self, single_qubit):
        blocks, solutions = single_qubit
        result = monte_carlo_loss(blocks, solutions, 0.3, 100000, seed=7)
        assert result.successes == 100000
        assert result.S_empirical == 1.0
        assert abs(result.loss_mean - 1.2) <= 4 * result.loss_stderr

    def test_independent_of_workers(self, multicopy_system):
        blocks, hams = multicopy_system(5, 0.8)
        solutions = allocate(blocks, hams, 0.6).solutions
        serial = monte_carlo_loss(blocks, solutions, 0.0, 20000, seed=5, chunk_size=3000)
        parallel = monte_carlo_loss(blocks, solutions, 0.0, 20000, seed=5, chunk_size=3000,
                                    max_workers=4)
        assert serial == parallel

    def test_invalid_arguments(self, single_qubit):
        blocks, solutions = single_qubit
        with pytest.raises(DomainError):
            monte_carlo_loss(blocks, solutions, 0.0, 0)
