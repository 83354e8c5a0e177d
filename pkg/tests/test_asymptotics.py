import math

import numpy as np
import pytest

from asymptotics import (
    ContinuumPotential,
    block_ground_energy,
    continuum_profile,
    deterministic_multicopy,
    finite_S_approx,
    fit_log_slope,
    fit_loglog_slope,
    harmonic_parameters,
    multicopy_spin_distribution,
    optimal_deterministic_bound,
    optimal_filtered_typical,
    optimal_probe_profile,
    potential,
    pure_chain_minimum,
    pure_heisenberg,
    scaling_exponents,
    ultimate_bound,
)
from block_solver import unconstrained_minimum
from metrology_errors import DomainError
from probes import multicopy
from spin_blocks import NoiseModel, block_probability, coupling_matrix, spin_values


class TestPotential:
    """連続極限のポテンシャル"""

    def test_center_value(self):
        assert potential(32, 0.8, 0.0) == pytest.approx(7.2)

    def test_noiseless_is_zero(self):
        np.testing.assert_allclose(potential(10, 1.0, np.linspace(-1, 1, 5)), 0.0)

    def test_symmetric_and_convex_bowl(self):
        x = np.linspace(-0.9, 0.9, 19)
        v = potential(20, 0.7, x)
        np.testing.assert_allclose(v, v[::-1])
        assert v.argmin() == 9

    def test_harmonic_parameters(self):
        v0, omega2 = harmonic_parameters(32, 0.8)
        assert v0 == pytest.approx(7.2)
        assert omega2 == pytest.approx(1.296)
        assert ContinuumPotential(32, 0.8).minimum == pytest.approx(7.2)

    def test_harmonic_expansion(self):
        v0, omega2 = harmonic_parameters(50, 0.9)
        x = 1e-3
        assert potential(50, 0.9, x) == pytest.approx(v0 + omega2 * x * x, rel=1e-9)

    @pytest.mark.parametrize("kwargs", [
        {"j": 10, "r": 0.0, "x": 0.0},
        {"j": 10, "r": 0.8, "x": 1.5},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            potential(**kwargs)

    def test_continuum_profile_normalized(self):
        j, r = 40, 0.8
        x = np.linspace(-1, 1, 4001)
        dx = x[1] - x[0]
        assert np.sum(continuum_profile(j, r, x) ** 2) * dx == pytest.approx(1.0, rel=1e-6)


class TestClosedForms:
    """大 n の閉形式"""

    def test_ultimate_bound(self):
        assert ultimate_bound(100, 0.8) == pytest.approx(5.069e-3, rel=1e-3)

    def test_optimal_deterministic_bound(self):
        assert optimal_deterministic_bound(1e4, 0.8) == pytest.approx(5.625e-5 + 1.5e-6)

    def test_finite_S_endpoints(self):
        n, r = 100, 0.8
        assert finite_S_approx(n, r, 1.0) == pytest.approx(deterministic_multicopy(n, r))
        assert finite_S_approx(n, r, 0.0) == pytest.approx((1 - r * r / 2) / (n * r * r))

    def test_typical_block_value(self):
        assert optimal_filtered_typical(100, 0.8) == pytest.approx(0.36 / 64)

    def test_pure_limits(self):
        assert pure_heisenberg(10) == pytest.approx(0.0987, abs=1e-4)
        assert pure_chain_minimum(10) == pytest.approx(2 - 2 * math.cos(math.pi / 12))
        ham = coupling_matrix(10, 10, NoiseModel(1.0))
        assert unconstrained_minimum(ham)[0] == pytest.approx(pure_chain_minimum(10), abs=1e-12)

    def test_block_ground_energy_matches_ultimate(self):
        n, r = 300, 0.8
        assert block_ground_energy(n / 2, r) == pytest.approx(ultimate_bound(n, r))

    @pytest.mark.parametrize("func", [ultimate_bound, deterministic_multicopy, pure_chain_minimum])
    def test_invalid_n(self, func):
        args = (0,) if func is pure_chain_minimum else (0, 0.8)
        with pytest.raises(DomainError):
            func(*args)


class TestScaling:
    """臨界確率の指数"""

    def test_exponents(self):
        exps = scaling_exponents(100, 0.8)
        assert exps.log_pJ_slope == pytest.approx(-(math.log(2) - math.log(1.8)))
        assert exps.log_pJ_slope == pytest.approx(-0.10536, abs=1e-5)
        assert exps.log_sJ_slope == pytest.approx(-math.log(1.8))
        assert exps.log_S_star_slope == pytest.approx(exps.log_pJ_slope + exps.log_sJ_slope)
        assert exps.log_pJ_no_filter == pytest.approx(100 * exps.log_pJ_slope)

    def test_fit_log_slope(self):
        xs = np.arange(10, 60, 10)
        assert fit_log_slope(xs, 3.0 * np.exp(-0.25 * xs)) == pytest.approx(-0.25)
        assert fit_loglog_slope(xs, 2.0 * xs ** -1.5) == pytest.approx(-1.5)

    def test_fit_requires_positive_values(self):
        with pytest.raises(DomainError):
            fit_log_slope([1, 2], [1.0, 0.0])


class TestDistributions:
    """ガウス近似の分布とプロファイル"""

    def test_spin_distribution_normalized(self):
        n, r = 400, 0.8
        j = np.arange(0, n // 2 + 1)
        assert np.sum(multicopy_spin_distribution(n, r, j)) == pytest.approx(1.0, rel=1e-2)
        assert j[np.argmax(multicopy_spin_distribution(n, r, j))] == 160

    @pytest.mark.parametrize("n", [80, 400])
    def test_block_probability_peak(self, n):
        r = 0.8
        two_js = spin_values(n)
        p = [block_probability(multicopy(n), NoiseModel(r), two_j) for two_j in two_js]
        j_peak = two_js[int(np.argmax(p))] / 2
        assert abs(j_peak - r * n / 2) <= 1.0

    def test_block_probability_near_gaussian(self):
        n, r = 20, 0.8
        two_js = np.array(spin_values(n))
        p = np.array([block_probability(multicopy(n), NoiseModel(r), int(two_j)) for two_j in two_js])
        gaussian = multicopy_spin_distribution(n, r, two_js / 2)
        assert np.max(np.abs(p - gaussian)) < 0.1

    def test_optimal_profile_normalized(self):
        n, r = 10000, 0.8
        y = np.linspace(-1, 1, 20001)
        psi2 = optimal_probe_profile(n, r, y) ** 2
        assert np.sum(psi2) * (y[1] - y[0]) == pytest.approx(1.0, rel=1e-6)
        assert psi2.argmax() == 10000

    def test_noiseless_distribution_rejected(self):
        with pytest.raises(DomainError):
            multicopy_spin_distribution(10, 1.0, 5)
        with pytest.raises(DomainError):
            optimal_probe_profile(10, 1.0, 0.0)


class TestDiscreteContinuum:
    """結合 a_m と連続ポテンシャル V^j(x) の対応"""

    @staticmethod
    def _max_deviation(two_j, r):
        ham = coupling_matrix(two_j, two_j, NoiseModel(r))
        j = two_j / 2
        x = (np.arange(ham.couplings.size) - j + 0.5) / j
        discrete = 2.0 * j * j * (1.0 - ham.couplings)
        central = np.abs(x) <= 0.9
        return float(np.max(np.abs(discrete[central] / potential(j, r, x[central]) - 1.0)))

    def test_matches_potential(self):
        assert self._max_deviation(64, 0.8) < 0.02

    def test_converges_with_spin(self):
        deviations = [self._max_deviation(2 * j, 0.8) for j in (50, 100, 200)]
        assert np.all(np.diff(deviations) < 0)
        assert deviations[-1] < 1e-3
