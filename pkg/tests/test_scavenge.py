import math
from types import SimpleNamespace

import numpy as np
import pytest

from metrology_errors import DomainError
from probes import multicopy
from scavenge import (
    all_outcomes_variance,
    complement_filter,
    gentle_bound_check,
    scavenge_curve,
    scavenged_variance,
)
from spin_blocks import NoiseModel
from tradeoff import allocate, deterministic_uncertainty


class TestComplementFilter:
    """補フィルタ f̄ = sqrt(1 − f²)"""

    def test_pythagorean(self, multicopy_system):
        blocks, hams = multicopy_system(8, 0.8)
        point = allocate(blocks, hams, 0.5)
        complement = complement_filter(point.solutions)
        for two_j, sol in point.solutions.items():
            np.testing.assert_allclose(sol.filter_f ** 2 + complement[two_j] ** 2, 1.0, atol=1e-12)

    def test_blocks_without_solution_pass_through(self, multicopy_system):
        blocks, hams = multicopy_system(8, 0.8)
        point = allocate(blocks, hams, 0.05)
        complement = complement_filter(point.solutions, blocks)
        assert set(complement) == {b.two_j for b in blocks}
        for block in blocks:
            if block.two_j not in point.solutions:
                np.testing.assert_array_equal(complement[block.two_j], 1.0)


class TestScavengedBranch:
    """棄権側の推定"""

    def test_weights_add_up(self, multicopy_system):
        blocks, hams = multicopy_system(10, 0.8)
        point = allocate(blocks, hams, 0.6)
        branch = scavenged_variance(blocks, point.solutions)
        assert branch.defined
        assert branch.weight == pytest.approx(1.0 - point.S, abs=1e-9)
        weight, sigma2 = branch
        assert weight == branch.weight and sigma2 == branch.sigma2

    def test_full_success_leaves_nothing(self, multicopy_system):
        blocks, hams = multicopy_system(6, 0.8)
        point = allocate(blocks, hams, 1.0)
        branch = scavenged_variance(blocks, point.solutions)
        assert not branch.defined
        assert math.isnan(branch.sigma2)
        assert all_outcomes_variance(blocks, point.solutions) == pytest.approx(point.sigma2)
        check = gentle_bound_check(blocks, point.solutions)
        assert check.holds and math.isnan(check.lhs)

    def test_rounding_weight_counts_as_empty(self, multicopy_system):
        blocks, _ = multicopy_system(6, 0.8)
        almost_one = math.sqrt(1.0 - 1e-14)
        solutions = {b.two_j: SimpleNamespace(filter_f=np.full(b.dim, almost_one)) for b in blocks}
        branch = scavenged_variance(blocks, solutions)
        assert not branch.defined
        assert branch.weight == 0.0
        assert math.isnan(branch.sigma2)

    def test_unfavourable_branch_is_worse(self, multicopy_system):
        blocks, hams = multicopy_system(6, 0.8)
        point = allocate(blocks, hams, 0.54)
        assert scavenged_variance(blocks, point.solutions).sigma2 >= point.sigma2

    @pytest.mark.parametrize("S", [0.2, 0.5, 0.8])
    def test_ordering(self, multicopy_system, S):
        blocks, hams = multicopy_system(20, 0.8)
        point = allocate(blocks, hams, S)
        det = deterministic_uncertainty(blocks)
        assert point.sigma2 <= det + 1e-12
        assert det <= all_outcomes_variance(blocks, point.solutions) + 1e-12

    def test_gentle_bound_small_success(self, multicopy_system):
        blocks, hams = multicopy_system(20, 0.8)
        for S in (1e-4, 1e-2):
            check = gentle_bound_check(blocks, allocate(blocks, hams, S).solutions)
            assert check.holds
            assert check.rhs == pytest.approx(math.sqrt(2) * S, rel=1e-6)


class TestScavengeCurve:
    """CLI scavenge の行"""

    def test_rows(self):
        rows = scavenge_curve(multicopy(6), NoiseModel(0.8), [0.0, 0.25, 0.5])
        assert [row["S_bar"] for row in rows] == [0.0, 0.25, 0.5]
        assert math.isnan(rows[0]["sigma2_bar"])
        for row in rows:
            assert row["sigma2_opt"] <= row["sigma2_det"] + 1e-12
            assert set(row) == {"S_bar", "sigma2_opt", "sigma2_bar", "sigma2_all",
                                "sigma2_det", "gentle_lhs", "gentle_rhs"}

    @pytest.mark.parametrize("s_bar", [-0.1, 1.0])
    def test_invalid_s_bar(self, s_bar):
        with pytest.raises(DomainError):
            scavenge_curve(multicopy(4), NoiseModel(0.8), [s_bar])
