#!/usr/bin/env python3
"""
棄権側の再利用モジュール
不利な結果に対応する補フィルタ f̄ = sqrt(1 − f²) で推定を行い、
σ̄²(S)、全結果の不確かさ σ²_all(S)、穏やかな測定の上限を評価する。
補側の測定は正準シード（各ブロックで全成分 1）のまま再最適化しない。
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from block_solver import DEFAULT_SECULAR_TOL, BlockSolution
from metrology_errors import DomainError
from spin_blocks import (
    DEFAULT_DEGENERATE_TOL,
    DephasingBlock,
    NoiseModel,
    SymmetricProbe,
    build_blocks,
    build_hamiltonians,
)
from tradeoff import (
    DEFAULT_GAP_TOL,
    allocate,
    deterministic_uncertainty,
    filtered_uncertainty,
    solution_filters,
)


GENTLE_SLACK = 1e-9
# 補側の重みがこれ以下なら丸め誤差とみなし未定義扱い
EMPTY_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class ScavengedBranch:
    """補側の重み S̄ と不確かさ σ̄²（重み 0 のとき defined=False, σ̄²=nan）"""
    weight: float
    sigma2: float
    defined: bool

    def __iter__(self) -> Iterator[float]:
        yield self.weight
        yield self.sigma2


@dataclass(frozen=True)
class GentleBoundCheck:
    """|σ²_det − σ̄²(S)| ≤ √2·S の判定結果"""
    S: float
    lhs: float
    rhs: float
    holds: bool


def complement_filter(solutions: Dict[int, BlockSolution],
                      blocks: Optional[Sequence[DephasingBlock]] = None) -> Dict[int, np.ndarray]:
    """補フィルタ f̄ = sqrt(1 − f²)

    blocks を渡した場合、解のないブロック（s_j = 0 や縮退ブロック）は f̄ ≡ 1 とする。
    """
    complement = {
        two_j: np.sqrt(np.clip(1.0 - np.asarray(sol.filter_f) ** 2, 0.0, 1.0))
        for two_j, sol in solutions.items()
    }
    for block in blocks or []:
        complement.setdefault(block.two_j, np.ones(block.dim))
    return complement


def scavenged_variance(blocks: Sequence[DephasingBlock],
                       solutions: Dict[int, BlockSolution]) -> ScavengedBranch:
    """補側の (S̄, σ̄²)"""
    sigma2, weight = filtered_uncertainty(blocks, complement_filter(solutions, blocks))
    if weight <= EMPTY_WEIGHT_TOL:
        return ScavengedBranch(weight=0.0, sigma2=float("nan"), defined=False)
    return ScavengedBranch(weight=float(weight), sigma2=float(sigma2), defined=True)


def all_outcomes_variance(blocks: Sequence[DephasingBlock],
                          solutions: Dict[int, BlockSolution]) -> float:
    """σ²_all = S σ²(S) + S̄ σ̄²(S)（全結果で推定を出す場合）"""
    sigma2, success = filtered_uncertainty(blocks, solution_filters(solutions))
    branch = scavenged_variance(blocks, solutions)
    if success <= 0.0:
        return branch.sigma2
    if not branch.defined:
        return sigma2
    total = success + branch.weight
    return float((success * sigma2 + branch.weight * branch.sigma2) / total)


def gentle_bound_check(blocks: Sequence[DephasingBlock],
                       solutions: Dict[int, BlockSolution]) -> GentleBoundCheck:
    """穏やかな測定の補題による上限 |σ²_det − σ̄²(S)| ≤ √2·S"""
    _, success = filtered_uncertainty(blocks, solution_filters(solutions))
    rhs = math.sqrt(2.0) * success
    branch = scavenged_variance(blocks, solutions)
    if not branch.defined:
        return GentleBoundCheck(S=float(success), lhs=float("nan"), rhs=rhs, holds=True)
    lhs = abs(deterministic_uncertainty(blocks) - branch.sigma2)
    return GentleBoundCheck(S=float(success), lhs=float(lhs), rhs=rhs,
                            holds=bool(lhs <= rhs + GENTLE_SLACK))


def scavenge_curve(probe: SymmetricProbe, noise: NoiseModel, S_bar_values: Sequence[float],
                   gap_tol: float = DEFAULT_GAP_TOL,
                   degenerate_tol: float = DEFAULT_DEGENERATE_TOL,
                   secular_tol: float = DEFAULT_SECULAR_TOL) -> List[Dict[str, float]]:
    """S̄ ごとの σ²(S), σ̄², σ²_all, σ²_det と上限（CLI scavenge の行）"""
    blocks = build_blocks(probe, noise, degenerate_tol)
    hams = build_hamiltonians(blocks)
    sigma2_det = deterministic_uncertainty(blocks)
    rows = []
    for S_bar in S_bar_values:
        if not 0.0 <= S_bar < 1.0:
            raise DomainError(f"S̄ は [0, 1) で指定してください: S̄={S_bar}")
        point = allocate(blocks, hams, 1.0 - float(S_bar), gap_tol=gap_tol, secular_tol=secular_tol)
        branch = scavenged_variance(blocks, point.solutions)
        check = gentle_bound_check(blocks, point.solutions)
        rows.append({
            "S_bar": float(S_bar),
            "sigma2_opt": point.sigma2,
            "sigma2_bar": branch.sigma2,
            "sigma2_all": all_outcomes_variance(blocks, point.solutions),
            "sigma2_det": sigma2_det,
            "gentle_lhs": check.lhs,
            "gentle_rhs": check.rhs,
        })
    return rows
