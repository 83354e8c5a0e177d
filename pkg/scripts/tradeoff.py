#!/usr/bin/env python3
"""
トレードオフ曲線モジュール
ブロックごとの解を組み合わせて σ²(S) を求める。
成功確率の配分 {s_j} は乗数 Λ の二分法（双対分解）で決め、
Λ 固定時の各ブロックの最適応答は block_solver.obstacle_profile が返す。
"""

import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from block_solver import (
    DEFAULT_SECULAR_TOL,
    BlockSolution,
    constrained_block_solve,
    critical_block_success,
    deterministic_block_variance,
    obstacle_profile,
    support_minimum,
    top_multiplier,
)
from metrology_errors import DomainError
from spin_blocks import (
    DEFAULT_DEGENERATE_TOL,
    BlockHamiltonian,
    DephasingBlock,
    NoiseModel,
    SymmetricProbe,
    build_blocks,
    build_hamiltonians,
)


DEFAULT_GAP_TOL = 1e-6
MAX_BISECTIONS = 200


@dataclass(frozen=True, eq=False)
class TradeoffPoint:
    """σ²(S) の 1 点（ブロック配分つき）"""
    S: float
    sigma2: float
    allocation: Dict[int, float]
    per_block_sigma2: Dict[int, float]
    solutions: Dict[int, BlockSolution] = field(default_factory=dict)
    gap: float = 0.0
    multiplier: float = float("nan")

    @property
    def S_bar(self) -> float:
        return 1.0 - self.S


@dataclass(frozen=True, eq=False)
class TradeoffCurve:
    """S の昇順に並んだ TradeoffPoint の列"""
    probe: str
    n: int
    r: float
    points: List[TradeoffPoint]

    @property
    def S_values(self) -> np.ndarray:
        return np.array([p.S for p in self.points])

    @property
    def sigma2_values(self) -> np.ndarray:
        return np.array([p.sigma2 for p in self.points])

    def to_rows(self) -> List[Dict[str, float]]:
        """CSV 出力用の行（S̄ の昇順）"""
        rows = [
            {
                "S_bar": p.S_bar,
                "S": p.S,
                "sigma2": p.sigma2,
                "n_sigma2": self.n * p.sigma2,
                "gap": p.gap,
            }
            for p in self.points
        ]
        return sorted(rows, key=lambda row: row["S_bar"])


@dataclass
class _BlockData:
    block: DephasingBlock
    ham: BlockHamiltonian
    upper: np.ndarray
    lam0: float
    lam_top: float
    s_star: float


def _prepare(blocks: Sequence[DephasingBlock],
             hams: Dict[int, BlockHamiltonian]) -> List[_BlockData]:
    prepared = []
    for block in blocks:
        if block.degenerate:
            continue
        ham = hams[block.two_j]
        upper = np.sqrt(np.asarray(block.diag))
        lam0, perron = support_minimum(block, ham)
        prepared.append(_BlockData(
            block=block, ham=ham, upper=upper, lam0=lam0,
            lam_top=top_multiplier(upper, ham.couplings),
            s_star=critical_block_success(block, perron),
        ))
    return prepared


def _responses(data: List[_BlockData], lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """乗数 Λ に対する各ブロックの (s_j, ηᵀHη)"""
    success = np.zeros(len(data))
    objective = np.zeros(len(data))
    for i, item in enumerate(data):
        if lam < item.lam0:
            continue
        if lam >= item.lam_top:
            success[i] = float(np.sum(item.block.diag))
            objective[i] = float(item.upper @ item.ham.apply(item.upper))
            continue
        response = obstacle_profile(item.upper, item.ham.couplings, lam)
        success[i] = response.success
        objective[i] = response.objective
    return success, objective


def _dual_value(p: np.ndarray, success: np.ndarray, objective: np.ndarray,
                lam: float, S: float) -> float:
    """ラグランジュ双対 D(Λ) = Σ p_j (g_j − Λ s_j) + Λ S"""
    return float(np.sum(p * (objective - lam * success)) + lam * S)


def deterministic_uncertainty(blocks: Sequence[DephasingBlock]) -> float:
    """σ²(1) = Σ_j p_j (2 − 2Σ_m o_m) / Σ_j p_j（縮退ブロックを除く）"""
    live = [b for b in blocks if not b.degenerate]
    weight = sum(b.p_j for b in live)
    return float(sum(b.p_j * deterministic_block_variance(b) for b in live) / weight)


def allocate(blocks: Sequence[DephasingBlock], hams: Dict[int, BlockHamiltonian], S: float,
             gap_tol: float = DEFAULT_GAP_TOL,
             secular_tol: float = DEFAULT_SECULAR_TOL) -> TradeoffPoint:
    """Σ_j p_j s_j = S のもとで Σ_j p_j s_j σ²_j(s_j) を最小化する配分

    Args:
        blocks: build_blocks の出力
        hams: ブロックごとの H^j
        S: 全体の成功確率 (0, 1]
        gap_tol: 相対ギャップの許容値（超えた場合は ⚠️ を表示）
        secular_tol: ブロック内の永年方程式の根の精度

    Returns:
        TradeoffPoint（gap は双対下界に対する相対ギャップ）
    """
    if not 0.0 < S <= 1.0:
        raise DomainError(f"成功確率 S は (0, 1] で指定してください: S={S}")
    data = _prepare(blocks, hams)
    if not data:
        raise DomainError("最適化可能なブロックがありません")
    p = np.array([item.block.p_j for item in data])
    capacity = np.array([float(np.sum(item.block.diag)) for item in data])
    S_max = float(p @ capacity)

    if S >= S_max * (1.0 - 1e-15):
        allocation_values = np.ones(len(data))
        lam_lo = lam_hi = max(item.lam_top for item in data)
        gap_bound = None
    else:
        lam_lo = min(item.lam0 for item in data) - 1e-12
        lam_hi = max(item.lam_top for item in data)
        s_lo, g_lo = _responses(data, lam_lo)
        s_hi, g_hi = _responses(data, lam_hi)
        for _ in range(MAX_BISECTIONS):
            if lam_hi - lam_lo <= 4 * np.finfo(float).eps * max(1.0, abs(lam_hi)):
                break
            lam_mid = 0.5 * (lam_lo + lam_hi)
            s_mid, g_mid = _responses(data, lam_mid)
            if float(p @ s_mid) < S:
                lam_lo, s_lo, g_lo = lam_mid, s_mid, g_mid
            else:
                lam_hi, s_hi, g_hi = lam_mid, s_mid, g_mid

        S_lo, S_hi = float(p @ s_lo), float(p @ s_hi)
        theta = 0.0 if S_hi <= S_lo else (S - S_lo) / (S_hi - S_lo)
        # 凸結合の丸めでブロックの上限 Σd を超えないようにする
        allocation_values = np.clip(s_lo + theta * (s_hi - s_lo), 0.0, capacity)
        gap_bound = max(_dual_value(p, s_lo, g_lo, lam_lo, S),
                        _dual_value(p, s_hi, g_hi, lam_hi, S))

    solutions: Dict[int, BlockSolution] = {}
    allocation: Dict[int, float] = {}
    per_block: Dict[int, float] = {}
    total = 0.0
    weighted = 0.0
    for item, s_j in zip(data, allocation_values):
        two_j = item.block.two_j
        allocation[two_j] = float(s_j)
        if s_j <= 0.0:
            per_block[two_j] = item.lam0
            continue
        solution = constrained_block_solve(item.block, item.ham, float(s_j), tol=secular_tol)
        solutions[two_j] = solution
        per_block[two_j] = solution.sigma2_j
        total += item.block.p_j * s_j
        weighted += item.block.p_j * s_j * solution.sigma2_j

    sigma2 = weighted / total
    gap = 0.0
    if gap_bound is not None:
        gap = max(0.0, (weighted - gap_bound) / weighted)
        if gap > gap_tol:
            print(f"⚠️ 配分の相対ギャップが許容値を超えました: gap={gap:.3e} (S={S})", file=sys.stderr)
    return TradeoffPoint(
        S=float(total), sigma2=float(sigma2), allocation=allocation,
        per_block_sigma2=per_block, solutions=solutions, gap=float(gap),
        multiplier=float(0.5 * (lam_lo + lam_hi)),
    )


def critical_success(blocks: Sequence[DephasingBlock], hams: Dict[int, BlockHamiltonian]) -> float:
    """S* = Σ_j p_j s_j*（各ブロックの Perron ベクトルで評価）

    全ブロックが無制約解に達する成功確率。σ²(S) が一定になる範囲はこれより狭く、
    plateau_success が与える。
    """
    return float(sum(item.block.p_j * item.s_star for item in _prepare(blocks, hams)))


def plateau_success(blocks: Sequence[DephasingBlock], hams: Dict[int, BlockHamiltonian]) -> float:
    """σ²(S) が一定になる上限 p_j° s_j°*（j° は λ_min(H^j) 最小のブロック）"""
    data = _prepare(blocks, hams)
    best = min(data, key=lambda item: (item.lam0, -item.block.two_j))
    return float(best.block.p_j * best.s_star)


def global_minimum(blocks: Sequence[DephasingBlock], hams: Dict[int, BlockHamiltonian]) -> float:
    """min_j λ_min(H^j)（p_j > 0 のブロックのみ）"""
    return float(min(item.lam0 for item in _prepare(blocks, hams)))


def ultimate_postselect(blocks: Sequence[DephasingBlock],
                        hams: Dict[int, BlockHamiltonian]) -> Tuple[float, float]:
    """最大スピン J ブロックへの事後選択: (σ²_J, S* = p_J s_J*)"""
    top = max(blocks, key=lambda block: block.two_j)
    lam0, perron = support_minimum(top, hams[top.two_j])
    return lam0, float(top.p_j * critical_block_success(top, perron))


def filtered_uncertainty(blocks: Sequence[DephasingBlock],
                         filters: Dict[int, np.ndarray]) -> Tuple[float, float]:
    """任意のフィルタ f^j_m に対する (σ², S)

    filters に無いブロックは f ≡ 0 として扱う。S = 0 のとき σ² は nan。
    """
    success = 0.0
    overlap = 0.0
    for block in blocks:
        f = filters.get(block.two_j)
        if f is None or block.p_j == 0.0:
            continue
        success += block.p_j * float(np.sum(f ** 2 * block.diag))
        overlap += block.p_j * float(np.sum(f[:-1] * f[1:] * block.offdiag))
    if success <= 0.0:
        return float("nan"), 0.0
    return 2.0 - 2.0 * overlap / success, success


def solution_filters(solutions: Dict[int, BlockSolution]) -> Dict[int, np.ndarray]:
    return {two_j: np.asarray(sol.filter_f) for two_j, sol in solutions.items()}


def tradeoff_curve(probe: SymmetricProbe, noise: NoiseModel, S_grid: Sequence[float],
                   max_workers: int = 1, gap_tol: float = DEFAULT_GAP_TOL,
                   degenerate_tol: float = DEFAULT_DEGENERATE_TOL,
                   secular_tol: float = DEFAULT_SECULAR_TOL) -> TradeoffCurve:
    """S グリッド上の σ²(S)（ブロック構築は 1 回だけ行う）"""
    blocks = build_blocks(probe, noise, degenerate_tol)
    return curve_from_blocks(blocks, build_hamiltonians(blocks), S_grid, label=probe.label,
                             max_workers=max_workers, gap_tol=gap_tol, secular_tol=secular_tol)


def curve_from_blocks(blocks: Sequence[DephasingBlock], hams: Dict[int, BlockHamiltonian],
                      S_grid: Sequence[float], label: str = "custom", max_workers: int = 1,
                      gap_tol: float = DEFAULT_GAP_TOL,
                      secular_tol: float = DEFAULT_SECULAR_TOL) -> TradeoffCurve:
    """構築済みのブロックから σ²(S) 曲線を作る"""
    grid = np.sort(np.asarray(S_grid, dtype=float))
    if grid.size == 0 or grid[0] <= 0.0 or grid[-1] > 1.0:
        raise DomainError("S グリッドは (0, 1] の値で指定してください")

    def solve(S: float) -> TradeoffPoint:
        return allocate(blocks, hams, float(S), gap_tol=gap_tol, secular_tol=secular_tol)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            points = list(executor.map(solve, grid))
    else:
        points = [solve(S) for S in grid]
    return TradeoffCurve(probe=label, n=blocks[0].n, r=blocks[0].r, points=points)


def s_bar_grid(points: int, include_deterministic: bool = True) -> np.ndarray:
    """S̄ = 0 .. 1 の等間隔グリッド（S̄ = 1 は除く）"""
    s_bar = np.linspace(0.0, 1.0, points + 1)[:-1]
    if not include_deterministic:
        s_bar = s_bar[1:]
    return s_bar
