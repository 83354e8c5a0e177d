#!/usr/bin/env python3
"""
モンテカルロシミュレーションモジュール
共変測定＋フィルタのプロトコルを標本化し、条件付き損失を経験的に推定する。

ブロック j の結果密度は δ = θ − θ̂ の三角多項式
  g_j(δ) = c_0 + 2 Σ_{k≥1} c_k cos(kδ),  c_k = Σ_{m−m'=k} f_m f_{m'} ρ^j_{m,m'}
で表され、p(θ̂, succ|θ) = (1/2π) Σ_j p_j g_j(δ) となる。
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from block_solver import BlockSolution
from metrology_errors import DomainError, EnvelopeViolationError
from spin_blocks import DephasingBlock
from tradeoff import filtered_uncertainty, solution_filters


DEFAULT_ENVELOPE_FACTOR = 8
DEFAULT_ENVELOPE_MARGIN = 1.05
DEFAULT_QUADRATURE_FACTOR = 16
DEFAULT_CHUNK_SIZE = 50000


@dataclass(frozen=True)
class EstimationSample:
    """1 回の試行: θ と推定値 θ̂（棄権時は None）"""
    theta: float
    theta_hat: Optional[float]
    block_j: float

    @property
    def abstained(self) -> bool:
        return self.theta_hat is None


@dataclass(frozen=True)
class SampleBatch:
    """sample_batch の結果（θ̂ は棄権時 nan）"""
    theta: float
    two_j: np.ndarray
    success: np.ndarray
    theta_hat: np.ndarray


@dataclass(frozen=True)
class MonteCarloResult:
    samples: int
    successes: int
    S_empirical: float
    loss_mean: float
    loss_stderr: float


@dataclass(frozen=True, eq=False)
class _BlockDensity:
    two_j: int
    p_j: float
    coeffs: np.ndarray
    envelope: float

    @property
    def success(self) -> float:
        return float(self.coeffs[0]) if self.coeffs.size else 0.0

    def __call__(self, delta):
        delta = np.asarray(delta, dtype=float)
        if not self.coeffs.size:
            return np.zeros_like(delta)
        k = np.arange(1, self.coeffs.size)
        harmonics = np.cos(np.multiply.outer(delta, k)) @ self.coeffs[1:]
        return self.coeffs[0] + 2.0 * harmonics


def wrap_angle(x):
    """(−π, π] に折り返す"""
    return math.pi - np.mod(math.pi - np.asarray(x, dtype=float), 2.0 * math.pi)


def loss(theta, theta_hat):
    """周期損失 4 sin²((θ − θ̂)/2) = 2 − 2cos(θ − θ̂)"""
    return 2.0 - 2.0 * np.cos(np.asarray(theta) - np.asarray(theta_hat))


def fourier_coefficients(block: DephasingBlock, filter_f: np.ndarray) -> np.ndarray:
    """c_k = Σ_{m−m'=k} f_m f_{m'} ρ^j_{m,m'}（k = 0..2j）"""
    f = np.asarray(filter_f, dtype=float)
    weighted = np.outer(f, f) * block.dense()
    return np.array([np.trace(weighted, offset=k) for k in range(block.dim)])


def _envelope(density: _BlockDensity, factor: int, margin: float) -> float:
    """格子最大値の上位点を局所最適化で詰めてから margin 倍する"""
    points = factor * density.two_j // 2 + 16
    grid = np.linspace(-math.pi, math.pi, points, endpoint=False)
    values = density(grid)
    step = 2.0 * math.pi / points
    peak = float(values.max())
    for i in np.argsort(values)[-3:]:
        result = minimize_scalar(lambda d: -float(density(d)),
                                 bounds=(grid[i] - step, grid[i] + step), method="bounded")
        peak = max(peak, -float(result.fun))
    return margin * peak


def _densities(blocks: Sequence[DephasingBlock], solutions: Dict[int, BlockSolution],
               envelope_factor: int = DEFAULT_ENVELOPE_FACTOR,
               envelope_margin: float = DEFAULT_ENVELOPE_MARGIN) -> List[_BlockDensity]:
    densities = []
    for block in blocks:
        sol = solutions.get(block.two_j)
        if sol is None or block.p_j == 0.0:
            coeffs = np.zeros(0)
            densities.append(_BlockDensity(block.two_j, block.p_j, coeffs, 0.0))
            continue
        density = _BlockDensity(block.two_j, block.p_j, fourier_coefficients(block, sol.filter_f), 0.0)
        envelope = _envelope(density, envelope_factor, envelope_margin) if density.success > 0 else 0.0
        densities.append(_BlockDensity(block.two_j, block.p_j, density.coeffs, envelope))
    return densities


def outcome_density(blocks: Sequence[DephasingBlock], solutions: Dict[int, BlockSolution],
                    theta, theta_hat):
    """p(θ̂, succ | θ) = (1/2π) Σ_j p_j g_j(θ − θ̂)"""
    delta = np.asarray(theta, dtype=float) - np.asarray(theta_hat, dtype=float)
    total = np.zeros_like(delta)
    for density in _densities(blocks, solutions):
        if density.coeffs.size:
            total = total + density.p_j * density(delta)
    total = total / (2.0 * math.pi)
    return float(total) if np.ndim(total) == 0 else total


def _quadrature_grid(blocks: Sequence[DephasingBlock], factor: int) -> np.ndarray:
    two_J = max(block.two_j for block in blocks)
    points = factor * two_J // 2 + 32
    return np.linspace(-math.pi, math.pi, points, endpoint=False)


def success_probability(blocks: Sequence[DephasingBlock], solutions: Dict[int, BlockSolution],
                        theta: float, quadrature_factor: int = DEFAULT_QUADRATURE_FACTOR) -> float:
    """S(θ) = ∫ p(θ̂, succ|θ) dθ̂（共変性により θ に依らない）"""
    grid = _quadrature_grid(blocks, quadrature_factor)
    weight = 2.0 * math.pi / grid.size
    return float(np.sum(outcome_density(blocks, solutions, theta, grid)) * weight)


def _conditional_loss(blocks: Sequence[DephasingBlock], solutions: Dict[int, BlockSolution],
                      theta: float, quadrature_factor: int) -> float:
    grid = _quadrature_grid(blocks, quadrature_factor)
    density = outcome_density(blocks, solutions, theta, grid)
    return float(np.sum(density * loss(theta, grid)) / np.sum(density))


def worst_case_check(blocks: Sequence[DephasingBlock], solutions: Dict[int, BlockSolution],
                     theta_list: Sequence[float],
                     quadrature_factor: int = DEFAULT_QUADRATURE_FACTOR) -> float:
    """max_θ |∫ p(θ̂|θ, succ) ℓ dθ̂ − σ²(S)|（共変測定なら 0）"""
    sigma2, success = filtered_uncertainty(blocks, solution_filters(solutions))
    if success <= 0.0:
        raise DomainError("成功確率が 0 のため条件付き損失を定義できません")
    return float(max(abs(_conditional_loss(blocks, solutions, theta, quadrature_factor) - sigma2)
                     for theta in theta_list))


def _draw_deltas(density: _BlockDensity, count: int, rng: np.random.Generator) -> np.ndarray:
    """一様提案の棄却サンプリングで δ を count 個生成"""
    if count <= 0:
        return np.empty(0)
    accepted = []
    remaining = count
    while remaining > 0:
        proposal = rng.uniform(-math.pi, math.pi, size=remaining)
        u = rng.random(remaining)
        values = density(proposal)
        if np.any(values > density.envelope):
            raise EnvelopeViolationError(
                f"密度が包絡を超えました: max={values.max():.6g} > {density.envelope:.6g} "
                f"(2j={density.two_j})"
            )
        keep = proposal[u * density.envelope < values]
        accepted.append(keep)
        remaining -= keep.size
    return np.concatenate(accepted)[:count]


def _sample_with_densities(densities: List[_BlockDensity], theta: float, size: int,
                           rng: np.random.Generator) -> SampleBatch:
    p = np.array([d.p_j for d in densities])
    index = rng.choice(len(densities), size=size, p=p / p.sum())
    success = np.zeros(size, dtype=bool)
    theta_hat = np.full(size, np.nan)
    for i, density in enumerate(densities):
        members = np.flatnonzero(index == i)
        if members.size == 0 or density.success <= 0.0:
            continue
        hit = members[rng.random(members.size) < density.success]
        if hit.size == 0:
            continue
        success[hit] = True
        theta_hat[hit] = wrap_angle(theta - _draw_deltas(density, hit.size, rng))
    two_j = np.array([d.two_j for d in densities])[index]
    return SampleBatch(theta=float(theta), two_j=two_j, success=success, theta_hat=theta_hat)


def sample_batch(blocks: Sequence[DephasingBlock], solutions: Dict[int, BlockSolution],
                 theta: float, size: int, seed=None) -> SampleBatch:
    """size 回の試行をまとめて標本化（seed が同じなら同じ結果）"""
    if size < 0:
        raise DomainError(f"標本数は 0 以上で指定してください: {size}")
    rng = np.random.default_rng(seed)
    return _sample_with_densities(_densities(blocks, solutions), theta, size, rng)


def sample(blocks: Sequence[DephasingBlock], solutions: Dict[int, BlockSolution],
           theta: float, rng_seed=None) -> EstimationSample:
    """1 回の試行"""
    batch = sample_batch(blocks, solutions, theta, 1, rng_seed)
    theta_hat = float(batch.theta_hat[0]) if batch.success[0] else None
    return EstimationSample(theta=float(theta), theta_hat=theta_hat, block_j=int(batch.two_j[0]) / 2)


def _chunk_sizes(samples: int, chunk_size: int) -> List[int]:
    full, rest = divmod(samples, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def monte_carlo_loss(blocks: Sequence[DephasingBlock], solutions: Dict[int, BlockSolution],
                     theta: float, samples: int, seed: int = 0,
                     chunk_size: int = DEFAULT_CHUNK_SIZE, max_workers: int = 1,
                     envelope_factor: int = DEFAULT_ENVELOPE_FACTOR,
                     envelope_margin: float = DEFAULT_ENVELOPE_MARGIN) -> MonteCarloResult:
    """条件付き損失の経験平均と標準誤差

    チャンクごとに SeedSequence.spawn で独立な乱数列を割り当てるため、
    結果はワーカー数に依存しない。
    """
    if samples < 1 or chunk_size < 1:
        raise DomainError(f"標本数とチャンクサイズは正で指定してください: {samples}, {chunk_size}")
    densities = _densities(blocks, solutions, envelope_factor, envelope_margin)
    sizes = _chunk_sizes(samples, chunk_size)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(job: Tuple[int, np.random.SeedSequence]) -> Tuple[int, float, float]:
        size, stream = job
        batch = _sample_with_densities(densities, theta, size, np.random.default_rng(stream))
        values = loss(theta, batch.theta_hat[batch.success])
        return int(values.size), float(values.sum()), float(np.sum(values ** 2))

    jobs = list(zip(sizes, streams))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            parts = list(executor.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]

    successes = sum(part[0] for part in parts)
    total = sum(part[1] for part in parts)
    total_sq = sum(part[2] for part in parts)
    if successes == 0:
        return MonteCarloResult(samples, 0, 0.0, float("nan"), float("nan"))
    mean = total / successes
    stderr = float("nan")
    if successes > 1:
        variance = max(0.0, (total_sq - successes * mean ** 2) / (successes - 1))
        stderr = math.sqrt(variance / successes)
    return MonteCarloResult(samples=samples, successes=successes,
                            S_empirical=successes / samples, loss_mean=mean, loss_stderr=stderr)
