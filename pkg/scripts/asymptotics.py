#!/usr/bin/env python3
"""
漸近公式モジュール
連続極限（箱の中の粒子）と大 n のスケーリング則。厳密数値計算の検証用。
純粋状態 (π²/n²) と雑音あり (ultimate_bound) の切り替えは呼び出し側が行う。
"""

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from metrology_errors import DomainError


def _check_r(r: float, allow_zero: bool = False):
    if not (0.0 <= r <= 1.0) or (r == 0.0 and not allow_zero):
        raise DomainError(f"r は (0, 1] で指定してください: r={r}")


def _check_n(n: float):
    if n <= 0:
        raise DomainError(f"n は正の値で指定してください: n={n}")


@dataclass(frozen=True)
class ContinuumPotential:
    """V^j(x) = j(1−r²) / (2r sqrt(1−(1−r²)x²))"""
    j: float
    r: float

    def __call__(self, x):
        return potential(self.j, self.r, x)

    @property
    def minimum(self) -> float:
        return harmonic_parameters(self.j, self.r)[0]


@dataclass(frozen=True)
class ScalingExponents:
    """指数則 e^{slope·n} の傾き（log の n 微分）"""
    r: float
    log_pJ_slope: float
    log_sJ_slope: float
    log_S_star_slope: float
    log_sj_slope_per_j: float
    log_pJ_no_filter: float


def potential(j: float, r: float, x):
    """連続極限のポテンシャル V^j(x)"""
    if r == 0.0:
        raise DomainError("r=0 ではポテンシャルが発散します")
    _check_r(r)
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise DomainError("x は [-1, 1] で指定してください")
    value = j * (1.0 - r * r) / (2.0 * r * np.sqrt(1.0 - (1.0 - r * r) * x * x))
    return float(value) if value.ndim == 0 else value


def harmonic_parameters(j: float, r: float) -> Tuple[float, float]:
    """調和近似 V ≈ V_0 + ω²x² の (V^j_0, ω_j²)"""
    _check_r(r)
    return j * (1.0 - r * r) / (2.0 * r), j * (1.0 - r * r) ** 2 / (4.0 * r)


def continuum_profile(j: float, r: float, x):
    """フィルタ前の包絡 φ̃(x) = (jr/π)^{1/4} exp(−r j x²/2)"""
    _check_r(r)
    x = np.asarray(x, dtype=float)
    return (j * r / math.pi) ** 0.25 * np.exp(-0.5 * r * j * x * x)


def ultimate_bound(n: float, r: float) -> float:
    """σ²_ult = (1−r²)/(nr) · (1 + sqrt(2r/n))"""
    _check_n(n)
    _check_r(r)
    return (1.0 - r * r) / (n * r) * (1.0 + math.sqrt(2.0 * r / n))


def finite_S_approx(n: float, r: float, S: float) -> float:
    """有限の棄権確率での近似 σ² ≈ (1 − (r²/2) S̄)/(n r²)"""
    _check_n(n)
    _check_r(r)
    if not 0.0 <= S <= 1.0:
        raise DomainError(f"S は [0, 1] で指定してください: S={S}")
    return (1.0 - 0.5 * r * r * (1.0 - S)) / (n * r * r)


def optimal_deterministic_bound(n: float, r: float) -> float:
    """最適プローブでの決定論的不確かさ (1−r²)/(nr²) + 2sqrt(1−r²)/(n^{3/2} r)"""
    _check_n(n)
    _check_r(r)
    return (1.0 - r * r) / (n * r * r) + 2.0 * math.sqrt(1.0 - r * r) / (n ** 1.5 * r)


def deterministic_multicopy(n: float, r: float) -> float:
    """多コピー状態の決定論的漸近値 1/(n r²)"""
    _check_n(n)
    _check_r(r)
    return 1.0 / (n * r * r)


def optimal_filtered_typical(n: float, r: float) -> float:
    """典型ブロック j₀ で最適フィルタをかけた値 (1−r²)/(n r²)"""
    _check_n(n)
    _check_r(r)
    return (1.0 - r * r) / (n * r * r)


def block_ground_energy(j: float, r: float) -> float:
    """無制約の σ²_j ≈ (1−r²)(2jr)^{-1}[1 + (r/j)^{1/2}]"""
    _check_r(r)
    return (1.0 - r * r) / (2.0 * j * r) * (1.0 + math.sqrt(r / j))


def scaling_exponents(n: float, r: float) -> ScalingExponents:
    """臨界確率の指数則

    s_j* ~ e^{−2j log(1+r)}, p_J ~ e^{−n[log2 − log(1+r)]}, S* = p_J s_J* ~ e^{−n log 2}。
    log_pJ_no_filter はブロック内フィルタなしで S* = p_J となる場合の log p_J の主要項。
    """
    _check_n(n)
    _check_r(r)
    log_1pr = math.log1p(r)
    pJ_slope = -(math.log(2.0) - log_1pr)
    return ScalingExponents(
        r=r,
        log_pJ_slope=pJ_slope,
        log_sJ_slope=-log_1pr,
        log_S_star_slope=-math.log(2.0),
        log_sj_slope_per_j=-2.0 * log_1pr,
        log_pJ_no_filter=n * pJ_slope,
    )


def pure_heisenberg(n: float) -> float:
    """雑音なしの漸近値 π²/n²"""
    _check_n(n)
    return math.pi ** 2 / n ** 2


def pure_chain_minimum(n: int) -> float:
    """自由鎖 (r=1, 次元 n+1) の厳密最小固有値 2 − 2cos(π/(n+2))"""
    _check_n(n)
    return 2.0 - 2.0 * math.cos(math.pi / (n + 2))


def multicopy_spin_distribution(n: int, r: float, j):
    """多コピー状態の p_j のガウス近似（ピーク j₀ = rJ 付近で有効）"""
    _check_n(n)
    _check_r(r)
    if r == 1.0:
        raise DomainError("r=1 では p_j は j=J に集中しガウス近似は使えません")
    J = n / 2
    j = np.asarray(j, dtype=float)
    return np.exp(-J * (j / J - r) ** 2 / (1.0 - r * r)) / math.sqrt(math.pi * J * (1.0 - r * r))


def optimal_probe_profile(n: float, r: float, y):
    """決定論的最適プローブの連続極限 ψ_op(y), y = m/J"""
    _check_n(n)
    _check_r(r)
    if r == 1.0:
        raise DomainError("r=1 では ψ_op は定義されません（cos(πy/2) を使用）")
    y = np.asarray(y, dtype=float)
    width = math.sqrt(n * (1.0 - r * r)) / (4.0 * r)
    norm = (n * (1.0 - r * r) / (2.0 * math.pi * r) ** 2) ** 0.125
    return norm * np.exp(-width * y * y)


def fit_log_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """log(ys) の xs に対する最小二乗の傾き"""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 2 or np.any(ys <= 0):
        raise DomainError("傾きの推定には 2 点以上の正の値が必要です")
    slope, _ = np.polyfit(xs, np.log(ys), 1)
    return float(slope)


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """log(ys) の log(xs) に対する傾き（過渡的な指数の測定用）"""
    xs = np.asarray(xs, dtype=float)
    if np.any(xs <= 0):
        raise DomainError("両対数の傾きには正の x が必要です")
    return fit_log_slope(np.log(xs), ys)
