#!/usr/bin/env python3
"""
スピンブロック分解モジュール
デフェーズされた対称プローブ状態を全スピン j のブロックに分解する。
係数はすべて対数空間で評価し、n ≥ 500 でもオーバーフローしない。

半整数は 2 倍した整数（two_j, two_m）で保持する。
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from metrology_errors import DomainError, NormalizationError, OverflowGuardError


# exp() が有限に収まる対数値の上限
LOG_FLOAT_MAX = float(np.log(np.finfo(float).max))

DEFAULT_NORMALIZATION_TOL = 1e-12
DEFAULT_DEGENERATE_TOL = 1e-14


@dataclass(frozen=True)
class NoiseModel:
    """一様デフェーズ雑音（r=1 で無雑音）"""
    r: float
    p_f: float = field(init=False)

    def __post_init__(self):
        r = float(self.r)
        if not 0.0 <= r <= 1.0:
            raise DomainError(f"デフェーズパラメータ r は [0, 1] の範囲で指定してください: r={self.r}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p_f", (1.0 - r) / 2.0)

    @classmethod
    def from_flip_probability(cls, p_f: float) -> "NoiseModel":
        """位相反転確率 p_f から生成"""
        return cls(1.0 - 2.0 * p_f)


@dataclass(frozen=True, eq=False)
class SymmetricProbe:
    """置換対称な n 量子ビット純粋状態（係数は m = -J..J の昇順）"""
    n: int
    coeffs: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"量子ビット数 n は正の整数で指定してください: n={self.n}")
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.shape != (self.n + 1,):
            raise NormalizationError(
                f"係数の長さが n+1={self.n + 1} と一致しません: {coeffs.shape}"
            )
        if np.any(coeffs < 0):
            raise NormalizationError(f"負の係数は受け付けません: min={coeffs.min():.3e}")
        norm = float(np.sum(coeffs ** 2))
        if abs(norm - 1.0) > DEFAULT_NORMALIZATION_TOL:
            raise NormalizationError(f"係数が規格化されていません: Σc²={norm:.15f}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def two_J(self) -> int:
        return self.n

    @property
    def J(self) -> float:
        return self.n / 2

    @property
    def m_values(self) -> np.ndarray:
        return np.arange(-self.n, self.n + 1, 2) / 2

    def coefficient(self, two_m: int) -> float:
        """c_m を返す"""
        _check_magnetic(self.n, two_m)
        return float(self.coeffs[(two_m + self.n) // 2])


@dataclass(frozen=True, eq=False)
class DephasingBlock:
    """スピン j の既約ブロック（ρ^j, p_j, ν_j）"""
    n: int
    two_j: int
    p_j: float
    nu_j: int
    diag: np.ndarray
    offdiag: np.ndarray
    degenerate: bool
    r: float
    log_weights: np.ndarray
    log_prefactor: float

    @property
    def j(self) -> float:
        return self.two_j / 2

    @property
    def dim(self) -> int:
        return self.two_j + 1

    @property
    def two_m_values(self) -> np.ndarray:
        return np.arange(-self.two_j, self.two_j + 1, 2)

    @property
    def m_values(self) -> np.ndarray:
        return self.two_m_values / 2

    def entry(self, two_mp: int, two_m: int) -> float:
        """任意の行列要素 ρ^j_{m',m}"""
        _check_magnetic(self.two_j, two_mp)
        _check_magnetic(self.two_j, two_m)
        if not np.isfinite(self.log_prefactor):
            return 0.0
        i, k = (two_mp + self.two_j) // 2, (two_m + self.two_j) // 2
        log_d = log_dephasing_coefficients(self.n, self.two_j, two_mp, two_m, NoiseModel(self.r))
        return float(np.exp(self.log_prefactor + self.log_weights[i] + self.log_weights[k] + log_d))

    def dense(self) -> np.ndarray:
        """ρ^j の全行列を構築"""
        dim = self.dim
        rho = np.zeros((dim, dim))
        if not np.isfinite(self.log_prefactor):
            return rho
        two_m = self.two_m_values
        noise = NoiseModel(self.r)
        # 対角線ごとに評価（メモリを dim × k に抑える）
        for offset in range(dim):
            lower = two_m[: dim - offset]
            upper = two_m[offset:]
            log_d = log_dephasing_coefficients(self.n, self.two_j, lower, upper, noise)
            values = np.exp(
                self.log_prefactor + self.log_weights[: dim - offset] + self.log_weights[offset:] + log_d
            )
            idx = np.arange(dim - offset)
            rho[idx, idx + offset] = values
            rho[idx + offset, idx] = values
        return rho


@dataclass(frozen=True, eq=False)
class BlockHamiltonian:
    """H^j = 2·I − (隣接結合 a_m の三重対角行列)"""
    n: int
    two_j: int
    couplings: np.ndarray

    @property
    def dim(self) -> int:
        return self.two_j + 1

    def apply(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * x - apply_adjacency(self.couplings, x)

    def dense(self) -> np.ndarray:
        h = 2.0 * np.eye(self.dim)
        idx = np.arange(self.dim - 1)
        h[idx, idx + 1] = -self.couplings
        h[idx + 1, idx] = -self.couplings
        return h


def apply_adjacency(couplings: np.ndarray, x: np.ndarray) -> np.ndarray:
    """T·x（T は非対角成分 a_m の対称三重対角行列）"""
    y = np.zeros_like(x, dtype=float)
    y[:-1] += couplings * x[1:]
    y[1:] += couplings * x[:-1]
    return y


def log_binomial(n, k):
    """log C(n, k)"""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _check_block(n: int, two_j: int):
    if n < 1 or two_j < 0 or two_j > n or (n - two_j) % 2:
        raise DomainError(f"スピン j={two_j}/2 は n={n} のブロックではありません")


def _check_magnetic(two_j: int, two_m):
    two_m = np.asarray(two_m)
    if np.any(np.abs(two_m) > two_j) or np.any((two_j - two_m) % 2):
        raise DomainError(f"磁気量子数 m={two_m}/2 はスピン j={two_j}/2 の範囲外です")


def spin_values(n: int) -> List[int]:
    """n 量子ビットに現れる two_j（降順）"""
    return list(range(n, n % 2 - 1, -2))


def multiplicity(n: int, two_j: int) -> int:
    """多重度 ν_j = C(n, J−j)(2j+1)/(J+j+1)（厳密整数）"""
    _check_block(n, two_j)
    numerator = math.comb(n, (n - two_j) // 2) * (two_j + 1)
    denominator = (n + two_j) // 2 + 1
    nu, remainder = divmod(numerator, denominator)
    assert remainder == 0
    return nu


def spin_dimension_check(n: int) -> int:
    """Σ_j ν_j(2j+1)（2^n に一致する）"""
    return sum(multiplicity(n, two_j) * (two_j + 1) for two_j in spin_values(n))


def _log_reduced_sum(two_j: int, two_mp: np.ndarray, two_m: np.ndarray, r: float) -> np.ndarray:
    """log Σ_k Δ_k r^{2k}（m ≥ m' を仮定）"""
    shape = np.shape(two_m)
    two_mp = np.ravel(two_mp).astype(np.int64)
    two_m = np.ravel(two_m).astype(np.int64)
    j_minus_m = (two_j - two_m) // 2
    j_plus_m = (two_j + two_m) // 2
    j_minus_mp = (two_j - two_mp) // 2
    j_plus_mp = (two_j + two_mp) // 2
    diff = (two_m - two_mp) // 2
    kmax = np.minimum(j_minus_m, j_plus_mp)

    k = np.arange(int(kmax.max()) + 1 if kmax.size else 1)[None, :]
    valid = k <= kmax[:, None]
    half = 0.5 * (gammaln(j_minus_m + 1) + gammaln(j_plus_m + 1)
                  + gammaln(j_minus_mp + 1) + gammaln(j_plus_mp + 1))
    first = np.where(valid, j_minus_m[:, None] - k, 0)
    second = np.where(valid, j_plus_mp[:, None] - k, 0)
    terms = (half[:, None] - gammaln(first + 1) - gammaln(second + 1)
             - gammaln(diff[:, None] + k + 1) - gammaln(k + 1) + xlogy(2 * k, r))
    terms = np.where(valid, terms, -np.inf)
    return logsumexp(terms, axis=1).reshape(shape)


def log_dephasing_coefficients(n: int, two_j: int, two_mp, two_m, noise: NoiseModel) -> np.ndarray:
    """log 𝒟^j_{m',m} を配列でまとめて評価（m < m' は対称性で入れ替え）"""
    _check_block(n, two_j)
    _check_magnetic(two_j, two_mp)
    _check_magnetic(two_j, two_m)
    two_mp, two_m = np.broadcast_arrays(np.asarray(two_mp), np.asarray(two_m))
    lower = np.minimum(two_mp, two_m)
    upper = np.maximum(two_mp, two_m)
    r = noise.r
    prefactor = xlogy((n - two_j) // 2, (1.0 - r) * (1.0 + r)) + xlogy((upper - lower) // 2, r)
    return prefactor + _log_reduced_sum(two_j, lower, upper, r)


def dephasing_coefficient(n: int, two_j: int, two_mp: int, two_m: int, noise: NoiseModel) -> float:
    """𝒟^j_{m',m} = (1−r²)^{J−j} r^{m−m'} Σ_k Δ_k r^{2k}

    Args:
        n: 量子ビット数
        two_j: 2j
        two_mp: 2m'
        two_m: 2m
        noise: 雑音モデル

    Returns:
        係数の値（float で表現できない大きさなら OverflowGuardError）
    """
    log_value = float(log_dephasing_coefficients(n, two_j, two_mp, two_m, noise))
    if log_value > LOG_FLOAT_MAX:
        raise OverflowGuardError(
            f"𝒟 が浮動小数点の範囲を超えます: log𝒟={log_value:.1f} (n={n}, 2j={two_j})"
        )
    return float(np.exp(log_value))


def log_multicopy_diagonal_sum(n: int, two_j: int, noise: NoiseModel) -> float:
    """log Σ_m 𝒟^j_{m,m} の閉形式"""
    _check_block(n, two_j)
    r = noise.r
    power = two_j + 1
    log_prefactor = float(xlogy((n - two_j) // 2, (1.0 - r) * (1.0 + r)))
    if r == 0.0:
        return log_prefactor + math.log(power)
    ratio = (1.0 - r) / (1.0 + r)
    return (log_prefactor + power * math.log1p(r)
            + math.log1p(-ratio ** power) - math.log(2.0 * r))


def multicopy_diagonal_sum(n: int, two_j: int, noise: NoiseModel) -> float:
    """Σ_m 𝒟^j_{m,m} = (1−r²)^{J−j}[(1+r)^{2j+1}−(1−r)^{2j+1}]/(2r)"""
    return float(np.exp(log_multicopy_diagonal_sum(n, two_j, noise)))


def _log_block_weights(probe: SymmetricProbe, two_j: int) -> np.ndarray:
    """log(c_m / sqrt(C(n, J−m)))"""
    n = probe.n
    two_m = np.arange(-two_j, two_j + 1, 2)
    c = probe.coeffs[(two_m + n) // 2]
    with np.errstate(divide="ignore"):
        log_c = np.log(c)
    return log_c - 0.5 * log_binomial(n, (n - two_m) // 2)


def _log_block_probability(probe: SymmetricProbe, noise: NoiseModel, two_j: int,
                           log_weights: Optional[np.ndarray] = None) -> float:
    if log_weights is None:
        log_weights = _log_block_weights(probe, two_j)
    two_m = np.arange(-two_j, two_j + 1, 2)
    log_diag = log_dephasing_coefficients(probe.n, two_j, two_m, two_m, noise)
    log_nu = math.log(multiplicity(probe.n, two_j))
    return float(log_nu + logsumexp(2.0 * log_weights + log_diag))


def block_probability(probe: SymmetricProbe, noise: NoiseModel, two_j: int) -> float:
    """p_j = ν_j Σ_m c_m²/C(n, J−m) 𝒟^j_{m,m}"""
    _check_block(probe.n, two_j)
    return float(np.exp(_log_block_probability(probe, noise, two_j)))


def _log_couplings(two_j: int, r: float) -> np.ndarray:
    if two_j == 0:
        return np.zeros(0)
    two_m = np.arange(-two_j, two_j + 1, 2)
    log_diag = _log_reduced_sum(two_j, two_m, two_m, r)
    log_off = _log_reduced_sum(two_j, two_m[:-1], two_m[1:], r)
    # (1−r²)^{J−j} は比で打ち消し合う
    return xlogy(1, r) + log_off - 0.5 * (log_diag[:-1] + log_diag[1:])


def coupling_matrix(n: int, two_j: int, noise: NoiseModel) -> BlockHamiltonian:
    """H^j の結合 a_m = 𝒟_{m,m+1}/sqrt(𝒟_{m,m}𝒟_{m+1,m+1})（プローブに依存しない）"""
    _check_block(n, two_j)
    couplings = np.exp(_log_couplings(two_j, noise.r))
    couplings.setflags(write=False)
    return BlockHamiltonian(n=n, two_j=two_j, couplings=couplings)


def build_blocks(probe: SymmetricProbe, noise: NoiseModel,
                 degenerate_tol: float = DEFAULT_DEGENERATE_TOL) -> List[DephasingBlock]:
    """デフェーズ後の状態を既約ブロックに分解（j の降順）

    Args:
        probe: 規格化済みプローブ
        noise: 雑音モデル
        degenerate_tol: p_j がこれ未満のブロックは degenerate として最適化から除外

    Returns:
        DephasingBlock のリスト
    """
    n = probe.n
    blocks = []
    for two_j in spin_values(n):
        log_weights = _log_block_weights(probe, two_j)
        log_p = _log_block_probability(probe, noise, two_j, log_weights)
        nu = multiplicity(n, two_j)
        p_j = float(np.exp(log_p))
        dim = two_j + 1

        if np.isfinite(log_p):
            log_prefactor = math.log(nu) - log_p
            two_m = np.arange(-two_j, two_j + 1, 2)
            log_diag = log_dephasing_coefficients(n, two_j, two_m, two_m, noise)
            diag = np.exp(log_prefactor + 2.0 * log_weights + log_diag)
            couplings = np.exp(_log_couplings(two_j, noise.r))
            offdiag = couplings * np.sqrt(diag[:-1] * diag[1:])
        else:
            log_prefactor = -math.inf
            diag = np.zeros(dim)
            offdiag = np.zeros(dim - 1)

        for array in (diag, offdiag, log_weights):
            array.setflags(write=False)
        blocks.append(DephasingBlock(
            n=n, two_j=two_j, p_j=p_j, nu_j=nu, diag=diag, offdiag=offdiag,
            degenerate=p_j < degenerate_tol, r=noise.r,
            log_weights=log_weights, log_prefactor=log_prefactor,
        ))
    return blocks


def build_hamiltonians(blocks: List[DephasingBlock]) -> Dict[int, BlockHamiltonian]:
    """ブロックごとの H^j（two_j をキーとする辞書）"""
    hams = {}
    for block in blocks:
        hams[block.two_j] = coupling_matrix(block.n, block.two_j, NoiseModel(block.r))
    return hams


def total_probability(blocks: List[DephasingBlock]) -> float:
    """Σ_j p_j（縮退ブロックも含む）"""
    return float(sum(block.p_j for block in blocks))
