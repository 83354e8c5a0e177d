#!/usr/bin/env python3
"""
検証用オラクルモジュール
小さな n について 2^n 次元の計算基底で直接計算し、スピン基底の結果と照合する。
あわせてブロック構造を使った半正定値計画（SDP）の主・双対評価を行う。

計算基底のビット b_k = 0 がスピン上向き（m = J − |b|）。
"""

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from block_solver import (
    BlockSolution,
    lowest_eigenpair,
    obstacle_profile,
    restricted_couplings,
    support_minimum,
    top_multiplier,
)
from metrology_errors import ConvergenceError, DomainError
from spin_blocks import (
    BlockHamiltonian,
    DephasingBlock,
    NoiseModel,
    SymmetricProbe,
    build_blocks,
    build_hamiltonians,
    log_binomial,
    multiplicity,
    spin_values,
)
from tradeoff import allocate, filtered_uncertainty, solution_filters


MAX_DENSE_QUBITS = 12
DEFAULT_SDP_TOL = 1e-5
DEFAULT_SDP_ITERATIONS = 2000


@dataclass(frozen=True)
class SdpCertificate:
    """SDP の実行可能値（上界）と双対下界"""
    primal: float
    dual: float
    gap: float
    iterations: int
    converged: bool


def _qubits(dim: int) -> int:
    n = int(round(math.log2(dim)))
    if 2 ** n != dim or n < 1:
        raise DomainError(f"次元 {dim} は 2^n ではありません")
    if n > MAX_DENSE_QUBITS:
        raise DomainError(f"計算基底での評価は n ≤ {MAX_DENSE_QUBITS} に限ります: n={n}")
    return n


def popcount(values: np.ndarray, n: int) -> np.ndarray:
    """各整数の 1 のビット数"""
    values = np.asarray(values, dtype=np.int64)
    count = np.zeros_like(values)
    for k in range(n):
        count += (values >> k) & 1
    return count


def hamming_weights(n: int) -> np.ndarray:
    return popcount(np.arange(2 ** n), n)


def dense_dephase(state: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """一様デフェーズ: (b, b') 成分に r^{ハミング距離} を掛ける（アダマール積）"""
    state = np.asarray(state)
    if state.ndim != 2 or state.shape[0] != state.shape[1]:
        raise DomainError(f"密度行列は正方行列で指定してください: {state.shape}")
    n = _qubits(state.shape[0])
    index = np.arange(2 ** n)
    distance = popcount(np.bitwise_xor.outer(index, index), n)
    return state * noise.r ** distance


def _density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi)
    if psi.ndim == 1:
        return np.outer(psi, np.conj(psi))
    return psi


def brute_uncertainty(psi: np.ndarray, omega: np.ndarray, noise: NoiseModel) -> Tuple[float, float]:
    """計算基底での (σ², S)

    S  = Σ Ω_{b,b'} ρ_{b',b} δ_{|b'|,|b|}
    σ² = 2 − (2/S) Re Σ Ω_{b,b'} ρ_{b',b} δ_{|b'|,|b|+1}
    psi は状態ベクトルまたは密度行列。S = 0 のとき σ² は nan。
    """
    rho = dense_dephase(_density(psi), noise)
    omega = np.asarray(omega)
    if omega.shape != rho.shape:
        raise DomainError(f"シードの形状 {omega.shape} が状態 {rho.shape} と一致しません")
    n = _qubits(rho.shape[0])
    weight = hamming_weights(n)
    products = omega * rho.T
    same = weight[:, None] == weight[None, :]
    shifted = weight[None, :] == weight[:, None] + 1
    success = float(np.real(np.sum(products[same])))
    overlap = float(np.real(np.sum(products[shifted])))
    if success <= 0.0:
        return float("nan"), 0.0
    return 2.0 - 2.0 * overlap / success, success


def _lower(vector: np.ndarray, n: int) -> np.ndarray:
    """J₋ = Σ_k |1⟩⟨0|_k"""
    index = np.arange(2 ** n)
    out = np.zeros_like(vector)
    for k in range(n):
        up = index[((index >> k) & 1) == 0]
        out[up | (1 << k)] += vector[up]
    return out


def spin_basis(n: int) -> Dict[int, np.ndarray]:
    """|j, m, α⟩ の計算基底表示

    Returns:
        two_j → 形状 (ν_j, 2j+1, 2^n) の配列（m は昇順）
    """
    if not 1 <= n <= MAX_DENSE_QUBITS:
        raise DomainError(f"n は 1..{MAX_DENSE_QUBITS} で指定してください: n={n}")
    weight = hamming_weights(n)
    basis = {}
    for two_j in spin_values(n):
        ones = (n - two_j) // 2
        sector = np.flatnonzero(weight == ones)
        if ones == 0:
            highest = np.ones((1, 1))
        else:
            target = {int(b): i for i, b in enumerate(np.flatnonzero(weight == ones - 1))}
            raise_op = np.zeros((len(target), sector.size))
            for col, b in enumerate(sector):
                for k in range(n):
                    if (b >> k) & 1:
                        raise_op[target[int(b) ^ (1 << k)], col] = 1.0
            highest = null_space(raise_op)
        nu = multiplicity(n, two_j)
        if highest.shape[1] != nu:
            raise ConvergenceError(f"最高ウェイト状態の数が ν_j={nu} と一致しません",
                                   {"two_j": two_j, "found": highest.shape[1]})

        vectors = np.zeros((nu, two_j + 1, 2 ** n))
        for alpha in range(nu):
            state = np.zeros(2 ** n)
            state[sector] = highest[:, alpha]
            two_m = two_j
            vectors[alpha, -1] = state
            for level in range(two_j, 0, -1):
                j, m = two_j / 2, two_m / 2
                state = _lower(state, n) / math.sqrt(j * (j + 1) - m * (m - 1))
                two_m -= 2
                vectors[alpha, level - 1] = state
        basis[two_j] = vectors
    return basis


def dense_symmetric_state(probe: SymmetricProbe) -> np.ndarray:
    """対称プローブを 2^n ベクトルに埋め込む: ψ_b = c_{J−|b|} / sqrt(C(n, |b|))"""
    n = probe.n
    weight = hamming_weights(n)
    if n > MAX_DENSE_QUBITS:
        raise DomainError(f"計算基底での評価は n ≤ {MAX_DENSE_QUBITS} に限ります: n={n}")
    coeffs = np.asarray(probe.coeffs)[n - weight]
    return coeffs * np.exp(-0.5 * log_binomial(n, weight))


def seed_from_solutions(n: int, solutions: Dict[int, BlockSolution],
                        basis: Optional[Dict[int, np.ndarray]] = None) -> np.ndarray:
    """Ω = Σ_{j,α} (Σ_m f_m |j m α⟩)(Σ_m' f_m' ⟨j m' α|)（解のないブロックは 0）"""
    basis = basis or spin_basis(n)
    omega = np.zeros((2 ** n, 2 ** n))
    for two_j, sol in solutions.items():
        vectors = np.asarray(sol.filter_f) @ basis[two_j]
        omega += vectors.T @ vectors
    return omega


def canonical_seed(n: int, basis: Optional[Dict[int, np.ndarray]] = None) -> np.ndarray:
    """決定論的な正準シード（全ブロックで f ≡ 1）"""
    basis = basis or spin_basis(n)
    omega = np.zeros((2 ** n, 2 ** n))
    for vectors in basis.values():
        summed = vectors.sum(axis=1)
        omega += summed.T @ summed
    return omega


def dense_block_entries(rho: np.ndarray, n: int,
                        basis: Optional[Dict[int, np.ndarray]] = None) -> Dict[int, Tuple[float, np.ndarray]]:
    """密度行列から (p_j, ρ^j) を取り出す（ρ^j は ν_j 個のコピーの和を p_j で割ったもの）"""
    basis = basis or spin_basis(n)
    entries = {}
    for two_j, vectors in basis.items():
        block = sum(v @ rho @ v.T for v in vectors)
        p_j = float(np.real(np.trace(block)))
        normalized = block / p_j if p_j > 0 else np.zeros_like(block)
        entries[two_j] = (p_j, np.real(normalized))
    return entries


def _permutation_maps(n: int) -> List[np.ndarray]:
    index = np.arange(2 ** n)
    bits = [(index >> k) & 1 for k in range(n)]
    maps = []
    for perm in itertools.permutations(range(n)):
        mapped = np.zeros_like(index)
        for k, target in enumerate(perm):
            mapped |= bits[k] << target
        maps.append(mapped)
    return maps


def symmetrize(psi: np.ndarray, omega: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """任意の (ψ, Ω) を (σ², S) を保ったまま対称な組に写す

    ψ_b = ψ_β φ_b（β = |b|, φ は各重みセクタで規格化）と分解し、
    ψ^sym = Σ_β ψ_β |D_β⟩、Ω^sym = 置換平均 of Ω ∘ conj(φ̃ φ̃†)（φ̃_b = sqrt(C(n,β)) φ_b）
    """
    psi = np.asarray(psi)
    n = _qubits(psi.size)
    weight = hamming_weights(n)
    binom = np.exp(log_binomial(n, weight))
    psi_sym = np.zeros(psi.size, dtype=psi.dtype)
    phi = np.zeros(psi.size, dtype=psi.dtype)
    for beta in range(n + 1):
        sector = weight == beta
        amplitude = float(np.linalg.norm(psi[sector]))
        dicke = 1.0 / math.sqrt(math.comb(n, beta))
        if amplitude > 0:
            phi[sector] = psi[sector] / amplitude
        else:
            phi[sector] = dicke
        psi_sym[sector] = amplitude * dicke
    phi_tilde = np.sqrt(binom) * phi
    weighted = np.asarray(omega) * np.conj(np.outer(phi_tilde, np.conj(phi_tilde)))

    maps = _permutation_maps(n)
    omega_sym = sum(weighted[np.ix_(m, m)] for m in maps) / len(maps)
    return psi_sym, omega_sym


def random_state(n: int, rng: np.random.Generator, complex_valued: bool = False) -> np.ndarray:
    """ランダムな n 量子ビット純粋状態"""
    psi = rng.normal(size=2 ** n)
    if complex_valued:
        psi = psi + 1j * rng.normal(size=2 ** n)
    return psi / np.linalg.norm(psi)


def random_seed(dim: int, rng: np.random.Generator, complex_valued: bool = False) -> np.ndarray:
    """0 ≤ Ω ≤ 1 を満たすランダムなシード"""
    a = rng.normal(size=(dim, dim))
    if complex_valued:
        a = a + 1j * rng.normal(size=(dim, dim))
    omega = a @ np.conj(a.T)
    return omega * rng.uniform(0.1, 1.0) / np.linalg.eigvalsh(omega).max()


def random_probe(n: int, rng: np.random.Generator) -> SymmetricProbe:
    """非負係数のランダムな対称プローブ"""
    coeffs = np.abs(rng.normal(size=n + 1))
    return SymmetricProbe(n=n, coeffs=coeffs / np.linalg.norm(coeffs), label="random")


def basis_equivalence(probe: SymmetricProbe, noise: NoiseModel, S: float = 1.0,
                      basis: Optional[Dict[int, np.ndarray]] = None) -> Dict[str, float]:
    """スピン基底と計算基底の (σ², S) を比較"""
    blocks = build_blocks(probe, noise)
    point = allocate(blocks, build_hamiltonians(blocks), S)
    sigma2_spin, S_spin = filtered_uncertainty(blocks, solution_filters(point.solutions))
    omega = seed_from_solutions(probe.n, point.solutions, basis)
    sigma2_dense, S_dense = brute_uncertainty(dense_symmetric_state(probe), omega, noise)
    return {
        "sigma2_spin": sigma2_spin,
        "S_spin": S_spin,
        "sigma2_dense": sigma2_dense,
        "S_dense": S_dense,
        "max_abs_diff": max(abs(sigma2_spin - sigma2_dense), abs(S_spin - S_dense)),
    }


@dataclass
class _Chain:
    upper: np.ndarray
    couplings: np.ndarray
    offsets: List[int]
    sizes: List[int]
    lam0: List[float]


def _chain(blocks: Sequence[DephasingBlock], hams: Dict[int, BlockHamiltonian]) -> _Chain:
    """生きているブロックを結合 0 でつないだ一本の鎖（上限 u = sqrt(p_j d)）"""
    uppers, couplings, offsets, sizes, lam0 = [], [], [], [], []
    offset = 0
    for block in blocks:
        if block.degenerate:
            continue
        ham = hams[block.two_j]
        uppers.append(np.sqrt(block.p_j * np.asarray(block.diag)))
        couplings.extend([np.asarray(ham.couplings), np.zeros(1)])
        offsets.append(offset)
        sizes.append(block.dim)
        lam0.append(support_minimum(block, ham)[0])
        offset += block.dim
    if not uppers:
        raise DomainError("最適化可能なブロックがありません")
    return _Chain(upper=np.concatenate(uppers), couplings=np.concatenate(couplings)[:-1],
                  offsets=offsets, sizes=sizes, lam0=lam0)


def _dual_value(chain: _Chain, y: np.ndarray, capacity: np.ndarray) -> Tuple[float, np.ndarray]:
    """D(y) = min_j λ_min(H^j + Diag y^j) − Σ y c と超勾配"""
    best = math.inf
    best_vector = None
    support = chain.upper > 0
    for offset, size in zip(chain.offsets, chain.sizes):
        window = slice(offset, offset + size)
        keep = support[window]
        if not keep.any():
            continue
        value, vector = lowest_eigenpair(
            2.0 + y[window][keep], -restricted_couplings(chain.couplings[offset:offset + size - 1], keep)
        )
        if value < best:
            best = value
            best_vector = np.zeros_like(y)
            best_vector[offset + np.flatnonzero(keep)] = vector
    return best - float(y @ capacity), best_vector ** 2 - capacity


def sdp_crosscheck(blocks: Sequence[DephasingBlock], hams: Dict[int, BlockHamiltonian], S: float,
                   tol: float = DEFAULT_SDP_TOL,
                   max_iter: int = DEFAULT_SDP_ITERATIONS) -> SdpCertificate:
    """min tr(HΛ) s.t. Λ ≥ 0, trΛ = 1, Λ_mm ≤ p_j d_m / S の主値と双対下界

    主値は結合した鎖の障害物問題（Λ の二分法と端点の凸結合）から作る実行可能点、
    双対は KKT 乗数から初期化した y を射影超勾配法で改善したもの。
    """
    if not 0.0 < S <= 1.0:
        raise DomainError(f"成功確率 S は (0, 1] で指定してください: S={S}")
    chain = _chain(blocks, hams)
    upper, couplings = chain.upper, chain.couplings
    capacity = upper ** 2 / S

    def hamiltonian(x: np.ndarray) -> np.ndarray:
        out = 2.0 * x
        out[:-1] -= couplings * x[1:]
        out[1:] -= couplings * x[:-1]
        return out

    lam_top = top_multiplier(upper, couplings)
    if S >= float(upper @ upper) * (1.0 - 1e-15):
        eta = upper.copy()
        lam = lam_top
        primal = float(eta @ hamiltonian(eta)) / S
    else:
        lam_lo, lam_hi = min(chain.lam0) - 1e-12, lam_top
        lo = obstacle_profile(upper, couplings, lam_lo)
        hi = obstacle_profile(upper, couplings, lam_hi)
        for _ in range(200):
            if lam_hi - lam_lo <= 4 * np.finfo(float).eps * max(1.0, abs(lam_hi)):
                break
            lam_mid = 0.5 * (lam_lo + lam_hi)
            mid = obstacle_profile(upper, couplings, lam_mid)
            if mid.success < S:
                lam_lo, lo = lam_mid, mid
            else:
                lam_hi, hi = lam_mid, mid
        theta = 0.0 if hi.success <= lo.success else (hi.success - S) / (hi.success - lo.success)
        primal = (theta * lo.objective + (1.0 - theta) * hi.objective) / S
        eta, lam = hi.eta, lam_hi

    active = (eta > 0) & (eta >= upper * (1.0 - 1e-12)) & (upper > 0)
    y = np.zeros_like(upper)
    with np.errstate(divide="ignore", invalid="ignore"):
        y[active] = -(hamiltonian(eta) - lam * eta)[active] / eta[active]
    y = np.maximum(y, 0.0)

    dual, grad = _dual_value(chain, y, capacity)
    scale = max(1.0, abs(primal))
    iterations = 0
    step = 0.1 * scale
    while primal - dual > tol * scale and iterations < max_iter:
        iterations += 1
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            break
        y = np.maximum(y + step / math.sqrt(iterations) * grad / norm, 0.0)
        value, candidate = _dual_value(chain, y, capacity)
        if value > dual:
            dual = value
        grad = candidate
    gap = primal - dual
    return SdpCertificate(primal=float(primal), dual=float(dual), gap=float(gap),
                          iterations=iterations, converged=bool(gap <= tol * scale))
