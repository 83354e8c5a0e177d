#!/usr/bin/env python3
"""
ブロック内最適化モジュール
各スピンブロックについて σ²_j(s_j) = min ⟨ξ|H^j|ξ⟩ を解く。
  制約: ‖ξ‖ = 1, 0 ≤ ξ_m ≤ sqrt(d_m / s_j)

η = sqrt(s_j)·ξ と置くと、乗数 Λ を固定した部分問題
  min ηᵀ(H − Λ)η  s.t. 0 ≤ η ≤ sqrt(d)
は障害物問題になる。H − Λ は Z 行列なので、全制約活性の点から
方策反復（Howard 法）で単調に最大解へ収束する。
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal, solve_banded
from scipy.optimize import brentq

from metrology_errors import ConvergenceError, DegenerateBlockError, DomainError
from spin_blocks import BlockHamiltonian, DephasingBlock, apply_adjacency


DEFAULT_ACTIVE_TOL = 1e-13
DEFAULT_SECULAR_TOL = 1e-12
# s_j がブロックの Σd にこの相対差まで近ければ全成分活性とみなす
SATURATION_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class BlockSolution:
    """ブロック内最適フィルタの解"""
    two_j: int
    s_j: float
    sigma2_j: float
    xi: np.ndarray
    filter_f: np.ndarray
    coincidence_mask: np.ndarray
    multiplier: float
    kkt_multipliers: np.ndarray

    @property
    def j(self) -> float:
        return self.two_j / 2


@dataclass(frozen=True, eq=False)
class MultiplierResponse:
    """乗数 Λ 固定時の障害物問題の解"""
    multiplier: float
    eta: np.ndarray
    active: np.ndarray
    success: float
    objective: float


def lowest_eigenpair(diagonal: np.ndarray, offdiag: np.ndarray) -> Tuple[float, np.ndarray]:
    """対称三重対角行列の最小固有対（Sturm 二分法 + 逆反復）"""
    if diagonal.size == 1:
        return float(diagonal[0]), np.ones(1)
    try:
        values, vectors = eigh_tridiagonal(
            diagonal, offdiag, select="i", select_range=(0, 0), lapack_driver="stebz"
        )
    except LinAlgError as e:
        raise ConvergenceError(f"三重対角固有値計算が収束しませんでした: {e}",
                               {"dim": int(diagonal.size)}) from e
    vector = np.abs(vectors[:, 0])
    return float(values[0]), vector / np.linalg.norm(vector)


def unconstrained_minimum(ham: BlockHamiltonian) -> Tuple[float, np.ndarray]:
    """H^j の最小固有値と非負の固有ベクトル（Perron ベクトル）"""
    if ham.dim < 1:
        raise DomainError("ブロック次元が 0 です")
    value, vector = lowest_eigenpair(np.full(ham.dim, 2.0), -np.asarray(ham.couplings))
    residual = np.linalg.norm(ham.apply(vector) - value * vector)
    if residual > 1e-10:
        raise ConvergenceError(
            f"固有ベクトルの残差が大きすぎます: {residual:.3e}",
            {"dim": ham.dim, "residual": residual},
        )
    return value, vector


def restricted_couplings(couplings: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """部分集合 keep に制限した三重対角行列の非対角成分（隣接しない組は 0）"""
    idx = np.flatnonzero(keep)
    if idx.size < 2:
        return np.zeros(0)
    adjacent = np.diff(idx) == 1
    return np.where(adjacent, couplings[np.minimum(idx[:-1], couplings.size - 1)], 0.0)


def support_minimum(block: DephasingBlock, ham: BlockHamiltonian) -> Tuple[float, np.ndarray]:
    """d_m > 0 の台に制限した最小固有対（台の外は 0 を埋める）"""
    support = np.asarray(block.diag) > 0
    if support.all():
        return unconstrained_minimum(ham)
    if not support.any():
        raise DegenerateBlockError(f"ブロック 2j={block.two_j} の対角成分がすべて 0 です")
    value, sub = lowest_eigenpair(
        np.full(int(support.sum()), 2.0), -restricted_couplings(np.asarray(ham.couplings), support)
    )
    vector = np.zeros(block.dim)
    vector[support] = sub
    return value, vector


def deterministic_block_variance(block: DephasingBlock) -> float:
    """f ≡ 1 のときの σ²_j = 2 − 2Σ_m o_m"""
    if block.degenerate:
        raise DegenerateBlockError(f"縮退ブロック 2j={block.two_j} (p_j={block.p_j:.3e}) は評価できません")
    return float(2.0 - 2.0 * np.sum(block.offdiag))


def block_objective(ham: BlockHamiltonian, xi: np.ndarray) -> float:
    """⟨ξ|H^j|ξ⟩"""
    return float(xi @ ham.apply(xi))


def critical_block_success(block: DephasingBlock, xi: np.ndarray) -> float:
    """s_j* = min_m d_m / ξ_m²（ξ_m = 0 の成分は制約なし）"""
    xi = np.asarray(xi, dtype=float)
    positive = xi > 0
    if not positive.any():
        raise DomainError("ξ がゼロベクトルです")
    ratio = np.asarray(block.diag)[positive] / xi[positive] ** 2
    return float(min(1.0, ratio.min()))


def top_multiplier(upper: np.ndarray, couplings: np.ndarray) -> float:
    """全制約が活性になる乗数 max_m (H u)_m / u_m"""
    support = upper > 0
    hu = 2.0 * upper - apply_adjacency(couplings, upper)
    return float(np.max(hu[support] / upper[support]))


def _free_system(couplings: np.ndarray, free: np.ndarray, lam: float) -> np.ndarray:
    """(H_FF − Λ) の帯行列表現（solve_banded 用）"""
    size = int(free.sum())
    band = np.zeros((3, size))
    band[1, :] = 2.0 - lam
    off = -restricted_couplings(couplings, free)
    band[0, 1:] = off
    band[2, :-1] = off
    return band


def obstacle_profile(upper: np.ndarray, couplings: np.ndarray, lam: float,
                     tol: float = DEFAULT_ACTIVE_TOL) -> MultiplierResponse:
    """乗数 Λ 固定の障害物問題 min ηᵀ(H − Λ)η, 0 ≤ η ≤ upper を方策反復で解く

    Args:
        upper: 上限 sqrt(d_m)
        couplings: H の結合 a_m
        lam: 正規化条件の乗数 Λ
        tol: 活性判定の許容誤差

    Returns:
        MultiplierResponse（η, 活性集合, s = ‖η‖², ηᵀHη）
    """
    upper = np.asarray(upper, dtype=float)
    couplings = np.asarray(couplings, dtype=float)
    dim = upper.size
    support = upper > 0
    eta = upper.copy()
    active = np.ones(dim, dtype=bool)

    if lam < 2.0:
        for iteration in range(dim + 2):
            residual = (2.0 - lam) * eta - apply_adjacency(couplings, eta)
            policy = (residual - (eta - upper) <= tol * upper) | ~support
            if iteration > 0 and np.array_equal(policy, active):
                break
            active = policy
            free = ~active
            eta = np.where(active, upper, 0.0)
            if free.any():
                rhs = apply_adjacency(couplings, eta)[free]
                try:
                    eta_free = solve_banded((1, 1), _free_system(couplings, free, lam), rhs)
                except (LinAlgError, ValueError) as e:
                    raise ConvergenceError(
                        f"自由変数の連立方程式が解けません (Λ={lam:.15g})",
                        {"iteration": iteration, "free": int(free.sum())},
                    ) from e
                if np.any(eta_free < -1e-10 * max(1.0, float(np.abs(eta_free).max()))):
                    raise ConvergenceError(
                        f"自由変数が負になりました (Λ={lam:.15g})",
                        {"iteration": iteration, "min": float(eta_free.min())},
                    )
                eta[free] = np.maximum(eta_free, 0.0)
        else:
            raise ConvergenceError(
                f"活性集合の反復が {dim + 2} 回で収束しませんでした (Λ={lam:.15g})",
                {"dim": dim, "active": int(active.sum())},
            )

    objective = float(2.0 * eta @ eta - eta @ apply_adjacency(couplings, eta))
    return MultiplierResponse(
        multiplier=float(lam), eta=eta, active=active & support,
        success=float(eta @ eta), objective=objective,
    )


def solve_at_multiplier(block: DephasingBlock, ham: BlockHamiltonian, lam: float,
                        tol: float = DEFAULT_ACTIVE_TOL) -> MultiplierResponse:
    """ブロックの乗数 Λ に対する最適応答"""
    return obstacle_profile(np.sqrt(block.diag), ham.couplings, lam, tol)


def _secular_polish(upper: np.ndarray, couplings: np.ndarray, active: np.ndarray,
                    target: float, lam_guess: float,
                    tol: float) -> Optional[Tuple[np.ndarray, float]]:
    """活性集合を固定し ‖η_F(Λ)‖² = target となる Λ を永年方程式で求める"""
    support = upper > 0
    free = ~active & support
    if not free.any() or target <= 0:
        return None
    eta_active = np.where(active, upper, 0.0)
    rhs = apply_adjacency(couplings, eta_active)[free]
    if not np.any(rhs > 0):
        return None
    lam_free, _ = lowest_eigenpair(np.full(int(free.sum()), 2.0),
                                    -restricted_couplings(couplings, free))
    if lam_guess >= lam_free:
        return None

    def solve(log_t: float) -> np.ndarray:
        return solve_banded((1, 1), _free_system(couplings, free, lam_free - np.exp(log_t)), rhs)

    def secular(log_t: float) -> float:
        return float(np.log(np.sum(solve(log_t) ** 2)) - np.log(target))

    center = np.log(lam_free - lam_guess)
    lo, hi = center - 0.5, center + 0.5
    for _ in range(200):
        if secular(lo) > 0:
            break
        lo -= 1.0
    else:
        return None
    for _ in range(200):
        if secular(hi) < 0:
            break
        hi += 1.0
    else:
        return None
    log_t = brentq(secular, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    eta_free = solve(log_t)
    if np.any(eta_free < 0) or np.any(eta_free > upper[free] * (1 + 1e-12)):
        return None
    eta = eta_active.copy()
    eta[free] = eta_free
    return eta, float(lam_free - np.exp(log_t))


def _saturated(upper: np.ndarray, couplings: np.ndarray, s_j: float) -> bool:
    """s_j が全成分活性（f ≡ 1）で達成できる上限に届いているか"""
    total = float(upper @ upper)
    if s_j >= total * (1.0 - SATURATION_RTOL):
        return True
    return obstacle_profile(upper, couplings, top_multiplier(upper, couplings)).success <= s_j


def constrained_block_solve(block: DephasingBlock, ham: BlockHamiltonian, s_j: float,
                            tol: float = DEFAULT_SECULAR_TOL) -> BlockSolution:
    """制約付き最小化 min ⟨ξ|H|ξ⟩ s.t. ‖ξ‖=1, 0 ≤ ξ_m ≤ sqrt(d_m/s_j) の KKT 点

    s_j ≤ s_j* では無制約の Perron ベクトルをそのまま返し（実効 s_j は変えない）、
    s_j = 1 では決定論的プロファイル ξ = sqrt(d) を返す。
    """
    if not 0.0 < s_j <= 1.0:
        raise DomainError(f"ブロック成功確率 s_j は (0, 1] で指定してください: s_j={s_j}")
    if block.degenerate:
        raise DegenerateBlockError(f"縮退ブロック 2j={block.two_j} (p_j={block.p_j:.3e}) は最適化できません")

    diag = np.asarray(block.diag)
    upper = np.sqrt(diag)
    couplings = np.asarray(ham.couplings)
    lam0, perron = support_minimum(block, ham)
    s_star = critical_block_success(block, perron)

    if s_j <= s_star:
        xi = perron
        mask = np.zeros(block.dim, dtype=bool)
        lam = lam0
    elif _saturated(upper, couplings, s_j):
        xi = upper / np.linalg.norm(upper)
        mask = np.ones(block.dim, dtype=bool)
        lam = top_multiplier(upper, couplings)
    else:
        lam_top = top_multiplier(upper, couplings)

        def excess(lam: float) -> float:
            if lam <= lam0:
                return s_star - s_j
            return obstacle_profile(upper, couplings, lam).success - s_j

        lam = brentq(excess, lam0, lam_top, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        response = obstacle_profile(upper, couplings, lam)
        mask = response.active
        polished = _secular_polish(upper, couplings, mask, s_j - float(diag[mask].sum()), lam, tol)
        if polished is None:
            eta = response.eta
        else:
            eta, lam = polished
        xi = np.minimum(eta / np.linalg.norm(eta), upper / np.sqrt(s_j))
        # 正規化は最後（上限の超過は丸め誤差の範囲）
        xi /= np.linalg.norm(xi)

    sigma2 = block_objective(ham, xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(diag > 0, xi * np.sqrt(s_j / diag), 0.0)
    f = np.clip(f, 0.0, 1.0)
    kkt = np.where(mask, lam * xi - ham.apply(xi), 0.0)

    for array in (xi, f, mask, kkt):
        array.setflags(write=False)
    return BlockSolution(
        two_j=block.two_j, s_j=float(s_j), sigma2_j=sigma2, xi=xi, filter_f=f,
        coincidence_mask=mask, multiplier=float(lam), kkt_multipliers=kkt,
    )
