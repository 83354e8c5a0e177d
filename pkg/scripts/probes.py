#!/usr/bin/env python3
"""
プローブ状態モジュール
多コピー状態、最適ガウス型プローブ、J ブロック基底状態を生成するプローブ、
およびプローブJSONファイルの読み書き。

ファイル形式: {"n": <int>, "coeffs": [c_{-J}, ..., c_{J}]}（UTF-8, m の昇順）
"""

import json
import math
import os
import sys
from typing import Optional

import numpy as np

from block_solver import unconstrained_minimum
from metrology_errors import DomainError, ProbeFileError
from spin_blocks import (
    NoiseModel,
    SymmetricProbe,
    coupling_matrix,
    log_binomial,
    log_dephasing_coefficients,
)


# これ以上ノルムがずれていたら読み込み時に警告する
NORM_WARNING_TOL = 1e-6


def _normalized(log_coeffs: np.ndarray) -> np.ndarray:
    shifted = np.exp(log_coeffs - np.max(log_coeffs))
    return shifted / np.linalg.norm(shifted)


def multicopy(n: int) -> SymmetricProbe:
    """赤道面の同一コピー状態: c_m = sqrt(C(n, J−m)/2^n)"""
    if n < 1:
        raise DomainError(f"n は正の整数で指定してください: n={n}")
    two_m = np.arange(-n, n + 1, 2)
    log_c = 0.5 * (log_binomial(n, (n - two_m) // 2) - n * math.log(2.0))
    return SymmetricProbe(n=n, coeffs=_normalized(log_c), label="multicopy")


def optimal_gaussian(n: int, r: float) -> SymmetricProbe:
    """c_m ∝ cos(mπ/(n+2)) exp(−sqrt((1−r²)/(r² n³)) m²)"""
    if n < 1:
        raise DomainError(f"n は正の整数で指定してください: n={n}")
    if not 0.0 < r <= 1.0:
        raise DomainError(f"r は (0, 1] で指定してください: r={r}")
    m = np.arange(-n, n + 1, 2) / 2
    width = math.sqrt((1.0 - r * r) / (r * r * n ** 3))
    coeffs = np.cos(m * math.pi / (n + 2)) * np.exp(-width * m * m)
    return SymmetricProbe(n=n, coeffs=coeffs / np.linalg.norm(coeffs), label="optimal")


def ground_profile_probe(n: int, r: float) -> SymmetricProbe:
    """デフェーズ後の J ブロックがちょうど H^J の基底状態になるプローブ

    c_m ∝ ξ^J_m sqrt(C(n, J−m) / 𝒟^J_{m,m})
    """
    if not 0.0 < r <= 1.0:
        raise DomainError(f"r は (0, 1] で指定してください: r={r}")
    noise = NoiseModel(r)
    _, xi = unconstrained_minimum(coupling_matrix(n, n, noise))
    two_m = np.arange(-n, n + 1, 2)
    log_d = log_dephasing_coefficients(n, n, two_m, two_m, noise)
    with np.errstate(divide="ignore"):
        log_c = np.log(xi) + 0.5 * (log_binomial(n, (n - two_m) // 2) - log_d)
    return SymmetricProbe(n=n, coeffs=_normalized(log_c), label="ground")


def from_file(path: str) -> SymmetricProbe:
    """プローブJSONを読み込む（規格化されていなければ正規化して警告）"""
    if not os.path.exists(path):
        raise ProbeFileError(f"プローブファイルが見つかりません: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ProbeFileError(f"プローブファイルのJSONが不正です: {path} ({e})") from e

    if not isinstance(data, dict) or "n" not in data or "coeffs" not in data:
        raise ProbeFileError(f"プローブファイルには n と coeffs が必要です: {path}")
    n = data["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ProbeFileError(f"n は正の整数で指定してください: {n!r}")
    try:
        coeffs = np.asarray(data["coeffs"], dtype=float)
    except (TypeError, ValueError) as e:
        raise ProbeFileError(f"coeffs は数値の配列で指定してください: {path}") from e
    if coeffs.shape != (n + 1,):
        raise ProbeFileError(f"coeffs の長さは n+1={n + 1} が必要です: {coeffs.shape}")
    if not np.all(np.isfinite(coeffs)):
        raise ProbeFileError("coeffs に有限でない値が含まれています")
    if np.any(coeffs < 0):
        raise ProbeFileError(f"負の係数は受け付けません: min={coeffs.min():.3e}")

    norm = float(np.linalg.norm(coeffs))
    if norm == 0.0:
        raise ProbeFileError("coeffs がすべて 0 です")
    if abs(norm ** 2 - 1.0) > NORM_WARNING_TOL:
        print(f"⚠️ プローブを正規化しました: Σc²={norm ** 2:.6g} ({path})", file=sys.stderr)
    label = data.get("label") or os.path.splitext(os.path.basename(path))[0]
    return SymmetricProbe(n=n, coeffs=coeffs / norm, label=str(label))


def to_file(probe: SymmetricProbe, path: str, label: Optional[str] = None):
    """プローブJSONを書き出す"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    data = {
        "n": probe.n,
        "coeffs": [float(c) for c in probe.coeffs],
        "label": label or probe.label,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)


def make_probe(kind: str, n: int, r: Optional[float] = None) -> SymmetricProbe:
    """名前からプローブを生成（multicopy / optimal / ground）"""
    if kind == "multicopy":
        return multicopy(n)
    if r is None:
        raise DomainError(f"プローブ {kind} には r が必要です")
    if kind == "optimal":
        return optimal_gaussian(n, r)
    if kind == "ground":
        return ground_profile_probe(n, r)
    raise DomainError(f"不明なプローブ種別です: {kind}")
