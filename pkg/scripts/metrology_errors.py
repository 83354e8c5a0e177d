#!/usr/bin/env python3
"""
例外クラス定義
全モジュール共通。CLIは DomainError / ProbeFileError を使用エラー（終了コード2）、
それ以外の MetrologyError を数値エラー（終了コード3）として扱う
"""

from typing import Any, Dict, Optional


class MetrologyError(Exception):
    """本ツールキットの例外基底クラス"""


class DomainError(MetrologyError, ValueError):
    """引数が定義域外（スピン・磁気量子数・r・S など）"""


class OverflowGuardError(MetrologyError, OverflowError):
    """対数空間の中間値が表現可能範囲を超えた"""


class NormalizationError(MetrologyError, ValueError):
    """プローブ係数が規格化されていない、または負"""


class DegenerateBlockError(MetrologyError, ValueError):
    """確率が無視できるブロックに対する評価要求"""


class ConvergenceError(MetrologyError, RuntimeError):
    """反復計算が収束しなかった"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EnvelopeViolationError(MetrologyError, RuntimeError):
    """棄却サンプリングで密度が包絡を超えた（密度計算のバグを示す）"""


class ProbeFileError(MetrologyError, ValueError):
    """プローブJSONファイルの読み込み・スキーマエラー"""
