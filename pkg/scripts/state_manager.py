#!/usr/bin/env python3
"""
状態管理モジュール
run_metrology.py の実行履歴（出力ファイルの SHA-256）を data/state.json に記録し、
同じ呼び出しでバイト単位に同一の出力が得られるかを確認する
"""

import hashlib
import os
import json
from datetime import datetime, timezone, timedelta
from typing import Dict, Optional


def file_digest(path: str) -> str:
    """ファイルの SHA-256（16進）"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b''):
            digest.update(chunk)
    return digest.hexdigest()


def text_digest(text: str) -> str:
    """文字列（UTF-8）の SHA-256"""
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


class StateManager:
    """実行履歴の管理（state.json）"""

    def __init__(self, state_path: str):
        """
        Args:
            state_path: 状態ファイルのパス（例: "data/state.json"）
        """
        self.state_path = state_path
        self.state = self._load()

    def _load(self) -> Dict:
        """状態ファイルを読み込み"""
        if os.path.exists(self.state_path):
            with open(self.state_path, 'r', encoding='utf-8') as f:
                state = json.load(f)
            state.setdefault("runs", {})
            state.setdefault("meta", {"last_run_at": None, "version": "1.0.0"})
            return state
        return {
            "runs": {},
            "meta": {"last_run_at": None, "version": "1.0.0"}
        }

    def save(self):
        """状態ファイルを保存"""
        self.state["meta"]["last_run_at"] = datetime.now(timezone.utc).isoformat()
        directory = os.path.dirname(self.state_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(self.state_path, 'w', encoding='utf-8') as f:
            json.dump(self.state, f, indent=2, ensure_ascii=False)

    def get_run(self, invocation: str) -> Optional[Dict]:
        """呼び出し文字列に対応する記録を取得"""
        return self.state["runs"].get(invocation)

    def check_reproducible(self, invocation: str, digest: str) -> Optional[bool]:
        """前回の出力と同一か（初回は None）"""
        run = self.get_run(invocation)
        if run is None:
            return None
        return run.get("digest") == digest

    def record_run(self, command: str, invocation: str, output_path: Optional[str], digest: str):
        """実行結果を記録"""
        self.state["runs"][invocation] = {
            "command": command,
            "output": output_path,
            "digest": digest,
            "recorded_at": datetime.now(timezone.utc).isoformat(),
        }

    def cleanup_old_runs(self, days: int = 30):
        """古い実行履歴をクリーンアップ

        Args:
            days: 保持する日数（デフォルト: 30日）
        """
        cutoff = (datetime.now(timezone.utc) - timedelta(days=days)).isoformat()
        self.state["runs"] = {
            invocation: run
            for invocation, run in self.state["runs"].items()
            if run.get("recorded_at", "") > cutoff
        }
