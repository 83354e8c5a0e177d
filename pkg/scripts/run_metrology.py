#!/usr/bin/env python3
"""
棄権付き位相推定の数値計算スクリプト
各サブコマンドが図や上限の再現用データ（CSV / JSON）を出力する。
進捗表示は stderr に出し、データ本体はバイト単位で再現可能にする。

終了コード: 0 成功 / 2 使用法・定義域エラー / 3 数値計算の失敗
"""

import argparse
import csv
import io
import json
import math
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from asymptotics import finite_S_approx, fit_loglog_slope, potential, ultimate_bound
from block_solver import constrained_block_solve
from metrology_errors import DomainError, MetrologyError, ProbeFileError
from oracle import MAX_DENSE_QUBITS, basis_equivalence, random_probe, sdp_crosscheck, spin_basis
from probes import from_file, make_probe, to_file
from scavenge import GENTLE_SLACK, scavenge_curve
from simulate import monte_carlo_loss, worst_case_check
from spin_blocks import NoiseModel, SymmetricProbe, build_blocks, build_hamiltonians
from state_manager import StateManager, file_digest, text_digest
from tradeoff import (
    allocate,
    curve_from_blocks,
    plateau_success,
    s_bar_grid,
    ultimate_postselect,
)


__version__ = "1.0.0"

THREADS_ENV = "ABSTAIN_METROLOGY_THREADS"
ORACLE_MAX_N = 6

Rows = List[Dict[str, Any]]


def _get_default_config() -> Dict[str, Any]:
    """config.yaml がない場合の既定値"""
    return {
        "tolerances": {
            "degenerate_block": 1e-14,
            "secular_root": 1e-12,
            "allocation_gap": 1e-6,
            "sdp_gap": 1e-5,
        },
        "grids": {
            "s_points": 50,
            "quadrature_factor": 16,
            "envelope_factor": 8,
            "envelope_margin": 1.05,
        },
        "simulation": {"default_samples": 100000, "chunk_size": 50000},
        "runtime": {"threads": 1},
        "state": {"enabled": True, "path": "data/state.json", "retention_days": 30},
    }


def load_config(path: Optional[str]) -> Dict[str, Any]:
    """設定ファイルを読み込み、既定値に上書きする"""
    config = _get_default_config()
    if path and os.path.exists(path):
        with open(path, 'r', encoding='utf-8') as f:
            loaded = yaml.safe_load(f) or {}
        for section, values in loaded.items():
            if isinstance(values, dict) and isinstance(config.get(section), dict):
                config[section].update(values)
            else:
                config[section] = values
    return config


class Reporter:
    """進捗表示（stderr、--quiet で抑制）"""

    def __init__(self, quiet: bool = False):
        self.quiet = quiet

    def __call__(self, message: str):
        if not self.quiet:
            print(message, file=sys.stderr)

    def banner(self, title: str):
        self("=" * 60)
        self(title)
        self("=" * 60)


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"カンマ区切りの数値で指定してください: {text}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"カンマ区切りの整数で指定してください: {text}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=str, metavar="FILE", help="出力ファイル（省略時は stdout）")
    common.add_argument("--format", choices=["csv", "json"], default="csv", help="出力形式")
    common.add_argument("--tol", type=float, help="許容誤差をまとめて上書き")
    common.add_argument("--threads", type=int, help=f"ワーカー数（既定: ${THREADS_ENV} → config.yaml）")
    common.add_argument("--config", type=str, default="config.yaml", metavar="PATH", help="設定ファイル")
    common.add_argument("--quiet", action="store_true", help="進捗表示を抑制")
    common.add_argument("--no-state", action="store_true", help="実行履歴を記録しない")

    probe_args = argparse.ArgumentParser(add_help=False)
    probe_args.add_argument("--n", type=int, help="量子ビット数")
    probe_args.add_argument("--r", type=float, default=0.8, help="デフェーズパラメータ r")
    probe_args.add_argument("--probe", choices=["multicopy", "optimal", "ground"], default="multicopy")
    probe_args.add_argument("--probe-file", type=str, metavar="FILE", help="プローブJSON（--probe より優先）")

    parser = argparse.ArgumentParser(
        prog="run_metrology",
        description="棄権付き位相推定の精度・成功確率トレードオフ計算",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tradeoff", parents=[common, probe_args], help="σ²(S̄) 曲線")
    p.add_argument("--s-grid", type=int, help="S̄ の分割数（既定: grids.s_points）")

    p = sub.add_parser("scaling", parents=[common], help="n 依存性と漸近式")
    p.add_argument("--r", type=float, default=0.95)
    p.add_argument("--n-min", type=int, default=10)
    p.add_argument("--n-max", type=int, default=500)
    p.add_argument("--n-points", type=int, default=12)
    p.add_argument("--s-bar", type=_float_list, default=[0.0, 0.5, 0.9])
    p.add_argument("--probe", choices=["multicopy", "optimal", "ground"], default="multicopy")

    p = sub.add_parser("scavenge", parents=[common, probe_args], help="棄権側の再利用")
    p.add_argument("--s-grid", type=int, default=20)

    p = sub.add_parser("profile", parents=[common], help="ブロック内最適プロファイル")
    p.add_argument("--n", type=int, default=80)
    p.add_argument("--r", type=float, default=0.8)
    p.add_argument("--S", type=float, default=0.75, help="ブロック成功確率 s_j")
    p.add_argument("--j", type=float, default=32.0)

    p = sub.add_parser("ultimate", parents=[common], help="最大スピンへの事後選択")
    p.add_argument("--n", type=_int_list, default=[200, 500])
    p.add_argument("--r", type=_float_list, default=[0.8, 0.95])

    p = sub.add_parser("simulate", parents=[common, probe_args], help="モンテカルロ")
    p.add_argument("--S", type=float, default=0.6)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta", type=float, default=0.0)

    p = sub.add_parser("oracle-check", parents=[common], help="計算基底との照合")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--r", type=float, default=0.8)
    p.add_argument("--S", type=float, default=1.0)
    p.add_argument("--random", type=int, default=0, help="ランダムプローブの数")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("probe-gen", parents=[common], help="プローブJSONの生成")
    p.add_argument("kind", choices=["multicopy", "optimal", "ground"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--r", type=float, default=0.8)
    return parser


def resolve_threads(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    """--threads → 環境変数 → config.yaml の順"""
    if args.threads is not None:
        threads = args.threads
    elif os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            raise DomainError(f"環境変数 {THREADS_ENV} は整数で指定してください: {os.environ[THREADS_ENV]}")
    else:
        threads = int(config["runtime"].get("threads", 1))
    if threads < 1:
        raise DomainError(f"ワーカー数は 1 以上で指定してください: {threads}")
    return threads


def _tolerances(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, float]:
    """config.yaml の許容誤差（--tol は縮退判定以外を上書き）"""
    tolerances = {key: float(value) for key, value in config["tolerances"].items()}
    if args.tol is not None:
        if args.tol <= 0:
            raise DomainError(f"--tol は正の値で指定してください: {args.tol}")
        for key in tolerances:
            if key != "degenerate_block":
                tolerances[key] = args.tol
    return tolerances


def _blocks(probe: SymmetricProbe, noise: NoiseModel, tolerances: Dict[str, float]):
    return build_blocks(probe, noise, tolerances["degenerate_block"])


def _probe(args: argparse.Namespace) -> SymmetricProbe:
    if args.probe_file:
        probe = from_file(args.probe_file)
        if args.n is not None and args.n != probe.n:
            raise DomainError(f"--n={args.n} がプローブファイルの n={probe.n} と一致しません")
        return probe
    if args.n is None:
        raise DomainError("--n または --probe-file を指定してください")
    return make_probe(args.probe, args.n, args.r)


def cmd_tradeoff(args, config, report: Reporter) -> Tuple[Rows, List[str]]:
    probe = _probe(args)
    noise = NoiseModel(args.r)
    tolerances = _tolerances(args, config)
    points = args.s_grid or int(config["grids"]["s_points"])
    report(f"🔍 トレードオフ計算: n={probe.n}, r={noise.r}, probe={probe.label}, 点数={points}")
    blocks = _blocks(probe, noise, tolerances)
    hams = build_hamiltonians(blocks)
    curve = curve_from_blocks(blocks, hams, 1.0 - s_bar_grid(points), label=probe.label,
                              max_workers=resolve_threads(args, config),
                              gap_tol=tolerances["allocation_gap"],
                              secular_tol=tolerances["secular_root"])
    report(f"📊 平坦部の開始 S̄* = {1.0 - plateau_success(blocks, hams):.4f}")
    return curve.to_rows(), ["S_bar", "S", "sigma2", "n_sigma2", "gap"]


def cmd_scaling(args, config, report: Reporter) -> Tuple[Rows, List[str]]:
    if args.n_min < 1 or args.n_max < args.n_min:
        raise DomainError(f"n の範囲が不正です: {args.n_min}..{args.n_max}")
    noise = NoiseModel(args.r)
    tolerances = _tolerances(args, config)
    n_values = np.unique(np.round(np.geomspace(args.n_min, args.n_max, args.n_points)).astype(int))
    rows = []
    for n in n_values:
        n = int(n)
        report(f"🔍 n={n}")
        blocks = _blocks(make_probe(args.probe, n, args.r), noise, tolerances)
        hams = build_hamiltonians(blocks)
        exact, _ = ultimate_postselect(blocks, hams)
        for S_bar in args.s_bar:
            point = allocate(blocks, hams, 1.0 - S_bar, gap_tol=tolerances["allocation_gap"],
                             secular_tol=tolerances["secular_root"])
            rows.append({
                "n": n,
                "S_bar": S_bar,
                "sigma2": point.sigma2,
                "finite_S_approx": finite_S_approx(n, args.r, 1.0 - S_bar),
                "ultimate_exact": exact,
                "ultimate_bound": ultimate_bound(n, args.r),
            })
    if len(n_values) >= 2:
        for S_bar in args.s_bar:
            selected = [row for row in rows if row["S_bar"] == S_bar]
            slope = fit_loglog_slope([row["n"] for row in selected], [row["sigma2"] for row in selected])
            report(f"📊 S̄={S_bar}: σ² ∝ n^{slope:.3f}")
    return rows, ["n", "S_bar", "sigma2", "finite_S_approx", "ultimate_exact", "ultimate_bound"]


def cmd_scavenge(args, config, report: Reporter) -> Tuple[Rows, List[str]]:
    probe = _probe(args)
    noise = NoiseModel(args.r)
    tolerances = _tolerances(args, config)
    report(f"🔍 棄権側の再利用: n={probe.n}, r={noise.r}, 点数={args.s_grid}")
    rows = scavenge_curve(probe, noise, s_bar_grid(args.s_grid),
                          gap_tol=tolerances["allocation_gap"],
                          degenerate_tol=tolerances["degenerate_block"],
                          secular_tol=tolerances["secular_root"])
    violated = [row["S_bar"] for row in rows if row["gentle_lhs"] > row["gentle_rhs"] + GENTLE_SLACK]
    if violated:
        report(f"⚠️ 穏やかな測定の上限を満たさない点があります: S̄={violated}")
    return rows, ["S_bar", "sigma2_opt", "sigma2_bar", "sigma2_all", "sigma2_det",
                  "gentle_lhs", "gentle_rhs"]


def cmd_profile(args, config, report: Reporter) -> Tuple[Rows, List[str]]:
    two_j = int(round(2 * args.j))
    if two_j <= 0:
        raise DomainError(f"j は正の値で指定してください: j={args.j}")
    noise = NoiseModel(args.r)
    tolerances = _tolerances(args, config)
    block = next((b for b in _blocks(make_probe("multicopy", args.n), noise, tolerances)
                  if b.two_j == two_j), None)
    if block is None:
        raise DomainError(f"j={args.j} は n={args.n} のブロックではありません")
    ham = build_hamiltonians([block])[two_j]
    solution = constrained_block_solve(block, ham, args.S, tol=tolerances["secular_root"])
    report(f"🔍 プロファイル: n={args.n}, r={args.r}, j={args.j}, s_j={args.S}")
    x = block.m_values / block.j
    rows = []
    for i, m in enumerate(block.m_values):
        rows.append({
            "m": float(m),
            "x": float(x[i]),
            "phi_tilde": float(math.sqrt(block.diag[i])),
            "phi": float(solution.xi[i]),
            "V": float(potential(block.j, args.r, x[i])) if args.r > 0 else math.inf,
            "coincident": int(solution.coincidence_mask[i]),
        })
    coincident = [abs(row["x"]) for row in rows if row["coincident"]]
    if coincident:
        report(f"📊 一致集合の境界 x_c ≈ {min(coincident):.4f}")
    return rows, ["m", "x", "phi_tilde", "phi", "V", "coincident"]


def cmd_ultimate(args, config, report: Reporter) -> Tuple[Rows, List[str]]:
    tolerances = _tolerances(args, config)
    rows = []
    for r in args.r:
        noise = NoiseModel(r)
        for n in args.n:
            report(f"🔍 n={n}, r={r}")
            blocks = _blocks(make_probe("multicopy", n), noise, tolerances)
            exact, S_star = ultimate_postselect(blocks, build_hamiltonians(blocks))
            p_J = max(blocks, key=lambda b: b.two_j).p_j
            rows.append({
                "n": n,
                "r": r,
                "sigma2_ult_exact": exact,
                "sigma2_ult_formula": ultimate_bound(n, r),
                "log_pJ": math.log(p_J) if p_J > 0 else -math.inf,
                "log_sJ_star": math.log(S_star / p_J) if S_star > 0 else -math.inf,
                "log_S_star": math.log(S_star) if S_star > 0 else -math.inf,
            })
    return rows, ["n", "r", "sigma2_ult_exact", "sigma2_ult_formula", "log_pJ", "log_sJ_star", "log_S_star"]


def cmd_simulate(args, config, report: Reporter) -> Tuple[Rows, List[str]]:
    probe = _probe(args)
    noise = NoiseModel(args.r)
    tolerances = _tolerances(args, config)
    grids = config["grids"]
    samples = args.samples or int(config["simulation"]["default_samples"])
    blocks = _blocks(probe, noise, tolerances)
    point = allocate(blocks, build_hamiltonians(blocks), args.S, gap_tol=tolerances["allocation_gap"],
                     secular_tol=tolerances["secular_root"])
    report(f"🔍 モンテカルロ: n={probe.n}, S={point.S:.6f}, 標本数={samples}, seed={args.seed}")
    result = monte_carlo_loss(blocks, point.solutions, args.theta, samples, seed=args.seed,
                              chunk_size=int(config["simulation"]["chunk_size"]),
                              max_workers=resolve_threads(args, config),
                              envelope_factor=int(grids["envelope_factor"]),
                              envelope_margin=float(grids["envelope_margin"]))
    deviation = worst_case_check(blocks, point.solutions, [0.0, 1.0, -2.5],
                                 quadrature_factor=int(grids["quadrature_factor"]))
    report(f"📊 最悪ケースとの差 = {deviation:.3e}")
    rows = [{
        "samples": result.samples,
        "successes": result.successes,
        "S_empirical": result.S_empirical,
        "loss_mean": result.loss_mean,
        "loss_stderr": result.loss_stderr,
        "sigma2_exact": point.sigma2,
    }]
    return rows, ["samples", "successes", "S_empirical", "loss_mean", "loss_stderr", "sigma2_exact"]


def cmd_oracle_check(args, config, report: Reporter) -> Tuple[Rows, List[str]]:
    if not 1 <= args.n <= min(ORACLE_MAX_N, MAX_DENSE_QUBITS):
        raise DomainError(f"oracle-check は n ≤ {ORACLE_MAX_N} で実行してください: n={args.n}")
    noise = NoiseModel(args.r)
    tolerances = _tolerances(args, config)
    basis = spin_basis(args.n)
    rng = np.random.default_rng(args.seed)
    probes = [make_probe("multicopy", args.n)] + [random_probe(args.n, rng) for _ in range(args.random)]
    rows = []
    for i, probe in enumerate(probes):
        result = basis_equivalence(probe, noise, args.S, basis)
        label = probe.label if probe.label != "random" else f"random{i}"
        rows.append({"n": args.n, "probe": label, **result})

        blocks = _blocks(probe, noise, tolerances)
        certificate = sdp_crosscheck(blocks, build_hamiltonians(blocks), args.S, tol=tolerances["sdp_gap"])
        mark = "✅" if certificate.converged else "⚠️"
        report(f"{mark} {label}: SDP 主値={certificate.primal:.10f}, 双対={certificate.dual:.10f}")
    worst = max(row["max_abs_diff"] for row in rows)
    report(f"📊 最大差 = {worst:.3e}")
    return rows, ["n", "probe", "sigma2_spin", "S_spin", "sigma2_dense", "S_dense", "max_abs_diff"]


COMMANDS: Dict[str, Callable] = {
    "tradeoff": cmd_tradeoff,
    "scaling": cmd_scaling,
    "scavenge": cmd_scavenge,
    "profile": cmd_profile,
    "ultimate": cmd_ultimate,
    "simulate": cmd_simulate,
    "oracle-check": cmd_oracle_check,
}


def _format_value(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _json_value(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def render(rows: Rows, columns: Sequence[str], fmt: str, invocation: str) -> str:
    """CSV（先頭に呼び出しとバージョンのコメント行）または JSON に整形"""
    if fmt == "json":
        payload = {
            "invocation": invocation,
            "version": __version__,
            "columns": list(columns),
            "rows": [{c: _json_value(row[c]) for c in columns} for row in rows],
        }
        return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    buffer = io.StringIO()
    buffer.write(f"# {invocation} (version {__version__})\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_value(row[c]) for c in columns])
    return buffer.getvalue()


def _write(text: str, path: Optional[str]):
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(text)


def _record(args, config, command: str, invocation: str, digest: str, report: Reporter):
    """実行履歴に記録し、前回と同じ出力かを表示"""
    if args.no_state or not config["state"].get("enabled", True):
        return
    state = StateManager(config["state"]["path"])
    same = state.check_reproducible(invocation, digest)
    if same is True:
        report("✅ 前回と同一の出力です")
    elif same is False:
        report("⚠️ 前回の出力と一致しません")
    state.record_run(command, invocation, args.out, digest)
    state.cleanup_old_runs(int(config["state"].get("retention_days", 30)))
    state.save()
    report("💾 実行履歴を保存しました")


def run(argv: Optional[Sequence[str]] = None) -> int:
    """メイン処理（終了コードを返す）"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    report = Reporter(args.quiet)
    invocation = " ".join(["run_metrology"] + argv)
    try:
        config = load_config(args.config)
        report.banner(f"run_metrology {args.command}")
        if args.command == "probe-gen":
            if not args.out:
                raise DomainError("probe-gen には --out が必要です")
            probe = make_probe(args.kind, args.n, args.r)
            to_file(probe, args.out)
            digest = file_digest(args.out)
            report(f"💾 プローブを書き出しました: {args.out}")
        else:
            rows, columns = COMMANDS[args.command](args, config, report)
            text = render(rows, columns, args.format, invocation)
            _write(text, args.out)
            digest = file_digest(args.out) if args.out else text_digest(text)
            if args.out:
                report(f"💾 {len(rows)} 行を書き出しました: {args.out}")
        _record(args, config, args.command, invocation, digest, report)
    except (DomainError, ProbeFileError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2
    except MetrologyError as e:
        print(f"❌ 数値計算に失敗しました: {e}", file=sys.stderr)
        return 3

    report("=" * 60)
    report("✅ 完了")
    report("=" * 60)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
