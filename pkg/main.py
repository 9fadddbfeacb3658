#!/usr/bin/env python3
"""
波動映射求解器的命令列前端

子命令：
    solve             在設定的梯形上求解，輸出解的 CSV 與 diagnostics JSON
    verify-estimates  隨機線性解上的不等式測試
    scatter           散射資料與缺陷序列
    converge          多個格距的收斂階數
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
import traceback
from dataclasses import replace

import numpy as np

from config import (
    RunConfig, build_budget, build_data, build_domain, build_forcing, build_lattice, build_settings,
    load_config, validate_config, validate_manifest,
)
from errors import CompatibilityError, ConfigError, WaveMapError
from estimates import EstimateReport, property_suite
from fields import export_csv, write_sidecar
from geometry import check_compatibility, great_circle_arc, manifold_defect_of_nodes, parse_target
from scattering import (
    extract_scattering_data, scatter_m_valued, scattering_defect, support_cone_check,
)
from solver import compatibility_defects, manifold_defect, solve_global, solve_unbounded

logger = logging.getLogger(__name__)

MANIFEST_NAME = "diagnostics.json"


def configure_logging():
    """依 WAVEMAP_LOG 設定根 logger（預設 WARNING，未知值也回到 WARNING）"""
    name = os.getenv("WAVEMAP_LOG", "WARNING").strip().upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def _fmt(value):
    return format(float(value), '.17g')


def _banner(title):
    print("=" * 60)
    print(title)
    print("=" * 60)


def _section(title):
    print(f"\n【{title}】")
    print("-" * 60)


# ---------------------------------------------------------------------------
# 輸出
# ---------------------------------------------------------------------------

def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"無法序列化 {type(obj).__name__}")


def write_json(path, payload):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def build_manifest(command, config, status="ok", budget=None, diagnostics=None, estimates=(),
                   artifacts=(), error=None):
    return {
        'command': command,
        'status': status,
        'seed': int(config.seed),
        'target': config.target,
        'h': float(config.h),
        'config': config.to_dict(),
        'budget': budget,
        'diagnostics': dict(diagnostics or {}),
        'estimates': [r.to_dict() if isinstance(r, EstimateReport) else r for r in estimates],
        'artifacts': sorted(artifacts),
        'error': error,
    }


def write_manifest(out_dir, manifest):
    """
    驗證後寫出 diagnostics JSON

    Raises:
        ValueError: manifest 不符合 DIAGNOSTICS_SCHEMA
    """
    problems = validate_manifest(manifest)
    if problems:
        raise ValueError(f"diagnostics 格式錯誤: {'; '.join(problems)}")
    path = os.path.join(out_dir, MANIFEST_NAME)
    write_json(path, manifest)
    return path


def _write_rows(path, header, rows):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _status(reports):
    return "ok" if all(r.ok for r in reports) else "violations"


def _print_reports(reports, limit=8):
    failed = [r for r in reports if not r.ok]
    print(f"  估計檢查: {len(reports) - len(failed)}/{len(reports)} 通過")
    for report in failed[:limit]:
        print(f"  ⚠️  {report.name}: lhs={report.lhs:.6g} rhs={report.rhs:.6g} tol={report.tol:.3g}")


# ---------------------------------------------------------------------------
# 準備
# ---------------------------------------------------------------------------

def prepare(config, h=None):
    """
    由設定組出 (manifold, lattice, data, forcing, budget)，並檢查資料在流形上且相容

    Raises:
        CompatibilityError: u0 不在流形上，或 v0 不是切向量
    """
    manifold = parse_target(config.target)
    lattice = build_lattice(config, h)
    data = build_data(config, manifold, h)
    tol = config.tolerances.tol_compat
    distance = manifold_defect_of_nodes(data.u0, manifold)
    if distance > tol:
        raise CompatibilityError(f"u0 離流形的距離 {distance:.3e} 超過 {tol:.3e}",
                                 {'distance': distance, 'tol_compat': tol})
    report = check_compatibility(data, tol, manifold)
    if not report.ok:
        raise CompatibilityError(f"v0 的法向分量 {report.max_defect:.3e} 超過 {tol:.3e}",
                                 {'max_defect': report.max_defect, 'tol_compat': tol})
    forcing = build_forcing(config, lattice, manifold)
    return manifold, lattice, data, forcing, build_budget(config, manifold)


def _solve(config, threads=None, h=None):
    manifold, lattice, data, forcing, budget = prepare(config, h)
    settings = build_settings(config, threads)
    K = build_domain(config, truncated=False)
    if K.is_compact:
        return solve_global(data, forcing, K, budget, manifold, settings)
    return solve_unbounded(data, forcing, K, config.domain.cutoff, budget, manifold, settings)


def oracle_error(config, solution):
    """
    有閉式解時的最大節點誤差：測地線 (cos ωt, sin ωt, 0) 或行波 γ(x − t)；否則 None
    """
    if config.forcing.kind != "zero" and config.forcing.mass != 0.0:
        return None
    lattice = solution.lattice
    mask = lattice.node_mask
    t, x = lattice.node_t[mask], lattice.node_x[mask]
    spec = config.data
    if spec.kind == "geodesic":
        exact = np.stack([np.cos(spec.omega * t), np.sin(spec.omega * t), np.zeros_like(t)], axis=-1)
    elif spec.kind == "traveling_wave":
        exact = great_circle_arc(x - t, spec.arc, *spec.support)
    else:
        return None
    return float(np.max(np.abs(solution.u.values[mask] - exact)))


def _solution_reports(config, solution):
    diagnostics = solution.diagnostics
    reports = list(diagnostics.estimates)
    reports.append(EstimateReport("manifold_defect", manifold_defect(solution), 0.0, config.tol_manifold))
    reports.append(EstimateReport("picard_residual", diagnostics.final_residual, 0.0,
                                  config.tolerances.residual_tol))
    return reports


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def run_solve(config, threads=None):
    """
    求解並輸出 u/ut/ux/h_field 的 CSV、範數 sidecar 與 diagnostics

    Returns:
        int: exit code
    """
    _section("求解")
    solution = _solve(config, threads)
    diagnostics = solution.diagnostics
    print(f"✓ 求解完成: 路徑 {diagnostics.path}，迭代 {diagnostics.iterations} 次，小梯形 {diagnostics.tiles} 個")

    out = config.out_dir
    artifacts = []
    for name in ('u', 'ut', 'ux', 'h_field'):
        filename = f"{name}.csv"
        export_csv(os.path.join(out, filename), getattr(solution, name), name)
        artifacts.append(filename)
    write_sidecar(os.path.join(out, "norms.json"), u=solution.u, ut=solution.ut, ux=solution.ux,
                  h_field=solution.h_field)
    artifacts.append("norms.json")

    reports = _solution_reports(config, solution)
    summary = diagnostics.to_dict()
    summary.pop('estimates')
    summary['manifold_defect'] = reports[-2].lhs
    defects = compatibility_defects(solution)
    summary['compatibility_defect'] = float(np.max(defects)) if defects.size else 0.0
    error = oracle_error(config, solution)
    if error is not None:
        summary['oracle_error'] = error
        print(f"  與閉式解的最大誤差: {error:.3e}")
    print(f"  流形缺陷: {summary['manifold_defect']:.3e}（容許 {config.tol_manifold:.3e}）")
    _print_reports(reports)

    status = _status(reports)
    manifest = build_manifest("solve", config, status, diagnostics.budget, summary, reports, artifacts)
    write_manifest(out, manifest)
    print(f"✓ 已寫出 {len(artifacts) + 1} 個檔案到 {out}")
    return 0


def run_verify(config, threads=None):
    """
    隨機線性解上的不等式測試；輸出 estimates.json（EstimateReport 陣列）

    Returns:
        int: 全部通過為 0，有任何違反為 1
    """
    _section("不等式測試")
    lattice = build_lattice(config)
    rng = np.random.Generator(np.random.Philox(config.seed))
    grouped = property_suite(rng, lattice, config.verify.trials)
    reports = [r for name in sorted(grouped) for r in grouped[name]]
    write_json(os.path.join(config.out_dir, "estimates.json"), [r.to_dict() for r in reports])

    by_name = {}
    for name in sorted(grouped):
        group = grouped[name]
        failures = sum(not r.ok for r in group)
        by_name[name] = {'count': len(group), 'failures': failures, 'min_slack': min(r.slack for r in group)}
        mark = "✓" if failures == 0 else "✗"
        print(f"{mark} {name}: {len(group) - failures}/{len(group)} 通過")
    failed = [r for r in reports if not r.ok]
    summary = {'trials': config.verify.trials, 'checks': by_name, 'failures': len(failed)}
    manifest = build_manifest("verify-estimates", config, _status(reports), None, summary, failed,
                              ["estimates.json"])
    write_manifest(config.out_dir, manifest)
    return 0 if not failed else 1


def _write_scattering(out, scattering, defects):
    x, u, v = scattering.x, scattering.ubar0, scattering.vbar0
    n = u.shape[1]
    header = ['x'] + [f'ubar0_{k + 1}' for k in range(n)] + [f'vbar0_{k + 1}' for k in range(n)]
    rows = []
    for k in range(x.size):
        v_row = v[k] if k < v.shape[0] else np.zeros(n)
        rows.append([_fmt(x[k])] + [_fmt(c) for c in u[k]] + [_fmt(c) for c in v_row])
    _write_rows(os.path.join(out, "scattering.csv"), header, rows)
    _write_rows(
        os.path.join(out, "defects.csv"),
        ['t', 'sup_defect', 'l1_ut', 'l1_ux'],
        [[_fmt(d['t']), _fmt(d['sup_defect']), _fmt(d['l1_ut_defect']), _fmt(d['l1_ux_defect'])]
         for d in defects],
    )
    return ["defects.csv", "scattering.csv"]


def _support_cone_scatter(config, threads):
    S = config.scatter.support
    solution = _solve(config, threads)
    lattice = solution.lattice
    scattering = extract_scattering_data(solution, S, -S)
    times = [m * lattice.h / 2 for m in range(lattice.n_rows) if m * lattice.h / 2 > 1.5 * S]
    defects = [scattering_defect(solution, scattering, t) for t in times]
    tol = config.tol_manifold
    reports = support_cone_check(solution, S, tol)
    for d in defects:
        worst = max(d['sup_defect'], d['l1_ut_defect'], d['l1_ux_defect'])
        reports.append(EstimateReport(f"scattering_defect@{d['t']:.6g}", worst, 0.0, tol))
    return solution, scattering, defects, reports, {'mode': 'support_cone', 'S': S}


def _compact_scatter(config, threads):
    manifold, lattice, data, forcing, budget = prepare(config)
    sc = config.scatter
    result = scatter_m_valued(
        data, forcing, cutoff=sc.out_halfwidth, n_cells=sc.n_cells, budget=budget, manifold=manifold,
        settings=build_settings(config, threads), t_final=sc.t_final, n_times=sc.n_times,
        samples=sc.samples, h_out=config.h,
    )
    problem = result.problem
    extra = {
        'mode': 'compactified',
        'compact_cells': sc.n_cells,
        'data_norm': problem.data_norm(),
        'forcing_norm': problem.forcing_norm(),
        'physical_forcing_mass': problem.physical_forcing_mass,
        'final_defect': result.final_defect,
    }
    return result.solution, result.scattering, result.defects, [], extra


def run_scatter(config, threads=None):
    """
    散射資料 (scattering.csv) 與缺陷序列 (defects.csv)

    scatter.support 有設定時在物理格點上讀出 S 錐外的自由波，否則經由共形緊緻化。

    Returns:
        int: exit code
    """
    _section("散射")
    runner = _support_cone_scatter if config.scatter.support is not None else _compact_scatter
    solution, scattering, defects, reports, extra = runner(config, threads)
    artifacts = _write_scattering(config.out_dir, scattering, defects)
    reports = list(solution.diagnostics.estimates) + reports
    summary = dict(extra, path=solution.path, iterations=solution.diagnostics.iterations,
                   defects=defects)
    if defects:
        last = defects[-1]
        print(f"✓ t = {last['t']:.6g} 的缺陷: sup {last['sup_defect']:.3e}, "
              f"∂ₜ {last['l1_ut_defect']:.3e}, ∂ₓ {last['l1_ux_defect']:.3e}")
    else:
        print("⚠️  沒有可量測缺陷的時間點")
    _print_reports(reports)
    manifest = build_manifest("scatter", config, _status(reports), solution.diagnostics.budget, summary,
                              reports, artifacts)
    write_manifest(config.out_dir, manifest)
    return 0


def _order(errors, levels, k):
    if k == 0 or errors[k] is None or errors[k - 1] is None:
        return None
    if errors[k] <= 0.0 or errors[k - 1] <= 0.0:
        return None
    return math.log(errors[k - 1] / errors[k]) / math.log(levels[k - 1] / levels[k])


def _finest_errors(solutions, levels):
    """沒有閉式解時，各層與最細層在共同節點上的最大差"""
    finest = solutions[-1]
    errors = []
    for solution, h in zip(solutions[:-1], levels[:-1]):
        ratio = int(round(h / levels[-1]))
        if abs(ratio * levels[-1] - h) > 1e-12:
            raise ConfigError(f"格距 {h} 不是最細格距 {levels[-1]} 的整數倍")
        lattice = solution.lattice
        mask = lattice.node_mask
        fine = finest.u.values[::ratio, ::ratio][:mask.shape[0], :mask.shape[1]]
        errors.append(float(np.max(np.abs(solution.u.values[mask] - fine[mask]))))
    return errors + [None]


def run_convergence_study(config, threads=None):
    """
    逐層加密：誤差（閉式解或最細層）、觀測階數與能量通量不等式的最大違反量

    Returns:
        int: exit code
    """
    _section("收斂測試")
    levels = list(config.converge.levels)
    solutions, errors, violations = [], [], []
    for h in levels:
        level = config.with_h(h)
        solution = _solve(level, threads, h)
        solutions.append(solution)
        errors.append(oracle_error(level, solution))
        gaps = [r.lhs - r.rhs for r in solution.diagnostics.estimates]
        violations.append(max([0.0] + gaps))
        print(f"  h = {h:.6g}: 路徑 {solution.path}，迭代 {solution.diagnostics.iterations} 次")
    reference = "oracle"
    if any(e is None for e in errors):
        errors = _finest_errors(solutions, levels)
        reference = "finest"

    rows, table = [], []
    for k, h in enumerate(levels):
        order = _order(errors, levels, k)
        table.append({'h': h, 'error': errors[k], 'order': order, 'max_violation': violations[k]})
        rows.append([_fmt(h), '' if errors[k] is None else _fmt(errors[k]),
                     '' if order is None else _fmt(order), _fmt(violations[k])])
        if errors[k] is not None:
            suffix = f"，階數 {order:.3f}" if order is not None else ""
            print(f"✓ h = {h:.6g}: 誤差 {errors[k]:.3e}{suffix}")
    _write_rows(os.path.join(config.out_dir, "converge.csv"), ['h', 'error', 'order', 'max_violation'], rows)
    summary = {'reference': reference, 'levels': table, 'paths': [s.path for s in solutions]}
    reports = [r for s in solutions for r in s.diagnostics.estimates]
    failed = [r for r in reports if not r.ok]
    manifest = build_manifest("converge", config, _status(reports), solutions[-1].diagnostics.budget, summary,
                              failed, ["converge.csv"])
    write_manifest(config.out_dir, manifest)
    return 0


COMMANDS = {
    'solve': run_solve,
    'verify-estimates': run_verify,
    'scatter': run_scatter,
    'converge': run_convergence_study,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="wavemap", description="受力波動映射的零座標格點求解器")
    parser.add_argument("command", choices=sorted(COMMANDS), help="子命令")
    parser.add_argument("--config", default=None, help="TOML 設定檔（預設為 WAVEMAP_CONFIG）")
    parser.add_argument("--out", default=None, help="輸出目錄（預設為 WAVEMAP_OUT 或設定檔的 [output] dir）")
    parser.add_argument("--threads", type=int, default=None, help="小梯形的平行數")
    parser.add_argument("--seed", type=int, default=None, help="隨機測試的種子（u64）")
    return parser


def _error_manifest(command, config, error):
    try:
        write_manifest(config.out_dir, build_manifest(command, config, "error", error=error.to_dict()))
    except OSError as e:
        print(f"⚠️  無法寫出 diagnostics: {e}")


def main(argv=None):
    """
    Returns:
        int: exit code（成功 0、WaveMapError 為各類別的 exit_code、其他錯誤 1）
    """
    args = build_parser().parse_args(argv)
    configure_logging()
    _banner(f"波動映射求解器: {args.command}")

    config = RunConfig(out_dir=args.out or os.getenv("WAVEMAP_OUT") or "out")
    try:
        config = load_config(args.config)
        overrides = {}
        if args.out:
            overrides['out_dir'] = args.out
        if args.seed is not None:
            overrides['seed'] = args.seed
        if args.threads is not None and args.threads < 1:
            raise ConfigError(f"--threads 必須 ≥ 1，收到 {args.threads}")
        if overrides:
            config = validate_config(replace(config, **overrides))
        os.makedirs(config.out_dir, exist_ok=True)
        print(f"✓ 設定: {config.source or '預設值'}")
        print(f"  目標: {config.target}，h = {config.h:.6g}，seed = {config.seed}")
        code = COMMANDS[args.command](config, args.threads)
    except WaveMapError as e:
        print(f"✗ {type(e).__name__}: {e.message}")
        os.makedirs(config.out_dir, exist_ok=True)
        _error_manifest(args.command, config, e)
        return e.exit_code
    except Exception as e:
        print(f"✗ 未預期的錯誤: {e}")
        traceback.print_exc()
        return 1

    print("\n" + "=" * 60)
    print("✓ 完成" if code == 0 else "⚠️  完成，但有檢查未通過")
    print("=" * 60)
    return code


if __name__ == "__main__":
    sys.exit(main())
