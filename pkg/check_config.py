#!/usr/bin/env python3
"""
快速檢查設定檔：環境變數、TOML 驗證、預算與初始資料的相容性（不求解）
"""

import os
import sys

from config import build_domain, load_config
from errors import WaveMapError
from main import prepare


def check_environment():
    print("【環境變數檢查】")
    print("-" * 60)
    for name, meaning in (("WAVEMAP_CONFIG", "預設設定檔"), ("WAVEMAP_OUT", "輸出目錄"),
                          ("WAVEMAP_LOG", "日誌等級")):
        value = os.getenv(name)
        if value:
            print(f"✓ {name}: {value}")
        else:
            print(f"  {name}: 未設定（{meaning}使用預設值）")
    print()


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    path = argv[0] if argv else None

    print("=" * 60)
    print("檢查波動映射求解器設定")
    print("=" * 60)
    print()
    check_environment()

    print("【設定檔驗證】")
    print("-" * 60)
    try:
        config = load_config(path)
    except WaveMapError as e:
        print(f"✗ 設定檔無效: {e.message}")
        for key, value in e.details.items():
            print(f"  {key}: {value}")
        return e.exit_code
    print(f"✓ 設定檔有效: {config.source or '預設值'}")
    K = build_domain(config)
    print(f"  區域: {config.domain.kind}，底邊 [{K.base[0]:g}, {K.base[1]:g}]，高度 {K.height:g}")
    print(f"  格距: h = {config.h:g}（底邊 {round(2 * K.L / config.h)} 格）")
    print()

    print("【預算與資料】")
    print("-" * 60)
    try:
        _, _, data, forcing, budget = prepare(config)
    except WaveMapError as e:
        print(f"✗ {type(e).__name__}: {e.message}")
        return e.exit_code

    if budget.certified:
        print(f"✓ 預算已認證: η = {budget.eta:g}，R = {budget.R:g}")
    else:
        print(f"⚠️  預算為設定檔覆寫（未認證）: η = {budget.eta:g}，R = {budget.R:g}")
    masses = data.masses()
    print(f"✓ 初始資料相容（{config.data.kind}）")
    print(f"  ‖g₊‖₁ = {masses['g_plus']:.6g}，‖g₋‖₁ = {masses['g_minus']:.6g}")
    if max(masses['g_plus'], masses['g_minus']) <= budget.eta:
        print("  資料在小資料門檻內，求解會走單一 Picard 路徑")
    else:
        print("  資料超過小資料門檻，求解會用小梯形延續")
    if forcing is not None:
        print(f"✓ 外力: {config.forcing.kind}，質量 {config.forcing.mass:g}")

    print()
    print("=" * 60)
    print("檢查完成")
    print("=" * 60)
    return 0


if __name__ == "__main__":
    sys.exit(main())
