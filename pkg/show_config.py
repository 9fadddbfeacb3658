#!/usr/bin/env python3
"""
顯示解析後的完整設定（含環境變數覆寫與預設值）
"""

import os
import sys

from config import load_config
from errors import WaveMapError


def _show_table(name, table):
    print(f"【{name}】")
    print("-" * 60)
    for key in sorted(table):
        value = table[key]
        shown = "未設定" if value is None else value
        print(f"  {key}: {shown}")
    print()


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    path = argv[0] if argv else None

    print("=" * 60)
    print("波動映射求解器設定")
    print("=" * 60)
    print()

    print("【來源】")
    print("-" * 60)
    print(f"  --config: {path or '未指定'}")
    print(f"  WAVEMAP_CONFIG: {os.getenv('WAVEMAP_CONFIG') or '未設定'}")
    print(f"  WAVEMAP_OUT: {os.getenv('WAVEMAP_OUT') or '未設定'}")
    print(f"  WAVEMAP_LOG: {os.getenv('WAVEMAP_LOG') or '未設定（WARNING）'}")
    print()

    try:
        config = load_config(path)
    except WaveMapError as e:
        print(f"✗ 無法載入設定: {e.message}")
        return e.exit_code

    payload = config.to_dict(full=True)
    scalars = {key: value for key, value in payload.items() if not isinstance(value, dict)}
    _show_table("一般", scalars)
    for name in sorted(key for key, value in payload.items() if isinstance(value, dict)):
        _show_table(name, payload[name])

    print(f"  tol_M 實際值: {config.tol_manifold:g}")
    print("=" * 60)
    return 0


if __name__ == "__main__":
    sys.exit(main())
