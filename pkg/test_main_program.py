"""
測試命令列前端：子命令、exit code、環境變數、diagnostics 格式與輸出檔案
"""

import csv
import json
import logging
from pathlib import Path

import pytest

from config import validate_manifest
from main import MANIFEST_NAME, build_parser, configure_logging, main

HERE = Path(__file__).resolve().parent

CONSTANT_TOML = """
target = "sphere:3"

[lattice]
h = 0.125

[domain]
kind = "compact"
L = 1.0

[data]
kind = "constant"

[verify]
trials = 3
"""

GEODESIC_TOML = """
target = "sphere:3"

[lattice]
h = "1/32"

[domain]
kind = "compact"
L = 1.0
height = 1.0

[data]
kind = "geodesic"
omega = 1.0

[solver]
eta = 1.0
R = 1.0
delta = 0.125
"""


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _manifest(out):
    return json.loads((Path(out) / MANIFEST_NAME).read_text(encoding="utf-8"))


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("WAVEMAP_CONFIG", "WAVEMAP_OUT", "WAVEMAP_LOG"):
        monkeypatch.delenv(name, raising=False)


def test_parser_commands():
    parser = build_parser()
    args = parser.parse_args(["solve", "--threads", "2", "--seed", "5"])
    assert (args.command, args.threads, args.seed) == ("solve", 2, 5)
    with pytest.raises(SystemExit):
        parser.parse_args(["integrate"])


def test_solve_constant_data(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--config", _write(tmp_path, CONSTANT_TOML), "--out", str(out)]) == 0
    manifest = _manifest(out)
    assert validate_manifest(manifest) == []
    assert manifest['command'] == "solve"
    assert manifest['status'] == "ok"
    assert manifest['artifacts'] == sorted(["u.csv", "ut.csv", "ux.csv", "h_field.csv", "norms.json"])
    assert manifest['diagnostics']['path'] == "SmallData"
    assert manifest['diagnostics']['manifold_defect'] == 0.0
    assert 'threads' not in manifest['config']['solver']
    for name in manifest['artifacts']:
        assert (out / name).exists()
    with open(out / "u.csv", encoding="utf-8") as f:
        header = next(csv.reader(f))
    assert header == ["t", "x", "u_1", "u_2", "u_3"]


def test_environment_variables_select_config_and_output(tmp_path, monkeypatch):
    out = tmp_path / "env-out"
    monkeypatch.setenv("WAVEMAP_CONFIG", _write(tmp_path, CONSTANT_TOML))
    monkeypatch.setenv("WAVEMAP_OUT", str(out))
    assert main(["solve", "--seed", "7"]) == 0
    manifest = _manifest(out)
    assert manifest['seed'] == 7
    assert manifest['h'] == 0.125


def test_config_error_exit_code(tmp_path):
    out = tmp_path / "out"
    bad = CONSTANT_TOML + "\n[domain_extra]\nL = 2.0\n"
    assert main(["solve", "--config", _write(tmp_path, bad), "--out", str(out)]) == 2
    manifest = _manifest(out)
    assert validate_manifest(manifest) == []
    assert manifest['status'] == "error"
    assert manifest['error']['type'] == "ConfigError"
    assert manifest['error']['details']['unknown'] == ["domain_extra"]


@pytest.mark.parametrize("text", [
    CONSTANT_TOML.replace('h = 0.125', 'h = 0.3'),
    CONSTANT_TOML.replace('kind = "constant"', 'kind = "spiral"'),
    CONSTANT_TOML + "\n[solver]\neta = 0.1\n",
    'target = "torus:2"\n',
])
def test_invalid_configs_are_rejected(tmp_path, text):
    assert main(["solve", "--config", _write(tmp_path, text), "--out", str(tmp_path / "out")]) == 2


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path / "out")]) == 2


def test_bad_thread_count(tmp_path):
    assert main(["solve", "--config", _write(tmp_path, CONSTANT_TOML), "--out", str(tmp_path / "out"),
                 "--threads", "0"]) == 2


def test_compatibility_error_exit_code(tmp_path):
    """v0 沿法向 (0, 0, 1)：相容性缺陷為 1"""
    out = tmp_path / "out"
    text = CONSTANT_TOML.replace('kind = "constant"', 'kind = "constant"\nvelocity = [0.0, 0.0, 1.0]')
    assert main(["solve", "--config", _write(tmp_path, text), "--out", str(out)]) == 3
    manifest = _manifest(out)
    assert manifest['error']['type'] == "CompatibilityError"
    assert manifest['error']['details']['max_defect'] == pytest.approx(1.0)


def test_solve_is_deterministic_across_threads(tmp_path):
    config = _write(tmp_path, GEODESIC_TOML)
    serial, pooled = tmp_path / "serial", tmp_path / "pooled"
    assert main(["solve", "--config", config, "--out", str(serial), "--threads", "1"]) == 0
    assert main(["solve", "--config", config, "--out", str(pooled), "--threads", "4"]) == 0
    for name in ("u.csv", "ut.csv", "ux.csv", "h_field.csv", "norms.json", MANIFEST_NAME):
        assert (serial / name).read_bytes() == (pooled / name).read_bytes(), name
    manifest = _manifest(serial)
    assert manifest['budget']['certified'] is False
    assert manifest['diagnostics']['oracle_error'] <= 0.1


def test_verify_estimates(tmp_path):
    out = tmp_path / "out"
    assert main(["verify-estimates", "--config", _write(tmp_path, CONSTANT_TOML), "--out", str(out)]) == 0
    manifest = _manifest(out)
    assert validate_manifest(manifest) == []
    assert manifest['command'] == "verify-estimates"
    assert manifest['diagnostics']['failures'] == 0
    assert manifest['estimates'] == []
    reports = json.loads((out / "estimates.json").read_text(encoding="utf-8"))
    assert len(reports) == 3 * len(manifest['diagnostics']['checks'])
    assert all(set(r) == {'name', 'lhs', 'rhs', 'slack', 'tol', 'ok'} for r in reports)


def test_verify_estimates_is_reproducible(tmp_path):
    config = _write(tmp_path, CONSTANT_TOML)
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["verify-estimates", "--config", config, "--out", str(first), "--seed", "11"]) == 0
    assert main(["verify-estimates", "--config", config, "--out", str(second), "--seed", "11"]) == 0
    assert (first / "estimates.json").read_bytes() == (second / "estimates.json").read_bytes()


def test_converge_geodesic(tmp_path):
    out = tmp_path / "out"
    assert main(["converge", "--config", str(HERE / "geodesic.toml"), "--out", str(out)]) == 0
    with open(out / "converge.csv", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [float(r['h']) for r in rows] == [1 / 16, 1 / 32, 1 / 64]
    errors = [float(r['error']) for r in rows]
    assert errors[2] < errors[1] < errors[0]
    assert rows[0]['order'] == ""
    assert float(rows[2]['order']) >= 1.5
    manifest = _manifest(out)
    assert manifest['diagnostics']['reference'] == "oracle"


def test_scatter_support_cone(tmp_path):
    out = tmp_path / "out"
    assert main(["scatter", "--config", str(HERE / "scatter.toml"), "--out", str(out)]) == 0
    manifest = _manifest(out)
    assert validate_manifest(manifest) == []
    assert manifest['status'] == "ok"
    assert manifest['diagnostics']['mode'] == "support_cone"
    assert manifest['artifacts'] == ["defects.csv", "scattering.csv"]
    with open(out / "defects.csv", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert rows and all(float(r['t']) > 1.5 for r in rows)
    with open(out / "scattering.csv", encoding="utf-8") as f:
        header = next(csv.reader(f))
    assert header == ["x", "ubar0_1", "ubar0_2", "ubar0_3", "vbar0_1", "vbar0_2", "vbar0_3"]


def test_validate_manifest_problems():
    assert validate_manifest([]) == ["manifest 必須是物件"]
    problems = validate_manifest({'command': "solve", 'status': "error", 'error': None})
    assert any("缺少 seed" in p for p in problems)
    assert "status = error 時必須有 error 區段" in problems


def test_validate_manifest_uses_schema_types():
    valid = {
        'command': "solve", 'status': "ok", 'seed': 0, 'target': "sphere:3", 'h': 0.125,
        'config': {}, 'budget': None, 'diagnostics': {}, 'estimates': [], 'artifacts': [], 'error': None,
    }
    assert validate_manifest(valid) == []
    bad = dict(valid, status="done", seed=True, estimates=[{'name': "x"}], extra=1)
    problems = validate_manifest(bad)
    assert "status 必須是 ok/violations/error" in problems
    assert "seed 的型別錯誤" in problems
    assert "estimates[0] 格式錯誤" in problems
    assert "未知的鍵: extra" in problems
    broken = dict(valid, status="error", error={'type': "ConfigError"})
    assert validate_manifest(broken) == ["error 需要 type、message、details"]


@pytest.mark.parametrize("value, level", [("DEBUG", logging.DEBUG), ("info", logging.INFO),
                                          ("chatty", logging.WARNING)])
def test_configure_logging(monkeypatch, value, level):
    monkeypatch.setenv("WAVEMAP_LOG", value)
    configure_logging()
    assert logging.getLogger().level == level
