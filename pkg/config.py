"""
執行設定檔 (TOML) 的讀取、驗證與組裝

設定檔只描述實驗，不含任何程式碼；所有驗證都在計算開始前完成。
環境變數沿用 os.getenv 的習慣：
    WAVEMAP_CONFIG  未指定 --config 時使用的設定檔
    WAVEMAP_OUT     未指定 --out 時的輸出目錄
    WAVEMAP_LOG     日誌等級（在 main.py 處理）
"""

import logging
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Optional

import numpy as np
from jsonschema import Draft7Validator

from domain import Trapezoid
from errors import ConfigError
from fields import NullLattice
from geometry import (
    ManifoldData, bump_data, constant_data, data_from_table, geodesic_data, parse_target,
    traveling_wave_data, uniform_grid,
)
from solver import ContractionBudget, SolverSettings, bump_forcing, default_budget

logger = logging.getLogger(__name__)

DOMAIN_KINDS = ("compact", "unbounded", "semi_up", "semi_down")
DATA_KINDS = ("constant", "geodesic", "traveling_wave", "table", "bump")
FORCING_KINDS = ("zero", "tangent_bump")


# ---------------------------------------------------------------------------
# 型別轉換
# ---------------------------------------------------------------------------

def _float(value, key):
    if isinstance(value, bool):
        raise ConfigError(f"{key} 必須是數字，收到布林值")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        # 允許 "1/64" 這種寫法
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(f"{key} 必須是數字，收到 {value!r}")


def _int(value, key):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} 必須是整數，收到 {value!r}")
    return int(value)


def _str(value, key):
    if not isinstance(value, str):
        raise ConfigError(f"{key} 必須是字串，收到 {value!r}")
    return value


def _vector(value, key):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} 必須是非空的數字陣列，收到 {value!r}")
    return tuple(_float(v, f"{key}[{k}]") for k, v in enumerate(value))


def _pair(value, key):
    pair = _vector(value, key)
    if len(pair) != 2 or pair[0] >= pair[1]:
        raise ConfigError(f"{key} 必須是 [lo, hi] 且 lo < hi，收到 {value!r}")
    return pair


# ---------------------------------------------------------------------------
# 設定的各個區段
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    kind: str = "compact"
    x0: float = 0.0
    L: float = 1.0
    height: Optional[float] = None
    b: float = 0.0
    a: float = 0.0
    cutoff: float = 10.0


@dataclass(frozen=True)
class DataSpec:
    kind: str = "constant"
    point: Optional[tuple] = None
    velocity: Optional[tuple] = None
    omega: float = 1.0
    arc: float = 1.0
    support: tuple = (-1.0, 1.0)
    amplitude: float = 0.1
    file: Optional[str] = None


@dataclass(frozen=True)
class ForcingSpec:
    kind: str = "zero"
    mass: float = 0.0
    center_t: float = 0.5
    center_x: float = 0.0
    radius: float = 0.25
    direction: Optional[tuple] = None


@dataclass(frozen=True)
class ToleranceSpec:
    residual_tol: float = 1e-10
    tol_M: Optional[float] = None
    tol_compat: float = 1e-8
    picard_tol: float = 1e-13


@dataclass(frozen=True)
class SolverSpec:
    max_iter: int = 200
    sweeps: int = 60
    eta: Optional[float] = None
    R: Optional[float] = None
    delta: Optional[float] = None
    threads: int = 1


@dataclass(frozen=True)
class ScatterSpec:
    t_final: float = 1e6
    n_times: int = 24
    samples: int = 2048
    n_cells: int = 64
    support: Optional[float] = None
    out_halfwidth: float = 4.0


@dataclass(frozen=True)
class ConvergeSpec:
    levels: tuple = (1 / 16, 1 / 32, 1 / 64)


@dataclass(frozen=True)
class VerifySpec:
    trials: int = 20


_SCHEMAS = {
    'domain': (DomainSpec, {
        'kind': _str, 'x0': _float, 'L': _float, 'height': _float, 'b': _float, 'a': _float,
        'cutoff': _float,
    }),
    'data': (DataSpec, {
        'kind': _str, 'point': _vector, 'velocity': _vector, 'omega': _float, 'arc': _float,
        'support': _pair, 'amplitude': _float, 'file': _str,
    }),
    'forcing': (ForcingSpec, {
        'kind': _str, 'mass': _float, 'center_t': _float, 'center_x': _float, 'radius': _float,
        'direction': _vector,
    }),
    'tolerances': (ToleranceSpec, {
        'residual_tol': _float, 'tol_M': _float, 'tol_compat': _float, 'picard_tol': _float,
    }),
    'solver': (SolverSpec, {
        'max_iter': _int, 'sweeps': _int, 'eta': _float, 'R': _float, 'delta': _float, 'threads': _int,
    }),
    'scatter': (ScatterSpec, {
        't_final': _float, 'n_times': _int, 'samples': _int, 'n_cells': _int, 'support': _float,
        'out_halfwidth': _float,
    }),
    'converge': (ConvergeSpec, {'levels': _vector}),
    'verify': (VerifySpec, {'trials': _int}),
}

_TOP_LEVEL = {'target': _str, 'seed': _int}
_SINGLE_KEY_TABLES = {'lattice': ('h', _float), 'output': ('dir', _str)}


@dataclass(frozen=True)
class RunConfig:
    """
    一次實驗的完整設定；同一個 (設定, seed) 產生逐位元相同的輸出
    """

    target: str = "sphere:3"
    seed: int = 0
    h: float = 1 / 32
    domain: DomainSpec = field(default_factory=DomainSpec)
    data: DataSpec = field(default_factory=DataSpec)
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    tolerances: ToleranceSpec = field(default_factory=ToleranceSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    scatter: ScatterSpec = field(default_factory=ScatterSpec)
    converge: ConvergeSpec = field(default_factory=ConvergeSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)
    out_dir: str = "out"
    source: Optional[str] = None

    @property
    def tol_manifold(self):
        """tol_M，未設定時為 5h"""
        return self.tolerances.tol_M if self.tolerances.tol_M is not None else 5 * self.h

    def with_h(self, h):
        return replace(self, h=float(h))

    def to_dict(self, full=False):
        """
        輸出到 diagnostics 的設定；full=False 時去掉執行緒數與輸出位置（它們不影響結果）
        """
        payload = asdict(self)
        if not full:
            payload['solver'].pop('threads')
            payload.pop('out_dir')
            payload.pop('source')
        return payload


def _parse_section(name, table):
    cls, schema = _SCHEMAS[name]
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] 必須是表格")
    unknown = sorted(set(table) - set(schema))
    if unknown:
        raise ConfigError(f"[{name}] 有未知的鍵: {', '.join(unknown)}", {'section': name, 'unknown': unknown})
    values = {key: schema[key](value, f"{name}.{key}") for key, value in table.items()}
    return cls(**values)


def parse_config(raw, source=None):
    """
    把 TOML 解析後的 dict 轉成 RunConfig 並驗證

    Raises:
        ConfigError: 未知的鍵、型別錯誤或數值不合法
    """
    unknown = sorted(set(raw) - set(_TOP_LEVEL) - set(_SCHEMAS) - set(_SINGLE_KEY_TABLES))
    if unknown:
        raise ConfigError(f"設定檔有未知的鍵: {', '.join(unknown)}", {'unknown': unknown})
    kwargs = {'source': source}
    for key, coerce in _TOP_LEVEL.items():
        if key in raw:
            kwargs[key] = coerce(raw[key], key)
    for name, (key, coerce) in _SINGLE_KEY_TABLES.items():
        if name in raw:
            table = raw[name]
            if not isinstance(table, dict) or set(table) - {key}:
                raise ConfigError(f"[{name}] 只接受 {key}")
            if key in table:
                kwargs['h' if name == 'lattice' else 'out_dir'] = coerce(table[key], f"{name}.{key}")
    for name in _SCHEMAS:
        if name in raw:
            kwargs[name] = _parse_section(name, raw[name])
    config = RunConfig(**kwargs)
    validate_config(config)
    return config


def load_config(path=None):
    """
    讀取設定檔；path 為 None 時依序使用 WAVEMAP_CONFIG 與預設值

    WAVEMAP_OUT 有設定時取代 [output] dir。

    Raises:
        ConfigError: 檔案無法讀取、TOML 語法錯誤或驗證失敗
    """
    path = path or os.getenv("WAVEMAP_CONFIG")
    raw = {}
    if path:
        try:
            with open(path, 'rb') as f:
                raw = tomllib.load(f)
        except OSError as e:
            raise ConfigError(f"無法讀取設定檔 {path}: {e}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"設定檔 {path} 格式錯誤: {e}") from None
    config = parse_config(raw, source=str(path) if path else None)
    out_dir = os.getenv("WAVEMAP_OUT")
    if out_dir:
        config = replace(config, out_dir=out_dir)
    logger.debug("loaded config from %s", path or "<defaults>")
    return config


# ---------------------------------------------------------------------------
# 驗證
# ---------------------------------------------------------------------------

def _divides(extent, h, what):
    count = extent / h
    if abs(count - round(count)) > 1e-9 * max(1.0, abs(count)) or round(count) < 1:
        raise ConfigError(f"格距 h = {h} 不能整除 {what} = {extent}", {'h': h, what: extent})


def _positive(value, key):
    if value is not None and not (value > 0 and math.isfinite(value)):
        raise ConfigError(f"{key} 必須是正的有限數，收到 {value}")


def validate_config(config):
    """
    計算前的完整檢查

    Raises:
        ConfigError: 任一項不合法
    """
    manifold = parse_target(config.target)
    if config.seed < 0 or config.seed >= 2 ** 64:
        raise ConfigError(f"seed 必須介於 0 與 2^64 − 1 之間，收到 {config.seed}")
    _positive(config.h, "lattice.h")

    d = config.domain
    if d.kind not in DOMAIN_KINDS:
        raise ConfigError(f"未知的 domain.kind: {d.kind!r}（可用: {', '.join(DOMAIN_KINDS)}）")
    _positive(d.L, "domain.L")
    _positive(d.cutoff, "domain.cutoff")
    if d.height is not None and d.kind == "compact":
        _positive(d.height, "domain.height")
    K = build_domain(config)
    _divides(2 * K.L, config.h, "2L")
    _divides(2 * K.height, config.h, "2·height")

    tol = config.tolerances
    for key in ('residual_tol', 'tol_M', 'tol_compat', 'picard_tol'):
        _positive(getattr(tol, key), f"tolerances.{key}")

    s = config.solver
    if s.max_iter < 1 or s.sweeps < 1 or s.threads < 1:
        raise ConfigError("solver.max_iter、solver.sweeps 與 solver.threads 必須 ≥ 1")
    if (s.eta is None) != (s.R is None):
        raise ConfigError("預算覆寫需要同時指定 solver.eta 與 solver.R")
    _positive(s.eta, "solver.eta")
    _positive(s.R, "solver.R")
    if s.delta is not None:
        _positive(s.delta, "solver.delta")
        _divides(s.delta, 2 * config.h, "solver.delta")

    data = config.data
    if data.kind not in DATA_KINDS:
        raise ConfigError(f"未知的 data.kind: {data.kind!r}（可用: {', '.join(DATA_KINDS)}）")
    n = manifold.ambient_dim
    for key in ('point', 'velocity'):
        vec = getattr(data, key)
        if vec is not None and len(vec) != n:
            raise ConfigError(f"data.{key} 的維度 {len(vec)} 與目標維度 {n} 不符")
    if data.kind in ("geodesic", "traveling_wave", "bump") and n != 3:
        raise ConfigError(f"data.kind = {data.kind} 只適用於 sphere:3")
    if data.kind == "table" and not data.file:
        raise ConfigError("data.kind = table 需要 data.file")

    f = config.forcing
    if f.kind not in FORCING_KINDS:
        raise ConfigError(f"未知的 forcing.kind: {f.kind!r}（可用: {', '.join(FORCING_KINDS)}）")
    if f.kind == "tangent_bump":
        if f.mass < 0:
            raise ConfigError(f"forcing.mass 必須 ≥ 0，收到 {f.mass}")
        _positive(f.radius, "forcing.radius")
        if f.direction is not None and len(f.direction) != n:
            raise ConfigError(f"forcing.direction 的維度與目標維度 {n} 不符")

    sc = config.scatter
    _positive(sc.t_final, "scatter.t_final")
    _positive(sc.out_halfwidth, "scatter.out_halfwidth")
    _positive(sc.support, "scatter.support")
    if sc.n_times < 1 or sc.samples < 8 or sc.n_cells < 4:
        raise ConfigError("scatter.n_times ≥ 1、scatter.samples ≥ 8、scatter.n_cells ≥ 4")

    levels = config.converge.levels
    if len(levels) < 3:
        raise ConfigError(f"收斂測試至少需要 3 個格距，收到 {len(levels)}")
    for h in levels:
        _positive(h, "converge.levels")
        _divides(2 * K.L, h, "2L")
        _divides(2 * K.height, h, "2·height")
        if s.delta is not None:
            _divides(s.delta, 2 * h, "solver.delta")
    if any(b >= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("converge.levels 必須嚴格遞減")
    if config.verify.trials < 1:
        raise ConfigError("verify.trials 必須 ≥ 1")
    return config


# ---------------------------------------------------------------------------
# 由設定組出計算物件
# ---------------------------------------------------------------------------

def build_domain(config, truncated=True):
    """
    設定中的梯形；truncated=True 時無界區域以 domain.cutoff 截斷成緊緻梯形
    """
    d = config.domain
    if d.kind == "compact":
        K = Trapezoid.compact(d.x0, d.L, d.height)
    elif d.kind == "unbounded":
        K = Trapezoid.unbounded(d.height if d.height is not None else math.inf)
    elif d.kind == "semi_up":
        K = Trapezoid.semi_up(d.b, d.height if d.height is not None else math.inf)
    else:
        K = Trapezoid.semi_down(d.a, d.height if d.height is not None else math.inf)
    return K.truncate(d.cutoff) if truncated else K


def build_lattice(config, h=None):
    return NullLattice.for_trapezoid(build_domain(config), h or config.h)


def _north_pole(n):
    point = np.zeros(n)
    point[-1] = 1.0
    return point


def build_data(config, manifold, h=None):
    """
    設定中的初始資料，節點為計算區域底邊上的等距網格

    Raises:
        ConfigError: 資料表無法讀取或格式錯誤
    """
    spec = config.data
    h = h or config.h
    lo, hi = build_domain(config).base
    x = uniform_grid(lo, hi, h)
    n = manifold.ambient_dim
    if spec.kind == "constant":
        point = np.asarray(spec.point, dtype=float) if spec.point is not None else _north_pole(n)
        data = constant_data(x, point)
        if spec.velocity is not None:
            data = ManifoldData(x, data.u0, np.tile(np.asarray(spec.velocity, dtype=float), (x.size - 1, 1)))
        return data
    if spec.kind == "geodesic":
        return geodesic_data(x, spec.omega)
    if spec.kind == "traveling_wave":
        return traveling_wave_data(x, spec.arc, *spec.support)
    if spec.kind == "bump":
        point = spec.point if spec.point is not None else _north_pole(n)
        return bump_data(x, spec.amplitude, manifold, spec.support, point)
    return data_from_table(spec.file)


def build_forcing(config, lattice, manifold):
    """None（零外力）或 bump_forcing 產生的格場"""
    spec = config.forcing
    if spec.kind == "zero" or spec.mass == 0.0:
        return None
    n = manifold.ambient_dim
    direction = spec.direction
    if direction is None:
        direction = np.zeros(n)
        direction[0] = 1.0
    return bump_forcing(lattice, spec.mass, spec.center_t, spec.center_x, spec.radius, direction)


def build_budget(config, manifold):
    """設定了 eta 與 R 時為未認證的覆寫預算，否則由流形常數選出"""
    s = config.solver
    if s.eta is not None:
        return ContractionBudget.override(s.eta, s.R, manifold.sup_bound_gamma, manifold.lipschitz_bound_L)
    return default_budget(manifold)


def build_settings(config, threads=None):
    s = config.solver
    return SolverSettings(
        max_iter=s.max_iter,
        sweeps=s.sweeps,
        picard_tol=config.tolerances.picard_tol,
        threads=threads or s.threads,
        delta=s.delta,
    )


# ---------------------------------------------------------------------------
# diagnostics JSON 的格式
# ---------------------------------------------------------------------------

MANIFEST_STATUSES = ("ok", "violations", "error")
_ESTIMATE_KEYS = ['name', 'lhs', 'rhs', 'slack', 'tol', 'ok']
_ERROR_KEYS = ['type', 'message', 'details']

DIAGNOSTICS_SCHEMA = {
    '$schema': "http://json-schema.org/draft-07/schema#",
    'type': "object",
    'required': ['command', 'status', 'seed', 'target', 'h', 'config', 'budget', 'diagnostics',
                 'estimates', 'artifacts', 'error'],
    'additionalProperties': False,
    'properties': {
        'command': {'type': "string"},
        'status': {'enum': list(MANIFEST_STATUSES)},
        'seed': {'type': "integer"},
        'target': {'type': "string"},
        'h': {'type': "number"},
        'config': {'type': "object"},
        'budget': {'type': ["object", "null"]},
        'diagnostics': {'type': "object"},
        'estimates': {'type': "array", 'items': {'type': "object", 'required': _ESTIMATE_KEYS}},
        'artifacts': {'type': "array", 'items': {'type': "string"}},
        'error': {'type': ["object", "null"], 'required': _ERROR_KEYS},
    },
    'if': {'properties': {'status': {'const': "error"}}, 'required': ['status']},
    'then': {'properties': {'error': {'type': "object"}}},
}

_MANIFEST_VALIDATOR = Draft7Validator(DIAGNOSTICS_SCHEMA)


def _describe(error):
    where = list(error.absolute_path)
    if 'then' in error.absolute_schema_path:
        return ["status = error 時必須有 error 區段"]
    if not where:
        if error.validator == 'type':
            return ["manifest 必須是物件"]
        if error.validator == 'required':
            return [f"缺少 {key}" for key in error.validator_value if key not in error.instance]
        if error.validator == 'additionalProperties':
            extra = sorted(set(error.instance) - set(DIAGNOSTICS_SCHEMA['properties']))
            return [f"未知的鍵: {', '.join(extra)}"]
        return [error.message]
    key = where[0]
    if key == 'status':
        return [f"status 必須是 {'/'.join(MANIFEST_STATUSES)}"]
    if key == 'estimates' and len(where) > 1:
        return [f"estimates[{where[1]}] 格式錯誤"]
    if key == 'error' and error.validator == 'required':
        return ["error 需要 type、message、details"]
    return [f"{key} 的型別錯誤"]


def validate_manifest(manifest):
    """
    以 jsonschema 依 DIAGNOSTICS_SCHEMA 檢查 diagnostics JSON

    Returns:
        list[str]: 問題清單，空清單表示通過
    """
    problems = []
    errors = sorted(_MANIFEST_VALIDATOR.iter_errors(manifest),
                    key=lambda e: [str(p) for p in e.absolute_path] + [str(p) for p in e.absolute_schema_path])
    for error in errors:
        for problem in _describe(error):
            if problem not in problems:
                problems.append(problem)
    return problems
