"""
目標流形的幾何運算

提供最近點投影、切向/法向投影、第二基本形式項 Γ、外力投影 P，
以及初始資料的相容性檢查與「截斷 → 磨光 → 投影」的資料準備流程。
"""

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import integrate, ndimage

from errors import ConfigError, DistanceExceeded

logger = logging.getLogger(__name__)

# 浮點誤差內視為已在流形上
_ON_MANIFOLD_EPS = 4 * np.finfo(float).eps


class ManifoldKind(Enum):
    UNIT_SPHERE = "UnitSphere"
    CUSTOM = "Custom"


def smoothstep_cutoff(r):
    """
    五次樣條截斷函數 χ(r)

    r ≤ 1/2 時為 1，r ≥ 1 時為 0，中間以 6s⁵ − 15s⁴ + 10s³ 平滑過渡 (C²)。

    Args:
        r: 與流形的相對距離 dist/ε₀（可為陣列）

    Returns:
        np.ndarray: 截斷值
    """
    r = np.asarray(r, dtype=float)
    s = np.clip((1.0 - r) / 0.5, 0.0, 1.0)
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0)


@dataclass(frozen=True)
class EmbeddedManifold:
    """
    嵌入 ℝⁿ 的緊緻目標流形

    UnitSphere 使用封閉公式；Custom 以使用者提供的 callback 實作同樣的契約。
    所有方法接受形狀 (..., n) 的陣列。
    """

    kind: ManifoldKind
    ambient_dim: int
    lipschitz_bound_L: float
    sup_bound_gamma: float
    tubular_radius_eps0: float
    distance_fn: Optional[Callable] = field(default=None, compare=False)
    nearest_point_fn: Optional[Callable] = field(default=None, compare=False)
    tangent_project_fn: Optional[Callable] = field(default=None, compare=False)
    christoffel_fn: Optional[Callable] = field(default=None, compare=False)

    @property
    def name(self):
        if self.kind is ManifoldKind.UNIT_SPHERE:
            return f"sphere:{self.ambient_dim}"
        return "custom"

    def distance(self, q):
        """到流形的距離（形狀 (...,)）"""
        q = np.asarray(q, dtype=float)
        if self.kind is ManifoldKind.UNIT_SPHERE:
            return np.abs(np.linalg.norm(q, axis=-1) - 1.0)
        return np.asarray(self.distance_fn(q), dtype=float)

    def _check_tube(self, q):
        dist = self.distance(q)
        worst = float(np.max(dist)) if dist.size else 0.0
        if worst > self.tubular_radius_eps0:
            raise DistanceExceeded(
                f"點離流形太遠: {worst:.6g} > ε₀ = {self.tubular_radius_eps0}",
                {'distance': worst, 'eps0': self.tubular_radius_eps0},
            )

    def _radial(self, q):
        # 不檢查管狀鄰域；呼叫端自行保證 |q| > 0
        norm = np.linalg.norm(q, axis=-1, keepdims=True)
        on = np.abs(norm - 1.0) <= _ON_MANIFOLD_EPS
        safe = np.where(norm > 0.0, norm, 1.0)
        return np.where(on, q, q / safe)

    def nearest_point(self, q):
        """
        最近點投影 P(q)

        Args:
            q: 管狀鄰域內的點

        Returns:
            np.ndarray: 流形上的點；q 已在流形上時原樣回傳

        Raises:
            DistanceExceeded: q 離流形超過 ε₀
        """
        q = np.asarray(q, dtype=float)
        self._check_tube(q)
        if self.kind is ManifoldKind.UNIT_SPHERE:
            return self._radial(q)
        return np.asarray(self.nearest_point_fn(q), dtype=float)

    def tangent_project(self, p, v):
        """
        正交投影到 T_{P(p)}M

        Args:
            p: 管狀鄰域內的點
            v: 環境空間向量

        Returns:
            np.ndarray: 切向分量
        """
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        self._check_tube(p)
        if self.kind is ManifoldKind.UNIT_SPHERE:
            unit = self._radial(p)
            return v - np.sum(v * unit, axis=-1, keepdims=True) * unit
        return np.asarray(self.tangent_project_fn(self.nearest_point_fn(p), v), dtype=float)

    def normal_project(self, p, v):
        """π_p^⊥ = id − π_p"""
        v = np.asarray(v, dtype=float)
        return v - self.tangent_project(p, v)

    def christoffel_form(self, p, X, Y):
        """
        Σ_jk Γ_jk(p) X_j Y_k；球面上為 −(X·Y)p

        Args:
            p: 流形上的點
            X, Y: 環境空間向量

        Returns:
            np.ndarray: 法向向量
        """
        p = np.asarray(p, dtype=float)
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if self.kind is ManifoldKind.UNIT_SPHERE:
            return -np.sum(X * Y, axis=-1, keepdims=True) * p
        return np.asarray(self.christoffel_fn(p, X, Y), dtype=float)

    def forcing_project(self, p, f_val):
        """P(u)f 的標準選擇：切向投影"""
        return self.tangent_project(p, f_val)

    # --- 流形外的延拓（有界且全域 Lipschitz） ---

    def cutoff(self, q):
        """延拓係數的徑向截斷 χ(dist(q)/ε₀)"""
        return smoothstep_cutoff(self.distance(q) / self.tubular_radius_eps0)

    def _extended_base(self, q):
        q = np.asarray(q, dtype=float)
        chi = self.cutoff(q)[..., None]
        inside = chi > 0.0
        if self.kind is ManifoldKind.UNIT_SPHERE:
            p = self._radial(q)
        else:
            # callback 只在鄰域內有定義
            p = np.where(inside, q, 0.0)
            mask = inside[..., 0]
            if np.any(mask):
                p[mask] = self.nearest_point_fn(q[mask])
        return p, chi, inside

    def extended_christoffel(self, q, X, Y):
        """
        Γ 的延拓：χ·Γ(P(q))，鄰域外為零

        Args:
            q: 任意環境空間點
            X, Y: 環境空間向量

        Returns:
            np.ndarray: 延拓後的 Γ(q)(X, Y)
        """
        p, chi, inside = self._extended_base(q)
        value = self.christoffel_form(p, X, Y)
        return np.where(inside, chi * value, 0.0)

    def extended_forcing(self, q, f_val):
        """P 的延拓：χ·π_{P(q)} f，鄰域外為零"""
        p, chi, inside = self._extended_base(q)
        f_val = np.asarray(f_val, dtype=float)
        if self.kind is ManifoldKind.UNIT_SPHERE:
            tangent = f_val - np.sum(f_val * p, axis=-1, keepdims=True) * p
        else:
            tangent = np.where(inside, self.tangent_project_fn(p, f_val), 0.0)
        return np.where(inside, chi * tangent, 0.0)


def sphere(n=3):
    """
    單位球面 S^{n−1} ⊂ ℝⁿ

    γ = 1、L = 3 為在半徑 0.1 管狀鄰域內量測後固定的常數（見 measure_bounds）。
    """
    if n < 2:
        raise ConfigError(f"球面的環境維度必須 ≥ 2，收到 {n}")
    return EmbeddedManifold(
        kind=ManifoldKind.UNIT_SPHERE,
        ambient_dim=int(n),
        lipschitz_bound_L=3.0,
        sup_bound_gamma=1.0,
        tubular_radius_eps0=0.5,
    )


def custom_manifold(ambient_dim, distance_fn, nearest_point_fn, tangent_project_fn,
                    christoffel_fn, lipschitz_bound_L, sup_bound_gamma,
                    tubular_radius_eps0):
    """使用者自訂的流形；callback 必須滿足與球面相同的契約"""
    return EmbeddedManifold(
        kind=ManifoldKind.CUSTOM,
        ambient_dim=int(ambient_dim),
        lipschitz_bound_L=float(lipschitz_bound_L),
        sup_bound_gamma=float(sup_bound_gamma),
        tubular_radius_eps0=float(tubular_radius_eps0),
        distance_fn=distance_fn,
        nearest_point_fn=nearest_point_fn,
        tangent_project_fn=tangent_project_fn,
        christoffel_fn=christoffel_fn,
    )


def parse_target(spec):
    """
    解析設定檔的 target 字串，例如 "sphere:3"

    Raises:
        ConfigError: 未知的目標
    """
    kind, _, dim = str(spec).partition(":")
    if kind != "sphere":
        raise ConfigError(f"未知的目標流形: {spec!r}（目前只支援 sphere:<n>）")
    try:
        n = int(dim) if dim else 3
    except ValueError:
        raise ConfigError(f"target 維度格式錯誤: {spec!r}") from None
    return sphere(n)


def _random_unit(rng, count, n):
    g = rng.standard_normal((count, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def measure_bounds(manifold, radius=0.1, samples=4000, seed=0):
    """
    在管狀鄰域內取樣，量測延拓 Γ 的上界與 Lipschitz 商

    Args:
        manifold: EmbeddedManifold（目前只量測球面）
        radius: 取樣鄰域半徑
        samples: 取樣數
        seed: Philox 亂數種子

    Returns:
        dict: {'gamma': 量測上界, 'lipschitz': 量測 Lipschitz 商}
    """
    if manifold.kind is not ManifoldKind.UNIT_SPHERE:
        return {'gamma': manifold.sup_bound_gamma, 'lipschitz': manifold.lipschitz_bound_L}
    rng = np.random.Generator(np.random.Philox(seed))
    n = manifold.ambient_dim
    base = _random_unit(rng, samples, n)
    q1 = base * (1.0 + rng.uniform(-radius, radius, (samples, 1)))
    step = rng.standard_normal((samples, n)) * 1e-3
    q2 = q1 + step
    keep = manifold.distance(q2) <= radius
    X = _random_unit(rng, samples, n)
    Y = _random_unit(rng, samples, n)

    g1 = manifold.extended_christoffel(q1, X, Y)
    g2 = manifold.extended_christoffel(q2, X, Y)
    gamma = float(np.max(np.linalg.norm(g1, axis=1)))
    diff = np.linalg.norm(g1 - g2, axis=1)[keep]
    dist = np.linalg.norm(step, axis=1)[keep]
    f1 = manifold.extended_forcing(q1, X)
    f2 = manifold.extended_forcing(q2, X)
    diff_f = np.linalg.norm(f1 - f2, axis=1)[keep]
    lipschitz = float(np.max(np.maximum(diff, diff_f) / dist)) if dist.size else 0.0
    logger.debug("measured gamma=%.4f lipschitz=%.4f over %d samples", gamma, lipschitz, samples)
    return {'gamma': gamma, 'lipschitz': lipschitz}


# ---------------------------------------------------------------------------
# 初始資料
# ---------------------------------------------------------------------------

def uniform_grid(lo, hi, h):
    """
    等距節點 x_k = lo + k·h

    Raises:
        ConfigError: h 不能整除區間長度
    """
    count = (hi - lo) / h
    n_cells = int(round(count))
    if n_cells < 1 or abs(n_cells - count) > 1e-9 * max(1.0, abs(count)):
        raise ConfigError(f"格距 h={h} 不能整除區間 [{lo}, {hi}]")
    return lo + h * np.arange(n_cells + 1)


@dataclass(frozen=True, eq=False)
class ManifoldData:
    """
    初始資料 (u0, v0)

    u0 為分段線性曲線（節點值，形狀 (N+1, n)），v0 為每格常數（形狀 (N, n)）。
    """

    x: np.ndarray
    u0: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        u0 = np.atleast_2d(np.asarray(self.u0, dtype=float))
        v0 = np.atleast_2d(np.asarray(self.v0, dtype=float))
        if x.ndim != 1 or x.size < 2:
            raise ConfigError("資料節點至少需要兩個")
        if u0.shape[0] != x.size or v0.shape != (x.size - 1, u0.shape[1]):
            raise ConfigError(
                f"資料形狀不一致: x {x.shape}, u0 {u0.shape}, v0 {v0.shape}"
            )
        steps = np.diff(x)
        if np.max(np.abs(steps - steps[0])) > 1e-9 * abs(steps[0]):
            raise ConfigError("資料節點必須等距")
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'u0', u0)
        object.__setattr__(self, 'v0', v0)

    @classmethod
    def from_functions(cls, x, u_fn, v_fn):
        """u 取節點值、v 取格中點值"""
        x = np.asarray(x, dtype=float)
        mid = 0.5 * (x[:-1] + x[1:])
        u0 = np.asarray([u_fn(s) for s in x], dtype=float)
        v0 = np.asarray([v_fn(s) for s in mid], dtype=float)
        return cls(x, u0, v0)

    @property
    def h(self):
        return float(self.x[1] - self.x[0])

    @property
    def n_cells(self):
        return self.x.size - 1

    @property
    def dim(self):
        return self.u0.shape[1]

    @property
    def base(self):
        return float(self.x[0]), float(self.x[-1])

    @property
    def du0(self):
        return np.diff(self.u0, axis=0) / self.h

    @property
    def g_plus(self):
        """(∂ₜ − ∂ₓ)u 的初值 v0 − Du0"""
        return self.v0 - self.du0

    @property
    def g_minus(self):
        """(∂ₜ + ∂ₓ)u 的初值 v0 + Du0"""
        return self.v0 + self.du0

    def restrict(self, i0, i1):
        """節點 i0..i1 的子資料"""
        if not 0 <= i0 < i1 <= self.n_cells:
            raise ConfigError(f"子區間索引越界: [{i0}, {i1}]")
        return ManifoldData(self.x[i0:i1 + 1], self.u0[i0:i1 + 1], self.v0[i0:i1])

    def cell_masses(self):
        """每格的 (|v0−Du0|₁·h, |v0+Du0|₁·h)"""
        h = self.h
        plus = np.sum(np.abs(self.g_plus), axis=1) * h
        minus = np.sum(np.abs(self.g_minus), axis=1) * h
        return plus, minus

    def masses(self):
        plus, minus = self.cell_masses()
        h = self.h
        return {
            'g_plus': float(np.sum(plus)),
            'g_minus': float(np.sum(minus)),
            'du0': float(np.sum(np.abs(self.du0)) * h),
            'v0': float(np.sum(np.abs(self.v0)) * h),
        }


def constant_data(x, point):
    point = np.asarray(point, dtype=float)
    x = np.asarray(x, dtype=float)
    return ManifoldData(x, np.tile(point, (x.size, 1)), np.zeros((x.size - 1, point.size)))


def geodesic_data(x, omega):
    """u0 ≡ (1,0,0)、v0 ≡ ω(0,1,0)；解為 (cos ωt, sin ωt, 0)"""
    x = np.asarray(x, dtype=float)
    u0 = np.tile([1.0, 0.0, 0.0], (x.size, 1))
    v0 = np.tile([0.0, float(omega), 0.0], (x.size - 1, 1))
    return ManifoldData(x, u0, v0)


def great_circle_arc(s, arc, lo=-1.0, hi=1.0):
    """大圓弧 γ(s) = (sin θ, 0, cos θ)，θ 在 [lo, hi] 上線性增加至 arc，兩端為常數"""
    theta = arc * (np.clip(s, lo, hi) - lo) / (hi - lo)
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=-1)


def traveling_wave_data(x, arc, lo=-1.0, hi=1.0):
    """零質量資料 v0 = −Du0，解為行波 γ(x − t)"""
    x = np.asarray(x, dtype=float)
    u0 = great_circle_arc(x, arc, lo, hi)
    v0 = -np.diff(u0, axis=0) / (x[1] - x[0])
    return ManifoldData(x, u0, v0)


def polynomial_bump(s):
    """(1 − s²)⁴，|s| < 1；在 ±1 具三階連續導數"""
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) < 1.0, (1.0 - s * s) ** 4, 0.0)


def bump_data(x, amplitude, manifold, support=(-1.0, 1.0), point=(0.0, 0.0, 1.0)):
    """
    支集在 support 內的小擾動資料

    u0 = P(point + A·β(x)e₁)，v0 = A·β(x)e₂ 投影到 u 的切空間；支集外 u0 ≡ point、v0 = 0。
    """
    x = np.asarray(x, dtype=float)
    point = np.asarray(point, dtype=float)
    center = 0.5 * (support[0] + support[1])
    half = 0.5 * (support[1] - support[0])
    n = point.size
    e1 = np.zeros(n)
    e1[0] = 1.0
    e2 = np.zeros(n)
    e2[1] = 1.0
    beta = polynomial_bump((x - center) / half)
    u0 = manifold.nearest_point(point + amplitude * beta[:, None] * e1)
    mid = 0.5 * (x[:-1] + x[1:])
    u_mid = manifold.nearest_point(0.5 * (u0[:-1] + u0[1:]))
    v_raw = amplitude * polynomial_bump((mid - center) / half)[:, None] * e2
    v0 = manifold.tangent_project(u_mid, v_raw)
    return ManifoldData(x, u0, v0)


def data_from_table(path):
    """
    從 CSV 讀入資料表

    欄位 x, u1..un, v1..vn；第 k 列的 v 是格 [x_k, x_{k+1}] 的值，最後一列的 v 忽略。
    """
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise ConfigError(f"無法讀取資料表 {path}: {e}") from None
    header, body = rows[0], rows[1:]
    u_cols = [i for i, name in enumerate(header) if name.startswith('u')]
    v_cols = [i for i, name in enumerate(header) if name.startswith('v')]
    if not u_cols or len(u_cols) != len(v_cols) or header[0] != 'x':
        raise ConfigError(f"資料表欄位格式錯誤: {header}")
    x = np.array([float(r[0]) for r in body])
    u0 = np.array([[float(r[i]) for i in u_cols] for r in body])
    v0 = np.array([[float(r[i]) for i in v_cols] for r in body[:-1]])
    return ManifoldData(x, u0, v0)


# ---------------------------------------------------------------------------
# 相容性與資料準備
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompatibilityReport:
    max_defect: float
    ok: bool


def cell_midpoints_on_manifold(data, manifold):
    """每格中點的流形點 P(½(u_k + u_{k+1}))"""
    return manifold.nearest_point(0.5 * (data.u0[:-1] + data.u0[1:]))


def check_compatibility(data, tol, manifold=None):
    """
    檢查 v0(x) ∈ T_{u0(x)}M（在每格中點取樣）

    Args:
        data: ManifoldData
        tol: 容許的法向分量
        manifold: 目標流形，預設為同維度的單位球面

    Returns:
        CompatibilityReport: 最大法向分量（ℓ¹）與是否通過
    """
    manifold = manifold or sphere(data.dim)
    u_mid = cell_midpoints_on_manifold(data, manifold)
    normal = manifold.normal_project(u_mid, data.v0)
    defect = float(np.max(np.sum(np.abs(normal), axis=1))) if normal.size else 0.0
    return CompatibilityReport(max_defect=defect, ok=defect <= tol)


def manifold_defect_of_nodes(u, manifold):
    """節點到流形的最大距離"""
    u = np.asarray(u, dtype=float)
    return float(np.max(manifold.distance(u))) if u.size else 0.0


def _bump_profile(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def mollifier_weights(width, h):
    """
    磨光核 b_w 在每個格上的精確積分權重

    Args:
        width: 核的支集半徑
        h: 格距

    Returns:
        np.ndarray: 長度 2r+1 的權重，總和為 1；r = 0 時為 [1.0]
    """
    r = int(np.floor(width / h))
    if r < 1:
        return np.array([1.0])
    mass, _ = integrate.quad(lambda s: float(_bump_profile(s)), -1.0, 1.0)
    weights = np.empty(2 * r + 1)
    for k, i in enumerate(range(-r, r + 1)):
        lo = max(-1.0, (i - 0.5) * h / width)
        hi = min(1.0, (i + 0.5) * h / width)
        part, _ = integrate.quad(lambda s: float(_bump_profile(s)), lo, hi)
        weights[k] = part / mass
    return weights / np.sum(weights)


def _oscillation_width(u0, h, limit):
    """最大的視窗寬度，使視窗內 u0 的 ℓ¹ 振幅 ≤ limit"""
    n_nodes = u0.shape[0]
    best = 0
    for size in range(2, n_nodes + 1):
        spread = np.zeros(n_nodes)
        for j in range(u0.shape[1]):
            hi = ndimage.maximum_filter1d(u0[:, j], size=size, mode='nearest')
            lo = ndimage.minimum_filter1d(u0[:, j], size=size, mode='nearest')
            spread += hi - lo
        if np.max(spread) > limit:
            break
        best = size - 1
    return best * h


def smooth_approximate(data, k, manifold=None):
    """
    截斷、磨光並投影初始資料，使其在取樣點上精確相容

    流程：u0 在 [−k, k] 外以常數延拓、v0 在 (−k, k) 外歸零；以寬度
    min(1/k, 振幅寬度) 的 bump 卷積；最後 u ← P(ū)、v ← π_u v̄。

    Args:
        data: ManifoldData
        k: 截斷半徑（正整數）
        manifold: 目標流形

    Returns:
        ManifoldData: 新資料（同樣的節點）

    Raises:
        DistanceExceeded: 磨光後的曲線離開管狀鄰域
    """
    if k < 1:
        raise ConfigError(f"k 必須為正整數，收到 {k}")
    manifold = manifold or sphere(data.dim)
    x = data.x
    h = data.h

    edge = np.array([np.interp(np.clip(x, -k, k), x, data.u0[:, j]) for j in range(data.dim)]).T
    mid = 0.5 * (x[:-1] + x[1:])
    v_cut = np.where(((mid > -k) & (mid < k))[:, None], data.v0, 0.0)

    width = min(1.0 / k, _oscillation_width(edge, h, manifold.tubular_radius_eps0 / 3.0))
    weights = mollifier_weights(width, h) if width > 0 else np.array([1.0])
    logger.debug("smooth_approximate k=%d width=%.4g taps=%d", k, width, weights.size)

    u_bar = ndimage.convolve1d(edge, weights, axis=0, mode='nearest')
    v_bar = ndimage.convolve1d(v_cut, weights, axis=0, mode='constant', cval=0.0)

    u_new = manifold.nearest_point(u_bar)
    u_mid = manifold.nearest_point(0.5 * (u_new[:-1] + u_new[1:]))
    v_new = manifold.tangent_project(u_mid, v_bar)
    return ManifoldData(x, u_new, v_new)
