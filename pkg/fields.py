"""
零座標格點上的離散場

NullLattice：a_i = x_left + i·h、b_j = x_left + j·h，(t, x) = ((a−b)/2, (a+b)/2)。
節點 (i, j)（0 ≤ i − j ≤ M）存放 u；格 (p, q)（0 ≤ p − q ≤ M − 1）存放
h、f、v±、∂ₜu、∂ₓu。p > q 的格面積 h²/2、取樣於中心；p = q 的半格面積 h²/4、
取樣於重心。
"""

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from errors import DataCoverage, LatticeMismatch, OffLattice, RegionMismatch
from geometry import ManifoldData

logger = logging.getLogger(__name__)

NODE = "node"
CELL = "cell"

_SNAP_TOL = 1e-9


def _as_count(value, what):
    n = int(round(value))
    if abs(n - value) > _SNAP_TOL * max(1.0, abs(value)):
        raise LatticeMismatch(f"{what} = {value} 不是格距的整數倍", {what: value})
    return n


class NullLattice:
    """
    緊緻梯形上的零座標格點

    Args:
        x_left: 底邊左端點
        h: 格距
        n_cells: 底邊的格數 N
        n_rows: 節點最大對角線 M（高度 = M·h/2）
        parent: 所屬的梯形
    """

    def __init__(self, x_left, h, n_cells, n_rows, parent=None):
        if n_rows < 1 or n_rows > n_cells:
            raise LatticeMismatch(f"列數 M={n_rows} 必須介於 1 與 N={n_cells} 之間")
        self.x_left = float(x_left)
        self.h = float(h)
        self.n_cells = int(n_cells)
        self.n_rows = int(n_rows)
        self.parent = parent

        n = self.n_cells
        idx = np.arange(n + 1)
        self.coords = self.x_left + self.h * idx
        diag_nodes = idx[:, None] - idx[None, :]
        self.node_mask = (diag_nodes >= 0) & (diag_nodes <= self.n_rows)
        self.node_diag = np.where(self.node_mask, diag_nodes, -1)

        cidx = np.arange(n)
        diag_cells = cidx[:, None] - cidx[None, :]
        self.cell_mask = (diag_cells >= 0) & (diag_cells <= self.n_rows - 1)
        self.cell_diag = np.where(self.cell_mask, diag_cells, -1)
        self.half_mask = self.cell_mask & (diag_cells == 0)
        self.full_mask = self.cell_mask & (diag_cells > 0)

        hh = self.h * self.h
        self.cell_area = np.where(self.full_mask, 0.5 * hh, np.where(self.half_mask, 0.25 * hh, 0.0))

        a = self.coords[:, None]
        b = self.coords[None, :]
        self.node_t = np.where(self.node_mask, 0.5 * (a - b), 0.0)
        self.node_x = np.where(self.node_mask, 0.5 * (a + b), 0.0)

        # 中心（全格）或重心（半格）
        ca = self.x_left + self.h * (cidx[:, None] + np.where(self.half_mask, 2.0 / 3.0, 0.5))
        cb = self.x_left + self.h * (cidx[None, :] + np.where(self.half_mask, 1.0 / 3.0, 0.5))
        self.cell_t = np.where(self.cell_mask, 0.5 * (ca - cb), 0.0)
        self.cell_x = np.where(self.cell_mask, 0.5 * (ca + cb), 0.0)

    @classmethod
    def for_trapezoid(cls, K, h):
        """
        在緊緻梯形 K 上建立格點

        Raises:
            LatticeMismatch: h 不能整除 2L 或 2·height
        """
        if not K.is_compact:
            raise LatticeMismatch("格點只建立在緊緻梯形上（無界區域請先截斷）")
        n_cells = _as_count(2 * K.L / h, "2L/h")
        n_rows = _as_count(2 * K.height / h, "2·height/h")
        return cls(K.x0 - K.L, h, n_cells, n_rows, parent=K)

    @property
    def key(self):
        return (self.x_left, self.h, self.n_cells, self.n_rows)

    @property
    def height(self):
        return self.n_rows * self.h / 2

    @property
    def base(self):
        return self.x_left, self.x_left + self.n_cells * self.h

    def same_as(self, other):
        return self is other or self.key == other.key

    def same_base(self, other):
        """底邊相同（端點與格距容許捨入誤差），列數可以不同"""
        return (self.n_cells == other.n_cells
                and abs(self.h - other.h) <= _SNAP_TOL * self.h
                and abs(self.x_left - other.x_left) <= _SNAP_TOL * max(1.0, abs(self.x_left)))

    def cell_corners(self, p, q):
        """格 (p, q) 的 (t, x) 角點（半格只有三個）"""
        a0, a1 = self.coords[p], self.coords[p + 1]
        b0, b1 = self.coords[q], self.coords[q + 1]
        pts = [(a0, b0), (a1, b0), (a1, b1)]
        if p > q:
            pts.append((a0, b1))
        return [((a - b) / 2, (a + b) / 2) for a, b in pts]

    def region_mask(self, region):
        """
        把區域轉成格的布林遮罩

        Args:
            region: None（全部）、布林陣列 (N, N)，或完全落在 K 內的梯形

        Raises:
            RegionMismatch: 形狀不符或區域超出格點
        """
        if region is None:
            return self.cell_mask
        if isinstance(region, np.ndarray):
            if region.shape != self.cell_mask.shape:
                raise RegionMismatch(f"區域遮罩形狀 {region.shape} 與格點 {self.cell_mask.shape} 不符")
            if np.any(region & ~self.cell_mask):
                raise RegionMismatch("區域遮罩包含格點外的格")
            return region.astype(bool)
        lo, hi = region.base
        if lo < self.base[0] - _SNAP_TOL or hi > self.base[1] + _SNAP_TOL or region.height > self.height + _SNAP_TOL:
            raise RegionMismatch(f"區域 {region} 超出格點範圍")
        mask = np.zeros_like(self.cell_mask)
        for p, q in zip(*np.nonzero(self.cell_mask)):
            mask[p, q] = all(_contains_with_tol(region, pt) for pt in self.cell_corners(p, q))
        return mask

    def cells_on_diagonal(self, m):
        """對角線 m 的格索引 (p, q)，由左到右"""
        q = np.arange(self.n_cells - m)
        return q + m, q

    def nodes_on_diagonal(self, m):
        j = np.arange(self.n_cells - m + 1)
        return j + m, j


def _contains_with_tol(K, point):
    t, x = point
    interval = K.slice(min(max(t, 0.0), K.height) if abs(t - K.height) < _SNAP_TOL else t)
    if interval is None:
        return False
    return interval[0] - _SNAP_TOL <= x <= interval[1] + _SNAP_TOL


@dataclass(frozen=True, eq=False)
class Field:
    """
    格點上的 ℝⁿ 值場

    location 為 "node"（形狀 (N+1, N+1, n)）或 "cell"（形狀 (N, N, n)）；
    非作用中的位置一律為 0。
    """

    lattice: NullLattice
    location: str
    values: np.ndarray

    @classmethod
    def zeros(cls, lattice, location, n):
        size = lattice.n_cells + (1 if location == NODE else 0)
        return cls(lattice, location, np.zeros((size, size, n)))

    @classmethod
    def from_function(cls, lattice, location, fn):
        """
        以 fn(t, x) → (P, n) 在取樣點上建立場

        Args:
            lattice: NullLattice
            location: "node" 或 "cell"
            fn: 向量化函數，輸入形狀 (P,) 的 t、x
        """
        mask = lattice.node_mask if location == NODE else lattice.cell_mask
        t = (lattice.node_t if location == NODE else lattice.cell_t)[mask]
        x = (lattice.node_x if location == NODE else lattice.cell_x)[mask]
        samples = np.asarray(fn(t, x), dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        values = np.zeros(mask.shape + (samples.shape[1],))
        values[mask] = samples
        return cls(lattice, location, values)

    @property
    def n(self):
        return self.values.shape[-1]

    @property
    def mask(self):
        return self.lattice.node_mask if self.location == NODE else self.lattice.cell_mask

    def like(self, values):
        return Field(self.lattice, self.location, values)

    def _check(self, other):
        if not self.lattice.same_as(other.lattice) or self.location != other.location:
            raise LatticeMismatch("只能在相同格點與相同位置的場之間運算")

    def __add__(self, other):
        self._check(other)
        return self.like(self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return self.like(self.values - other.values)

    def __mul__(self, scalar):
        return self.like(self.values * float(scalar))

    __rmul__ = __mul__

    def max_abs(self):
        """作用位置上的最大 ℓ¹ 值"""
        active = self.values[self.mask]
        return float(np.max(np.sum(np.abs(active), axis=-1))) if active.size else 0.0


# ---------------------------------------------------------------------------
# 範數
# ---------------------------------------------------------------------------

def l1_norm(field, region=None):
    """
    ∬ |f|₁ dx dt

    格場：每格常數的精確積分；節點場：每格以角點平均的梯形法。

    Args:
        field: Field
        region: None、格遮罩，或梯形

    Returns:
        float: 積分值
    """
    lattice = field.lattice
    mask = lattice.region_mask(region)
    if field.location == CELL:
        density = np.sum(np.abs(field.values), axis=-1)
    else:
        density = node_to_cell_mean(lattice, np.sum(np.abs(field.values), axis=-1)[..., None])[..., 0]
    return float(np.sum(np.where(mask, density * lattice.cell_area, 0.0)))


def node_to_cell_mean(lattice, node_values):
    """
    節點值在每格角點上的平均（全格四點、半格三點）

    Args:
        lattice: NullLattice
        node_values: 形狀 (N+1, N+1, n)

    Returns:
        np.ndarray: 形狀 (N, N, n)
    """
    A = node_values[:-1, :-1]
    B = node_values[1:, :-1]
    C = node_values[:-1, 1:]
    D = node_values[1:, 1:]
    full = 0.25 * (A + B + C + D)
    half = (A + B + D) / 3.0
    out = np.where(lattice.half_mask[..., None], half, full)
    return np.where(lattice.cell_mask[..., None], out, 0.0)


def w11_seminorm(values):
    """
    ‖Dv‖_{L¹}：一階差分的 ℓ¹ 和（與節點間距無關）

    Args:
        values: 節點值，形狀 (K+1,) 或 (K+1, n)
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return float(np.sum(np.abs(np.diff(values, axis=0))))


def h_norm(solution):
    """
    ‖u‖_ℋ = sup|u| + sup_t ∫ (|∂ₓu| + |∂ₜu|) dx

    Args:
        solution: 具有 u（節點場）、ut、ux（格場）與 data 的解

    Returns:
        float: 範數值
    """
    lattice = solution.u.lattice
    sup_u = solution.u.max_abs()
    data = solution.data
    best = 0.0
    if data is not None:
        best = float(np.sum(np.abs(data.du0)) + np.sum(np.abs(data.v0))) * data.h
    density = np.sum(np.abs(solution.ut.values), axis=-1) + np.sum(np.abs(solution.ux.values), axis=-1)
    for m in range(1, lattice.n_rows):
        p, q = lattice.cells_on_diagonal(m)
        best = max(best, float(np.sum(density[p, q])) * lattice.h)
    return sup_u + best


# ---------------------------------------------------------------------------
# 沿特徵線的積分
# ---------------------------------------------------------------------------

def _path_lengths(lattice):
    # 特徵線完整穿過一格的時間長度：全格 h/2、半格 h/4
    return np.where(lattice.full_mask, 0.5 * lattice.h, np.where(lattice.half_mask, 0.25 * lattice.h, 0.0))


def reverse_cumsum(values, axis):
    return np.flip(np.cumsum(np.flip(values, axis=axis), axis=axis), axis=axis)


def transport_kernel(lattice, g, source, direction):
    """
    v(t,x) = g(x ∓ t) + ∫₀ᵗ s 沿特徵線，在每格取樣點上的值

    Args:
        lattice: NullLattice
        g: 底邊每格的值，形狀 (N, n)；plus 以 b 欄索引、minus 以 a 列索引
        source: 格場值，形狀 (N, N, n)
        direction: "plus"（b 固定）或 "minus"（a 固定）

    Returns:
        np.ndarray: 形狀 (N, N, n)
    """
    h = lattice.h
    mask = lattice.cell_mask[..., None]
    s = np.where(mask, source, 0.0)
    passage = s * _path_lengths(lattice)[..., None]
    own = s * (0.25 * h)
    diag_value = np.diagonal(s, axis1=0, axis2=1).T * (h / 6.0)
    if direction == "plus":
        upto = np.cumsum(passage, axis=0)
        before = np.zeros_like(upto)
        before[1:] = upto[:-1]
        value = g[None, :, :] + before + own
        half_value = g + diag_value
    elif direction == "minus":
        upto = reverse_cumsum(passage, axis=1)
        before = np.zeros_like(upto)
        before[:, :-1] = upto[:, 1:]
        value = g[:, None, :] + before + own
        half_value = g + diag_value
    else:
        raise ValueError(f"未知方向: {direction}")
    idx = np.arange(lattice.n_cells)
    value[idx, idx] = half_value
    return np.where(mask, value, 0.0)


def check_data_coverage(data, lattice):
    """資料的底邊必須與格點底邊一致"""
    if (data.n_cells != lattice.n_cells
            or abs(data.h - lattice.h) > _SNAP_TOL * lattice.h
            or abs(data.x[0] - lattice.x_left) > _SNAP_TOL * max(1.0, abs(lattice.x_left))):
        raise DataCoverage(
            "依存三角形超出資料範圍：資料底邊與格點底邊不一致",
            {'data_base': list(data.base), 'lattice_base': list(lattice.base)},
        )


def characteristic_derivatives(data, h_field, lattice=None):
    """
    (v₊, v₋) = ((∂ₜ − ∂ₓ)u, (∂ₜ + ∂ₓ)u)

    v₊ = (v₀ − Du₀)(x − t) + ∫₀ᵗ h(τ, x − t + τ) dτ，v₋ 為鏡像。

    Args:
        data: ManifoldData（底邊即格點底邊）
        h_field: 非齊次項（格場）
        lattice: 預設取 h_field 的格點

    Returns:
        tuple[Field, Field]: (v_plus, v_minus)

    Raises:
        DataCoverage: 資料不足以涵蓋所有依存三角形
    """
    lattice = lattice or h_field.lattice
    check_data_coverage(data, lattice)
    plus = transport_kernel(lattice, data.g_plus, h_field.values, "plus")
    minus = transport_kernel(lattice, data.g_minus, h_field.values, "minus")
    return Field(lattice, CELL, plus), Field(lattice, CELL, minus)


# ---------------------------------------------------------------------------
# 切片
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SliceTrace:
    """
    時間 t 的切片：u 為分段線性（節點）、ut 與 ux 為每段常數
    """

    t: float
    x: np.ndarray
    u: np.ndarray
    ut: np.ndarray
    ux: np.ndarray

    @property
    def interval(self):
        return float(self.x[0]), float(self.x[-1])

    def as_data(self):
        """重新起算時的初始資料 (u(t,·), ∂ₜu(t,·))；∂ₓu 由曲線重新導出"""
        return ManifoldData(self.x, self.u, self.ut)


def lattice_time_index(lattice, t):
    """
    t = m·h/2 的 m

    Raises:
        OffLattice: t 不是格點時間或超出範圍
    """
    m_float = 2.0 * t / lattice.h
    m = int(round(m_float))
    if abs(m - m_float) > _SNAP_TOL * max(1.0, m_float) or m < 0 or m > lattice.n_rows:
        raise OffLattice(f"t = {t} 不是格點時間（h/2 的倍數且 ≤ {lattice.height}）", {'t': t})
    return m


def trace(solution, t):
    """
    取出時間 t 的切片資料

    Args:
        solution: 具有 u、ut、ux、data 的解
        t: 格點時間

    Returns:
        SliceTrace: t = 0 時直接回傳初始資料
    """
    lattice = solution.u.lattice
    m = lattice_time_index(lattice, t)
    if m == 0 and solution.data is not None:
        data = solution.data
        return SliceTrace(0.0, data.x.copy(), data.u0.copy(), data.v0.copy(), data.du0)
    i, j = lattice.nodes_on_diagonal(m)
    x = lattice.node_x[i, j]
    u = solution.u.values[i, j]
    if m <= lattice.n_rows - 1:
        p, q = lattice.cells_on_diagonal(m)
        ut = solution.ut.values[p, q]
        ux = solution.ux.values[p, q]
    else:
        ut = np.zeros((0, u.shape[1]))
        ux = np.zeros((0, u.shape[1]))
    return SliceTrace(m * lattice.h / 2, x, u, ut, ux)


# ---------------------------------------------------------------------------
# 匯出
# ---------------------------------------------------------------------------

def _fmt(value):
    return format(float(value), '.17g')


def export_csv(path, field, name='u'):
    """
    以 17 位有效數字輸出作用位置：欄位 (t, x, <name>_1..<name>_n)

    Returns:
        int: 寫出的列數
    """
    mask = field.mask
    lattice = field.lattice
    t = (lattice.node_t if field.location == NODE else lattice.cell_t)[mask]
    x = (lattice.node_x if field.location == NODE else lattice.cell_x)[mask]
    values = field.values[mask]
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['t', 'x'] + [f'{name}_{k + 1}' for k in range(field.n)])
        for row_t, row_x, row in zip(t, x, values):
            writer.writerow([_fmt(row_t), _fmt(row_x)] + [_fmt(v) for v in row])
    return int(values.shape[0])


def load_csv(path, lattice, location):
    """讀回 export_csv 的輸出（位置以 a = x + t 與 b = x − t 對回索引）"""
    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    n = len(rows[0]) - 2
    field = Field.zeros(lattice, location, n)
    values = field.values
    for row in rows[1:]:
        t, x = float(row[0]), float(row[1])
        a, b = x + t, x - t
        i = int(np.floor((a - lattice.x_left) / lattice.h + (0.5 if location == NODE else 0.0)))
        j = int(np.floor((b - lattice.x_left) / lattice.h + (0.5 if location == NODE else 0.0)))
        values[i, j] = [float(v) for v in row[2:]]
    return field


def write_sidecar(path, **fields):
    """各場的範數 JSON（sorted keys）"""
    payload = {}
    for name, field in fields.items():
        payload[name] = {
            'l1': l1_norm(field),
            'max_abs': field.max_abs(),
            'location': field.location,
        }
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
    return payload
