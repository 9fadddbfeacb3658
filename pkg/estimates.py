"""
解析不等式的數值檢查

每個檢查回傳 EstimateReport(lhs, rhs, tol)。格點上每格常數的資料讓兩邊的積分
都是精確的有限和，所以隨機測試可以用 1e-12 的容許誤差。
"""

import logging
from dataclasses import dataclass

import numpy as np

from domain import Trapezoid
from errors import LatticeMismatch, MissingProvenance, OffLattice, RegionMismatch
from fields import CELL, Field, NullLattice, lattice_time_index, transport_kernel
from geometry import ManifoldData
from linear_wave import solve_linear

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class EstimateReport:
    """
    不等式 lhs ≤ rhs（容許 tol）的結果

    tol 是絕對量：ok 表示 rhs − lhs ≥ −tol。property_suite 傳入的 tol 先乘上 max(1, |rhs|)，
    所以隨機測試的 1e-12 是相對於右邊大小的捨入容許值，縮放後的值會寫在報告裡。
    """

    name: str
    lhs: float
    rhs: float
    tol: float = DEFAULT_TOL

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def ok(self):
        return bool(np.isfinite(self.lhs) and np.isfinite(self.rhs) and self.slack >= -self.tol)

    def to_dict(self):
        return {
            'name': self.name,
            'lhs': self.lhs,
            'rhs': self.rhs,
            'slack': self.slack,
            'tol': self.tol,
            'ok': self.ok,
        }


def _l1(values):
    return np.sum(np.abs(values), axis=-1)


def _euclid(values):
    return np.linalg.norm(values, axis=-1)


def _cell_lengths(lattice):
    """特徵線從格底到取樣點的時間長度，以及完整穿過的長度"""
    h = lattice.h
    to_sample = np.where(lattice.half_mask, h / 6.0, np.where(lattice.full_mask, h / 4.0, 0.0))
    passage = np.where(lattice.half_mask, h / 4.0, np.where(lattice.full_mask, h / 2.0, 0.0))
    return to_sample, passage


def _below_mask(lattice, m):
    """t ≤ m·h/2 的格權重：對角線 < m 的整格，加上對角線 m 的下半格"""
    diag = lattice.cell_diag
    weight = np.where(lattice.cell_mask & (diag < m), 1.0, 0.0)
    weight = weight + np.where(lattice.cell_mask & (diag == m), 0.5, 0.0)
    return weight


def _checker_lattice(f, x0, L, h):
    if f is not None:
        lattice = f.lattice
        lo, hi = lattice.base
        if abs(lo - (x0 - L)) > 1e-9 or abs(hi - (x0 + L)) > 1e-9:
            raise RegionMismatch(f"場的底邊 [{lo}, {hi}] 與 [{x0 - L}, {x0 + L}] 不一致")
        return lattice
    if h is None:
        raise LatticeMismatch("沒有場時必須指定格距 h")
    return NullLattice.for_trapezoid(Trapezoid.compact(x0, L), h)


def _base_values(g, lattice):
    if callable(g):
        values = np.asarray(g(lattice.coords[:-1] + 0.5 * lattice.h), dtype=float)
    else:
        values = np.asarray(g, dtype=float)
    return values[:, None] if values.ndim == 1 else values


def _zero_source(lattice, n):
    return Field.zeros(lattice, CELL, n)


# ---------------------------------------------------------------------------
# 傳輸與 Zhou 雙線性估計
# ---------------------------------------------------------------------------

def field_transport_check(v, g, f, t0, columns=None, norm=_l1, name="transport"):
    """
    ∫_{slice(t0)} |v| ≤ ∫|g| + ∬_{t ≤ t0}|f|，v 為已知的 plus 方向場

    Args:
        v: 格場（plus 方向）
        g: 底邊每格值 (N, n)
        f: 來源格場
        t0: 格點時間
        columns: 只計入這些 b 欄（None 為全部）
        norm: 逐點範數

    Returns:
        EstimateReport
    """
    lattice = v.lattice
    m = lattice_time_index(lattice, t0)
    h = lattice.h
    n_cols = lattice.n_cells
    cols = np.ones(n_cols, dtype=bool) if columns is None else np.asarray(columns, dtype=bool)
    if m == 0:
        lhs = float(np.sum(norm(g)[cols])) * h
    elif m < lattice.n_rows:
        p, q = lattice.cells_on_diagonal(m)
        lhs = float(np.sum(norm(v.values[p, q])[cols[q]])) * h
    else:
        lhs = 0.0
    weight = _below_mask(lattice, m) * lattice.cell_area * cols[None, :]
    rhs = float(np.sum(norm(g)[cols])) * h + float(np.sum(norm(f.values) * weight))
    return EstimateReport(name, lhs, rhs)


def transport_bound_check(g, f, x0, L, t0, h=None):
    """
    傳輸方程的 L¹ 估計

    v(t,x) = g(x − t) + ∫₀ᵗ f，檢查 ∫_{x0−L+t0}^{x0+L−t0} |v(t0,·)| ≤ ∫|g| + ∬|f|。

    Args:
        g: 底邊每格值或函數
        f: 格場；None 表示 0（此時需要 h）
        x0, L: 梯形 x0 ± L（高度 L）
        t0: 格點時間，0 ≤ t0 ≤ L
        h: 格距（f 為 None 時使用）

    Returns:
        EstimateReport
    """
    lattice = _checker_lattice(f, x0, L, h)
    base = _base_values(g, lattice)
    f = f if f is not None else _zero_source(lattice, base.shape[1])
    v = Field(lattice, CELL, transport_kernel(lattice, base, f.values, "plus"))
    return field_transport_check(v, base, f, t0)


def field_zhou_check(v_plus, v_minus, g_plus, g_minus, f_plus, f_minus, t0, name="zhou_bilinear"):
    """
    ∬_{t < t0} |v₊||v₋| ≤ ½(∫|g₊| + ∬|f₊|)(∫|g₋| + ∬|f₋|)

    左邊取對角線 < m 的格；右邊的質量取 t ≤ t0 的整個區域。
    """
    lattice = v_plus.lattice
    m = lattice_time_index(lattice, t0)
    area = lattice.cell_area
    region = lattice.cell_mask & (lattice.cell_diag < m)
    lhs = float(np.sum(np.where(region, _l1(v_plus.values) * _l1(v_minus.values) * area, 0.0)))
    weight = _below_mask(lattice, m) * area
    h = lattice.h
    mass_plus = float(np.sum(_l1(g_plus))) * h + float(np.sum(_l1(f_plus.values) * weight))
    mass_minus = float(np.sum(_l1(g_minus))) * h + float(np.sum(_l1(f_minus.values) * weight))
    return EstimateReport(name, lhs, 0.5 * mass_plus * mass_minus)


def zhou_bilinear_check(g_plus, g_minus, f_plus, f_minus, x0, L, t0, h=None):
    """
    Zhou 雙線性估計

    Args:
        g_plus, g_minus: 底邊值（plus 沿 b 傳輸、minus 沿 a 傳輸）
        f_plus, f_minus: 格場；None 表示 0
        x0, L, t0: 梯形與時間
        h: 格距（兩個 f 都是 None 時使用）

    Returns:
        EstimateReport
    """
    lattice = _checker_lattice(f_plus if f_plus is not None else f_minus, x0, L, h)
    gp = _base_values(g_plus, lattice)
    gm = _base_values(g_minus, lattice)
    fp = f_plus if f_plus is not None else _zero_source(lattice, gp.shape[1])
    fm = f_minus if f_minus is not None else _zero_source(lattice, gm.shape[1])
    vp = Field(lattice, CELL, transport_kernel(lattice, gp, fp.values, "plus"))
    vm = Field(lattice, CELL, transport_kernel(lattice, gm, fm.values, "minus"))
    return field_zhou_check(vp, vm, gp, gm, fp, fm, t0)


# ---------------------------------------------------------------------------
# Q 形式
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QForm:
    """每格的 n×n 矩陣 Q_jk = ∂ₜu_j ∂ₜū_k − ∂ₓu_j ∂ₓū_k"""

    lattice: NullLattice
    values: np.ndarray

    def l1_per_site(self):
        return np.sum(np.abs(self.values), axis=(-2, -1))

    def asymmetry(self):
        return float(np.max(np.abs(self.values - np.swapaxes(self.values, -1, -2)))) if self.values.size else 0.0


def q_form(u, ubar):
    """
    Args:
        u, ubar: 具有 ut、ux 格場的解

    Raises:
        LatticeMismatch: 兩個解不在同一個格點上
    """
    if not u.ut.lattice.same_as(ubar.ut.lattice):
        raise LatticeMismatch("Q(u, ū) 需要兩個解在同一個格點上")
    values = (u.ut.values[..., :, None] * ubar.ut.values[..., None, :]
              - u.ux.values[..., :, None] * ubar.ux.values[..., None, :])
    values = np.where(u.ut.lattice.cell_mask[..., None, None], values, 0.0)
    return QForm(u.ut.lattice, values)


def _require_provenance(solution):
    if getattr(solution, 'data', None) is None or getattr(solution, 'source', None) is None:
        raise MissingProvenance("解沒有記錄初始資料或非齊次項，無法計算估計的右邊")


def _apex_indices(lattice, apex):
    t0, x0 = apex
    a, b = x0 + t0, x0 - t0
    i_float = (a - lattice.x_left) / lattice.h
    j_float = (b - lattice.x_left) / lattice.h
    i, j = int(round(i_float)), int(round(j_float))
    if (abs(i - i_float) > 1e-9 or abs(j - j_float) > 1e-9
            or not 0 <= j <= i <= lattice.n_cells or not lattice.node_mask[i, j]):
        raise OffLattice(f"頂點 {apex} 不是格點節點", {'apex': list(apex)})
    return i, j


def _triangle_masses(solution, i, j, norm=_l1):
    lattice = solution.u.lattice
    data = solution.data
    h = lattice.h
    rows = np.arange(lattice.n_cells)
    tri = lattice.cell_mask & (rows[None, :] >= j) & (rows[:, None] <= i - 1)
    source_mass = float(np.sum(np.where(tri, norm(solution.source.values) * lattice.cell_area, 0.0)))
    plus = float(np.sum(norm(data.g_plus[j:i]))) * h + source_mass
    minus = float(np.sum(norm(data.g_minus[j:i]))) * h + source_mass
    return tri, plus, minus


def q_l1_bound_check(solution, apex, other=None):
    """
    ∬_{T(t0,x0)} |Q(u, ū)|₁ 的上界

    單一解：RHS = (∫|v0 − Du0| + ∬|h|)(∫|v0 + Du0| + ∬|h|)；
    兩個解：RHS = ½[P₊(u)P₋(ū) + P₋(u)P₊(ū)]，ū = u 時與單一解相同。

    Raises:
        MissingProvenance: 解沒有記錄資料或來源項
        OffLattice: 頂點不是節點
    """
    _require_provenance(solution)
    other = other if other is not None else solution
    _require_provenance(other)
    q = q_form(solution, other)
    i, j = _apex_indices(q.lattice, apex)
    tri, p_plus, p_minus = _triangle_masses(solution, i, j)
    _, o_plus, o_minus = _triangle_masses(other, i, j)
    lhs = float(np.sum(np.where(tri, q.l1_per_site() * q.lattice.cell_area, 0.0)))
    rhs = 0.5 * (p_plus * o_minus + p_minus * o_plus)
    return EstimateReport("q_l1" if other is solution else "q_l1_pair", lhs, rhs)


# ---------------------------------------------------------------------------
# M 值解的能量通量與逐點估計（歐氏範數）
# ---------------------------------------------------------------------------

def _forcing_or_zero(solution):
    forcing = getattr(solution, 'forcing', None)
    if forcing is None:
        return _zero_source(solution.u.lattice, solution.u.n)
    return forcing


def energy_flux_check(solution, t0):
    """
    能量通量估計

    報告 1：∫_{slice(t0)} |(∂ₜ − ∂ₓ)u| ≤ ∫_{x0−L}^{x0+L−2t0} |(∂ₜ − ∂ₓ)u(0)| + ∬|f|（同一組 b 欄）
    報告 2：鏡像，∫_{x0−L+2t0}^{x0+L} |(∂ₜ + ∂ₓ)u(0)| 與同一組 a 列。

    Returns:
        tuple[EstimateReport, EstimateReport]
    """
    _require_provenance(solution)
    lattice = solution.u.lattice
    data = solution.data
    forcing = _forcing_or_zero(solution)
    m = lattice_time_index(lattice, t0)
    n_cells = lattice.n_cells
    keep = np.arange(n_cells) < n_cells - m
    first = field_transport_check(solution.v_plus, data.g_plus, forcing, t0, columns=keep,
                                  norm=_euclid, name="energy_flux_plus")

    h = lattice.h
    rows = np.arange(n_cells) >= m
    if m == 0:
        lhs = float(np.sum(_euclid(data.g_minus))) * h
    elif m < lattice.n_rows:
        p, q = lattice.cells_on_diagonal(m)
        lhs = float(np.sum(_euclid(solution.v_minus.values[p, q]))) * h
    else:
        lhs = 0.0
    weight = _below_mask(lattice, m) * lattice.cell_area * rows[:, None]
    rhs = float(np.sum(_euclid(data.g_minus)[rows])) * h + float(np.sum(_euclid(forcing.values) * weight))
    second = EstimateReport("energy_flux_minus", lhs, rhs)
    return first, second


def pointwise_characteristic_bound(solution, site, direction="plus"):
    """
    |(∂ₜ ∓ ∂ₓ)u| 在格 site = (p, q) 的逐點上界：底邊值加上沿特徵線的 ∫|f|
    """
    _require_provenance(solution)
    lattice = solution.u.lattice
    p, q = site
    if not (0 <= q <= p < lattice.n_cells and lattice.cell_mask[p, q]):
        raise OffLattice(f"格 {site} 不在格點上", {'site': list(site)})
    data = solution.data
    f_norm = _euclid(_forcing_or_zero(solution).values)
    to_sample, passage = _cell_lengths(lattice)
    if direction == "plus":
        v = solution.v_plus.values[p, q]
        path = float(np.sum(f_norm[q:p, q] * passage[q:p, q]))
        base = float(_euclid(data.g_plus[q]))
    else:
        v = solution.v_minus.values[p, q]
        path = float(np.sum(f_norm[p, q + 1:p + 1] * passage[p, q + 1:p + 1]))
        base = float(_euclid(data.g_minus[p]))
    rhs = base + path + float(f_norm[p, q] * to_sample[p, q])
    return EstimateReport(f"pointwise_{direction}", float(_euclid(v)), rhs)


def spacetime_null_energy_check(solution):
    """
    ∬_K Σ_j |(∂ₜu_j)² − (∂ₓu_j)²| ≤ (∫(|Du0| + |v0|) + ∬|f|)²
    """
    _require_provenance(solution)
    lattice = solution.u.lattice
    data = solution.data
    forcing = _forcing_or_zero(solution)
    diag_q = solution.ut.values ** 2 - solution.ux.values ** 2
    lhs = float(np.sum(_l1(diag_q) * lattice.cell_area))
    mass = (float(np.sum(_l1(data.du0)) + np.sum(_l1(data.v0))) * data.h
            + float(np.sum(_l1(forcing.values) * lattice.cell_area)))
    return EstimateReport("spacetime_null_energy", lhs, mass * mass)


# ---------------------------------------------------------------------------
# 隨機測試
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RandomInstance:
    data: ManifoldData
    source: Field


def random_instance(rng, lattice, n=2, sparsity=0.3):
    """
    每格常數的隨機資料與來源項

    Args:
        rng: np.random.Generator
        lattice: NullLattice
        n: 分量數
        sparsity: 歸零的格所佔比例

    Returns:
        RandomInstance
    """
    x = lattice.coords
    steps = rng.uniform(-1.0, 1.0, (lattice.n_cells, n)) * lattice.h
    u0 = np.vstack([rng.uniform(-1.0, 1.0, (1, n)), np.zeros((lattice.n_cells, n))])
    u0[1:] = u0[0] + np.cumsum(steps, axis=0)
    v0 = rng.uniform(-1.0, 1.0, (lattice.n_cells, n))
    values = rng.uniform(-1.0, 1.0, (lattice.n_cells, lattice.n_cells, n))
    values *= (rng.uniform(size=(lattice.n_cells, lattice.n_cells)) >= sparsity)[..., None]
    values = np.where(lattice.cell_mask[..., None], values, 0.0)
    return RandomInstance(ManifoldData(x, u0, v0), Field(lattice, CELL, values))


def property_suite(rng, lattice, trials, tol=DEFAULT_TOL):
    """
    在隨機線性解上執行所有檢查

    容許誤差按右邊的大小縮放：tol·max(1, rhs)。

    Returns:
        dict[str, list[EstimateReport]]
    """
    reports = {}

    def add(report):
        scaled = EstimateReport(report.name, report.lhs, report.rhs, tol * max(1.0, abs(report.rhs)))
        reports.setdefault(report.name, []).append(scaled)

    for _ in range(trials):
        inst = random_instance(rng, lattice)
        sol = solve_linear(inst.data, inst.source, lattice)
        other = solve_linear(random_instance(rng, lattice).data, inst.source, lattice)
        m = int(rng.integers(0, lattice.n_rows + 1))
        t0 = m * lattice.h / 2
        add(field_transport_check(sol.v_plus, inst.data.g_plus, inst.source, t0))
        add(field_zhou_check(sol.v_plus, sol.v_minus, inst.data.g_plus, inst.data.g_minus,
                             inst.source, inst.source, t0))
        i = int(rng.integers(0, lattice.n_cells + 1))
        j = int(rng.integers(max(0, i - lattice.n_rows), i + 1))
        apex = (lattice.node_t[i, j], lattice.node_x[i, j])
        add(q_l1_bound_check(sol, apex))
        add(q_l1_bound_check(sol, apex, other))
        for report in energy_flux_check(sol, t0):
            add(report)
        add(spacetime_null_energy_check(sol))
        p, q = np.argwhere(lattice.cell_mask)[int(rng.integers(0, int(np.sum(lattice.cell_mask))))]
        add(pointwise_characteristic_bound(sol, (int(p), int(q)), "plus"))
        add(pointwise_characteristic_bound(sol, (int(p), int(q)), "minus"))
    failed = sum(not r.ok for group in reports.values() for r in group)
    logger.info("property suite: %d trials, %d failures", trials, failed)
    return reports
