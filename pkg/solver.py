"""
非線性求解器

Φ(h) = Γ(u)(Q) + P(u)f，其中 u 與 v± 由 h 經 d'Alembert 公式與傳輸公式得到。
小資料用 Picard 迭代求不動點；大資料以小梯形覆蓋、黏合、再從切片重新起算。

所有在連續求解中使用的 Picard 都是固定次數模式：每一格的值只依賴它的依存三角形，
因此重疊區域、子區域與延伸求解的結果逐位元相同。
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from domain import Trapezoid, decompose_unbounded, tile_cover
from errors import (
    BudgetInfeasible, ConfigError, DegenerateHeight, LatticeMismatch, NoConvergence,
    OverlapMismatch, SmallnessViolated, StallDetected, TailNotSmall,
)
from estimates import energy_flux_check
from fields import (
    CELL, NODE, Field, NullLattice, check_data_coverage, h_norm, l1_norm, node_to_cell_mean,
    transport_kernel,
)
from geometry import ManifoldData, sphere
from linear_wave import dalembert_kernel

logger = logging.getLogger(__name__)

SMALL_DATA = "SmallData"
TILED = "Tiled"
CONTINUED = "Continued"
CONCATENATED = "Concatenated"

# 比較質量與門檻時容許的相對誤差
_MASS_SLACK = 1e-12


# ---------------------------------------------------------------------------
# (η, R) 預算
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContractionBudget:
    """
    小資料門檻 η 與 h 球半徑 R

    certified = False 表示由設定檔覆寫、未經三個不等式驗證的預算。
    """

    eta: float
    R: float
    gamma: float
    L_lip: float
    certified: bool = True

    def invariance(self):
        return (self.eta + self.R) ** 2 + self.eta <= self.R / self.gamma

    def sufficient(self):
        return 2 * self.eta ** 2 + 2 * self.R ** 2 + self.eta <= self.R / self.gamma

    def contraction(self):
        lhs = self.L_lip * (self.eta + self.R) ** 2 + 5 * self.gamma * self.eta + 4 * self.gamma * self.R
        return lhs < 0.5

    def is_valid(self):
        return self.invariance() and self.sufficient() and self.contraction()

    @classmethod
    def override(cls, eta, R, gamma=1.0, L_lip=1.0):
        """設定檔指定的預算（不驗證，certified = False）"""
        if eta <= 0 or R <= 0:
            raise ConfigError(f"預算必須為正數: eta={eta}, R={R}")
        return cls(float(eta), float(R), float(gamma), float(L_lip), certified=False)

    def to_dict(self):
        return {
            'eta': self.eta,
            'R': self.R,
            'gamma': self.gamma,
            'L_lip': self.L_lip,
            'certified': self.certified,
        }


def validate_budget(eta, R, gamma, L_lip):
    """
    驗證三個不等式，通過時回傳 certified 預算

    Raises:
        BudgetInfeasible: 任一個不等式不成立
    """
    budget = ContractionBudget(float(eta), float(R), float(gamma), float(L_lip))
    checks = {
        'invariance': budget.invariance(),
        'sufficient': budget.sufficient(),
        'contraction': budget.contraction(),
    }
    if not all(checks.values()):
        raise BudgetInfeasible(f"預算 (eta={eta}, R={R}) 不滿足條件", checks)
    return budget


def select_budget(gamma, L_lip):
    """
    以 2 的冪次向下掃描選出 (η, R)

    R 取 {2^-k/γ} 中滿足 4γR ≤ 1/4 與 4R² ≤ R/γ 的最大值；
    η 取 {2^-m} 中在 R 固定下滿足三個不等式的最大值。

    Raises:
        BudgetInfeasible: 參數非正或 η 下溢
    """
    if not (gamma > 0 and L_lip > 0 and math.isfinite(gamma) and math.isfinite(L_lip)):
        raise BudgetInfeasible(f"γ 與 L 必須為正的有限數: gamma={gamma}, L={L_lip}")
    R = None
    for k in range(0, 1100):
        candidate = 2.0 ** -k / gamma
        if candidate == 0.0:
            break
        if 4 * gamma * candidate <= 0.25 and 4 * candidate * candidate <= candidate / gamma:
            R = candidate
            break
    if R is None:
        raise BudgetInfeasible(f"找不到 R（gamma={gamma}）")
    for m in range(0, 1100):
        eta = 2.0 ** -m
        if eta == 0.0:
            break
        budget = ContractionBudget(eta, R, float(gamma), float(L_lip))
        if budget.is_valid():
            logger.debug("select_budget gamma=%g L=%g -> eta=%g R=%g", gamma, L_lip, eta, R)
            return budget
    raise BudgetInfeasible(f"η 下溢（gamma={gamma}, L={L_lip}）")


def default_budget(manifold):
    return select_budget(manifold.sup_bound_gamma, manifold.lipschitz_bound_L)


# ---------------------------------------------------------------------------
# 設定與結果
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverSettings:
    """
    Args:
        max_iter: 容許誤差模式的最大迭代次數
        sweeps: 固定次數模式的迭代次數
        picard_tol: 容許誤差模式的停止門檻
        threads: 小梯形的平行數
        delta: 小梯形半長的覆寫值（None 表示由資料決定）
        nesting_tol: 延伸求解之間容許的差異（None 表示逐位元相同）
    """

    max_iter: int = 200
    sweeps: int = 60
    picard_tol: float = 1e-13
    threads: int = 1
    delta: Optional[float] = None
    nesting_tol: Optional[float] = None


@dataclass
class SolveDiagnostics:
    path: str = SMALL_DATA
    iterations: int = 0
    final_residual: float = 0.0
    ratios: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    max_h_norm: float = 0.0
    segments: list = field(default_factory=list)
    tiles: int = 0
    overlap_checks: int = 0
    overlap_discrepancy: float = 0.0
    budget: dict = field(default_factory=dict)
    estimates: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def absorb(self, result):
        self.iterations = max(self.iterations, result.iterations)
        self.final_residual = max(self.final_residual, result.final_residual)
        self.max_h_norm = max(self.max_h_norm, result.max_h_norm)
        self.ratios.extend(result.ratios)

    def to_dict(self):
        return {
            'path': self.path,
            'iterations': self.iterations,
            'final_residual': self.final_residual,
            'ratios': list(self.ratios),
            'increments': list(self.increments),
            'max_h_norm': self.max_h_norm,
            'segments': list(self.segments),
            'tiles': self.tiles,
            'overlap_checks': self.overlap_checks,
            'overlap_discrepancy': self.overlap_discrepancy,
            'budget': dict(self.budget),
            'estimates': [r.to_dict() for r in self.estimates],
            'extra': dict(self.extra),
        }


@dataclass(frozen=True, eq=False)
class Solution:
    """
    非線性問題的解

    h_field 是 Φ 的不動點；對估計而言它就是線性方程的非齊次項 (source)。
    """

    u: Field
    ut: Field
    ux: Field
    v_plus: Field
    v_minus: Field
    h_field: Field
    data: ManifoldData
    forcing: Field
    domain: Trapezoid
    manifold: object
    diagnostics: SolveDiagnostics

    @property
    def source(self):
        return self.h_field

    @property
    def lattice(self):
        return self.u.lattice

    @property
    def path(self):
        return self.diagnostics.path


@dataclass(frozen=True, eq=False)
class _PatchResult:
    lattice: NullLattice
    u: np.ndarray
    h_field: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray
    iterations: int
    final_residual: float
    ratios: tuple
    increments: tuple
    max_h_norm: float


# ---------------------------------------------------------------------------
# 外力
# ---------------------------------------------------------------------------

def forcing_values(lattice, f, n):
    """
    把外力轉成格點上的陣列

    Args:
        lattice: NullLattice
        f: None、同一格點（或同底、列數較多）的格場，或 f(t, x) → (P, n)
        n: 分量數

    Raises:
        LatticeMismatch: 格場不在這個格點上
    """
    if f is None:
        return np.zeros((lattice.n_cells, lattice.n_cells, n))
    if isinstance(f, Field):
        if f.location != CELL or not f.lattice.same_base(lattice) or f.lattice.n_rows < lattice.n_rows:
            raise LatticeMismatch("外力必須是同一格點上的格場")
        return np.where(lattice.cell_mask[..., None], f.values, 0.0)
    return Field.from_function(lattice, CELL, f).values


def bump_forcing(lattice, mass, center_t, center_x, radius, direction):
    """
    支集在 (center_t, center_x) 附近、∬|f|₁ = mass 的外力

    Args:
        lattice: NullLattice
        mass: 目標 L¹ 質量
        center_t, center_x: 中心
        radius: 支集半徑
        direction: 環境空間方向向量

    Returns:
        Field: 格場
    """
    direction = np.asarray(direction, dtype=float)

    def profile(t, x):
        st = np.clip((t - center_t) / radius, -1.0, 1.0)
        sx = np.clip((x - center_x) / radius, -1.0, 1.0)
        weight = ((1.0 - st * st) * (1.0 - sx * sx)) ** 4
        return weight[:, None] * direction[None, :]

    raw = Field.from_function(lattice, CELL, profile)
    total = l1_norm(raw)
    if total <= 0.0:
        return raw
    return raw * (mass / total)


# ---------------------------------------------------------------------------
# Φ 映射與 Picard 迭代
# ---------------------------------------------------------------------------

def phi_kernel(lattice, h_values, data, f_values, manifold):
    u = dalembert_kernel(lattice, data.u0, data.v0, h_values)
    vp = transport_kernel(lattice, data.g_plus, h_values, "plus")
    vm = transport_kernel(lattice, data.g_minus, h_values, "minus")
    mask = lattice.cell_mask
    uc = node_to_cell_mean(lattice, u)[mask]
    a, b = vp[mask], vm[mask]
    nonlinear = 0.5 * (manifold.extended_christoffel(uc, a, b) + manifold.extended_christoffel(uc, b, a))
    out = np.zeros_like(h_values)
    out[mask] = nonlinear + manifold.extended_forcing(uc, f_values[mask])
    return out


def phi_map(h_field, data, f=None, manifold=None):
    """
    Φ(h)：每格 Γ_ext(u_c)(v₊, v₋) + P_ext(u_c) f

    u_c 為格角點上 u 的平均；Q = ½(v₊v₋ᵀ + v₋v₊ᵀ) 與對稱的 Γ 縮併後即為 Γ(v₊, v₋)。

    Args:
        h_field: 格場
        data: ManifoldData
        f: 外力
        manifold: 目標流形（預設為球面）

    Returns:
        Field: Φ(h)

    Raises:
        DataCoverage: 資料底邊與格點不一致
    """
    lattice = h_field.lattice
    check_data_coverage(data, lattice)
    manifold = manifold or sphere(data.dim)
    f_values = forcing_values(lattice, f, data.dim)
    return h_field.like(phi_kernel(lattice, h_field.values, data, f_values, manifold))


def _cell_l1(lattice, values):
    return l1_norm(Field(lattice, CELL, values))


def _check_smallness(data, f_values, lattice, budget):
    masses = data.masses()
    force = _cell_l1(lattice, f_values)
    limit = budget.eta * (1 + _MASS_SLACK)
    if masses['g_plus'] > limit or masses['g_minus'] > limit or force > limit:
        raise SmallnessViolated(
            f"資料或外力超過小資料門檻 η = {budget.eta}",
            {'g_plus': masses['g_plus'], 'g_minus': masses['g_minus'], 'forcing': force, 'eta': budget.eta},
        )


def _is_small(data, f_values, lattice, budget):
    try:
        _check_smallness(data, f_values, lattice, budget)
    except SmallnessViolated:
        return False
    return True


def _picard(lattice, data, f_values, budget, manifold, settings, fixed, check_smallness=True, tol=None):
    check_data_coverage(data, lattice)
    if check_smallness:
        _check_smallness(data, f_values, lattice, budget)
    tol = settings.picard_tol if tol is None else tol
    max_iter = settings.sweeps if fixed else settings.max_iter
    h_values = np.zeros((lattice.n_cells, lattice.n_cells, data.dim))
    increments, ratios = [], []
    max_norm = 0.0
    streak = 0
    converged = False
    for _ in range(max_iter):
        new = phi_kernel(lattice, h_values, data, f_values, manifold)
        delta = _cell_l1(lattice, new - h_values)
        norm = _cell_l1(lattice, new)
        max_norm = max(max_norm, norm)
        if increments and increments[-1] > 1e-13 * (1.0 + norm):
            ratio = delta / increments[-1]
            ratios.append(ratio)
            streak = streak + 1 if ratio > 0.9 else 0
        increments.append(delta)
        h_values = new
        if not math.isfinite(delta):
            raise NoConvergence("Picard 迭代發散（增量非有限值）", {'increments': increments[-5:]})
        if delta == 0.0 or (not fixed and delta <= tol):
            converged = True
            break
        if not fixed and streak >= 3:
            raise NoConvergence(
                "Picard 收縮比連續三次 > 0.9（預算不適用或格點太粗）",
                {'ratios': ratios[-5:], 'increments': increments[-5:]},
            )
    if not fixed and not converged:
        raise NoConvergence(
            f"{max_iter} 次迭代後仍未收斂",
            {'last_increment': increments[-1] if increments else None, 'tol': tol},
        )
    logger.debug("picard %s: %d sweeps, last increment %.3e", "fixed" if fixed else "tol",
                 len(increments), increments[-1] if increments else 0.0)
    u = dalembert_kernel(lattice, data.u0, data.v0, h_values)
    vp = transport_kernel(lattice, data.g_plus, h_values, "plus")
    vm = transport_kernel(lattice, data.g_minus, h_values, "minus")
    return _PatchResult(
        lattice, u, h_values, vp, vm,
        iterations=len(increments),
        final_residual=increments[-1] if increments else 0.0,
        ratios=tuple(ratios),
        increments=tuple(increments),
        max_h_norm=max_norm,
    )


def _solution_from_result(result, data, f_values, domain, manifold, diagnostics):
    lattice = result.lattice
    vp = Field(lattice, CELL, result.v_plus)
    vm = Field(lattice, CELL, result.v_minus)
    return Solution(
        u=Field(lattice, NODE, result.u),
        ut=vp.like(0.5 * (result.v_plus + result.v_minus)),
        ux=vp.like(0.5 * (result.v_minus - result.v_plus)),
        v_plus=vp,
        v_minus=vm,
        h_field=Field(lattice, CELL, result.h_field),
        data=data,
        forcing=Field(lattice, CELL, f_values),
        domain=domain,
        manifold=manifold,
        diagnostics=diagnostics,
    )


def picard_solve_small(data, f, K, budget=None, tol=1e-13, max_iter=200, manifold=None,
                       fixed_sweeps=False, lattice=None):
    """
    小資料的 Picard 迭代（從 h₀ = 0 開始）

    Args:
        data: ManifoldData（底邊即 K 的底邊）
        f: 外力
        K: 緊緻梯形
        budget: ContractionBudget（預設由流形常數選出）
        tol: ‖h_{k+1} − h_k‖₁ 的停止門檻
        max_iter: 最大迭代次數；fixed_sweeps 時為固定次數
        manifold: 目標流形
        fixed_sweeps: 忽略 tol，只在增量恰為 0 時提早結束
        lattice: 預設為 K 上格距 data.h 的格點

    Returns:
        Solution: path = SmallData

    Raises:
        SmallnessViolated: 資料或外力超過 η
        NoConvergence: 收縮比持續 > 0.9 或迭代次數用完
    """
    manifold = manifold or sphere(data.dim)
    budget = budget or default_budget(manifold)
    lattice = lattice or NullLattice.for_trapezoid(K, data.h)
    f_values = forcing_values(lattice, f, data.dim)
    settings = SolverSettings(max_iter=max_iter, sweeps=max_iter, picard_tol=tol)
    result = _picard(lattice, data, f_values, budget, manifold, settings, fixed=fixed_sweeps)
    diagnostics = SolveDiagnostics(path=SMALL_DATA, budget=budget.to_dict())
    diagnostics.absorb(result)
    diagnostics.increments = list(result.increments)
    return _solution_from_result(result, data, f_values, K, manifold, diagnostics)


# ---------------------------------------------------------------------------
# 局部高度
# ---------------------------------------------------------------------------

def _window_cells(cell_masses, limit):
    """所有長度 w 的視窗質量都 ≤ limit 的最大 w"""
    n = cell_masses.size
    prefix = np.concatenate([[0.0], np.cumsum(cell_masses)])
    best = 0
    for w in range(1, n + 1):
        if np.max(prefix[w:] - prefix[:-w]) > limit:
            break
        best = w
    return best


def height_bounds(data, f_values, lattice, eta):
    """
    δ₁（資料視窗）、δ₂（外力時間層）與幾何上限 L/2

    Returns:
        dict: {'delta1', 'delta2', 'cap'}；δ₂ 在外力總質量 ≤ η 時為 inf
    """
    h = lattice.h
    limit = eta * (1 + _MASS_SLACK)
    plus, minus = data.cell_masses()
    w = min(_window_cells(plus, limit), _window_cells(minus, limit))
    delta1 = w * h / 2

    per_cell = np.sum(np.abs(f_values), axis=-1) * lattice.cell_area
    by_diag = np.bincount(lattice.cell_diag[lattice.cell_mask], weights=per_cell[lattice.cell_mask],
                          minlength=lattice.n_rows)
    cumulative = np.cumsum(by_diag)
    if cumulative[-1] <= limit:
        delta2 = math.inf
    else:
        # 對角線 ≤ d 的格覆蓋 t ≤ d·h/2
        d = int(np.searchsorted(cumulative, limit, side='right')) - 1
        delta2 = max(d, 0) * h / 2
    return {'delta1': delta1, 'delta2': delta2, 'cap': lattice.n_cells * h / 4}


def _snap_height(bounds, h):
    raw = min(bounds['delta1'], 2 * math.sqrt(3) / 3 * bounds['delta2'], bounds['cap'])
    return math.floor(raw / (2 * h) + 1e-9) * 2 * h


def find_local_height(data, f, K, eta, lattice=None):
    """
    局部解的高度 δ = min(δ₁, (2√3/3)δ₂, L/2)，向下取到 2h 的倍數

    Raises:
        DegenerateHeight: δ < 2h（需要更細的格點）
    """
    lattice = lattice or NullLattice.for_trapezoid(K, data.h)
    f_values = forcing_values(lattice, f, data.dim)
    bounds = height_bounds(data, f_values, lattice, eta)
    delta = _snap_height(bounds, lattice.h)
    if delta < 2 * lattice.h:
        raise DegenerateHeight(
            f"局部高度 {delta} < 2h = {2 * lattice.h}",
            dict(bounds, h=lattice.h, eta=eta),
        )
    return delta


# ---------------------------------------------------------------------------
# 黏合
# ---------------------------------------------------------------------------

class _Canvas:
    """
    全域格點上的陣列；小梯形與後續層以整數位移 (i0, j0) 寫入

    位移 (i0, j0) 的子格點位於時間 T = (i0 − j0)·h/2，局部節點 (i, j) 對應全域 (i0 + i, j0 + j)。
    """

    def __init__(self, lattice, n, forcing):
        self.lattice = lattice
        size = lattice.n_cells
        self.u = np.zeros((size + 1, size + 1, n))
        self.h_field = np.zeros((size, size, n))
        self.v_plus = np.zeros((size, size, n))
        self.v_minus = np.zeros((size, size, n))
        self.forcing = forcing
        self._cells_done = np.zeros((size, size), dtype=bool)
        self._nodes_done = np.zeros((size + 1, size + 1), dtype=bool)

    def patch_lattice(self, i0, j0, n_cells, n_rows):
        h = self.lattice.h
        x_left = self.lattice.x_left + (i0 + j0) * h / 2
        half = n_cells * h / 2
        K = Trapezoid.compact(x_left + half, half, n_rows * h / 2)
        return NullLattice(x_left, h, n_cells, n_rows, parent=K)

    def forcing_block(self, i0, j0, lattice):
        n = lattice.n_cells
        block = self.forcing[i0:i0 + n, j0:j0 + n]
        return np.where(lattice.cell_mask[..., None], block, 0.0)

    def begin_layer(self):
        self._cells_done[:] = False
        self._nodes_done[:] = False

    def paint(self, i0, j0, result, min_diag=0, check=None, exact_rows=None):
        """
        寫入一個子解；check 為 "raise" 時重疊值必須逐位元相同，"record" 時回傳最大差異

        exact_rows 只在 check="raise" 時使用：局部對角線 ≤ exact_rows 的重疊必須逐位元相同，其上只記錄差異。
        """
        lattice = result.lattice
        n = lattice.n_cells
        cells = lattice.cell_mask & (lattice.cell_diag >= min_diag)
        nodes = lattice.node_mask & (lattice.node_diag >= min_diag)
        strict_nodes = strict_cells = None
        if exact_rows is not None:
            strict_nodes = lattice.node_diag <= exact_rows
            strict_cells = lattice.cell_diag <= exact_rows
        targets = [
            (self.u, result.u, nodes, strict_nodes, self._nodes_done, slice(i0, i0 + n + 1), slice(j0, j0 + n + 1)),
            (self.h_field, result.h_field, cells, strict_cells, self._cells_done, slice(i0, i0 + n), slice(j0, j0 + n)),
            (self.v_plus, result.v_plus, cells, strict_cells, self._cells_done, slice(i0, i0 + n), slice(j0, j0 + n)),
            (self.v_minus, result.v_minus, cells, strict_cells, self._cells_done, slice(i0, i0 + n), slice(j0, j0 + n)),
        ]
        discrepancy = 0.0
        overlaps = 0
        for canvas, values, mask, strict, done, rows, cols in targets:
            window = canvas[rows, cols]
            shared = mask & done[rows, cols]
            if check is not None and np.any(shared):
                overlaps += int(np.sum(shared))
                exact = shared if strict is None else shared & strict
                if check == "raise" and not np.array_equal(window[exact], values[exact]):
                    gap = float(np.max(np.abs(window[exact] - values[exact])))
                    raise OverlapMismatch(
                        "重疊區域的值不一致（因果性錯誤）",
                        {'max_difference': gap, 'offset': [int(i0), int(j0)]},
                    )
                loose = shared if check == "record" else shared & ~exact
                if np.any(loose) and not np.array_equal(window[loose], values[loose]):
                    discrepancy = max(discrepancy, float(np.max(np.abs(window[loose] - values[loose]))))
            window[mask] = values[mask]
        for done, mask, rows, cols in ((self._nodes_done, nodes, slice(i0, i0 + n + 1), slice(j0, j0 + n + 1)),
                                       (self._cells_done, cells, slice(i0, i0 + n), slice(j0, j0 + n))):
            done[rows, cols] |= mask
        return discrepancy, overlaps

    def trace(self, m):
        """對角線 m 上的切片資料"""
        lattice = self.lattice
        i, j = lattice.nodes_on_diagonal(m)
        p, q = lattice.cells_on_diagonal(m)
        x = lattice.node_x[i, j]
        u0 = self.u[i, j]
        v0 = 0.5 * (self.v_plus[p, q] + self.v_minus[p, q])
        return ManifoldData(x, u0, v0)

    def as_result(self):
        return _PatchResult(self.lattice, self.u, self.h_field, self.v_plus, self.v_minus,
                            0, 0.0, (), (), 0.0)


def _run_tiles(canvas, i0, j0, data, n_cells, m_layer, delta, budget, manifold, settings, diagnostics):
    """一層小梯形：各自 Picard，依序黏合"""
    h = canvas.lattice.h
    layer = canvas.patch_lattice(i0, j0, n_cells, m_layer)
    tiles = tile_cover(layer.parent, delta, strict=True, height=m_layer * h / 2)
    jobs = []
    for tile in tiles:
        k0 = int(round((tile.x0 - tile.L - layer.x_left) / h))
        nt = int(round(2 * tile.L / h))
        mt = int(round(2 * tile.height / h))
        lattice = canvas.patch_lattice(i0 + k0, j0 + k0, nt, mt)
        jobs.append((k0, lattice, data.restrict(k0, k0 + nt), canvas.forcing_block(i0 + k0, j0 + k0, lattice)))

    def work(job):
        _, lattice, tile_data, f_block = job
        return _picard(lattice, tile_data, f_block, budget, manifold, settings, fixed=True)

    with ThreadPoolExecutor(max_workers=max(1, settings.threads)) as pool:
        results = list(pool.map(work, jobs))

    canvas.begin_layer()
    min_diag = 1 if i0 > j0 else 0
    for (k0, _, _, _), result in zip(jobs, results):
        _, overlaps = canvas.paint(i0 + k0, j0 + k0, result, min_diag, check="raise")
        diagnostics.overlap_checks += overlaps
        diagnostics.absorb(result)
    diagnostics.tiles += len(tiles)
    logger.debug("layer at diag %d: %d tiles (delta=%.4g)", i0 - j0, len(tiles), delta)
    return len(tiles)


def _segment_masses(data, f_values, lattice):
    masses = data.masses()
    masses['forcing'] = _cell_l1(lattice, f_values)
    return masses


def _continue(canvas, data, budget, manifold, settings, diagnostics):
    """
    從 canvas 的底邊一路求解到頂：小資料直接 Picard，否則一層小梯形後從 δ/2 重新起算

    Returns:
        int: 層數
    """
    h = canvas.lattice.h
    ng, mg = canvas.lattice.n_cells, canvas.lattice.n_rows
    m_t = 0
    current = data
    layers = 0
    while True:
        n_cur, m_rem = ng - m_t, mg - m_t
        min_diag = 1 if m_t > 0 else 0
        patch = canvas.patch_lattice(m_t, 0, n_cur, m_rem)
        f_block = canvas.forcing_block(m_t, 0, patch)
        T = m_t * h / 2

        if _is_small(current, f_block, patch, budget):
            result = _picard(patch, current, f_block, budget, manifold, settings, fixed=True)
            canvas.begin_layer()
            canvas.paint(m_t, 0, result, min_diag)
            diagnostics.absorb(result)
            diagnostics.segments.append({'T': T, 'kind': 'direct', 'delta': None, 'tiles': 1})
            layers += 1
            break

        if settings.delta is not None:
            delta = float(settings.delta)
        else:
            bounds = height_bounds(current, f_block, patch, budget.eta)
            delta = _snap_height(bounds, h)
            if delta < 2 * h:
                raise StallDetected(
                    f"t = {T} 的局部高度 {delta} 低於格點下限 2h",
                    dict(bounds, T=T, h=h, masses=_segment_masses(current, f_block, patch)),
                )

        if n_cur * h < 4 * delta * (1 - 1e-12):
            result = _picard(patch, current, f_block, budget, manifold, settings, fixed=True)
            canvas.begin_layer()
            canvas.paint(m_t, 0, result, min_diag)
            diagnostics.absorb(result)
            diagnostics.segments.append({'T': T, 'kind': 'remainder', 'delta': delta, 'tiles': 1})
            layers += 1
            break

        step = int(round(delta / h))
        m_layer = min(step + 1, m_rem)
        count = _run_tiles(canvas, m_t, 0, current, n_cur, m_layer, delta, budget, manifold, settings, diagnostics)
        diagnostics.segments.append({'T': T, 'kind': 'tiled', 'delta': delta, 'tiles': count})
        layers += 1
        logger.info("segment T=%.4g delta=%.4g tiles=%d", T, delta, count)
        if m_layer >= m_rem:
            break
        m_t += step
        current = canvas.trace(m_t)
    return layers


def _path_of(diagnostics):
    kinds = [s['kind'] for s in diagnostics.segments]
    if kinds == ['direct'] and diagnostics.segments[0]['T'] == 0.0:
        return SMALL_DATA
    if kinds == ['tiled']:
        return TILED
    return CONTINUED


def _canvas_solution(canvas, data, domain, manifold, diagnostics):
    return _solution_from_result(canvas.as_result(), data, canvas.forcing, domain, manifold, diagnostics)


def _record_flux(solution, diagnostics):
    lattice = solution.lattice
    mass = sum(solution.data.masses().values()) + l1_norm(solution.forcing)
    tol = 4 * lattice.h * mass
    times = sorted({s['T'] for s in diagnostics.segments} | {0.0})
    for T in times:
        if 2 * T / lattice.h > lattice.n_rows - 1:
            continue
        for report in energy_flux_check(solution, T):
            diagnostics.estimates.append(replace(report, name=f"{report.name}@{T:.6g}", tol=tol))


def solve_local_large(data, f, K, budget=None, manifold=None, settings=None):
    """
    大資料的局部解：小梯形覆蓋 K 的底層並黏合

    回傳的解高度為 min(K.height, δ/2 + h/2)；資料已經夠小時等同 picard_solve_small。

    Raises:
        DegenerateHeight: δ < 2h
        OverlapMismatch: 重疊區域不一致
    """
    manifold = manifold or sphere(data.dim)
    budget = budget or default_budget(manifold)
    settings = settings or SolverSettings()
    full = NullLattice.for_trapezoid(K, data.h)
    check_data_coverage(data, full)
    f_values = forcing_values(full, f, data.dim)
    if _is_small(data, f_values, full, budget):
        return picard_solve_small(data, f, K, budget, settings.picard_tol, settings.max_iter, manifold, lattice=full)

    h = full.h
    delta = float(settings.delta) if settings.delta is not None else find_local_height(data, f, K, budget.eta, full)
    m_layer = min(int(round(delta / h)) + 1, full.n_rows)
    top = Trapezoid.compact(K.x0, K.L, m_layer * h / 2)
    lattice = NullLattice(full.x_left, h, full.n_cells, m_layer, parent=top)
    canvas = _Canvas(lattice, data.dim, np.where(lattice.cell_mask[..., None], f_values, 0.0))
    diagnostics = SolveDiagnostics(path=TILED, budget=budget.to_dict())
    count = _run_tiles(canvas, 0, 0, data, full.n_cells, m_layer, delta, budget, manifold, settings, diagnostics)
    diagnostics.segments.append({'T': 0.0, 'kind': 'tiled', 'delta': delta, 'tiles': count})
    return _canvas_solution(canvas, data, top, manifold, diagnostics)


def solve_global(data, f, K, budget=None, manifold=None, settings=None):
    """
    緊緻梯形上任意資料的整體解

    Args:
        data: 相容的 M 值資料
        f: 外力
        K: 緊緻梯形
        budget: ContractionBudget
        manifold: 目標流形
        settings: SolverSettings

    Returns:
        Solution: path 為 SmallData、Tiled 或 Continued

    Raises:
        StallDetected: 某個時間的局部高度 < 2h
    """
    manifold = manifold or sphere(data.dim)
    budget = budget or default_budget(manifold)
    settings = settings or SolverSettings()
    lattice = NullLattice.for_trapezoid(K, data.h)
    check_data_coverage(data, lattice)
    canvas = _Canvas(lattice, data.dim, forcing_values(lattice, f, data.dim))
    diagnostics = SolveDiagnostics(budget=budget.to_dict())
    layers = _continue(canvas, data, budget, manifold, settings, diagnostics)
    diagnostics.path = _path_of(diagnostics)
    logger.info("solve_global: %d segments, path %s", layers, diagnostics.path)
    solution = _canvas_solution(canvas, data, K, manifold, diagnostics)
    _record_flux(solution, diagnostics)
    return solution


def _tail_lattices(canvas, m_t, w, n_cur, m_rem):
    rows = min(w + 1, m_rem)
    return [(k0, canvas.patch_lattice(m_t + k0, k0, 2 * w, rows)) for k0 in (0, n_cur - 2 * w)]


def _tail_cells(canvas, data, m_t, m_rem, limit):
    """兩側尾端的最大寬度 w（格數）：尾端三角形上的資料與外力質量都 ≤ limit"""
    n_cur = data.n_cells
    plus, minus = data.cell_masses()
    both = np.maximum(plus, minus)
    left = np.cumsum(both)
    right = np.cumsum(both[::-1])
    best = 0
    for w in range(1, n_cur // 4 + 1):
        if left[2 * w - 1] > limit or right[2 * w - 1] > limit:
            break
        force = max(_cell_l1(tail, canvas.forcing_block(m_t + k0, k0, tail))
                    for k0, tail in _tail_lattices(canvas, m_t, w, n_cur, m_rem))
        if force > limit:
            break
        best = w
    return best


def solve_unbounded(data, f, K, cutoff, budget=None, manifold=None, settings=None):
    """
    無界或半無界區域：截斷到 |x| ≤ cutoff 後，每層分成左尾、核心、右尾

    尾端以 Picard 直接求解，核心以 solve_global 的延續流程求解；重疊處以核心為準。
    尾端寬度同時受資料質量與尾端三角形上的外力質量限制。

    Raises:
        TailNotSmall: 尾端寬度 L̄ < 2h（cutoff 對 η 太小，或外力集中在尾端）
        OverlapMismatch: 尾端與核心第一段的重疊不是逐位元相同
    """
    if K.is_compact:
        raise ConfigError("solve_unbounded 需要無界或半無界的梯形")
    manifold = manifold or sphere(data.dim)
    budget = budget or default_budget(manifold)
    settings = settings or SolverSettings()
    Kc = K.truncate(cutoff)
    lattice = NullLattice.for_trapezoid(Kc, data.h)
    check_data_coverage(data, lattice)
    canvas = _Canvas(lattice, data.dim, forcing_values(lattice, f, data.dim))
    diagnostics = SolveDiagnostics(path=CONTINUED, budget=budget.to_dict())
    diagnostics.extra['cutoff'] = float(cutoff)
    h = lattice.h
    ng, mg = lattice.n_cells, lattice.n_rows
    m_t = 0
    current = data
    while True:
        n_cur, m_rem = ng - m_t, mg - m_t
        min_diag = 1 if m_t > 0 else 0
        patch = canvas.patch_lattice(m_t, 0, n_cur, m_rem)
        f_block = canvas.forcing_block(m_t, 0, patch)
        T = m_t * h / 2
        if _is_small(current, f_block, patch, budget):
            result = _picard(patch, current, f_block, budget, manifold, settings, fixed=True)
            canvas.begin_layer()
            canvas.paint(m_t, 0, result, min_diag)
            diagnostics.absorb(result)
            diagnostics.segments.append({'T': T, 'kind': 'direct', 'delta': None, 'tiles': 1})
            break

        w = _tail_cells(canvas, current, m_t, m_rem, budget.eta * (1 + _MASS_SLACK))
        if w < 2:
            raise TailNotSmall(
                f"t = {T} 時找不到質量 ≤ η 的尾端（cutoff = {cutoff}）",
                {'T': T, 'cutoff': cutoff, 'eta': budget.eta, 'masses': _segment_masses(current, f_block, patch)},
            )
        lbar = w * h
        lo, hi = patch.base
        decompose_unbounded(patch.parent, lo, hi, lbar)
        m_layer = min(w + 1, m_rem)

        canvas.begin_layer()
        for k0, tail in _tail_lattices(canvas, m_t, w, n_cur, m_rem):
            result = _picard(tail, current.restrict(k0, k0 + 2 * w), canvas.forcing_block(m_t + k0, k0, tail),
                             budget, manifold, settings, fixed=True)
            _, overlaps = canvas.paint(m_t + k0, k0, result, min_diag, check="raise")
            diagnostics.overlap_checks += overlaps
            diagnostics.absorb(result)

        core_lattice = canvas.patch_lattice(m_t + w, w, n_cur - 2 * w, m_layer)
        core = _Canvas(core_lattice, data.dim, canvas.forcing_block(m_t + w, w, core_lattice))
        first = len(diagnostics.segments)
        _continue(core, current.restrict(w, n_cur - w), budget, manifold, settings, diagnostics)
        # 核心第一段由原始資料直接迭代，與尾端的重疊必須逐位元相同；之後的延續段只記錄差異
        opening = diagnostics.segments[first]
        exact_rows = int(round(opening['delta'] / h)) if opening['kind'] == 'tiled' else None
        gap, overlaps = canvas.paint(m_t + w, w, core.as_result(), min_diag, check="raise", exact_rows=exact_rows)
        diagnostics.overlap_checks += overlaps
        diagnostics.overlap_discrepancy = max(diagnostics.overlap_discrepancy, gap)
        diagnostics.segments.append({'T': T, 'kind': 'decomposed', 'delta': lbar, 'tiles': 3})
        logger.info("unbounded segment T=%.4g Lbar=%.4g overlap gap=%.3e", T, lbar, gap)
        if m_layer >= m_rem:
            break
        m_t += w
        current = canvas.trace(m_t)
    return _canvas_solution(canvas, data, Kc, manifold, diagnostics)


def solve_concatenated(data, f, n_max, budget=None, manifold=None, settings=None):
    """
    在逐漸變大的三角形 (0, ±n)、(n, 0) 上求解（n = 1..n_max）並檢查巢狀一致

    Args:
        data: 底邊涵蓋 [−n_max, n_max] 的資料
        f: None、f(t, x)，或底邊 [−n_max, n_max] 的格場

    Returns:
        list[Solution]: path 皆為 Concatenated，內部路徑記在 extra['inner_path']

    Raises:
        OverlapMismatch: 延伸解與前一個解不是逐位元相同（或差異超過 nesting_tol）
    """
    settings = settings or SolverSettings()
    h = data.h
    nesting_tol = settings.nesting_tol if settings.nesting_tol is not None else 0.0
    solutions = []
    for n in range(1, int(n_max) + 1):
        K = Trapezoid.compact(0.0, float(n), float(n))
        k0 = int(round((-n - data.x[0]) / h))
        cells = int(round(2 * n / h))
        if k0 < 0 or k0 + cells > data.n_cells:
            raise ConfigError(f"資料底邊 {data.base} 不涵蓋 [−{n}, {n}]")
        piece = data.restrict(k0, k0 + cells)
        f_piece = f
        if isinstance(f, Field):
            lattice = NullLattice.for_trapezoid(K, h)
            block = f.values[k0:k0 + cells, k0:k0 + cells]
            f_piece = Field(lattice, CELL, np.where(lattice.cell_mask[..., None], block, 0.0))
        solution = solve_global(piece, f_piece, K, budget, manifold, settings)
        diagnostics = solution.diagnostics
        diagnostics.extra['inner_path'] = diagnostics.path
        diagnostics.path = CONCATENATED
        if solutions:
            previous = solutions[-1]
            shift = int(round(1.0 / h))
            size = previous.u.lattice.n_cells
            mask = previous.u.lattice.node_mask
            inner = solution.u.values[shift:shift + size + 1, shift:shift + size + 1][mask]
            outer = previous.u.values[mask]
            bitwise = bool(np.array_equal(inner, outer))
            gap = 0.0 if bitwise else float(np.max(np.abs(inner - outer)))
            diagnostics.extra['nested_bitwise'] = bitwise
            diagnostics.extra['nesting_gap'] = gap
            if gap > nesting_tol:
                raise OverlapMismatch(
                    f"三角形 n={n} 與 n={n - 1} 的解差異 {gap:.3e} 超過 {nesting_tol:.3e}",
                    {'n': n, 'gap': gap},
                )
        solutions.append(solution)
    return solutions


# ---------------------------------------------------------------------------
# 解的量測
# ---------------------------------------------------------------------------

def manifold_defect(solution, manifold=None):
    """節點到流形的最大距離"""
    manifold = manifold or solution.manifold
    lattice = solution.lattice
    values = solution.u.values[lattice.node_mask]
    return float(np.max(manifold.distance(values))) if values.size else 0.0


def compatibility_defects(solution, manifold=None):
    """
    每個格點時間 t = m·h/2 的相容性缺陷 max|π^⊥_{u} ∂ₜu|₁

    u 取切片上相鄰兩節點的中點（投影回流形），∂ₜu 取切片上的格值。

    Returns:
        np.ndarray: 長度 M 的缺陷
    """
    manifold = manifold or solution.manifold
    lattice = solution.lattice
    out = []
    for m in range(lattice.n_rows):
        i, j = lattice.nodes_on_diagonal(m)
        p, q = lattice.cells_on_diagonal(m)
        nodes = solution.u.values[i, j]
        mid = manifold.nearest_point(0.5 * (nodes[:-1] + nodes[1:]))
        normal = manifold.normal_project(mid, solution.ut.values[p, q])
        out.append(float(np.max(np.sum(np.abs(normal), axis=-1))) if normal.size else 0.0)
    return np.asarray(out)


@dataclass(frozen=True, eq=False)
class _Difference:
    u: Field
    ut: Field
    ux: Field
    data: Optional[ManifoldData]


def h_norm_difference(sol_a, sol_b):
    """‖u_a − u_b‖_ℋ（兩個解必須在同一個格點上）"""
    if not sol_a.lattice.same_as(sol_b.lattice):
        raise LatticeMismatch("h_norm_difference 需要同一個格點上的解")
    data = None
    if sol_a.data is not None and sol_b.data is not None:
        data = ManifoldData(sol_a.data.x, sol_a.data.u0 - sol_b.data.u0, sol_a.data.v0 - sol_b.data.v0)
    return h_norm(_Difference(sol_a.u - sol_b.u, sol_a.ut - sol_b.ut, sol_a.ux - sol_b.ux, data))
