"""
散射：自由波群、Duhamel 散射資料、共形緊緻化與缺陷量測

自由波 S(t) 以 d'Alembert 公式在節點上精確計算（資料在網格外取常數延伸、v0 取零延伸）。
M 值散射先把 t ≥ 0 的半平面以 (A, B) = (arctan a, arctan b) 壓進三角形 𝕂，
在 𝕂 上整體求解，再從兩條零無窮遠邊讀出自由波的輪廓。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from domain import Trapezoid, TrapezoidKind
from errors import ConfigError, LatticeMismatch, OffLattice, TailMass
from estimates import EstimateReport
from fields import (
    CELL, Field, NullLattice, SliceTrace, check_data_coverage, reverse_cumsum, trace, w11_seminorm,
)
from geometry import ManifoldData
from solver import SolverSettings, solve_global

logger = logging.getLogger(__name__)

HALF_PI = 0.5 * math.pi


# ---------------------------------------------------------------------------
# 自由波
# ---------------------------------------------------------------------------

def _interp(xs, values, s):
    """逐分量線性內插；範圍外取端點值"""
    s = np.asarray(s, dtype=float)
    return np.stack([np.interp(s, xs, values[:, k]) for k in range(values.shape[1])], axis=-1)


def _primitive(data):
    """∫_{x_0}^{x} v0 在節點上的值"""
    zero = np.zeros((1, data.dim))
    return np.vstack([zero, np.cumsum(data.v0 * data.h, axis=0)])


def free_wave(data, t, x=None):
    """
    自由波 S(t)(u0, v0) 在時間 t 的切片

    u 取節點值；∂ₜu、∂ₓu 取每段的精確平均。

    Args:
        data: ManifoldData（網格外 u0 取常數、v0 取零）
        t: 時間（可為負）
        x: 取樣節點（預設為資料節點）

    Returns:
        SliceTrace
    """
    x = data.x if x is None else np.asarray(x, dtype=float)
    V = _primitive(data)
    U_plus, U_minus = _interp(data.x, data.u0, x + t), _interp(data.x, data.u0, x - t)
    V_plus, V_minus = _interp(data.x, V, x + t), _interp(data.x, V, x - t)
    u = 0.5 * (U_plus + U_minus) + 0.5 * (V_plus - V_minus)
    dx = np.diff(x)[:, None]
    ut = 0.5 * (np.diff(U_plus, axis=0) - np.diff(U_minus, axis=0)) / dx \
        + 0.5 * (np.diff(V_plus, axis=0) + np.diff(V_minus, axis=0)) / dx
    ux = np.diff(u, axis=0) / dx
    return SliceTrace(float(t), x, u, ut, ux)


def inverse_free_wave(slice_trace, t):
    """
    S̃(−t)：把時間 t 的切片 (u, ∂ₜu) 倒推回 t = 0

    Returns:
        SliceTrace: t = 0 的資料，節點與輸入相同
    """
    reversed_data = ManifoldData(slice_trace.x, slice_trace.u, -slice_trace.ut)
    back = free_wave(reversed_data, t)
    return SliceTrace(0.0, back.x, back.u, -back.ut, back.ux)


# ---------------------------------------------------------------------------
# 散射資料
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EdgeProfile:
    """
    沿兩條零邊的輪廓：u_L(a, b) = φ(a) + ψ(b) − corner

    compact = True 時座標為 A = arctan a、B = arctan b。
    """

    a_coords: np.ndarray
    phi: np.ndarray
    b_coords: np.ndarray
    psi: np.ndarray
    corner: np.ndarray
    compact: bool = False

    def _to_edge(self, s):
        s = np.asarray(s, dtype=float)
        return np.arctan(s) if self.compact else s

    def value(self, a, b):
        return (_interp(self.a_coords, self.phi, self._to_edge(a))
                + _interp(self.b_coords, self.psi, self._to_edge(b)) - self.corner)

    def _slope(self, coords, values, s):
        slopes = np.diff(values, axis=0) / np.diff(coords)[:, None]
        idx = np.searchsorted(coords, s, side='right') - 1
        inside = (idx >= 0) & (idx < slopes.shape[0])
        return np.where(inside[:, None], slopes[np.clip(idx, 0, slopes.shape[0] - 1)], 0.0)

    def null_derivatives(self, a, b):
        """(v₊, v₋) = (−2ψ'(b), 2φ'(a))"""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        da = self._slope(self.a_coords, self.phi, self._to_edge(a))
        db = self._slope(self.b_coords, self.psi, self._to_edge(b))
        if self.compact:
            da = da / (1.0 + a * a)[:, None]
            db = db / (1.0 + b * b)[:, None]
        return -2.0 * db, 2.0 * da


@dataclass(frozen=True, eq=False)
class ScatteringData:
    """漸近自由波的初始資料 (ū₀, v̄₀)"""

    x: np.ndarray
    ubar0: np.ndarray
    vbar0: np.ndarray
    profile: Optional[EdgeProfile] = None

    def as_data(self):
        return ManifoldData(self.x, self.ubar0, self.vbar0)


def _parts(obj):
    if isinstance(obj, ScatteringData):
        return obj.x, obj.ubar0, obj.vbar0
    if isinstance(obj, SliceTrace):
        return obj.x, obj.u, obj.ut
    return obj.x, obj.u0, obj.v0


def l11_norm(obj):
    """‖(u, v)‖ = sup|u|₁ + ∫|Du|₁ + ∫|v|₁"""
    x, u, v = _parts(obj)
    dx = np.diff(x)
    return (float(np.max(np.sum(np.abs(u), axis=-1)))
            + w11_seminorm(u)
            + float(np.sum(np.sum(np.abs(v), axis=-1) * dx)))


def l11_norm_difference(first, second, window=None):
    """
    兩組資料（同一組節點）差的 L^{1,1} 範數

    Args:
        first, second: ManifoldData、SliceTrace 或 ScatteringData
        window: (lo, hi)；只比較落在區間內的節點與格

    Raises:
        LatticeMismatch: 節點不同
    """
    x1, u1, v1 = _parts(first)
    x2, u2, v2 = _parts(second)
    if x1.shape != x2.shape or not np.allclose(x1, x2, rtol=0.0, atol=1e-9):
        raise LatticeMismatch("L^{1,1} 差值需要同一組節點")
    keep = np.ones(x1.size, dtype=bool)
    if window is not None:
        keep = (x1 >= window[0] - 1e-9) & (x1 <= window[1] + 1e-9)
    idx = np.nonzero(keep)[0]
    if idx.size < 2:
        return float(np.max(np.sum(np.abs(u1 - u2)[idx], axis=-1))) if idx.size else 0.0
    lo, hi = idx[0], idx[-1]
    return l11_norm(ScatteringData(x1[lo:hi + 1], (u1 - u2)[lo:hi + 1], (v1 - v2)[lo:hi]))


def scattering_data_rn(data, f=None, cutoff_T=None, tail_tol=1e-12):
    """
    ℝⁿ 值解的散射資料：(ū₀, v̄₀) = (u₀, v₀) + ∫₀^∞ S̃(−τ)(0, f(τ)) dτ

    對每格常數的 f 精確計算：
    ū₀(x) = u₀(x) − ½∬_{|y−x| ≤ τ} f，v̄₀(x) = v₀(x) + ½∫(f(τ, x+τ) + f(τ, x−τ)) dτ。
    非線性解請傳入它的 h_field（完整的右邊）。

    Args:
        data: ManifoldData（底邊即 f 的格點底邊）
        f: 格場或 None
        cutoff_T: 只積分到這個時間（None 為整個格點）
        tail_tol: cutoff_T 之後容許的外力質量

    Returns:
        ScatteringData

    Raises:
        TailMass: cutoff_T 之後的質量超過 tail_tol
    """
    if f is None:
        return ScatteringData(data.x.copy(), data.u0.copy(), data.v0.copy())
    lattice = f.lattice
    check_data_coverage(data, lattice)
    values = np.where(lattice.cell_mask[..., None], f.values, 0.0)
    if cutoff_T is not None:
        late = lattice.cell_mask & (lattice.cell_t > cutoff_T)
        tail = float(np.sum(np.sum(np.abs(values), axis=-1) * lattice.cell_area * late))
        if tail > tail_tol:
            raise TailMass(
                f"t > {cutoff_T} 的外力質量 {tail:.3e} 超過 {tail_tol:.3e}",
                {'cutoff_T': cutoff_T, 'tail': tail, 'tail_tol': tail_tol},
            )
        values = np.where(late[..., None], 0.0, values)

    mass = values * lattice.cell_area[..., None]
    # 節點 k 的未來錐：格 p ≥ k、q ≤ k − 1
    below = reverse_cumsum(mass, axis=0)
    left = np.cumsum(below, axis=1)
    n = lattice.n_cells
    cone = np.zeros((n + 1, data.dim))
    k = np.arange(1, n)
    cone[k] = left[k, k - 1]
    ubar0 = data.u0 - 0.5 * cone

    passage = np.where(lattice.full_mask, 0.5 * lattice.h, np.where(lattice.half_mask, 0.25 * lattice.h, 0.0))
    along = values * passage[..., None]
    vbar0 = data.v0 + 0.5 * (np.sum(along, axis=0) + np.sum(along, axis=1))
    return ScatteringData(data.x.copy(), ubar0, vbar0)


def scattering_defect(solution, data_l, t):
    """
    u(t) − S(t)(data_L) 在共同切片上的三個範數

    Returns:
        dict: {'t', 'sup_defect', 'l1_ut_defect', 'l1_ux_defect'}
    """
    current = trace(solution, t)
    reference = free_wave(data_l.as_data() if isinstance(data_l, ScatteringData) else data_l, t, current.x)
    h = solution.lattice.h
    return {
        't': float(t),
        'sup_defect': float(np.max(np.sum(np.abs(current.u - reference.u), axis=-1))),
        'l1_ut_defect': float(np.sum(np.abs(current.ut - reference.ut))) * h,
        'l1_ux_defect': float(np.sum(np.abs(current.ux - reference.ux))) * h,
    }


def _edge_index(lattice, value, what):
    s = (value - lattice.x_left) / lattice.h
    k = int(round(s))
    if abs(k - s) > 1e-9 or not 0 <= k <= lattice.n_cells:
        raise OffLattice(f"{what} = {value} 不是格點座標", {what: value})
    return k


def extract_scattering_data(solution, a_edge, b_edge, x=None, compact=False):
    """
    從兩條零邊 a = a_edge、b = b_edge 讀出自由波輪廓

    φ(a) = u(a, b_edge)，ψ(b) = u(a_edge, b)，u_L = φ(a) + ψ(b) − u(a_edge, b_edge)。

    Args:
        solution: 解（lattice 上的 u）
        a_edge, b_edge: 邊的零座標（compact 時為 A、B）
        x: ū₀ 的輸出節點（預設為格點底邊節點）
        compact: True 表示 solution 在緊緻化座標上

    Returns:
        ScatteringData: 附帶 EdgeProfile

    Raises:
        OffLattice: 邊不在格點座標上或角點不在格點內
    """
    lattice = solution.lattice
    i_edge = _edge_index(lattice, a_edge, 'a_edge')
    j_edge = _edge_index(lattice, b_edge, 'b_edge')
    if not (j_edge <= i_edge and lattice.node_mask[i_edge, j_edge]):
        raise OffLattice("兩條邊的交點不在格點內", {'a_edge': a_edge, 'b_edge': b_edge})
    u = solution.u.values
    rows = np.arange(j_edge, i_edge + 1)
    profile = EdgeProfile(
        a_coords=lattice.coords[rows],
        phi=u[rows, j_edge],
        b_coords=lattice.coords[rows],
        psi=u[i_edge, rows],
        corner=u[i_edge, j_edge],
        compact=compact,
    )
    if x is None:
        x = lattice.coords
    x = np.asarray(x, dtype=float)
    ubar0 = profile.value(x, x)
    vbar0 = np.diff(_interp(profile.a_coords, profile.phi, profile._to_edge(x))
                    - _interp(profile.b_coords, profile.psi, profile._to_edge(x)), axis=0) / np.diff(x)[:, None]
    return ScatteringData(x, ubar0, vbar0, profile)


def support_cone_check(solution, S, tol):
    """
    資料在 [−S, S]、外力在 𝕂_S 內時，錐外的零導數與常數區域

    Returns:
        list[EstimateReport]: support_plus、support_minus、support_constant
    """
    lattice = solution.lattice
    a = lattice.coords
    eps = 1e-9 * max(1.0, S)
    cols_out = (a[1:] <= -S + eps) | (a[:-1] >= S - eps)
    plus_sites = lattice.cell_mask & cols_out[None, :]
    minus_sites = lattice.cell_mask & cols_out[:, None]

    def worst(values, sites):
        norms = np.sum(np.abs(values), axis=-1)
        return float(np.max(norms[sites])) if np.any(sites) else 0.0

    reports = [
        EstimateReport("support_plus", worst(solution.v_plus.values, plus_sites), 0.0, tol),
        EstimateReport("support_minus", worst(solution.v_minus.values, minus_sites), 0.0, tol),
    ]
    node_a, node_b = np.meshgrid(a, a, indexing="ij")
    spread = 0.0
    for region in ((node_a <= -S + eps) & (node_b <= -S + eps),
                   (node_a >= S - eps) & (node_b >= S - eps),
                   (node_a >= S - eps) & (node_b <= -S + eps)):
        region = region & lattice.node_mask
        if np.any(region):
            values = solution.u.values[region]
            spread = max(spread, float(np.max(np.sum(np.abs(values - values[0]), axis=-1))))
    reports.append(EstimateReport("support_constant", spread, 0.0, tol))
    return reports


# ---------------------------------------------------------------------------
# 共形緊緻化
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CompactifiedProblem:
    """
    𝕂 上的資料 (U0, V0) 與外力 F

    U0(X) = u0(tan X)；V0 取每格的精確質量 ∫v0 dx / h'；F 的每格質量等於原外力在像區域上的質量。
    """

    lattice: NullLattice
    data: ManifoldData
    forcing: Field
    source: ManifoldData
    physical_forcing_mass: float = 0.0

    @property
    def domain(self):
        return self.lattice.parent

    def extended(self, pad):
        """
        底邊兩側各加 pad 格的延伸問題：U0 取常數延伸，V0 與 F 取零延伸

        Returns:
            tuple: (ManifoldData, Field)，格點底邊為 [−π/2 − pad·h', π/2 + pad·h']、高度 π/2
        """
        if pad < 0:
            raise ConfigError(f"pad 必須 ≥ 0: {pad}")
        h = self.lattice.h
        n = self.lattice.n_cells
        half = HALF_PI + pad * h
        lattice = NullLattice(-half, h, n + 2 * pad, n, parent=Trapezoid.compact(0.0, half, HALF_PI))
        u0 = np.vstack([np.repeat(self.data.u0[:1], pad, axis=0), self.data.u0,
                        np.repeat(self.data.u0[-1:], pad, axis=0)])
        zeros = np.zeros((pad, self.data.dim))
        v0 = np.vstack([zeros, self.data.v0, zeros])
        F = np.zeros((n + 2 * pad, n + 2 * pad, self.data.dim))
        F[pad:pad + n, pad:pad + n] = self.forcing.values
        forcing = Field(lattice, CELL, np.where(lattice.cell_mask[..., None], F, 0.0))
        return ManifoldData(lattice.coords, u0, v0), forcing

    def data_norm(self):
        return l11_norm(self.data)

    def forcing_norm(self):
        values = np.sum(np.abs(self.forcing.values), axis=-1)
        return float(np.sum(values * self.lattice.cell_area))


def _overlaps(edges, coords):
    """每個緊緻化區間 [tan E_P, tan E_{P+1}] 與物理格 [c_p, c_{p+1}] 的重疊長度"""
    lo = np.maximum(edges[:-1, None], coords[None, :-1])
    hi = np.minimum(edges[1:, None], coords[None, 1:])
    return np.clip(hi - lo, 0.0, None)


def _transfer_field(f, lattice):
    """每格常數的物理外力在緊緻化格上的精確質量"""
    phys = f.lattice
    edges = np.tan(lattice.coords)
    Ia = _overlaps(edges, phys.coords)
    values = np.where(phys.cell_mask[..., None], f.values, 0.0)
    half_phys = phys.half_mask[..., None]
    full = np.einsum('Pp,Qq,pqk->PQk', Ia, Ia, np.where(half_phys, 0.0, values), optimize=True)
    half = np.einsum('Pp,Qq,pqk->PQk', Ia, Ia, np.where(half_phys, values, 0.0), optimize=True)
    # 兩個半格相交只剩一半；其餘情形的重疊區域自動落在 a ≥ b
    diag = np.eye(lattice.n_cells, dtype=bool)[..., None]
    mass = 0.5 * (full + np.where(diag, 0.5, 1.0) * half)
    return mass


def _transfer_callable(f, lattice, n, order=4):
    """以 Gauss–Legendre 求像區域上的質量（半格用 Duffy 變換）"""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    h = lattice.h
    P, Q = np.nonzero(lattice.cell_mask)
    half = P == Q
    A0 = lattice.coords[P][:, None, None]
    B0 = lattice.coords[Q][:, None, None]
    si, sj = s[None, :, None], s[None, None, :]
    wij = (w[:, None] * w[None, :])[None, ...]
    # 全格：(α, β) ∈ [0,1]²；半格：β = α·r，Jacobian α
    alpha = np.broadcast_to(si, (P.size, order, order))
    beta = np.where(half[:, None, None], si * sj, sj)
    jac = np.where(half[:, None, None], si, 1.0) * wij
    A = A0 + h * alpha
    B = B0 + h * beta
    a, b = np.tan(A), np.tan(B)
    t, x = 0.5 * (a - b), 0.5 * (a + b)
    values = np.asarray(f(t.ravel(), x.ravel()), dtype=float).reshape(P.size, order, order, n)
    weight = 0.5 / (np.cos(A) ** 2 * np.cos(B) ** 2) * jac * h * h
    cell_mass = np.sum(values * weight[..., None], axis=(1, 2))
    mass = np.zeros((lattice.n_cells, lattice.n_cells, n))
    mass[P, Q] = cell_mass
    return mass


def compactify(data, f=None, n_cells=64, K=None):
    """
    把 [0, ∞) × ℝ 上的問題轉到三角形 𝕂（頂點 (0, ±π/2)、(π/2, 0)）

    Args:
        data: ManifoldData（網格外 u0 取常數、v0 取零）
        f: None、物理格點上的格場，或 f(t, x) → (P, n)
        n_cells: 𝕂 底邊的格數（h' = π/n_cells）
        K: 必須是 [0, ∞) × ℝ（預設）

    Returns:
        CompactifiedProblem
    """
    if K is not None and not (K.kind is TrapezoidKind.UNBOUNDED and math.isinf(K.height)):
        raise ConfigError("compactify 只接受 [0, ∞) × ℝ")
    h = math.pi / n_cells
    domain = Trapezoid.compact(0.0, HALF_PI, HALF_PI)
    lattice = NullLattice(-HALF_PI, h, n_cells, n_cells, parent=domain)
    X = lattice.coords
    ends = np.tan(X)
    U0 = _interp(data.x, data.u0, ends)
    V = _primitive(data)
    V0 = np.diff(_interp(data.x, V, ends), axis=0) / h
    compact_data = ManifoldData(X, U0, V0)

    n = data.dim
    physical_mass = 0.0
    if f is None:
        mass = np.zeros((n_cells, n_cells, n))
    elif isinstance(f, Field):
        mass = _transfer_field(f, lattice)
        physical_mass = float(np.sum(np.sum(np.abs(f.values), axis=-1) * f.lattice.cell_area))
    else:
        mass = _transfer_callable(f, lattice, n)
    area = np.where(lattice.cell_mask, lattice.cell_area, 1.0)[..., None]
    F = np.where(lattice.cell_mask[..., None], mass / area, 0.0)
    logger.debug("compactify: %d cells, h'=%.4g", n_cells, h)
    return CompactifiedProblem(lattice, compact_data, Field(lattice, CELL, F), data, physical_mass)


# ---------------------------------------------------------------------------
# M 值散射
# ---------------------------------------------------------------------------

def _interp_nodes(lattice, values, A, B):
    """節點值在 (A, B) 的內插：全格雙線性、半格重心座標"""
    sa = (A - lattice.x_left) / lattice.h
    sb = (B - lattice.x_left) / lattice.h
    last = lattice.n_cells - 1
    p = np.clip(np.floor(sa).astype(int), 0, last)
    q = np.clip(np.floor(sb).astype(int), 0, last)
    q = np.minimum(q, p)
    al = np.clip(sa - p, 0.0, 1.0)[:, None]
    be = np.clip(sb - q, 0.0, 1.0)[:, None]
    half = (p == q)[:, None]
    be = np.where(half, np.minimum(be, al), be)
    bilinear = ((1 - al) * (1 - be) * values[p, q] + al * (1 - be) * values[p + 1, q]
                + (1 - al) * be * values[p, q + 1] + al * be * values[p + 1, q + 1])
    barycentric = (1 - al) * values[p, q] + (al - be) * values[p + 1, q] + be * values[p + 1, q + 1]
    return np.where(half, barycentric, bilinear)


def _cell_values(lattice, values, A, B):
    last = lattice.n_cells - 1
    p = np.clip(np.floor((A - lattice.x_left) / lattice.h).astype(int), 0, last)
    q = np.clip(np.floor((B - lattice.x_left) / lattice.h).astype(int), 0, last)
    return values[p, np.minimum(q, p)]


def _slice_samples(t, halfwidth, samples):
    per = max(8, samples // 3)
    left = -t + np.linspace(-halfwidth, halfwidth, per)
    right = t + np.linspace(-halfwidth, halfwidth, per)
    pieces = [left, right]
    if t > halfwidth:
        pieces.append(np.linspace(-t + halfwidth, t - halfwidth, per))
    return np.unique(np.concatenate(pieces))


def compact_defect(solution, profile, t, halfwidth=4.0, samples=2048):
    """
    緊緻化解在物理時間 t 與 u_L 的差：sup|u − u_L|、∫|∂ₜ(u − u_L)|、∫|∂ₓ(u − u_L)|

    u(t, x) = U(arctan(x + t), arctan(x − t))；v₋ = V₋/(1 + a²)，v₊ = V₊/(1 + b²)。
    """
    lattice = solution.lattice
    x = _slice_samples(t, halfwidth, samples)
    a, b = x + t, x - t
    A, B = np.arctan(a), np.arctan(b)
    u = _interp_nodes(lattice, solution.u.values, A, B)
    v_minus = _cell_values(lattice, solution.v_minus.values, A, B) / (1.0 + a * a)[:, None]
    v_plus = _cell_values(lattice, solution.v_plus.values, A, B) / (1.0 + b * b)[:, None]
    ref_u = profile.value(a, b)
    ref_plus, ref_minus = profile.null_derivatives(a, b)
    d_plus, d_minus = v_plus - ref_plus, v_minus - ref_minus
    d_ut = np.sum(np.abs(0.5 * (d_plus + d_minus)), axis=-1)
    d_ux = np.sum(np.abs(0.5 * (d_minus - d_plus)), axis=-1)
    return {
        't': float(t),
        'sup_defect': float(np.max(np.sum(np.abs(u - ref_u), axis=-1))),
        'l1_ut_defect': float(trapezoid(d_ut, x)),
        'l1_ux_defect': float(trapezoid(d_ux, x)),
    }


@dataclass(frozen=True, eq=False)
class ScatterResult:
    scattering: ScatteringData
    defects: list = field(default_factory=list)
    problem: Optional[CompactifiedProblem] = None
    solution: object = None

    @property
    def final_defect(self):
        if not self.defects:
            return 0.0
        last = self.defects[-1]
        return max(last['sup_defect'], last['l1_ut_defect'], last['l1_ux_defect'])


def scatter_m_valued(data, f=None, cutoff=4.0, n_cells=64, budget=None, manifold=None, settings=None,
                     t_final=1e6, n_times=24, samples=2048, h_out=None, pad=None):
    """
    M 值解的散射資料與缺陷序列

    緊緻化 → 在延伸問題（𝕂 兩側各加 pad 格）上 solve_global → 從邊 A = π/2、B = −π/2 讀出 u_L（過去延拓 u₋），
    再在 [1, t_final] 的等比時間點上量測 u(t) − u_L(t)。

    Args:
        data: 相容的 M 值資料
        f: 外力（None、物理格場或函數）
        cutoff: ū₀ 輸出網格與缺陷取樣的半寬
        n_cells: 𝕂 的格數
        t_final, n_times, samples: 缺陷序列的時間範圍、點數與每個切片的取樣數
        h_out: ū₀ 輸出網格的間距（預設為 data.h）
        pad: 延伸的格數（預設 max(2, n_cells // 8)）

    Returns:
        ScatterResult
    """
    settings = settings or SolverSettings()
    problem = compactify(data, f, n_cells)
    pad = max(2, n_cells // 8) if pad is None else int(pad)
    ext_data, ext_forcing = problem.extended(pad)
    solution = solve_global(ext_data, ext_forcing, ext_forcing.lattice.parent, budget, manifold, settings)
    h_out = h_out or data.h
    count = int(round(2 * cutoff / h_out))
    x = -cutoff + h_out * np.arange(count + 1)
    scattering = extract_scattering_data(solution, HALF_PI, -HALF_PI, x=x, compact=True)
    times = np.geomspace(1.0, t_final, n_times)
    defects = [compact_defect(solution, scattering.profile, t, cutoff, samples) for t in times]
    logger.info("scatter_m_valued: path %s, final defect %.3e", solution.path,
                max(defects[-1]['sup_defect'], defects[-1]['l1_ut_defect'], defects[-1]['l1_ux_defect']))
    return ScatterResult(scattering, defects, problem, solution)
