"""
線性非齊次波動方程的精確公式解

u(t,x) = ½(u0(x+t) + u0(x−t)) + ½∫ v0 + ½∬_T h，
在分段線性 u0、每格常數 v0 與 h 的情況下逐項精確。
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import ConfigError, TestFunctionSupport
from fields import (
    CELL, NODE, Field, check_data_coverage, node_to_cell_mean, reverse_cumsum,
    transport_kernel,
)
from geometry import ManifoldData

logger = logging.getLogger(__name__)


def dalembert_kernel(lattice, u0, v0, source):
    """
    節點上的 d'Alembert 公式

    節點 (i, j) 的依存三角形恰為格 j ≤ q ≤ p ≤ i − 1；累加順序與原點無關，
    所以在子格點上重算的結果逐位元相同。

    Args:
        lattice: NullLattice
        u0: 底邊節點值 (N+1, n)
        v0: 底邊每格值 (N, n)
        source: 格場值 (N, N, n)

    Returns:
        np.ndarray: 節點值 (N+1, N+1, n)
    """
    n_cells = lattice.n_cells
    mask = lattice.cell_mask[..., None]
    weight = np.where(mask, source, 0.0) * lattice.cell_area[..., None]
    idx = np.arange(n_cells)
    weight[idx, idx] += v0 * lattice.h

    column = np.cumsum(weight, axis=0)          # C[p, q] = Σ_{p' ≤ p} W[p', q]
    triangle = reverse_cumsum(column, axis=1)  # Σ_{q' ≥ q} C[p, q']

    u = np.zeros((n_cells + 1, n_cells + 1, u0.shape[1]))
    u[1:, :-1] = 0.5 * (u0[1:, None, :] + u0[None, :-1, :]) + 0.5 * triangle
    nodes = np.arange(n_cells + 1)
    u[nodes, nodes] = u0
    return np.where(lattice.node_mask[..., None], u, 0.0)


def _lattice_for(data, field, lattice):
    lattice = lattice or (field.lattice if field is not None else None)
    if lattice is None:
        raise ConfigError("需要格點或已在格點上的場")
    check_data_coverage(data, lattice)
    return lattice


def dalembert_solve(data, h_field=None, lattice=None):
    """
    線性波動方程 □u = h 的 mild 解

    Args:
        data: ManifoldData
        h_field: 非齊次項（格場）；None 表示 0
        lattice: 預設取 h_field 的格點

    Returns:
        Field: 節點場 u

    Raises:
        DataCoverage: 資料底邊與格點不一致
    """
    lattice = _lattice_for(data, h_field, lattice)
    source = h_field.values if h_field is not None else np.zeros((lattice.n_cells, lattice.n_cells, data.dim))
    return Field(lattice, NODE, dalembert_kernel(lattice, data.u0, data.v0, source))


def _base_cell_values(g, lattice):
    if callable(g):
        mid = lattice.coords[:-1] + 0.5 * lattice.h
        values = np.asarray(g(mid), dtype=float)
    else:
        values = np.asarray(g, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != lattice.n_cells:
        raise ConfigError(f"底邊值長度 {values.shape[0]} 與格數 {lattice.n_cells} 不符")
    return values


def transport_solve(g, f_field, direction, lattice=None):
    """
    傳輸方程 (∂ₜ ± ∂ₓ)v = f，v(0) = g

    Args:
        g: 每格底邊值 (N, n)，或在底邊格中點取樣的函數
        f_field: 來源項（格場）
        direction: "plus" 表示 v(t,x) = g(x − t) + ∫f，"minus" 表示 g(x + t) + ∫f
        lattice: 預設取 f_field 的格點

    Returns:
        Field: 格場 v
    """
    lattice = lattice or f_field.lattice
    base = _base_cell_values(g, lattice)
    source = f_field.values if f_field is not None else np.zeros((lattice.n_cells, lattice.n_cells, base.shape[1]))
    return Field(lattice, CELL, transport_kernel(lattice, base, source, direction))


@dataclass(frozen=True, eq=False)
class LinearSolution:
    """
    線性問題的完整解：u、v₊、v₋、∂ₜu、∂ₓu 以及產生它的資料與來源項

    對線性解而言 forcing 與 source 是同一個場。
    """

    u: Field
    v_plus: Field
    v_minus: Field
    ut: Field
    ux: Field
    data: Optional[ManifoldData]
    source: Optional[Field]
    domain: object = None

    @property
    def forcing(self):
        return self.source

    @property
    def lattice(self):
        return self.u.lattice


def solve_linear(data, source=None, lattice=None):
    """
    組出線性解 (u, v₊, v₋, ∂ₜu, ∂ₓu)

    Args:
        data: ManifoldData
        source: 非齊次項（格場）；None 表示 0
        lattice: NullLattice

    Returns:
        LinearSolution
    """
    lattice = _lattice_for(data, source, lattice)
    if source is None:
        source = Field.zeros(lattice, CELL, data.dim)
    u = dalembert_solve(data, source, lattice)
    plus = Field(lattice, CELL, transport_kernel(lattice, data.g_plus, source.values, "plus"))
    minus = Field(lattice, CELL, transport_kernel(lattice, data.g_minus, source.values, "minus"))
    ut = plus.like(0.5 * (plus.values + minus.values))
    ux = plus.like(0.5 * (minus.values - plus.values))
    return LinearSolution(u, plus, minus, ut, ux, data, source, lattice.parent)


# ---------------------------------------------------------------------------
# 弱形式殘差
# ---------------------------------------------------------------------------

def _bump(s):
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    w = np.where(inside, 1.0 - s * s, 0.0)
    return w ** 4


def _bump_d1(s):
    s = np.asarray(s, dtype=float)
    w = np.where(np.abs(s) < 1.0, 1.0 - s * s, 0.0)
    return -8.0 * s * w ** 3


def _bump_d2(s):
    s = np.asarray(s, dtype=float)
    w = np.where(np.abs(s) < 1.0, 1.0 - s * s, 0.0)
    return -8.0 * w ** 3 + 48.0 * s * s * w ** 2


@dataclass(frozen=True)
class ProductBump:
    """
    測試函數 φ(t,x) = B((t − tc)/τ)·B((x − c)/r)，B(s) = (1 − s²)⁴
    """

    tc: float
    tau: float
    c: float
    r: float

    def value(self, t, x):
        return _bump((t - self.tc) / self.tau) * _bump((x - self.c) / self.r)

    def dt(self, t, x):
        return _bump_d1((t - self.tc) / self.tau) / self.tau * _bump((x - self.c) / self.r)

    def box(self, t, x):
        """∂ₜ²φ − ∂ₓ²φ"""
        st = (t - self.tc) / self.tau
        sx = (x - self.c) / self.r
        return (_bump_d2(st) * _bump(sx) / self.tau ** 2
                - _bump(st) * _bump_d2(sx) / self.r ** 2)

    @property
    def t_top(self):
        return self.tc + self.tau


def _check_support(phi, K):
    if K is None or not K.is_compact:
        return
    top = phi.t_top
    lo, hi = K.base
    if top >= K.height or phi.c - phi.r <= lo + top or phi.c + phi.r >= hi - top:
        raise TestFunctionSupport(
            "測試函數的支集碰到區域的非初始邊界",
            {'phi': {'tc': phi.tc, 'tau': phi.tau, 'c': phi.c, 'r': phi.r}, 'base': [lo, hi], 'height': K.height},
        )


def weak_form_residual(u, data, h_field, phi):
    """
    |∬u(∂ₜ²φ − ∂ₓ²φ) − ∬φh + ∫u0 ∂ₜφ(0,·) − ∫v0 φ(0,·)|（各分量取 ℓ¹）

    Args:
        u: 節點場
        data: ManifoldData
        h_field: 格場；None 表示 0
        phi: ProductBump

    Returns:
        float: 殘差

    Raises:
        TestFunctionSupport: φ 在非初始邊界附近不為零
    """
    lattice = u.lattice
    _check_support(phi, lattice.parent)
    mask = lattice.cell_mask
    t, x = lattice.cell_t, lattice.cell_x
    area = np.where(mask, lattice.cell_area, 0.0)

    u_cell = node_to_cell_mean(lattice, u.values)
    bulk = np.sum(u_cell * (phi.box(t, x) * area)[..., None], axis=(0, 1))
    if h_field is not None:
        bulk = bulk - np.sum(h_field.values * (phi.value(t, x) * area)[..., None], axis=(0, 1))

    mid = 0.5 * (data.x[:-1] + data.x[1:])
    u_mid = 0.5 * (data.u0[:-1] + data.u0[1:])
    zero = np.zeros_like(mid)
    boundary = (np.sum(u_mid * phi.dt(zero, mid)[:, None], axis=0)
                - np.sum(data.v0 * phi.value(zero, mid)[:, None], axis=0)) * data.h
    residual = float(np.sum(np.abs(bulk + boundary)))
    logger.debug("weak-form residual %.3e (h=%.4g)", residual, lattice.h)
    return residual

