"""
測試零座標格點、離散場、範數與切片
"""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from domain import Trapezoid
from errors import DataCoverage, LatticeMismatch, OffLattice, RegionMismatch
from fields import (
    CELL, NODE, Field, NullLattice, characteristic_derivatives, export_csv, h_norm, l1_norm,
    lattice_time_index, load_csv, node_to_cell_mean, trace, w11_seminorm,
    write_sidecar,
)
from geometry import ManifoldData, constant_data, uniform_grid
from linear_wave import solve_linear

TRIANGLE = Trapezoid.compact(0.0, 1.0)


def _triangle_lattice(h=1 / 16):
    return NullLattice.for_trapezoid(TRIANGLE, h)


def test_lattice_masks_and_areas():
    lattice = NullLattice(0.0, 0.25, 8, 4)
    assert lattice.node_mask.sum() == 9 + 8 + 7 + 6 + 5
    assert lattice.half_mask.sum() == 8
    assert lattice.full_mask.sum() == 7 + 6 + 5
    # 頂端為鋸齒：比梯形少 N − M 個 h²/4 的小三角形
    assert lattice.cell_area.sum() == pytest.approx(0.75 - 4 * 0.25 ** 2 / 4)
    assert lattice.height == 0.5
    assert lattice.base == (0.0, 2.0)


def test_full_triangle_area():
    lattice = NullLattice(0.0, 0.25, 8, 8)
    assert lattice.cell_area.sum() == pytest.approx(1.0)


def test_lattice_errors():
    with pytest.raises(LatticeMismatch):
        NullLattice(0.0, 0.25, 8, 9)
    with pytest.raises(LatticeMismatch):
        NullLattice.for_trapezoid(TRIANGLE, 0.3)
    with pytest.raises(LatticeMismatch):
        NullLattice.for_trapezoid(Trapezoid.unbounded(1.0), 0.25)


def test_sample_points_lie_in_parent():
    lattice = NullLattice.for_trapezoid(Trapezoid.compact(0.5, 1.5, 1.0), 1 / 8)
    t = lattice.cell_t[lattice.cell_mask]
    x = lattice.cell_x[lattice.cell_mask]
    assert np.all(t > 0.0)
    assert all(lattice.parent.contains((s, y)) for s, y in zip(t, x))
    assert_allclose(lattice.node_t[lattice.node_mask] % (lattice.h / 2), 0.0, atol=1e-15)


def test_field_arithmetic_requires_same_lattice():
    lattice = _triangle_lattice(1 / 8)
    u = Field.zeros(lattice, CELL, 2)
    w = Field.zeros(NullLattice.for_trapezoid(TRIANGLE, 1 / 4), CELL, 2)
    with pytest.raises(LatticeMismatch):
        u + w
    with pytest.raises(LatticeMismatch):
        u - Field.zeros(lattice, NODE, 2)
    doubled = 2 * Field.from_function(lattice, CELL, lambda t, x: np.ones_like(t))
    assert doubled.max_abs() == 2.0
    # 相同 key 的另一個格點物件也可以運算
    assert (u + Field.zeros(_triangle_lattice(1 / 8), CELL, 2)).max_abs() == 0.0


def test_l1_norm_examples():
    lattice = _triangle_lattice()
    pair = Field.from_function(lattice, CELL, lambda t, x: np.column_stack([np.ones_like(t), -np.ones_like(t)]))
    assert l1_norm(pair) == pytest.approx(2.0, rel=1e-14)
    assert l1_norm(Field.zeros(lattice, CELL, 3)) == 0.0
    # ∫₀¹ t·(2 − 2t) dt = 1/3，格中心與重心取樣對線性被積函數是精確的
    t_cells = Field.from_function(lattice, CELL, lambda t, x: t)
    assert l1_norm(t_cells) == pytest.approx(1 / 3, rel=1e-13)
    t_nodes = Field.from_function(lattice, NODE, lambda t, x: t)
    assert l1_norm(t_nodes) == pytest.approx(1 / 3, rel=1e-13)


def test_l1_norm_on_sub_trapezoid():
    lattice = NullLattice.for_trapezoid(Trapezoid.compact(0.0, 1.0, 1.0), 1 / 8)
    ones = Field.from_function(lattice, CELL, lambda t, x: np.ones_like(t))
    inner = Trapezoid.compact(0.5, 0.5)
    assert l1_norm(ones, inner) == pytest.approx(0.25, rel=1e-14)
    with pytest.raises(RegionMismatch):
        l1_norm(ones, Trapezoid.compact(0.0, 2.0))
    with pytest.raises(RegionMismatch):
        l1_norm(ones, np.ones((3, 3), dtype=bool))


def test_l1_norm_additive_and_monotone():
    lattice = _triangle_lattice(1 / 8)
    rng = np.random.Generator(np.random.Philox(5))
    f = Field(lattice, CELL, np.where(lattice.cell_mask[..., None], rng.standard_normal((16, 16, 3)), 0.0))
    even = lattice.cell_mask & (lattice.cell_diag % 2 == 0)
    odd = lattice.cell_mask & ~even
    assert l1_norm(f, even) + l1_norm(f, odd) == pytest.approx(l1_norm(f), rel=1e-13)
    assert l1_norm(f, even) <= l1_norm(f)


def test_node_to_cell_mean_is_exact_for_time():
    lattice = _triangle_lattice(1 / 8)
    t_nodes = Field.from_function(lattice, NODE, lambda t, x: t)
    mean = node_to_cell_mean(lattice, t_nodes.values)[..., 0]
    assert_allclose(mean[lattice.cell_mask], lattice.cell_t[lattice.cell_mask], atol=1e-15)


@pytest.mark.parametrize("values, expected", [
    (np.linspace(0.0, 1.0, 11), 1.0),
    (np.full(7, 3.5), 0.0),
    (np.abs(np.linspace(-1.0, 1.0, 9)), 2.0),
])
def test_w11_seminorm(values, expected):
    assert w11_seminorm(values) == pytest.approx(expected)


def test_h_norm_of_constant_solution():
    lattice = _triangle_lattice(1 / 8)
    data = constant_data(uniform_grid(-1.0, 1.0, 1 / 8), (0.0, 0.6, 0.8))
    solution = solve_linear(data, lattice=lattice)
    assert h_norm(solution) == pytest.approx(1.4)
    zero = solve_linear(constant_data(data.x, (0.0, 0.0, 0.0)), lattice=lattice)
    assert h_norm(zero) == 0.0


@pytest.mark.parametrize("u_fn, v_fn, plus, minus", [
    (lambda s: [s], lambda s: [0.0], -1.0, 1.0),
    (lambda s: [0.0], lambda s: [1.0], 1.0, 1.0),
])
def test_characteristic_derivatives_without_source(u_fn, v_fn, plus, minus):
    lattice = _triangle_lattice(1 / 8)
    data = ManifoldData.from_functions(uniform_grid(-1.0, 1.0, 1 / 8), u_fn, v_fn)
    v_plus, v_minus = characteristic_derivatives(data, Field.zeros(lattice, CELL, 1))
    mask = lattice.cell_mask
    assert_allclose(v_plus.values[mask], plus, atol=1e-14)
    assert_allclose(v_minus.values[mask], minus, atol=1e-14)


def test_characteristic_derivatives_unit_source():
    """h ≡ 1 時 v±(t, x) = t（在格的取樣點上）"""
    lattice = _triangle_lattice(1 / 8)
    data = ManifoldData.from_functions(uniform_grid(-1.0, 1.0, 1 / 8), lambda s: [0.0], lambda s: [0.0])
    source = Field.from_function(lattice, CELL, lambda t, x: np.ones_like(t))
    v_plus, v_minus = characteristic_derivatives(data, source)
    mask = lattice.cell_mask
    assert_allclose(v_plus.values[mask][:, 0], lattice.cell_t[mask], atol=1e-14)
    assert_allclose(v_minus.values[mask][:, 0], lattice.cell_t[mask], atol=1e-14)


def test_characteristic_derivatives_coverage():
    lattice = _triangle_lattice(1 / 8)
    data = constant_data(uniform_grid(-0.5, 1.0, 1 / 8), (0.0, 0.0, 1.0))
    with pytest.raises(DataCoverage):
        characteristic_derivatives(data, Field.zeros(lattice, CELL, 3))


def test_lattice_time_index():
    lattice = NullLattice(0.0, 0.25, 8, 4)
    assert lattice_time_index(lattice, 0.0) == 0
    assert lattice_time_index(lattice, 0.375) == 3
    with pytest.raises(OffLattice):
        lattice_time_index(lattice, 0.1)
    with pytest.raises(OffLattice):
        lattice_time_index(lattice, 0.625)


def test_trace_of_constant_solution():
    lattice = _triangle_lattice(1 / 8)
    data = constant_data(uniform_grid(-1.0, 1.0, 1 / 8), (0.0, 0.6, 0.8))
    solution = solve_linear(data, lattice=lattice)

    start = trace(solution, 0.0)
    assert_array_equal(start.u, data.u0)
    assert_array_equal(start.ut, data.v0)
    assert start.interval == (-1.0, 1.0)

    later = trace(solution, 0.5)
    assert later.interval == (-0.5, 0.5)
    assert_allclose(later.u, np.tile([0.0, 0.6, 0.8], (later.x.size, 1)), atol=1e-15)
    assert_array_equal(later.ut, 0.0)
    assert later.as_data().n_cells == later.x.size - 1


def test_trace_slice_mass_bounded_by_h_norm():
    lattice = _triangle_lattice(1 / 16)
    x = uniform_grid(-1.0, 1.0, 1 / 16)
    rng = np.random.Generator(np.random.Philox(21))
    data = ManifoldData(x, rng.uniform(-1.0, 1.0, (x.size, 2)), rng.uniform(-1.0, 1.0, (x.size - 1, 2)))
    solution = solve_linear(data, lattice=lattice)
    bound = h_norm(solution)
    for m in range(lattice.n_rows):
        tr = trace(solution, m * lattice.h / 2)
        mass = (np.sum(np.abs(tr.ut)) + np.sum(np.abs(tr.ux))) * lattice.h if m else 0.0
        assert np.max(np.sum(np.abs(tr.u), axis=1)) + mass <= bound + 1e-12


def test_export_csv_is_bit_exact(tmp_path):
    lattice = _triangle_lattice(1 / 8)
    f = Field.from_function(lattice, NODE, lambda t, x: np.column_stack([np.sin(3 * x) / 7, t / 3]))
    path = tmp_path / "u.csv"
    rows = export_csv(path, f, 'u')
    assert rows == int(lattice.node_mask.sum())
    header = path.read_text(encoding='utf-8').splitlines()[0]
    assert header == "t,x,u_1,u_2"
    assert_array_equal(load_csv(path, lattice, NODE).values, f.values)


def test_write_sidecar(tmp_path):
    lattice = _triangle_lattice(1 / 8)
    ones = Field.from_function(lattice, CELL, lambda t, x: np.ones_like(t))
    path = tmp_path / "norms.json"
    write_sidecar(path, ut=ones, u=Field.zeros(lattice, NODE, 1))
    payload = json.loads(path.read_text(encoding='utf-8'))
    assert list(payload) == ['u', 'ut']
    assert payload['ut']['l1'] == pytest.approx(1.0)
    assert payload['ut']['location'] == CELL
