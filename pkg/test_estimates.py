"""
測試不等式檢查：傳輸、Zhou 雙線性、Q 形式、能量通量與逐點估計
"""

from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from domain import Trapezoid
from errors import LatticeMismatch, MissingProvenance, OffLattice
from estimates import (
    EstimateReport, energy_flux_check, pointwise_characteristic_bound, property_suite, q_form,
    q_l1_bound_check, random_instance, spacetime_null_energy_check, transport_bound_check,
    zhou_bilinear_check,
)
from fields import CELL, Field, NullLattice
from geometry import constant_data, geodesic_data, traveling_wave_data, uniform_grid
from linear_wave import solve_linear

H = 1 / 16
TRIANGLE = Trapezoid.compact(0.0, 1.0)


def _lattice(h=H):
    return NullLattice.for_trapezoid(TRIANGLE, h)


def _linear(data_fn, h=H):
    lattice = _lattice(h)
    return solve_linear(data_fn(uniform_grid(-1.0, 1.0, h)), lattice=lattice)


def _indicator(lo, hi):
    return lambda s: ((s >= lo) & (s <= hi)).astype(float)


def test_report_semantics():
    assert EstimateReport("a", 1.0, 2.0).slack == 1.0
    assert EstimateReport("a", 2.0, 2.0 - 1e-13).ok
    assert not EstimateReport("a", 2.0, 1.0).ok
    assert not EstimateReport("a", float('nan'), 1.0).ok
    assert EstimateReport("a", 1.0, 2.0).to_dict() == {
        'name': "a", 'lhs': 1.0, 'rhs': 2.0, 'slack': 1.0, 'tol': 1e-12, 'ok': True,
    }


def test_transport_bound_indicator():
    report = transport_bound_check(_indicator(-1.0, 1.0), None, 0.0, 1.0, 0.5, h=H)
    assert report.lhs == pytest.approx(1.0)
    assert report.rhs == pytest.approx(2.0)
    assert report.ok


def test_transport_bound_zero():
    report = transport_bound_check(np.zeros(32), None, 0.0, 1.0, 0.5, h=H)
    assert (report.lhs, report.rhs) == (0.0, 0.0)
    assert report.ok


def test_transport_bound_degenerate_top_slice():
    lattice = _lattice()
    f = Field.from_function(lattice, CELL, lambda t, x: np.ones_like(t))
    report = transport_bound_check(np.zeros(32), f, 0.0, 1.0, 1.0)
    assert report.lhs == 0.0
    assert report.rhs == pytest.approx(1.0)


def test_transport_bound_requires_lattice_time():
    with pytest.raises(OffLattice):
        transport_bound_check(np.zeros(32), None, 0.0, 1.0, 0.3, h=H)


def test_zhou_constant_strips():
    report = zhou_bilinear_check(_indicator(-1.0, 1.0), _indicator(-1.0, 1.0), None, None, 0.0, 1.0, 1.0, h=H)
    assert report.lhs == pytest.approx(1.0)
    assert report.rhs == pytest.approx(2.0)


def test_zhou_crossing_strips():
    """兩條互相穿越的帶在零座標上重疊成邊長 1 的正方形，面積 ½；此時等號成立"""
    report = zhou_bilinear_check(lambda s: (s < 0).astype(float), lambda s: (s > 0).astype(float),
                                 None, None, 0.0, 1.0, 1.0, h=H)
    assert report.lhs == pytest.approx(0.5)
    assert report.rhs == pytest.approx(0.5)
    assert report.ok


def test_zhou_zero():
    report = zhou_bilinear_check(np.zeros(32), np.zeros(32), None, None, 0.0, 1.0, 1.0, h=H)
    assert (report.lhs, report.rhs) == (0.0, 0.0)


def _constant_fields(lattice, ut, ux):
    def field(value):
        return Field.from_function(lattice, CELL, lambda t, x: np.tile(value, (t.size, 1)))
    return SimpleNamespace(ut=field(ut), ux=field(ux))


def test_q_form_examples():
    lattice = _lattice(1 / 4)
    mask = lattice.cell_mask
    u = _constant_fields(lattice, [1.0, 0.0], [0.0, 1.0])
    q = q_form(u, u)
    assert_array_equal(q.values[mask], np.tile([[1.0, 0.0], [0.0, -1.0]], (int(mask.sum()), 1, 1)))
    assert q.asymmetry() == 0.0

    null = _constant_fields(lattice, [0.3, -0.7], [0.3, -0.7])
    assert_array_equal(q_form(null, null).values, 0.0)

    with pytest.raises(LatticeMismatch):
        q_form(u, _constant_fields(_lattice(1 / 8), [1.0, 0.0], [0.0, 1.0]))


def test_q_form_of_linear_geodesic():
    """∂ₓu = 0 時 Q(u, u) = ∂ₜu ∂ₜuᵀ，每格的 ℓ¹ 為 ω²"""
    solution = _linear(lambda x: geodesic_data(x, 1.5))
    q = q_form(solution, solution)
    assert_allclose(q.l1_per_site()[solution.lattice.cell_mask], 2.25)


def test_q_l1_bound_examples():
    apex = (1.0, 0.0)
    still = _linear(lambda x: constant_data(x, (0.0, 0.0, 1.0)))
    report = q_l1_bound_check(still, apex)
    assert (report.lhs, report.rhs) == (0.0, 0.0)

    wave = _linear(lambda x: traveling_wave_data(x, 2.0))
    report = q_l1_bound_check(wave, apex)
    assert report.lhs == 0.0
    assert report.rhs == 0.0

    geo = _linear(lambda x: geodesic_data(x, 1.0))
    report = q_l1_bound_check(geo, apex)
    assert report.lhs == pytest.approx(1.0)
    assert report.rhs == pytest.approx(4.0)
    assert report.ok


def test_q_l1_pair_with_itself_matches_single():
    rng = np.random.Generator(np.random.Philox(12))
    inst = random_instance(rng, _lattice(1 / 8))
    solution = solve_linear(inst.data, inst.source)
    single = q_l1_bound_check(solution, (0.5, 0.25))
    pair = q_l1_bound_check(solution, (0.5, 0.25), solution)
    assert pair.lhs == single.lhs
    assert pair.rhs == pytest.approx(single.rhs, rel=1e-15)


def test_q_l1_bound_errors():
    still = _linear(lambda x: constant_data(x, (0.0, 0.0, 1.0)))
    with pytest.raises(MissingProvenance):
        q_l1_bound_check(replace(still, source=None), (1.0, 0.0))
    with pytest.raises(OffLattice):
        q_l1_bound_check(still, (0.3, 0.0))


def test_energy_flux_geodesic_equality():
    """|(∂ₜ − ∂ₓ)u| ≡ ω：左右兩邊都是 1"""
    geo = _linear(lambda x: geodesic_data(x, 1.0))
    first, second = energy_flux_check(geo, 0.5)
    assert first.lhs == pytest.approx(1.0)
    assert first.rhs == pytest.approx(1.0)
    assert first.slack == pytest.approx(0.0, abs=1e-14)
    assert second.ok


def test_energy_flux_traveling_wave_equality():
    wave = _linear(lambda x: traveling_wave_data(x, 2.0))
    first, second = energy_flux_check(wave, 0.25)
    assert first.lhs == pytest.approx(3.0, rel=1e-3)
    assert first.slack == pytest.approx(0.0, abs=1e-13)
    assert (second.lhs, second.rhs) == (0.0, 0.0)


def test_energy_flux_constant():
    still = _linear(lambda x: constant_data(x, (0.6, 0.0, 0.8)))
    for report in energy_flux_check(still, 0.5):
        assert (report.lhs, report.rhs) == (0.0, 0.0)


def test_pointwise_bound():
    geo = _linear(lambda x: geodesic_data(x, 1.0))
    report = pointwise_characteristic_bound(geo, (20, 10), "plus")
    assert report.lhs == pytest.approx(1.0)
    assert report.slack == pytest.approx(0.0, abs=1e-15)
    still = _linear(lambda x: constant_data(x, (0.0, 1.0, 0.0)))
    assert pointwise_characteristic_bound(still, (5, 5), "minus").lhs == 0.0
    wave = _linear(lambda x: traveling_wave_data(x, 2.0))
    assert pointwise_characteristic_bound(wave, (12, 3), "minus").rhs == 0.0
    with pytest.raises(OffLattice):
        pointwise_characteristic_bound(geo, (3, 5))


def test_spacetime_null_energy_examples():
    still = _linear(lambda x: constant_data(x, (0.0, 0.0, 1.0)))
    report = spacetime_null_energy_check(still)
    assert (report.lhs, report.rhs) == (0.0, 0.0)

    wave = _linear(lambda x: traveling_wave_data(x, 2.0))
    report = spacetime_null_energy_check(wave)
    assert report.lhs == 0.0
    assert report.rhs > 0.0

    geo = _linear(lambda x: geodesic_data(x, 1.0))
    report = spacetime_null_energy_check(geo)
    assert report.lhs == pytest.approx(1.0)
    assert report.rhs == pytest.approx(4.0)


def test_random_instances_are_piecewise_constant():
    lattice = _lattice(1 / 8)
    inst = random_instance(np.random.Generator(np.random.Philox(1)), lattice, n=3, sparsity=0.5)
    assert inst.data.n_cells == lattice.n_cells
    assert inst.source.n == 3
    assert_array_equal(inst.source.values[~lattice.cell_mask], 0.0)
    assert np.max(np.abs(inst.data.du0)) <= 1.0 + 1e-12


def test_property_suite_has_no_violations():
    """每種檢查 200 組隨機資料，容許誤差 1e-12"""
    rng = np.random.Generator(np.random.Philox(2024))
    reports = property_suite(rng, _lattice(1 / 8), trials=200, tol=1e-12)
    assert set(reports) == {
        "transport", "zhou_bilinear", "q_l1", "q_l1_pair", "energy_flux_plus", "energy_flux_minus",
        "spacetime_null_energy", "pointwise_plus", "pointwise_minus",
    }
    for name, group in reports.items():
        assert len(group) == 200
        failures = [r.to_dict() for r in group if not r.ok]
        assert not failures, (name, failures[:3])


def test_property_suite_scales_tolerance_by_rhs():
    """報告裡的 tol 是 tol·max(1, |rhs|)"""
    rng = np.random.Generator(np.random.Philox(5))
    reports = property_suite(rng, _lattice(1 / 8), trials=3, tol=1e-12)
    for group in reports.values():
        for report in group:
            assert report.tol == 1e-12 * max(1.0, abs(report.rhs))

